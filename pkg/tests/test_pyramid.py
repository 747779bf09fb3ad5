import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstsfm.exceptions import ConfigError, DataError
from burstsfm.pyramid import (AlignmentRuleWarning, PyramidConfig, build_pyramid,
                              gaussian_downsample, gaussian_kernel1d)

from .conftest import make_texture


def test_constant_preserved():
    out = gaussian_downsample(np.full((10, 10), 0.7), 2)
    assert out.shape == (5, 5)
    np.testing.assert_allclose(out, 0.7, atol=1e-12)


def test_geometry():
    assert gaussian_downsample(np.zeros((8, 8)), 4).shape == (2, 2)
    assert gaussian_downsample(np.zeros((9, 7)), 4).shape == (3, 2)


def test_factor_too_small():
    with pytest.raises(ConfigError):
        gaussian_downsample(np.zeros((8, 8)), 1)


def test_impulse_matches_analytic_kernel():
    # Oracle: the Gaussian evaluated directly at each sampled offset, normalized over
    # the 3-sigma support; the separable blur of an impulse is the outer product.
    n, factor = 33, 2
    img = np.zeros((n, n))
    img[16, 16] = 1.0
    out = gaussian_downsample(img, factor)
    sigma = 0.5 * factor
    radius = math.ceil(3 * sigma)
    norm = sum(math.exp(-0.5 * (k / sigma) ** 2) for k in range(-radius, radius + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            dy, dx = factor * i - 16, factor * j - 16
            g = lambda u: math.exp(-0.5 * (u / sigma) ** 2) / norm if abs(u) <= radius else 0.0
            assert out[i, j] == pytest.approx(g(dy) * g(dx), abs=1e-15)


def test_kernel_normalized_and_truncated():
    k = gaussian_kernel1d(2.0)
    assert len(k) == 2 * 6 + 1
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])


def test_level_sizes_ceil_division():
    cfg = PyramidConfig(4, (2, 4, 4))
    with pytest.warns(AlignmentRuleWarning, match="coarsest-scale"):
        cfg.check((1250, 1496))
    assert cfg.level_shapes((1250, 1496)) == [(1250, 1496), (625, 748), (157, 187), (40, 47)]


def test_default_config_meets_recommendations():
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error", AlignmentRuleWarning)
        assert PyramidConfig().check((1250, 1496)) == []


def test_shallow_pyramid_warns():
    with pytest.warns(AlignmentRuleWarning, match="pyramid-depth"):
        PyramidConfig(3, (2, 2)).check((512, 512))


def test_single_level():
    img = make_texture((20, 20))
    pyr = build_pyramid(img, PyramidConfig(1))
    assert len(pyr) == 1
    np.testing.assert_array_equal(pyr[0], img)


def test_too_small_names_level():
    with pytest.raises(DataError, match="level 1"):
        build_pyramid(np.zeros((16, 16)), PyramidConfig(3, (4, 4)), min_size=[16, 16, 8])


def test_level0_unblurred():
    img = make_texture((64, 64))
    np.testing.assert_array_equal(build_pyramid(img)[0], img)


def test_mean_preserved_on_texture():
    pyr = build_pyramid(make_texture((256, 256), seed=5))
    for a, b in zip(pyr.levels, pyr.levels[1:]):
        assert abs(a.mean() - b.mean()) <= 0.02


@settings(max_examples=30, deadline=None)
@given(h=st.integers(16, 90), w=st.integers(16, 90),
       factors=st.lists(st.integers(2, 4), min_size=1, max_size=3),
       value=st.floats(-2, 2))
def test_sizes_and_constants(h, w, factors, value):
    cfg = PyramidConfig(len(factors) + 1, tuple(factors))
    pyr = build_pyramid(np.full((h, w), value), cfg)
    for k, f in enumerate(factors):
        ph, pw = pyr[k].shape
        assert pyr[k + 1].shape == (-(-ph // f), -(-pw // f))
        np.testing.assert_allclose(pyr[k + 1], value, atol=1e-12)
