import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from burstsfm import bench
from burstsfm.align import DisplacementField, TileGrid, align_burst
from burstsfm.exceptions import ConfigError, DataError
from burstsfm.imgio import Burst, RawFrame, recombine_bayer_planes, split_bayer_planes
from burstsfm.merge import (MergeConfig, contribution, dft2, estimate_noise_variance, idft2,
                            merge_bayer_burst, merge_burst, merge_frames, merge_tile,
                            naive_average, raised_cosine, window_2d, window_tile)

from .conftest import make_texture

# values on a 1e-3 grid keep |D|^2 clear of floating-point underflow
tile_arrays = arrays(np.float64, (8, 8), elements=st.integers(-1000, 1000).map(lambda v: v / 1000))


def _zero_fields(n, shape, tile=16):
    return [DisplacementField.zeros(TileGrid(tile, *shape)) for _ in range(n)]


def _psnr(img, clean):
    return 10 * np.log10(1.0 / np.mean((img - clean) ** 2))


class TestWindow:
    def test_constant_tile_is_window(self):
        np.testing.assert_array_equal(window_tile(np.ones((16, 16))), window_2d(16))
        assert not window_tile(np.zeros((8, 8))).any()

    def test_formula(self):
        i = np.arange(16)
        np.testing.assert_allclose(raised_cosine(16), 0.5 - 0.5 * np.cos(2 * np.pi * (i + 0.5) / 16))

    @pytest.mark.parametrize("size", [8, 16, 32])
    def test_partition_of_unity(self, size):
        # direct summation: stamp windowed constant-1 tiles every size/2 pixels
        n = 8 * size
        acc = np.zeros((n, n))
        w = window_2d(size)
        for y in range(0, n - size + 1, size // 2):
            for x in range(0, n - size + 1, size // 2):
                acc[y:y + size, x:x + size] += w
        interior = acc[size // 2:n - size // 2, size // 2:n - size // 2]
        assert np.max(np.abs(interior - 1.0)) < 1e-6


class TestDFT:
    def test_dc_of_constant(self):
        spec = dft2(np.full((16, 16), 0.3))
        assert spec[0, 0] == pytest.approx(0.3 * 16)
        spec[0, 0] = 0
        assert np.max(np.abs(spec)) < 1e-12

    @given(tile=tile_arrays)
    def test_round_trip_and_parseval(self, tile):
        spec = dft2(tile)
        assert np.max(np.abs(idft2(spec) - tile)) < 1e-6
        assert np.sum(np.abs(spec) ** 2) == pytest.approx(np.sum(tile ** 2), rel=1e-6, abs=1e-12)

    def test_power_of_two_required(self):
        with pytest.raises(DataError):
            dft2(np.zeros((12, 12)))


class TestMergeTile:
    def _oracle(self, ref, alts, c, s2):
        # per-coefficient loop over all N frames including the reference
        frames = [ref] + list(alts)
        out = np.zeros_like(ref, dtype=complex)
        for idx in np.ndindex(ref.shape):
            total = 0
            for tz in frames:
                d = ref[idx] - tz[idx]
                a = abs(d) ** 2 / (abs(d) ** 2 + c * s2) if abs(d) > 0 else 0.0
                total += tz[idx] + a * d
            out[idx] = total / len(frames)
        return out

    def test_matches_loop_oracle(self, rng):
        ref = dft2(rng.random((8, 8)))
        alts = [dft2(rng.random((8, 8))) for _ in range(3)]
        np.testing.assert_allclose(merge_tile(ref, alts, 8.0, 0.01),
                                   self._oracle(ref, alts, 8.0, 0.01), atol=1e-12)

    def test_identical_alts(self, rng):
        ref = dft2(rng.random((8, 8)))
        np.testing.assert_allclose(merge_tile(ref, [ref, ref], 8.0, 0.1), ref, rtol=0, atol=1e-12)

    def test_c_zero_is_reference(self, rng):
        ref = dft2(rng.random((8, 8)))
        alts = [dft2(rng.random((8, 8))) for _ in range(6)]
        assert np.max(np.abs(merge_tile(ref, alts, 0.0, 0.1) - ref)) < 1e-6

    def test_large_c_is_mean(self, rng):
        ref = dft2(rng.random((8, 8)))
        alts = [dft2(rng.random((8, 8))) for _ in range(6)]
        mean = (ref + sum(alts)) / 7
        assert np.max(np.abs(merge_tile(ref, alts, 1e12, 1.0) - mean)) < 1e-6

    def test_bad_sigma(self):
        with pytest.raises(ConfigError):
            merge_tile(np.zeros((8, 8)), [np.ones((8, 8))], 8.0, 0.0)

    @given(ref=tile_arrays, alt=tile_arrays)
    def test_contribution_range(self, ref, alt):
        diff = dft2(ref) - dft2(alt)
        a = contribution(diff, 8.0, 1e-3)
        assert np.all((a >= 0) & (a < 1))
        assert np.all((a == 0) == (diff == 0))

    @given(ref=tile_arrays, alt=tile_arrays, alpha=st.floats(0.01, 100))
    def test_contribution_scale_equivariant(self, ref, alt, alpha):
        diff = dft2(ref) - dft2(alt)
        np.testing.assert_allclose(contribution(alpha * diff, 8.0, alpha ** 2 * 0.01),
                                   contribution(diff, 8.0, 0.01), atol=1e-9)

    @settings(max_examples=25)
    @given(tiles=st.lists(tile_arrays, min_size=2, max_size=5), c=st.floats(0, 100))
    def test_dc_between_inputs(self, tiles, c):
        specs = [dft2(t) for t in tiles]
        out = merge_tile(specs[0], specs[1:], c, 0.01)
        dcs = [s[0, 0].real for s in specs]
        assert min(dcs) - 1e-9 <= out[0, 0].real <= max(dcs) + 1e-9


class TestNoiseEstimate:
    def test_pure_noise(self):
        est = [estimate_noise_variance(0.5 + np.random.default_rng(s).normal(0, 0.03, (128, 128)))
               for s in range(20)]
        assert np.mean(est) == pytest.approx(9e-4, rel=0.1)

    def test_constant_floor(self):
        assert estimate_noise_variance(np.full((40, 40), 0.2)) == 1e-12

    def test_edge_image(self):
        img = np.zeros((64, 64))
        img[:, 32:] = 1.0
        assert estimate_noise_variance(img) < 1e-3 * img.var()

    def test_too_small(self):
        with pytest.raises(DataError):
            estimate_noise_variance(np.zeros((16, 64)))


class TestMergeBurst:
    def test_single_frame_identity(self):
        img = make_texture((64, 96), seed=2)
        out, _ = merge_frames([img], _zero_fields(1, img.shape), 0)
        assert np.max(np.abs(out - img)) < 1e-6

    def test_identical_frames_identity(self):
        img = make_texture((80, 48), seed=3)
        out, stats = merge_frames([img] * 4, _zero_fields(4, img.shape), 1,
                                  MergeConfig(noise_variance=1e-3))
        assert np.max(np.abs(out - img)) < 1e-6
        assert not stats.mean_contribution.any()

    def test_static_psnr_gain(self):
        rng = np.random.default_rng(0)
        clean = make_texture((128, 128), seed=4) * 0.5 + 0.25
        frames = [clean + rng.normal(0, 0.05, clean.shape) for _ in range(7)]
        burst = Burst(frames, 3)
        out, _ = merge_burst(burst, _zero_fields(7, clean.shape))
        assert _psnr(out, clean) - _psnr(frames[3], clean) >= 7.0

    def test_corrupt_frame_rejected(self):
        rng = np.random.default_rng(1)
        clean = make_texture((128, 128), seed=5) * 0.6 + 0.2
        frames = [clean + rng.normal(0, 0.03, clean.shape) for _ in range(7)]
        corrupted = list(frames)
        corrupted[5] = make_texture((128, 128), seed=99)
        fields = _zero_fields(7, clean.shape)
        with_bad, stats = merge_frames(corrupted, fields, 3)
        without, _ = merge_frames(frames[:5] + frames[6:], fields[:6], 3)
        rmse = lambda x: np.sqrt(np.mean((x - clean) ** 2))  # noqa: E731
        assert rmse(with_bad) <= 1.2 * rmse(without)
        assert stats.mean_contribution[5].mean() > stats.mean_contribution[4].mean()

    def test_aligned_merge_beats_naive(self):
        scene = bench.make_scene(3, size=256, n_disks=10)
        burst, shifts = bench.synth_burst(scene, bench.BurstSpec(noise=0.03), 3)
        clean = bench.render_scene(scene.translated(*shifts[3]))
        merged, _ = merge_burst(burst, align_burst(burst))
        assert _psnr(merged, clean) > _psnr(naive_average(burst), clean)

    def test_naive_average(self):
        a = np.arange(12.0).reshape(3, 4)
        b = np.roll(a, 1, axis=1)
        np.testing.assert_array_equal(naive_average(Burst([a, a])), a)
        np.testing.assert_array_equal(naive_average([a, b]), (a + b) / 2)

    def test_geometry_mismatch(self):
        img = np.zeros((64, 64))
        with pytest.raises(DataError):
            merge_frames([img, img], _zero_fields(2, (32, 64)), 0)

    def test_stats_csv(self, tmp_path):
        img = make_texture((64, 64))
        _, stats = merge_frames([img, img], _zero_fields(2, img.shape), 0)
        stats.to_csv(tmp_path / "s.csv")
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0] == ["frame", "tile_x", "tile_y", "mean_contribution"]
        assert len(rows) - 1 == stats.mean_contribution.size

    def test_config_validation(self):
        for kw in (dict(tile_size=12), dict(c=-1), dict(noise_variance=0), dict(window="hann")):
            with pytest.raises(ConfigError):
                MergeConfig(**kw)


class TestBayerMerge:
    def test_constant_planes_unchanged(self):
        px = np.zeros((64, 64), dtype=np.uint16)
        px[0::2, 0::2], px[0::2, 1::2], px[1::2, 0::2], px[1::2, 1::2] = 100, 2000, 2100, 900
        raws = [RawFrame(px, bayer_pattern="RGGB")] * 3
        planes, _ = merge_bayer_burst(raws, _zero_fields(3, (32, 32)), 1, MergeConfig(noise_variance=1e-4))
        for p, q in zip(planes, split_bayer_planes(raws[0])):
            np.testing.assert_allclose(p, q, atol=1e-9)
        merged = recombine_bayer_planes(planes, 16, "RGGB")
        np.testing.assert_array_equal(merged.pixels, px)

    def test_noise_reduction_per_plane(self):
        rng = np.random.default_rng(2)
        n = 7
        base = np.full((128, 128), 0.4)
        raws = [RawFrame(np.rint((base + rng.normal(0, 0.02, base.shape)) * 65535).astype(np.uint16),
                         bayer_pattern="GRBG") for _ in range(n)]
        planes, _ = merge_bayer_burst(raws, _zero_fields(n, (64, 64)), 3, MergeConfig(c=1e12))
        for p, single in zip(planes, split_bayer_planes(raws[3])):
            ratio = single[8:-8, 8:-8].std() / p[8:-8, 8:-8].std()
            assert ratio == pytest.approx(np.sqrt(n), rel=0.15)
