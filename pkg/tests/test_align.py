import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstsfm.align import (AlignConfig, DisplacementField, TileGrid, align_burst, align_frame,
                            align_tile, build_align_pyramid, search_level,
                            upsample_displacements)
from burstsfm.exceptions import ConfigError, DataError
from burstsfm.imgio import Burst
from burstsfm.pyramid import AlignmentRuleWarning, PyramidConfig

from .conftest import make_texture, shift_image


def _align(ref, alt, config=None):
    config = config or AlignConfig()
    return align_frame(build_align_pyramid(ref, config), build_align_pyramid(alt, config), config)


def _brute_force_tile(ref, alt, y0, x0, t, radius, norm):
    """Independent oracle: plain loops, no shared helpers."""
    best = None
    tile = ref[y0:y0 + t, x0:x0 + t]
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            cand = alt[y0 + dy:y0 + dy + t, x0 + dx:x0 + dx + t]
            diff = tile - cand
            dist = np.abs(diff).sum() if norm == "L1" else (diff ** 2).sum()
            key = (dist, dx * dx + dy * dy, dy, dx)
            if best is None or key < best:
                best = key
    return best[3], best[2], best[0]


class TestAlignTile:
    def test_exact_shift(self, rng):
        t, r = 16, 4
        region = rng.random((t + 2 * r, t + 2 * r))
        ref = region[r - 2:r - 2 + t, r + 3:r + 3 + t]
        dx, dy, res = align_tile(ref, region, r, "L2")
        assert (dx, dy) == (3, -2)
        assert res == 0.0

    def test_constant_tie_break(self):
        dx, dy, res = align_tile(np.full((8, 8), 0.4), np.full((16, 16), 0.4), 4, "L1")
        assert (dx, dy, res) == (0, 0, 0.0)

    def test_row_major_tie_break(self):
        # rows alternate 0/1, so the placements dy = -1 and dy = +1 both match exactly;
        # they tie on |d|^2 as well and row-major order picks dy = -1
        t, r = 8, 1
        region = np.tile(np.array([[0.0], [1.0]]), (5, t + 2 * r))[:t + 2 * r]
        ref = region[0:t, r:r + t]  # equals the placement dy = -1 and dy = +1
        dx, dy, _ = align_tile(ref, region, r, "L2")
        assert (dx, dy) == (0, -1)

    def test_region_size_checked(self):
        with pytest.raises(DataError):
            align_tile(np.zeros((8, 8)), np.zeros((10, 10)), 2)

    def test_noisy_recovery_rate(self):
        rng = np.random.default_rng(7)
        t, r, hits = 16, 8, 0
        trials = 100
        for _ in range(trials):
            tex = make_texture((t + 2 * r, t + 2 * r), seed=int(rng.integers(1 << 30)), smooth=1.0)
            region = tex + rng.normal(0, 0.03, tex.shape)
            ref = tex[r - 3:r - 3 + t, r + 5:r + 5 + t] + rng.normal(0, 0.03, (t, t))
            dx, dy, _ = align_tile(ref, region, r, "L2")
            hits += (dx, dy) == (5, -3)
        assert hits / trials >= 0.95


class TestSearchLevel:
    @pytest.mark.parametrize("norm", ["L1", "L2"])
    def test_matches_brute_force(self, norm, rng):
        n, t, r = 64, 8, 3
        ref, alt = rng.random((n, n)), rng.random((n, n))
        alt[10:50, 10:50] = ref[8:48, 11:51]
        grid = TileGrid(t, n, n)
        d, res = search_level(ref, alt, grid, np.zeros(grid.shape + (2,), int), r, norm)
        for iy, y0 in enumerate(grid.origins_y()):
            for ix, x0 in enumerate(grid.origins_x()):
                if not (r <= y0 <= n - t - r and r <= x0 <= n - t - r):
                    continue
                dx, dy, dist = _brute_force_tile(ref, alt, y0, x0, t, r, norm)
                assert (d[iy, ix, 0], d[iy, ix, 1]) == (dx, dy)
                assert res[iy, ix] == pytest.approx(dist, rel=1e-12, abs=1e-12)

    def test_border_candidates_outside_frame(self):
        tex = make_texture((40, 40), seed=2)
        grid = TileGrid(8, 40, 40)
        d, res = search_level(tex, tex, grid, np.zeros(grid.shape + (2,), int), 4, "L2")
        assert np.all(d == 0)
        assert np.all(res == 0)


class TestTileGrid:
    def test_covers_image(self):
        g = TileGrid(16, 50, 70)
        assert g.stride == 8
        assert g.origins_y()[-1] + 16 == 50
        assert g.origins_x()[-1] + 16 == 70
        assert g.extract(np.zeros((50, 70))).shape == (g.n_tiles_y, g.n_tiles_x, 16, 16)

    def test_too_small(self):
        with pytest.raises(DataError):
            TileGrid(16, 8, 64)


class TestUpsample:
    def _setup(self, value):
        fine = TileGrid(8, 64, 64)
        coarse_grid = TileGrid(8, 16, 16)
        d = np.zeros(coarse_grid.shape + (2,), dtype=np.int64)
        d[...] = value
        coarse = DisplacementField(coarse_grid, d, np.zeros(coarse_grid.shape),
                                   np.ones(coarse_grid.shape, bool))
        tex = make_texture((64, 64), seed=4)
        return coarse, fine, tex

    def test_uniform_scaled(self):
        coarse, fine, tex = self._setup((1, 0))
        out = upsample_displacements(coarse, 4, fine, tex, tex)
        assert np.all(out.d == np.array([4, 0]))

    def test_zero(self):
        coarse, fine, tex = self._setup((0, 0))
        assert not upsample_displacements(coarse, 4, fine, tex, tex).d.any()

    def test_geometry_mismatch(self):
        coarse, fine, tex = self._setup((0, 0))
        with pytest.raises(DataError):
            upsample_displacements(coarse, 2, fine, tex, tex)

    def test_motion_boundary_picks_lower_residual(self):
        # left half moves by +6 px in x, right half by -6 px; the coarse field (factor 2)
        # carries +3 / -3 on either side of the boundary at coarse x = 32
        n, pad, factor = 128, 16, 2
        tex = make_texture((n, n), seed=11, pad=pad)
        ref = tex[pad:pad + n, pad:pad + n]
        alt = np.empty_like(ref)
        alt[:, :64] = shift_image(tex, 6, 0, (n, n), pad)[:, :64]
        alt[:, 64:] = shift_image(tex, -6, 0, (n, n), pad)[:, 64:]
        cgrid = TileGrid(8, n // factor, n // factor)
        cd = np.zeros(cgrid.shape + (2,), dtype=np.int64)
        cd[..., 0] = np.where(cgrid.centers_x() < 32, 3, -3)[None, :]
        coarse = DisplacementField(cgrid, cd, np.zeros(cgrid.shape), np.ones(cgrid.shape, bool))
        fine = TileGrid(16, n, n)
        out = upsample_displacements(coarse, factor, fine, ref, alt, "L1")

        def dist(y0, x0, dx):
            if not 0 <= x0 + dx <= n - 16:
                return np.inf
            return np.abs(ref[y0:y0 + 16, x0:x0 + 16] - alt[y0:y0 + 16, x0 + dx:x0 + dx + 16]).sum()

        for iy, y0 in enumerate(fine.origins_y()):
            for ix, x0 in enumerate(fine.origins_x()):
                chosen = out.d[iy, ix, 0]
                assert chosen in (6, -6) and out.d[iy, ix, 1] == 0
                assert out.residual[iy, ix] == pytest.approx(dist(y0, x0, chosen), rel=1e-12)
                c = fine.centers_x()[ix] / factor
                nearest = cgrid.centers_x()[np.abs(cgrid.centers_x() - c).argmin()]
                assert out.residual[iy, ix] <= dist(y0, x0, 6 if nearest < 32 else -6)
                if x0 + 16 <= 56:
                    assert chosen == 6
                elif x0 >= 72:
                    assert chosen == -6


class TestAlignFrame:
    def test_identical(self):
        tex = make_texture((128, 128), seed=1)
        f = _align(tex, tex)
        assert not f.d.any()
        assert not f.residual.any()
        assert f.reliable.all()

    def test_global_shift_matches_exhaustive(self):
        n, pad = 128, 20
        tex = make_texture((n, n), seed=9, pad=pad)
        ref = tex[pad:pad + n, pad:pad + n]
        alt = shift_image(tex, 12, 7, (n, n), pad)
        f = _align(ref, alt)
        grid = f.grid
        oracle, _ = search_level(ref, alt, grid, np.zeros(grid.shape + (2,), int), 16, "L1")
        assert np.all(f.d[f.reliable] == [12, 7])
        np.testing.assert_array_equal(f.d[f.reliable], oracle[f.reliable])
        assert f.reliable.mean() > 0.8

    def test_shift_beyond_range_saturates(self):
        cfg = AlignConfig((16, 8), (2, 2), ("L1", "L2"), PyramidConfig(2, (2,)))
        assert cfg.displacement_bounds()[0] == 6
        n, pad = 96, 20
        tex = make_texture((n, n), seed=5, pad=pad)
        ref = tex[pad:pad + n, pad:pad + n]
        f = _align(ref, shift_image(tex, 15, 0, (n, n), pad), cfg)
        assert np.abs(f.d).max() <= 6
        assert not f.reliable[np.abs(f.d).max(axis=-1) == 6].any()
        assert f.reliable.mean() < 0.5

    def test_pyramid_mismatch(self):
        cfg = AlignConfig()
        a = build_align_pyramid(make_texture((128, 128)), cfg)
        b = build_align_pyramid(make_texture((256, 256)), cfg)
        with pytest.raises(DataError):
            align_frame(a, b, cfg)

    def test_residual_is_own_tile_distance(self):
        n, pad = 128, 16
        tex = make_texture((n, n), seed=21, pad=pad)
        ref = tex[pad:pad + n, pad:pad + n]
        alt = shift_image(tex, -5, 3, (n, n), pad) + np.random.default_rng(0).normal(0, .02, (n, n))
        f = _align(ref, alt)
        t = f.grid.tile_size
        for iy, y0 in enumerate(f.grid.origins_y()):
            for ix, x0 in enumerate(f.grid.origins_x()):
                dx, dy = f.d[iy, ix]
                if not (0 <= y0 + dy <= n - t and 0 <= x0 + dx <= n - t):
                    continue
                diff = ref[y0:y0 + t, x0:x0 + t] - alt[y0 + dy:y0 + dy + t, x0 + dx:x0 + dx + t]
                assert f.residual[iy, ix] == pytest.approx(np.abs(diff).sum(), rel=1e-9)

    def test_violating_motion_mostly_unreliable(self):
        # motion over half the frame: most tiles have no true match in the frame
        n, pad = 128, 100
        tex = make_texture((n, n), seed=1, pad=pad)
        ref = tex[pad:pad + n, pad:pad + n]
        for s in (72, 90):
            f = _align(ref, shift_image(tex, 0, s, (n, n), pad))
            assert f.reliable.mean() < 0.5


class TestAlignBurst:
    def test_single_frame(self):
        fields = align_burst(Burst([make_texture((64, 64))]),
                             AlignConfig((16, 8), (2, 2), ("L1", "L2"), PyramidConfig(2, (2,))))
        assert len(fields) == 1
        assert not fields[0].d.any()

    def test_seven_frames(self):
        n, pad = 128, 12
        tex = make_texture((n, n), seed=8, pad=pad)
        shifts = [(-9, 6), (-6, 4), (-3, 2), (0, 0), (3, -2), (6, -4), (9, -6)]
        frames = [shift_image(tex, dx, dy, (n, n), pad) for dx, dy in shifts]
        fields = align_burst(Burst(frames, 3))
        for (dx, dy), f in zip(shifts, fields):
            assert np.all(f.d[f.reliable] == [dx, dy])
            assert f.reliable.mean() > 0.8


class TestConfig:
    def test_bounds(self):
        assert AlignConfig().displacement_bounds() == [154, 76, 36, 8]

    def test_radius_warning(self):
        cfg = AlignConfig(search_radii=(2, 4, 4, 40))
        with pytest.warns(AlignmentRuleWarning, match="search-extent"):
            cfg.check((1024, 1024))

    @pytest.mark.parametrize("kw", [dict(tile_sizes=(4, 16, 16, 8)),
                                    dict(tile_sizes=(12, 16, 16, 8)),
                                    dict(norms=("L3", "L2", "L2", "L2")),
                                    dict(search_radii=(2, 4)),
                                    dict(unreliable_residual_factor=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            AlignConfig(**kw)

    def test_csv_dump(self, tmp_path):
        f = DisplacementField.zeros(TileGrid(8, 16, 24))
        f.to_csv(tmp_path / "d.csv")
        rows = list(csv.reader(open(tmp_path / "d.csv")))
        assert rows[0] == ["tile_x", "tile_y", "dx", "dy", "residual", "reliable"]
        assert len(rows) == 1 + f.grid.n_tiles_x * f.grid.n_tiles_y


@settings(max_examples=12, deadline=None)
@given(dx=st.integers(-10, 10), dy=st.integers(-10, 10), seed=st.integers(0, 1000))
def test_shift_equivariance(dx, dy, seed):
    n, pad = 128, 12
    tex = make_texture((n, n), seed=seed, pad=pad)
    ref = tex[pad:pad + n, pad:pad + n]
    f = _align(ref, shift_image(tex, dx, dy, (n, n), pad))
    assert np.all(f.d[f.reliable] == [dx, dy])
    assert f.reliable.mean() > 0.75


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_self_alignment_zero(seed):
    tex = make_texture((64, 96), seed=seed)
    f = _align(tex, tex, AlignConfig((16, 8), (2, 2), ("L1", "L2"), PyramidConfig(2, (2,))))
    assert not f.d.any()
    assert not f.residual.any()
