"""Hierarchical tile-based alignment of burst frames to a reference frame.

Displacements follow the convention ``ref(x) ~ alt(x + d)``: a tile at
``(y, x)`` in the reference is matched by the alternate-frame tile at
``(y + dy, x + dx)``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError
from .noise import estimate_noise_sigma_diagonal
from .pyramid import AlignmentRuleWarning, PyramidConfig, build_pyramid

NORMS = ("L1", "L2")
MAX_SEARCH_RADIUS = 32
# candidate tiles with less than this fraction inside the frame are not evaluated
MIN_OVERLAP = 0.5


@dataclass(frozen=True)
class TileGrid:
    """Half-overlapped square tiles; the last row/column is clamped to the border."""

    tile_size: int
    height: int
    width: int
    stride: int = 0

    def __post_init__(self):
        if self.stride <= 0:
            object.__setattr__(self, "stride", self.tile_size // 2)
        if self.height < self.tile_size or self.width < self.tile_size:
            raise DataError(
                f"{self.width}x{self.height} image is smaller than a {self.tile_size}-px tile"
            )

    @property
    def n_tiles_y(self) -> int:
        return -(-(self.height - self.tile_size) // self.stride) + 1

    @property
    def n_tiles_x(self) -> int:
        return -(-(self.width - self.tile_size) // self.stride) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_tiles_y, self.n_tiles_x

    def origins_y(self) -> np.ndarray:
        k = np.arange(self.n_tiles_y) * self.stride
        return np.minimum(k, self.height - self.tile_size)

    def origins_x(self) -> np.ndarray:
        k = np.arange(self.n_tiles_x) * self.stride
        return np.minimum(k, self.width - self.tile_size)

    def centers_y(self) -> np.ndarray:
        return self.origins_y() + (self.tile_size - 1) / 2.0

    def centers_x(self) -> np.ndarray:
        return self.origins_x() + (self.tile_size - 1) / 2.0

    def extract(self, image) -> np.ndarray:
        """All tiles of ``image`` as an array of shape (ny, nx, T, T)."""
        t = np.arange(self.tile_size)
        rows = self.origins_y()[:, None] + t
        cols = self.origins_x()[:, None] + t
        return np.asarray(image)[rows[:, None, :, None], cols[None, :, None, :]]


@dataclass
class DisplacementField:
    """Per-tile integer displacement ``d[..., 0] = dx``, ``d[..., 1] = dy``."""

    grid: TileGrid
    d: np.ndarray
    residual: np.ndarray
    reliable: np.ndarray
    bound: int | None = None

    @classmethod
    def zeros(cls, grid: TileGrid) -> "DisplacementField":
        shape = grid.shape
        return cls(grid, np.zeros(shape + (2,), dtype=np.int64), np.zeros(shape),
                   np.ones(shape, dtype=bool))

    @property
    def dx(self) -> np.ndarray:
        return self.d[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.d[..., 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tile_x", "tile_y", "dx", "dy", "residual", "reliable"])
            ny, nx = self.grid.shape
            for ty in range(ny):
                for tx in range(nx):
                    writer.writerow([tx, ty, int(self.d[ty, tx, 0]), int(self.d[ty, tx, 1]),
                                     f"{self.residual[ty, tx]:.9g}",
                                     int(bool(self.reliable[ty, tx]))])


@dataclass(frozen=True)
class AlignConfig:
    """Per-level settings, listed finest level first."""

    tile_sizes: tuple = (16, 16, 16, 8)
    search_radii: tuple = (2, 4, 4, 8)
    norms: tuple = ("L1", "L2", "L2", "L2")
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    unreliable_residual_factor: float = 8.0
    # absolute bound: residual must stay below noise_factor x (expected residual of a
    # correct match under the frame noise) + contrast_factor x (tile contrast)
    plausible_noise_factor: float = 2.0
    plausible_contrast_factor: float = 0.3

    def __post_init__(self):
        n = self.pyramid.n_levels
        for name in ("tile_sizes", "search_radii", "norms"):
            values = tuple(getattr(self, name))
            if len(values) < n:
                raise ConfigError(f"{name} needs {n} entries (one per level), got {len(values)}")
            object.__setattr__(self, name, values[:n])
        for t in self.tile_sizes:
            if t < 8 or t & (t - 1):
                raise ConfigError(f"tile size must be a power of two >= 8, got {t}")
        for r in self.search_radii:
            if r < 0:
                raise ConfigError("search radius must be non-negative")
        norms = tuple(str(s).upper() for s in self.norms)
        if any(s not in NORMS for s in norms):
            raise ConfigError(f"norms must be L1 or L2, got {self.norms}")
        object.__setattr__(self, "norms", norms)
        if self.unreliable_residual_factor <= 0:
            raise ConfigError("unreliable_residual_factor must be positive")
        if self.plausible_noise_factor < 0 or self.plausible_contrast_factor < 0:
            raise ConfigError("plausibility factors must be non-negative")

    @property
    def n_levels(self) -> int:
        return self.pyramid.n_levels

    def displacement_bounds(self) -> list[int]:
        """Largest reachable |dx| or |dy| per level (finest first)."""
        bounds = [0] * self.n_levels
        acc = 0
        for k in range(self.n_levels - 1, -1, -1):
            if k < self.n_levels - 1:
                acc *= self.pyramid.factors[k]
            acc += self.search_radii[k]
            bounds[k] = acc
        return bounds

    def check(self, shape) -> list[str]:
        messages = []
        for k, r in enumerate(self.search_radii):
            if r > MAX_SEARCH_RADIUS:
                messages.append(
                    f"[rule search-extent] level {k} search radius {r} px exceeds the "
                    f"{MAX_SEARCH_RADIUS}-px search extent recommended for robust alignment"
                )
        for msg in messages:
            warnings.warn(msg, AlignmentRuleWarning, stacklevel=2)
        return messages + self.pyramid.check(shape)


def _candidate_offsets(radius: int) -> np.ndarray:
    """(K, 2) integer (dx, dy) offsets in row-major order."""
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=1)


def _distance(diff: np.ndarray, norm: str, axis) -> np.ndarray:
    if norm == "L1":
        return np.abs(diff).sum(axis=axis)
    return (diff * diff).sum(axis=axis)


def align_tile(ref_tile, alt_region, search_radius: int, norm: str = "L2"):
    """Exhaustive integer search of ``ref_tile`` inside ``alt_region``.

    ``alt_region`` is the alternate frame cropped to ``T + 2r`` pixels per side,
    centred on the initial estimate. Returns ``(dx, dy, residual)``; ties go to
    the smaller displacement magnitude, then row-major candidate order.
    """
    ref_tile = np.asarray(ref_tile, dtype=np.float64)
    alt_region = np.asarray(alt_region, dtype=np.float64)
    t = ref_tile.shape[0]
    r = int(search_radius)
    if alt_region.shape != (t + 2 * r, t + 2 * r):
        raise DataError(f"alt_region must be {t + 2 * r} px square, got {alt_region.shape}")
    norm = norm.upper()
    best = None
    for dx, dy in _candidate_offsets(r):
        cand = alt_region[r + dy:r + dy + t, r + dx:r + dx + t]
        dist = float(_distance(ref_tile - cand, norm, axis=None))
        key = (dist, dx * dx + dy * dy)
        if best is None or key < best[0]:
            best = (key, int(dx), int(dy))
    (dist, _), dx, dy = best
    return dx, dy, dist


def _tile_distances(ref_tiles, alt, grid: TileGrid, dx, dy, norm):
    """Distance of every reference tile to the alternate tile displaced by (dx, dy).

    Pixels outside ``alt`` are excluded and the sum is rescaled to a full tile;
    candidates with less than MIN_OVERLAP coverage get ``inf``.
    """
    return _region_distances(ref_tiles, alt, grid, dx, dy, np.zeros((1, 2), dtype=np.int64),
                             norm)[0]


def _region_distances(ref_tiles, alt, grid: TileGrid, init_dx, init_dy, offsets, norm):
    """Distances for every candidate ``init + offset``; returns shape (K, ny, nx).

    The search region around each tile is gathered once and candidates are
    sliced out of it.
    """
    h, w = alt.shape
    t = grid.tile_size
    r = int(np.abs(offsets).max()) if len(offsets) else 0
    span = np.arange(-r, t + r)
    rows = grid.origins_y()[:, None, None] + init_dy[..., None] + span  # (ny, nx, T+2r)
    cols = grid.origins_x()[None, :, None] + init_dx[..., None] + span
    vr = (rows >= 0) & (rows < h)
    vc = (cols >= 0) & (cols < w)
    region = alt[np.clip(rows, 0, h - 1)[..., :, None], np.clip(cols, 0, w - 1)[..., None, :]]
    n = t * t
    out = np.empty((len(offsets),) + rows.shape[:2])
    clipped = ~(vr.all(axis=-1) & vc.all(axis=-1))
    by, bx = np.nonzero(clipped)
    if len(by):
        mask = vr[by, bx][:, :, None] & vc[by, bx][:, None, :]
    for k, (ox, oy) in enumerate(offsets):
        ys, xs = slice(r + oy, r + oy + t), slice(r + ox, r + ox + t)
        out[k] = _distance(ref_tiles - region[..., ys, xs], norm, axis=(-2, -1))
        if len(by):
            m = mask[:, ys, xs]
            diff = np.where(m, ref_tiles[by, bx] - region[by, bx][:, ys, xs], 0.0)
            count = m.sum(axis=(-2, -1))
            partial = _distance(diff, norm, axis=(-2, -1))
            out[k, by, bx] = np.where(count >= MIN_OVERLAP * n,
                                      partial * n / np.maximum(count, 1), np.inf)
    return out


def _pick_best(dists, dxs, dys):
    """Per-tile argmin over candidates with deterministic tie-breaking.

    ``dists``, ``dxs``, ``dys`` have shape (K, ny, nx) with K in row-major order.
    """
    k = dists.shape[0]
    best = dists.min(axis=0)
    tied = dists == best
    mag = dxs.astype(np.float64) ** 2 + dys.astype(np.float64) ** 2
    # magnitude first, then candidate order (already row-major)
    key = np.where(tied, mag * k + np.arange(k)[:, None, None], np.inf)
    idx = np.argmin(key, axis=0)
    take = idx[None]
    return (np.take_along_axis(dxs, take, 0)[0], np.take_along_axis(dys, take, 0)[0],
            np.take_along_axis(dists, take, 0)[0])


def search_level(ref_img, alt_img, grid: TileGrid, init, radius: int, norm: str):
    """Local exhaustive search of ±radius around the per-tile initial estimates.

    ``init`` is an (ny, nx, 2) integer array. Returns (d, residual).
    """
    ref_tiles = grid.extract(ref_img)
    offsets = _candidate_offsets(radius)
    dxs = init[None, ..., 0] + offsets[:, 0, None, None]
    dys = init[None, ..., 1] + offsets[:, 1, None, None]
    dists = _region_distances(ref_tiles, alt_img, grid, init[..., 0], init[..., 1], offsets, norm)
    bx, by, res = _pick_best(dists, dxs, dys)
    return np.stack([bx, by], axis=-1), res


def upsample_displacements(coarse: DisplacementField, factor: int, fine_grid: TileGrid,
                           ref_level, alt_level, norm: str = "L2") -> DisplacementField:
    """Seed a finer grid from the coarse field.

    Each fine tile scores the scaled displacements of its nearest coarse tile
    and the nearest horizontal and vertical neighbours on ``ref_level`` /
    ``alt_level`` and keeps the lowest-distance one.
    """
    cg = coarse.grid
    if coarse.d.shape[:2] != cg.shape:
        raise DataError("coarse field does not match its grid")
    exp_h, exp_w = -(-fine_grid.height // factor), -(-fine_grid.width // factor)
    if (exp_h, exp_w) != (cg.height, cg.width):
        raise DataError(
            f"coarse grid {cg.width}x{cg.height} inconsistent with fine grid "
            f"{fine_grid.width}x{fine_grid.height} at factor {factor}"
        )
    if ref_level.shape != (fine_grid.height, fine_grid.width) or alt_level.shape != ref_level.shape:
        raise DataError("level images do not match the fine grid")

    def neighbours(fine_centers, coarse_centers):
        p = fine_centers / factor
        near = np.abs(p[:, None] - coarse_centers[None, :]).argmin(axis=1)
        step = np.where(p >= coarse_centers[near], 1, -1)
        other = np.clip(near + step, 0, len(coarse_centers) - 1)
        return near, other

    ny_near, ny_other = neighbours(fine_grid.centers_y(), cg.centers_y())
    nx_near, nx_other = neighbours(fine_grid.centers_x(), cg.centers_x())
    iy, ix = np.meshgrid(ny_near, nx_near, indexing="ij")
    oy, ox = np.meshgrid(ny_other, nx_other, indexing="ij")
    cands = np.stack([coarse.d[iy, ix], coarse.d[iy, ox], coarse.d[oy, ix]]) * factor

    ref_tiles = fine_grid.extract(ref_level)
    dists = np.stack([_tile_distances(ref_tiles, alt_level, fine_grid, c[..., 0], c[..., 1], norm)
                      for c in cands])
    choice = np.argmin(dists, axis=0)
    d = np.take_along_axis(cands, choice[None, ..., None], 0)[0]
    res = np.take_along_axis(dists, choice[None], 0)[0]
    return DisplacementField(fine_grid, d.astype(np.int64), res,
                             np.isfinite(res))


def flag_unreliable(residual, d, factor: float, bound: int | None = None,
                    max_residual=None) -> np.ndarray:
    """Reliable tiles: finite residual within ``factor`` x median, below the optional
    per-tile ``max_residual`` and short of the displacement ``bound``."""
    finite = np.isfinite(residual)
    if not finite.any():
        return np.zeros(residual.shape, dtype=bool)
    med = float(np.median(residual[finite]))
    reliable = finite & (residual <= factor * med)
    if max_residual is not None:
        reliable &= residual <= max_residual
    if bound is not None and bound > 0:
        reliable &= np.abs(d).max(axis=-1) < bound
    return reliable


def plausible_residual(ref_tiles, norm: str, sigma2: float, noise_factor: float,
                       contrast_factor: float) -> np.ndarray:
    """Largest residual a correct match can plausibly leave, per tile.

    A correct match leaves the difference of two noise realisations (plus
    small interpolation error); a match against unrelated content leaves a
    residual on the scale of the tile's own contrast.
    """
    t2 = ref_tiles.shape[-1] * ref_tiles.shape[-2]
    centred = ref_tiles - ref_tiles.mean(axis=(-2, -1), keepdims=True)
    if norm == "L1":
        noise = t2 * 2.0 * np.sqrt(sigma2 / np.pi)  # E|n1 - n2| per pixel
    else:
        noise = t2 * 2.0 * sigma2
    contrast = _distance(centred, norm, axis=(-2, -1))
    return noise_factor * noise + contrast_factor * contrast


def _level_grids(shapes, config: AlignConfig):
    return [TileGrid(t, h, w) for (h, w), t in zip(shapes, config.tile_sizes)]


def align_frame(ref_pyr, alt_pyr, config: AlignConfig | None = None) -> DisplacementField:
    """Coarse-to-fine alignment of one alternate pyramid to the reference pyramid."""
    config = config or AlignConfig()
    if ref_pyr.shapes != alt_pyr.shapes:
        raise DataError(f"pyramid geometry mismatch: {ref_pyr.shapes} vs {alt_pyr.shapes}")
    n = len(ref_pyr)
    if n != config.n_levels:
        raise DataError(f"pyramid has {n} levels, config expects {config.n_levels}")
    grids = _level_grids(ref_pyr.shapes, config)

    field_ = None
    for k in range(n - 1, -1, -1):
        grid = grids[k]
        norm = config.norms[k]
        if field_ is None:
            init = np.zeros(grid.shape + (2,), dtype=np.int64)
        else:
            field_ = upsample_displacements(field_, ref_pyr.factors[k], grid,
                                            ref_pyr[k], alt_pyr[k], norm)
            init = field_.d
        d, res = search_level(ref_pyr[k], alt_pyr[k], grid, init, config.search_radii[k], norm)
        field_ = DisplacementField(grid, d, res, np.isfinite(res))

    bound = config.displacement_bounds()[0]
    field_.bound = bound
    ref0 = ref_pyr[0]
    sigma2 = estimate_noise_sigma_diagonal(ref0) ** 2
    limit = plausible_residual(grids[0].extract(ref0), config.norms[0], sigma2,
                               config.plausible_noise_factor, config.plausible_contrast_factor)
    field_.reliable = flag_unreliable(field_.residual, field_.d,
                                      config.unreliable_residual_factor, bound, limit)
    return field_


def min_level_sizes(config: AlignConfig) -> list[int]:
    return list(config.tile_sizes)


def build_align_pyramid(image, config: AlignConfig):
    return build_pyramid(image, config.pyramid, min_size=min_level_sizes(config))


def align_burst(burst, config: AlignConfig | None = None) -> list[DisplacementField]:
    """One field per frame; the reference frame gets the zero field."""
    config = config or AlignConfig()
    frames = [np.asarray(f, dtype=np.float64) for f in burst.frames]
    ref_idx = burst.reference_index
    # a lone frame needs no pyramid, so it is accepted at any size
    ref_pyr = build_align_pyramid(frames[ref_idx], config) if len(frames) > 1 else None
    fields = []
    for i, frame in enumerate(frames):
        if i == ref_idx:
            zero = DisplacementField.zeros(TileGrid(config.tile_sizes[0], *frame.shape))
            zero.bound = config.displacement_bounds()[0]
            fields.append(zero)
            continue
        fields.append(align_frame(ref_pyr, build_align_pyramid(frame, config), config))
    return fields
