"""Robust frequency-domain temporal merge of an aligned burst.

Every frame is cut into half-overlapped raised-cosine windowed tiles. For
each tile the unitary 2-D DFTs of all frames are combined per frequency::

    merged = 1/N * sum_z [ T_z + A_z * (T_ref - T_z) ]
    A_z    = |D_z|^2 / (|D_z|^2 + c * sigma2),   D_z = T_ref - T_z

so that frequencies where an alternate frame disagrees with the reference by
much more than the noise level fall back to the reference. ``sigma2`` is the
per-pixel noise variance; with the unitary transform white noise of that
variance has the same variance per coefficient.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError
from .imgio import split_bayer_planes
from .noise import estimate_noise_variance

WINDOWS = ("raised_cosine",)


@dataclass(frozen=True)
class MergeConfig:
    tile_size: int = 16
    c: float = 8.0
    noise_variance: float | str = "auto"
    window: str = "raised_cosine"

    def __post_init__(self):
        t = self.tile_size
        if t < 2 or t & (t - 1):
            raise ConfigError(f"merge tile_size must be a power of two, got {t}")
        if self.c < 0:
            raise ConfigError("c must be non-negative")
        nv = self.noise_variance
        if isinstance(nv, str):
            if nv.lower() != "auto":
                raise ConfigError(f"noise_variance must be a number or 'auto', got {nv!r}")
        elif not nv > 0:
            raise ConfigError("explicit noise_variance must be positive")
        if self.window.lower() not in WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}")


@dataclass
class MergeStats:
    """``mean_contribution[z, ty, tx]`` is the tile-mean of A_z for frame z."""

    mean_contribution: np.ndarray
    rejected_energy_fraction: float
    noise_variance: float
    reference_index: int

    def to_csv(self, path) -> None:
        n, ny, nx = self.mean_contribution.shape
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "tile_x", "tile_y", "mean_contribution"])
            for z in range(n):
                for ty in range(ny):
                    for tx in range(nx):
                        writer.writerow([z, tx, ty, f"{self.mean_contribution[z, ty, tx]:.6g}"])


def raised_cosine(size: int) -> np.ndarray:
    """1-D window ``0.5 - 0.5 cos(2 pi (i + 0.5) / size)``; shifts by size/2 sum to 1."""
    i = np.arange(size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * (i + 0.5) / size)


def window_2d(size: int) -> np.ndarray:
    w = raised_cosine(size)
    return np.outer(w, w)


def window_tile(tile) -> np.ndarray:
    """Multiply a square tile (or a stack of them) by the separable raised-cosine window."""
    tile = np.asarray(tile, dtype=np.float64)
    size = tile.shape[-1]
    if tile.shape[-2] != size:
        raise DataError(f"tile must be square, got {tile.shape[-2:]}")
    return tile * window_2d(size)


def _check_pow2(size):
    if size < 1 or size & (size - 1):
        raise DataError(f"DFT tiles must be a power-of-two size, got {size}")


def dft2(tile) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes of a square power-of-two tile."""
    tile = np.asarray(tile)
    if tile.shape[-1] != tile.shape[-2]:
        raise DataError(f"DFT tiles must be square, got {tile.shape[-2:]}")
    _check_pow2(tile.shape[-1])
    return np.fft.fft2(tile, norm="ortho")


def idft2(coeffs) -> np.ndarray:
    """Inverse of :func:`dft2`; returns the real part."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-1] != coeffs.shape[-2]:
        raise DataError("spectral tiles must be square")
    _check_pow2(coeffs.shape[-1])
    return np.fft.ifft2(coeffs, norm="ortho").real


def contribution(diff, c: float, sigma2: float) -> np.ndarray:
    """A_z for a difference spectrum ``diff``; 0 where the difference is 0."""
    if c > 0 and not sigma2 > 0:
        raise ConfigError("noise variance must be positive when c > 0")
    power = np.abs(diff) ** 2
    denom = power + c * sigma2
    return np.divide(power, denom, out=np.zeros_like(power), where=denom > 0)


def merge_tile(ref, alts, c: float, sigma2: float) -> np.ndarray:
    """Merge one reference spectrum with the alternate spectra (reference excluded from ``alts``).

    The average runs over ``N = len(alts) + 1`` frames; the reference's own
    correction term vanishes.
    """
    ref = np.asarray(ref)
    if c > 0 and not sigma2 > 0:
        raise ConfigError("noise variance must be positive when c > 0")
    acc = ref.astype(np.complex128)
    for alt in alts:
        alt = np.asarray(alt)
        if alt.shape != ref.shape:
            raise DataError(f"spectral tile shape mismatch: {alt.shape} vs {ref.shape}")
        diff = ref - alt
        acc = acc + alt + contribution(diff, c, sigma2) * diff
    return acc / (len(alts) + 1)


def _symmetric_index(idx, n):
    """Map arbitrary integer indices into [0, n) by mirror reflection (edge repeated)."""
    period = 2 * n
    m = np.mod(idx, period)
    return np.where(m < n, m, period - 1 - m)


@dataclass(frozen=True)
class _MergeGrid:
    tile_size: int
    height: int
    width: int

    @property
    def half(self):
        return self.tile_size // 2

    def origins(self, n):
        k = -(-n // self.half) + 1
        return -self.half + self.half * np.arange(k)

    @property
    def origins_y(self):
        return self.origins(self.height)

    @property
    def origins_x(self):
        return self.origins(self.width)


def _nearest_alignment_tile(field_, merge_grid: _MergeGrid):
    """Integer displacement per merge tile, taken from the nearest alignment tile."""
    g = field_.grid
    if (g.height, g.width) != (merge_grid.height, merge_grid.width):
        raise DataError(
            f"displacement field is for {g.width}x{g.height}, frames are "
            f"{merge_grid.width}x{merge_grid.height}"
        )
    half = (merge_grid.tile_size - 1) / 2.0
    cy = merge_grid.origins_y + half
    cx = merge_grid.origins_x + half
    iy = np.abs(cy[:, None] - g.centers_y()[None, :]).argmin(axis=1)
    ix = np.abs(cx[:, None] - g.centers_x()[None, :]).argmin(axis=1)
    return field_.d[iy[:, None], ix[None, :]]


def _gather_tiles(frame, grid: _MergeGrid, disp=None):
    t = np.arange(grid.tile_size)
    oy, ox = grid.origins_y, grid.origins_x
    if disp is None:
        rows = np.broadcast_to((oy[:, None] + t)[:, None, :], (len(oy), len(ox), len(t)))
        cols = np.broadcast_to((ox[:, None] + t)[None, :, :], (len(oy), len(ox), len(t)))
    else:
        rows = oy[:, None, None] + disp[..., 1, None] + t
        cols = ox[None, :, None] + disp[..., 0, None] + t
    rows = _symmetric_index(rows, frame.shape[0])
    cols = _symmetric_index(cols, frame.shape[1])
    return frame[rows[..., :, None], cols[..., None, :]]


def _overlap_add(tiles, grid: _MergeGrid, weight_tile):
    """Accumulate (ny, nx, T, T) tiles onto the padded canvas and crop to the image."""
    t = grid.tile_size
    h = grid.half
    oy, ox = grid.origins_y, grid.origins_x
    ph, pw = oy[-1] + t + h, ox[-1] + t + h
    out = np.zeros((ph, pw))
    wsum = np.zeros((ph, pw))
    # tiles in the same parity class never overlap, so each class is one strided write
    for py in (0, 1):
        for px in (0, 1):
            sub = tiles[py::2, px::2]
            ny, nx = sub.shape[:2]
            if ny == 0 or nx == 0:
                continue
            y0, x0 = oy[py] + h, ox[px] + h
            block = sub.transpose(0, 2, 1, 3).reshape(ny * t, nx * t)
            out[y0:y0 + ny * t, x0:x0 + nx * t] += block
            wsum[y0:y0 + ny * t, x0:x0 + nx * t] += np.tile(weight_tile, (ny, nx))
    out = out[h:h + grid.height, h:h + grid.width]
    wsum = wsum[h:h + grid.height, h:h + grid.width]
    return out / wsum


def merge_frames(frames, fields, reference_index: int, config: MergeConfig | None = None,
                 noise_variance=None):
    """Merge a stack of same-size frames given one displacement field per frame.

    Returns ``(image, MergeStats)``. ``fields[reference_index]`` is ignored.
    """
    config = config or MergeConfig()
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if len({f.shape for f in frames}) != 1:
        raise DataError("frames must share one shape")
    if len(fields) != len(frames):
        raise DataError(f"{len(frames)} frames but {len(fields)} displacement fields")
    if not 0 <= reference_index < len(frames):
        raise DataError("reference_index out of range")
    ref = frames[reference_index]
    height, width = ref.shape

    sigma2 = noise_variance
    if sigma2 is None:
        nv = config.noise_variance
        sigma2 = estimate_noise_variance(ref) if isinstance(nv, str) else float(nv)
    c = config.c
    if c > 0 and not sigma2 > 0:
        raise ConfigError("noise variance must be positive when c > 0")

    grid = _MergeGrid(config.tile_size, height, width)
    win = window_2d(config.tile_size)
    spec_ref = dft2(_gather_tiles(ref, grid) * win)
    acc = spec_ref.copy()
    n = len(frames)
    mean_a = np.zeros((n,) + spec_ref.shape[:2])
    rejected = 0.0
    total = 0.0
    for z, frame in enumerate(frames):
        if z == reference_index:
            continue
        disp = _nearest_alignment_tile(fields[z], grid)
        spec = dft2(_gather_tiles(frame, grid, disp) * win)
        diff = spec_ref - spec
        a = contribution(diff, c, sigma2)
        acc += spec + a * diff
        mean_a[z] = a.mean(axis=(-2, -1))
        power = np.abs(diff) ** 2
        rejected += float((a * power).sum())
        total += float(power.sum())
    merged_tiles = idft2(acc / n)
    image = _overlap_add(merged_tiles, grid, win)
    stats = MergeStats(mean_a, rejected / total if total > 0 else 0.0, float(sigma2),
                       reference_index)
    return image, stats


def merge_burst(burst, fields, config: MergeConfig | None = None):
    """Merge a gray burst aligned by ``fields`` (one per frame, as from ``align_burst``)."""
    return merge_frames(burst.frames, fields, burst.reference_index, config)


def naive_average(burst) -> np.ndarray:
    """Unaligned per-pixel mean of the burst frames."""
    frames = burst.frames if hasattr(burst, "frames") else burst
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in frames])
    return stack.mean(axis=0)


def merge_bayer_burst(raw_frames, fields, reference_index: int,
                      config: MergeConfig | None = None):
    """Merge each Bayer plane of a raw burst with fields computed on the gray image.

    Returns ``(planes, stats_per_plane)``; noise variance is estimated per plane
    when the config says ``auto``.
    """
    split = [split_bayer_planes(f) for f in raw_frames]
    planes, stats = [], []
    for p in range(4):
        merged, st = merge_frames([s[p] for s in split], fields, reference_index, config)
        planes.append(merged)
        stats.append(st)
    return planes, stats
