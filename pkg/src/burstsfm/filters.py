"""Spatial post-filters for merged images: DFT-domain noise shaping and bilateral."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .merge import (_gather_tiles, _MergeGrid, _overlap_add, estimate_noise_variance,
                    window_2d)


@dataclass(frozen=True)
class WienerConfig:
    """Shrinkage ``|T|^2 / (|T|^2 + k * (1 + |w|/w_max)^p * sigma2 * size^2)``."""

    tile_size: int = 16
    shaping_exponent: float = 1.0
    strength: float = 1.0
    noise_variance: float | str = "auto"

    def __post_init__(self):
        t = self.tile_size
        if t < 2 or t & (t - 1):
            raise ConfigError("wiener tile_size must be a power of two")
        if self.shaping_exponent < 0 or self.strength < 0:
            raise ConfigError("shaping_exponent and strength must be non-negative")
        nv = self.noise_variance
        if isinstance(nv, str):
            if nv.lower() != "auto":
                raise ConfigError("noise_variance must be a number or 'auto'")
        elif not nv > 0:
            raise ConfigError("explicit noise_variance must be positive")


@dataclass(frozen=True)
class BilateralConfig:
    radius: int = 5
    sigma_spatial: float = 3.0
    sigma_range: float | str = "auto"

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError("radius must be >= 0")
        if self.sigma_spatial <= 0:
            raise ConfigError("sigma_spatial must be positive")
        sr = self.sigma_range
        if isinstance(sr, str):
            if sr.lower() != "auto":
                raise ConfigError("sigma_range must be a number or 'auto'")
        elif not sr > 0:
            raise ConfigError("sigma_range must be positive")


def noise_shaping_ramp(size: int, exponent: float) -> np.ndarray:
    """``(1 + |w| / w_max)^p`` on the (unshifted) DFT frequency grid."""
    f = np.fft.fftfreq(size) * size
    radius = np.hypot(f[:, None], f[None, :])
    return (1.0 + radius / radius.max()) ** exponent


def wiener_gain(spectrum, sigma2: float, strength: float, ramp) -> np.ndarray:
    """Per-coefficient gain in [0, 1]; the DC term is always passed."""
    size = spectrum.shape[-1]
    power = np.abs(spectrum) ** 2
    noise = strength * ramp * sigma2 * size * size
    denom = power + noise
    gain = np.divide(power, denom, out=np.ones_like(power), where=denom > 0)
    gain[..., 0, 0] = 1.0
    return gain


def wiener_shape(image, config: WienerConfig | None = None, noise_variance=None) -> np.ndarray:
    """Tile-wise DFT shrinkage that suppresses high frequencies hardest.

    Each tile mean is carried through untouched; output is clipped to the
    input range.
    """
    config = config or WienerConfig()
    img = np.asarray(image, dtype=np.float64)
    if config.strength == 0:
        return img.copy()
    sigma2 = noise_variance
    if sigma2 is None:
        nv = config.noise_variance
        sigma2 = estimate_noise_variance(img) if isinstance(nv, str) else float(nv)

    grid = _MergeGrid(config.tile_size, *img.shape)
    win = window_2d(config.tile_size)
    tiles = _gather_tiles(img, grid)
    means = tiles.mean(axis=(-2, -1), keepdims=True)
    spec = np.fft.fft2((tiles - means) * win)
    gain = wiener_gain(spec, sigma2, config.strength,
                       noise_shaping_ramp(config.tile_size, config.shaping_exponent))
    filtered = np.fft.ifft2(spec * gain).real + means * win
    out = _overlap_add(filtered, grid, win)
    return np.clip(out, img.min(), img.max())


def bilateral(image, config: BilateralConfig | None = None, noise_variance=None) -> np.ndarray:
    """Edge-preserving bilateral filter with clamp-to-edge borders.

    ``sigma_range='auto'`` uses twice the estimated noise standard deviation.
    """
    config = config or BilateralConfig()
    img = np.asarray(image, dtype=np.float64)
    r = int(config.radius)
    if r == 0:
        return img.copy()
    sr = config.sigma_range
    if isinstance(sr, str):
        if noise_variance is None:
            noise_variance = estimate_noise_variance(img)
        sr = 2.0 * np.sqrt(noise_variance)
    ss = config.sigma_spatial
    h, w = img.shape
    padded = np.pad(img, r, mode="edge")
    num = np.zeros_like(img)
    den = np.zeros_like(img)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            wgt = np.exp(-(dx * dx + dy * dy) / (2 * ss * ss)
                         - (shifted - img) ** 2 / (2 * sr * sr))
            num += wgt * shifted
            den += wgt
    return num / den


def apply_post_filter(image, kind: str = "none", wiener: WienerConfig | None = None,
                      bilateral_config: BilateralConfig | None = None, noise_variance=None):
    kind = (kind or "none").lower()
    if kind == "none":
        return np.asarray(image, dtype=np.float64)
    if kind == "wiener":
        return wiener_shape(image, wiener, noise_variance)
    if kind == "bilateral":
        return bilateral(image, bilateral_config, noise_variance)
    raise ConfigError(f"unknown post filter {kind!r}; expected none, wiener or bilateral")
