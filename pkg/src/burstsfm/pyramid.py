"""Gaussian pyramids for coarse-to-fine alignment."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, DataError


class AlignmentRuleWarning(UserWarning):
    """A configuration breaks one of the robust-alignment recommendations."""


DEFAULT_FACTORS = (2, 2, 4)


@dataclass(frozen=True)
class PyramidConfig:
    n_levels: int = 4
    factors: tuple = DEFAULT_FACTORS
    blur_sigma_scale: float = 0.5

    def __post_init__(self):
        if self.n_levels < 1:
            raise ConfigError("n_levels must be >= 1")
        factors = tuple(int(f) for f in self.factors)
        if len(factors) < self.n_levels - 1:
            raise ConfigError(
                f"{self.n_levels} levels need {self.n_levels - 1} factors, got {len(factors)}"
            )
        if any(f < 2 for f in factors):
            raise ConfigError("downsample factors must be integers >= 2")
        if self.blur_sigma_scale <= 0:
            raise ConfigError("blur_sigma_scale must be positive")
        object.__setattr__(self, "factors", factors[: self.n_levels - 1])

    def level_shapes(self, shape) -> list[tuple[int, int]]:
        shapes = [tuple(shape)]
        for f in self.factors:
            h, w = shapes[-1]
            shapes.append((-(-h // f), -(-w // f)))
        return shapes

    def check(self, shape) -> list[str]:
        """Return (and emit) warnings for depth and coarsest-scale recommendations."""
        messages = []
        if self.n_levels < 4:
            messages.append(
                f"[rule pyramid-depth] pyramid has {self.n_levels} levels; robust alignment "
                "under strong noise wants more than 3 levels"
            )
        coarse = self.level_shapes(shape)[-1]
        if coarse[0] < shape[0] / 16 or coarse[1] < shape[1] / 16:
            messages.append(
                f"[rule coarsest-scale] coarsest level {coarse[1]}x{coarse[0]} is smaller "
                f"than 1/16 of the {shape[1]}x{shape[0]} input"
            )
        for msg in messages:
            warnings.warn(msg, AlignmentRuleWarning, stacklevel=2)
        return messages


@dataclass
class Pyramid:
    """``levels[0]`` is the finest (input) image."""

    levels: list = field(default_factory=list)
    factors: tuple = ()

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    @property
    def shapes(self):
        return [lvl.shape for lvl in self.levels]


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at 3 sigma, normalized to unit sum."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders."""
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(np.asarray(image, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def gaussian_downsample(image, factor: int, blur_sigma_scale: float = 0.5) -> np.ndarray:
    """Blur with sigma = ``blur_sigma_scale * factor`` then keep every ``factor``-th sample."""
    if int(factor) != factor or factor < 2:
        raise ConfigError(f"downsample factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    blurred = gaussian_blur(image, blur_sigma_scale * factor)
    return blurred[::factor, ::factor].copy()


def build_pyramid(image, config: PyramidConfig | None = None, min_size=None) -> Pyramid:
    """Build the pyramid; ``min_size`` (per level, finest first) guards tile sizes.

    Raises DataError naming the first level that falls below its minimum size.
    """
    config = config or PyramidConfig()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DataError(f"expected a 2-D gray image, got shape {image.shape}")
    if min_size is not None:
        if np.isscalar(min_size):
            min_size = [min_size] * config.n_levels
        for k, (shape, need) in enumerate(zip(config.level_shapes(image.shape), min_size)):
            if min(shape) < need:
                raise DataError(
                    f"pyramid level {k} would be {shape[1]}x{shape[0]}, smaller than "
                    f"the {need}-px tile used there; reduce depth or factors"
                )
    levels = [image]
    for f in config.factors:
        levels.append(gaussian_downsample(levels[-1], f, config.blur_sigma_scale))
    return Pyramid(levels, config.factors)
