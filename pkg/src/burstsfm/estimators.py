"""scikit-learn style wrappers so the pipeline composes with ``Pipeline``, ``clone``
and ``get_params``/``set_params``.

A burst is passed as ``X`` with shape ``(n_frames, height, width)``; single
images are ``(height, width)``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .align import AlignConfig, align_burst
from .bench import DetectorConfig, detect_blobs
from .exceptions import DataError
from .filters import BilateralConfig, WienerConfig, bilateral, wiener_shape
from .imgio import Burst, resolve_reference
from .merge import MergeConfig, estimate_noise_variance, merge_frames
from .pyramid import PyramidConfig


def check_image(image) -> np.ndarray:
    """Validate a single gray image: finite, 2-D, float64."""
    return check_array(image, dtype=np.float64, ensure_min_samples=1, ensure_min_features=1)


def check_burst(X) -> np.ndarray:
    """Validate a burst stack; a single 2-D image is promoted to a one-frame burst."""
    if isinstance(X, Burst):
        X = X.stack()
    arr = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"a burst must have shape (n_frames, height, width), got {arr.shape}")
    return arr


def _reference_index(reference, n_frames: int) -> int:
    if isinstance(reference, (int, np.integer)):
        return resolve_reference(str(int(reference)), n_frames)
    return resolve_reference(reference, n_frames)


class BurstAligner(BaseEstimator):
    """Coarse-to-fine tile alignment of every frame to a reference frame.

    After ``fit``, ``fields_`` holds one displacement field per frame and
    ``reference_index_`` the chosen reference.
    """

    def __init__(self, n_levels=4, factors=(2, 2, 4), tile_sizes=(16, 16, 16, 8),
                 search_radii=(2, 4, 4, 8), norms=("L1", "L2", "L2", "L2"),
                 unreliable_residual_factor=8.0, plausible_noise_factor=2.0,
                 plausible_contrast_factor=0.3, reference="center"):
        self.n_levels = n_levels
        self.factors = factors
        self.tile_sizes = tile_sizes
        self.search_radii = search_radii
        self.norms = norms
        self.unreliable_residual_factor = unreliable_residual_factor
        self.plausible_noise_factor = plausible_noise_factor
        self.plausible_contrast_factor = plausible_contrast_factor
        self.reference = reference

    def make_config(self) -> AlignConfig:
        pyr = PyramidConfig(self.n_levels, tuple(self.factors))
        return AlignConfig(tuple(self.tile_sizes), tuple(self.search_radii), tuple(self.norms),
                           pyr, self.unreliable_residual_factor, self.plausible_noise_factor,
                           self.plausible_contrast_factor)

    def fit(self, X, y=None):
        X = check_burst(X)
        self.config_ = self.make_config()
        self.reference_index_ = _reference_index(self.reference, len(X))
        self.fields_ = align_burst(Burst(list(X), self.reference_index_), self.config_)
        self.n_frames_ = len(X)
        return self

    def reliable_fraction(self) -> np.ndarray:
        check_is_fitted(self, "fields_")
        return np.array([f.reliable.mean() for f in self.fields_])


class BurstMerger(TransformerMixin, BaseEstimator):
    """Align-and-merge a burst into one denoised image.

    ``fit`` aligns the burst and resolves the noise variance; ``transform``
    merges a burst of the fitted shape using the stored displacement fields.
    """

    def __init__(self, aligner=None, tile_size=16, c=8.0, noise_variance="auto"):
        self.aligner = aligner
        self.tile_size = tile_size
        self.c = c
        self.noise_variance = noise_variance

    def fit(self, X, y=None):
        X = check_burst(X)
        aligner = self.aligner if self.aligner is not None else BurstAligner()
        self.aligner_ = aligner.fit(X)
        self.fields_ = self.aligner_.fields_
        self.reference_index_ = self.aligner_.reference_index_
        self.config_ = MergeConfig(self.tile_size, self.c, self.noise_variance)
        nv = self.noise_variance
        self.noise_variance_ = (estimate_noise_variance(X[self.reference_index_])
                                if isinstance(nv, str) else float(nv))
        self.frame_shape_ = X.shape
        return self

    def transform(self, X):
        check_is_fitted(self, "fields_")
        X = check_burst(X)
        if X.shape != self.frame_shape_:
            raise DataError(f"burst shape {X.shape} differs from fitted {self.frame_shape_}")
        merged, self.stats_ = merge_frames(list(X), self.fields_, self.reference_index_,
                                           self.config_, self.noise_variance_)
        return merged


class WienerShaper(TransformerMixin, BaseEstimator):
    """Noise-shaping DFT shrinkage; ``fit`` resolves the noise variance."""

    def __init__(self, tile_size=16, shaping_exponent=1.0, strength=1.0, noise_variance="auto"):
        self.tile_size = tile_size
        self.shaping_exponent = shaping_exponent
        self.strength = strength
        self.noise_variance = noise_variance

    def fit(self, X, y=None):
        X = check_image(X)
        nv = self.noise_variance
        self.noise_variance_ = estimate_noise_variance(X) if isinstance(nv, str) else float(nv)
        self.config_ = WienerConfig(self.tile_size, self.shaping_exponent, self.strength, nv)
        return self

    def transform(self, X):
        check_is_fitted(self, "noise_variance_")
        return wiener_shape(check_image(X), self.config_, self.noise_variance_)


class BilateralDenoiser(TransformerMixin, BaseEstimator):
    """Bilateral filter; ``sigma_range='auto'`` is twice the fitted noise std."""

    def __init__(self, radius=5, sigma_spatial=3.0, sigma_range="auto"):
        self.radius = radius
        self.sigma_spatial = sigma_spatial
        self.sigma_range = sigma_range

    def fit(self, X, y=None):
        X = check_image(X)
        self.config_ = BilateralConfig(self.radius, self.sigma_spatial, self.sigma_range)
        self.noise_variance_ = estimate_noise_variance(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return bilateral(check_image(X), self.config_, self.noise_variance_)


class BlobDetector(TransformerMixin, BaseEstimator):
    """DoG blob detector; ``transform`` returns an (n, 4) array of x, y, scale, response."""

    def __init__(self, peak_threshold=0.015, sigma_min=2**0.5, scale_step=2**0.5, n_scales=9):
        self.peak_threshold = peak_threshold
        self.sigma_min = sigma_min
        self.scale_step = scale_step
        self.n_scales = n_scales

    def fit(self, X, y=None):
        check_image(X)
        self.config_ = DetectorConfig(self.sigma_min, self.scale_step, self.n_scales)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        kps = detect_blobs(check_image(X), self.peak_threshold, self.config_)
        return np.array([(k.x, k.y, k.scale, k.response) for k in kps]).reshape(-1, 4)
