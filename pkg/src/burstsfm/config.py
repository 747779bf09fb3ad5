"""Pipeline configuration assembled from a ``key=value`` file and CLI overrides."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .align import AlignConfig
from .exceptions import ConfigError
from .filters import BilateralConfig, WienerConfig
from .imgio import read_manifest
from .merge import MergeConfig
from .pyramid import AlignmentRuleWarning, PyramidConfig

POST_FILTERS = ("none", "wiener", "bilateral")

# config-file key -> (section, field, parser)
_INT_LIST = lambda v: tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)  # noqa: E731
_STR_LIST = lambda v: tuple(x.strip() for x in str(v).split(",") if x.strip())  # noqa: E731


def _auto_or_float(v):
    return "auto" if str(v).strip().lower() == "auto" else float(v)


KEYS = {
    "n_levels": ("pyramid", "n_levels", int),
    "factors": ("pyramid", "factors", _INT_LIST),
    "blur_sigma_scale": ("pyramid", "blur_sigma_scale", float),
    "align_tile_sizes": ("align", "tile_sizes", _INT_LIST),
    "search_radii": ("align", "search_radii", _INT_LIST),
    "norms": ("align", "norms", _STR_LIST),
    "unreliable_factor": ("align", "unreliable_residual_factor", float),
    "plausible_noise_factor": ("align", "plausible_noise_factor", float),
    "plausible_contrast_factor": ("align", "plausible_contrast_factor", float),
    "tile_size": ("merge", "tile_size", int),
    "c": ("merge", "c", float),
    "sigma2": ("merge", "noise_variance", _auto_or_float),
    "post": ("post", "post", str),
    "wiener_tile_size": ("wiener", "tile_size", int),
    "wiener_exponent": ("wiener", "shaping_exponent", float),
    "wiener_strength": ("wiener", "strength", float),
    "bilateral_radius": ("bilateral", "radius", int),
    "bilateral_sigma_spatial": ("bilateral", "sigma_spatial", float),
    "bilateral_sigma_range": ("bilateral", "sigma_range", _auto_or_float),
}


@dataclass
class PipelineConfig:
    align: AlignConfig = field(default_factory=AlignConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    post: str = "none"
    wiener: WienerConfig = field(default_factory=WienerConfig)
    bilateral: BilateralConfig = field(default_factory=BilateralConfig)

    def __post_init__(self):
        if self.post not in POST_FILTERS:
            raise ConfigError(f"post must be one of {POST_FILTERS}, got {self.post!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from flat ``key=value`` entries (see ``KEYS``); unknown keys are errors."""
        sections = {"pyramid": {}, "align": {}, "merge": {}, "post": {}, "wiener": {},
                    "bilateral": {}}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            section, name, parse = KEYS[key]
            try:
                sections[section][name] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        pyr_kw = sections["pyramid"]
        if "n_levels" in pyr_kw and "factors" not in pyr_kw:
            pyr_kw["factors"] = PyramidConfig().factors + (4,) * max(0, pyr_kw["n_levels"] - 4)
        pyramid = PyramidConfig(**pyr_kw)
        align_kw = sections["align"]
        n = pyramid.n_levels
        defaults = AlignConfig()
        for name in ("tile_sizes", "search_radii", "norms"):
            vals = tuple(align_kw.get(name, getattr(defaults, name)))
            if len(vals) < n:
                vals = vals + (vals[-1],) * (n - len(vals))
            align_kw[name] = vals
        return cls(
            align=AlignConfig(pyramid=pyramid, **align_kw),
            merge=MergeConfig(**sections["merge"]),
            post=sections["post"].get("post", "none"),
            wiener=WienerConfig(**sections["wiener"]),
            bilateral=BilateralConfig(**sections["bilateral"]),
        )

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        values = read_manifest(path) if path else {}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def validate(self, image_shape) -> list[str]:
        """Robust-alignment recommendation checks; returns the warning messages."""
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", AlignmentRuleWarning)
            messages = self.align.check(image_shape)
        for w in caught:
            if not issubclass(w.category, AlignmentRuleWarning):
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        return messages
