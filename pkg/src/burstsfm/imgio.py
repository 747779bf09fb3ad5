"""Raw frame loading, calibration and grayscale conversion.

Gray images are plain 2-D ``float64`` numpy arrays with values in [0, 1].
A burst lives on disk as one directory holding ``frame_000.raw`` ...
(little-endian uint16, row-major) and a ``manifest.txt`` of ``key=value``
lines.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError, RawIOError

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG", "NONE")

MANIFEST_KEYS = (
    "width",
    "height",
    "bit_depth",
    "bayer_pattern",
    "black_level",
    "n_frames",
    "frame_time_ms",
    "burst_duration_ms",
    "inter_burst_gap_ms",
    "exposure_ms",
    "gain_db",
    "reference_policy",
)

_GEOMETRY_KEYS = ("width", "height", "bit_depth", "bayer_pattern", "black_level")


@dataclass(frozen=True)
class RawFrame:
    """Sensor counts for one frame. ``pixels`` has shape (height, width)."""

    pixels: np.ndarray
    bit_depth: int = 16
    bayer_pattern: str = "NONE"
    black_level: float = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DataError(f"raw pixels must be 2-D, got shape {px.shape}")
        if not 1 <= self.bit_depth <= 16:
            raise DataError(f"bit_depth must be in [1, 16], got {self.bit_depth}")
        if self.bayer_pattern not in BAYER_PATTERNS:
            raise DataError(f"unknown bayer pattern {self.bayer_pattern!r}")
        if px.size and (px.min() < 0 or px.max() >= 2**self.bit_depth):
            raise DataError(f"pixel values exceed {self.bit_depth}-bit range")
        if self.bayer_pattern != "NONE" and (px.shape[0] % 2 or px.shape[1] % 2):
            raise DataError(f"Bayer frame must have even dimensions, got {px.shape[::-1]}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def max_value(self) -> int:
        return 2**self.bit_depth - 1


@dataclass(frozen=True)
class CaptureSchedule:
    """Timing of a burst: N frames of ``frame_time`` each within ``burst_duration``."""

    n_frames: int = 7
    frame_time: float = 1.0
    burst_duration: float = 7.0
    inter_burst_gap: float = 100.0
    exposure: float = 1.0
    gain: float = 0.0

    def __post_init__(self):
        # gain is in dB and may legitimately be 0
        for name in ("n_frames", "frame_time", "burst_duration", "inter_burst_gap", "exposure"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"schedule field {name} must be positive")
        if self.gain < 0:
            raise ConfigError("schedule gain must be non-negative")
        if self.burst_duration < self.n_frames * self.frame_time:
            raise ConfigError(
                f"burst_duration {self.burst_duration} ms shorter than "
                f"n_frames*frame_time = {self.n_frames * self.frame_time} ms"
            )


@dataclass
class Burst:
    """Ordered frames (gray arrays or RawFrames) with a reference index."""

    frames: list
    reference_index: int = 0
    schedule: CaptureSchedule | None = None

    def __post_init__(self):
        if len(self.frames) == 0:
            raise DataError("a burst needs at least one frame")
        if not 0 <= self.reference_index < len(self.frames):
            raise DataError(
                f"reference_index {self.reference_index} outside [0, {len(self.frames)})"
            )
        shapes = {_frame_shape(f) for f in self.frames}
        if len(shapes) != 1:
            raise DataError(f"burst frames have inconsistent dimensions: {sorted(shapes)}")

    def __len__(self):
        return len(self.frames)

    @property
    def reference(self):
        return self.frames[self.reference_index]

    @property
    def shape(self) -> tuple[int, int]:
        return _frame_shape(self.frames[0])

    def stack(self) -> np.ndarray:
        """Gray frames as one (N, H, W) float array."""
        return np.stack([np.asarray(f, dtype=np.float64) for f in self.frames])


@dataclass(frozen=True)
class DarkFrame:
    """Averaged dark exposure, real-valued counts."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise DataError("dark frame must be 2-D")
        if np.any(px < 0) or not np.all(np.isfinite(px)):
            raise DataError("dark frame values must be finite and non-negative")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def average(cls, frames) -> "DarkFrame":
        """Average several dark RawFrames (or arrays) into one dark frame."""
        arrays = [np.asarray(getattr(f, "pixels", f), dtype=np.float64) for f in frames]
        if not arrays:
            raise DataError("need at least one dark frame to average")
        return cls(np.mean(arrays, axis=0))


def _frame_shape(frame) -> tuple[int, int]:
    px = frame.pixels if isinstance(frame, RawFrame) else np.asarray(frame)
    return tuple(px.shape)


def read_manifest(path) -> dict[str, str]:
    """Parse a ``key=value`` text file; blank lines and ``#`` comments are skipped."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def write_manifest(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def _require(meta: dict, key: str):
    try:
        return meta[key]
    except KeyError:
        raise ConfigError(f"metadata is missing required key {key!r}") from None


def load_raw(path, meta: dict) -> RawFrame:
    """Read a flat little-endian 16-bit raw file described by ``meta``."""
    width = int(_require(meta, "width"))
    height = int(_require(meta, "height"))
    bit_depth = int(_require(meta, "bit_depth"))
    pattern = str(_require(meta, "bayer_pattern")).upper()
    black = float(_require(meta, "black_level"))

    expected = width * height * 2
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise RawIOError(f"cannot stat raw file {path}: {exc}") from exc
    if size != expected:
        raise RawIOError(
            f"{path}: file has {size} bytes, expected {expected} for {width}x{height} 16-bit"
        )
    data = np.fromfile(path, dtype="<u2").reshape(height, width)
    return RawFrame(data.astype(np.uint16), bit_depth, pattern, black)


def save_raw(frame: RawFrame, path) -> None:
    np.asarray(frame.pixels).astype("<u2").tofile(path)


def subtract_dark(frame: RawFrame, dark: DarkFrame) -> RawFrame:
    """Remove fixed-pattern noise: ``max(pixel - dark, 0)``, black level reset to 0."""
    if dark.pixels.shape != frame.pixels.shape:
        raise DataError(
            f"dark frame shape {dark.pixels.shape} does not match frame {frame.pixels.shape}"
        )
    out = np.maximum(frame.pixels.astype(np.float64) - dark.pixels, 0.0)
    out = np.rint(out).astype(np.uint16)
    return dataclasses.replace(frame, pixels=out, black_level=0)


def _check_bayer(frame: RawFrame):
    if frame.bayer_pattern == "NONE":
        raise DataError("frame has no Bayer pattern")
    if frame.width % 2 or frame.height % 2:
        raise DataError("Bayer frame must have even dimensions")


def bayer_to_gray(frame: RawFrame) -> np.ndarray:
    """Average each 2x2 Bayer quad into a half-resolution normalized gray pixel."""
    _check_bayer(frame)
    px = frame.pixels.astype(np.float64)
    quad = px[0::2, 0::2] + px[0::2, 1::2] + px[1::2, 0::2] + px[1::2, 1::2]
    return quad / (4.0 * frame.max_value)


def split_bayer_planes(frame: RawFrame) -> list[np.ndarray]:
    """Four half-resolution planes in pattern order (e.g. R, G, G, B for RGGB)."""
    _check_bayer(frame)
    px = frame.pixels.astype(np.float64) / frame.max_value
    return [px[0::2, 0::2], px[0::2, 1::2], px[1::2, 0::2], px[1::2, 1::2]]


def recombine_bayer_planes(planes, bit_depth: int = 16, bayer_pattern: str = "RGGB",
                           black_level: float = 0) -> RawFrame:
    """Inverse of :func:`split_bayer_planes`; values are rounded and clipped to range."""
    if len(planes) != 4:
        raise DataError("expected four Bayer planes")
    planes = [np.asarray(p, dtype=np.float64) for p in planes]
    if len({p.shape for p in planes}) != 1:
        raise DataError("Bayer planes must share one shape")
    h, w = planes[0].shape
    maxval = 2**bit_depth - 1
    out = np.empty((2 * h, 2 * w), dtype=np.float64)
    out[0::2, 0::2], out[0::2, 1::2], out[1::2, 0::2], out[1::2, 1::2] = planes
    counts = np.clip(np.rint(out * maxval), 0, maxval).astype(np.uint16)
    return RawFrame(counts, bit_depth, bayer_pattern, black_level)


def raw_to_gray(frame: RawFrame) -> np.ndarray:
    """Gray working image for any RawFrame: Bayer-quad average, or plain normalization."""
    if frame.bayer_pattern == "NONE":
        return frame.pixels.astype(np.float64) / frame.max_value
    return bayer_to_gray(frame)


def save_gray(image, path, bit_depth: int = 16) -> None:
    """Write a binary P5 graymap, values clamped to [0, 1] and rounded half up."""
    if bit_depth not in (8, 16):
        raise ConfigError(f"bit_depth must be 8 or 16, got {bit_depth}")
    img = np.asarray(image, dtype=np.float64)
    maxval = 2**bit_depth - 1
    counts = np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5)
    dtype = ">u2" if bit_depth == 16 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(counts.astype(dtype).tobytes())
    except OSError as exc:
        raise RawIOError(f"cannot write {path}: {exc}") from exc


def load_gray(path) -> np.ndarray:
    """Read a binary P5 graymap back into a [0, 1] float image."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise RawIOError(f"{path}: not a binary P5 graymap")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    nbytes = width * height * np.dtype(dtype).itemsize
    body = data[pos:pos + nbytes]
    if len(body) != nbytes:
        raise RawIOError(f"{path}: truncated image data")
    return np.frombuffer(body, dtype=dtype).reshape(height, width).astype(np.float64) / maxval


def schedule_from_manifest(meta: dict) -> CaptureSchedule:
    try:
        return CaptureSchedule(
            n_frames=int(_require(meta, "n_frames")),
            frame_time=float(_require(meta, "frame_time_ms")),
            burst_duration=float(_require(meta, "burst_duration_ms")),
            inter_burst_gap=float(_require(meta, "inter_burst_gap_ms")),
            exposure=float(_require(meta, "exposure_ms")),
            gain=float(_require(meta, "gain_db")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad schedule value in manifest: {exc}") from exc


def resolve_reference(policy: str, n_frames: int) -> int:
    policy = (policy or "center").strip().lower()
    if policy in ("center", "centre"):
        return n_frames // 2
    if policy == "first":
        return 0
    try:
        idx = int(policy)
    except ValueError:
        raise ConfigError(f"unknown reference_policy {policy!r}") from None
    if not 0 <= idx < n_frames:
        raise ConfigError(f"reference_policy index {idx} outside burst of {n_frames}")
    return idx


def load_burst(directory, as_raw: bool = False) -> Burst:
    """Load ``frame_XXX.raw`` files listed by ``manifest.txt`` in ``directory``.

    Frames come back as gray images unless ``as_raw`` is set.
    """
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise ConfigError(f"{directory}: missing manifest.txt")
    meta = read_manifest(manifest)
    for key in _GEOMETRY_KEYS:
        _require(meta, key)
    schedule = schedule_from_manifest(meta)
    n = schedule.n_frames

    present = sorted(directory.glob("frame_*.raw"))
    missing = [i for i in range(n) if not (directory / f"frame_{i:03d}.raw").is_file()]
    if missing:
        raise DataError(
            f"{directory}: manifest lists {n} frames but {len(present)} present "
            f"(missing indices {missing})"
        )
    raws = [load_raw(directory / f"frame_{i:03d}.raw", meta) for i in range(n)]
    frames = raws if as_raw else [raw_to_gray(r) for r in raws]
    ref = resolve_reference(meta.get("reference_policy", "center"), n)
    return Burst(frames, ref, schedule)


def save_burst(directory, frames, schedule: CaptureSchedule | None = None, *,
               bit_depth: int = 16, bayer_pattern: str = "NONE", black_level: float = 0,
               reference_policy: str = "center") -> Path:
    """Write gray images or RawFrames as a burst directory readable by :func:`load_burst`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    raws = []
    for f in frames:
        if isinstance(f, RawFrame):
            raws.append(f)
        else:
            maxval = 2**bit_depth - 1
            counts = np.clip(np.rint(np.asarray(f) * maxval), 0, maxval).astype(np.uint16)
            raws.append(RawFrame(counts, bit_depth, bayer_pattern, black_level))
    if schedule is None:
        schedule = CaptureSchedule(n_frames=len(raws), burst_duration=float(len(raws)))
    elif schedule.n_frames != len(raws):
        raise ConfigError(f"schedule lists {schedule.n_frames} frames, got {len(raws)}")
    first = raws[0]
    meta = {
        "width": first.width,
        "height": first.height,
        "bit_depth": first.bit_depth,
        "bayer_pattern": first.bayer_pattern,
        "black_level": first.black_level,
        "n_frames": len(raws),
        "frame_time_ms": schedule.frame_time,
        "burst_duration_ms": schedule.burst_duration,
        "inter_burst_gap_ms": schedule.inter_burst_gap,
        "exposure_ms": schedule.exposure,
        "gain_db": schedule.gain,
        "reference_policy": reference_policy,
    }
    write_manifest(directory / "manifest.txt", meta)
    for i, raw in enumerate(raws):
        save_raw(raw, directory / f"frame_{i:03d}.raw")
    return directory
