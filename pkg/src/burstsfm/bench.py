"""Synthetic disk-scene feature benchmark and SfM feature statistics.

Scenes are 25 bright disks on a flat background. Bursts are rendered at
shifted disk centres with additive Gaussian noise, and three capture
strategies are compared: the single centre frame ("conventional"), every
frame of the burst ("burst_no_merge") and the aligned + merged burst
("burst_merge").
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from .align import AlignConfig, align_burst
from .exceptions import ConfigError, DataError
from .imgio import Burst, CaptureSchedule
from .merge import MergeConfig, merge_burst

CONDITIONS = ("conventional", "burst_no_merge", "burst_merge")
SUPERSAMPLE = 4


@dataclass(frozen=True)
class Disk:
    x: float
    y: float
    radius: float


@dataclass
class SyntheticScene:
    width: int = 512
    height: int = 512
    disks: list = field(default_factory=list)
    contrast: float = 0.1
    background: float = 0.5

    def __post_init__(self):
        self.disks = [d if isinstance(d, Disk) else Disk(*d) for d in self.disks]

    @property
    def centers(self) -> np.ndarray:
        return np.array([(d.x, d.y) for d in self.disks], dtype=np.float64).reshape(-1, 2)

    def translated(self, tx: float, ty: float) -> "SyntheticScene":
        moved = [Disk(d.x + tx, d.y + ty, d.radius) for d in self.disks]
        return SyntheticScene(self.width, self.height, moved, self.contrast, self.background)

    def check(self):
        for d in self.disks:
            if d.radius <= 0:
                raise DataError(f"disk radius must be positive: {d}")
            if not (d.radius <= d.x <= self.width - 1 - d.radius
                    and d.radius <= d.y <= self.height - 1 - d.radius):
                raise DataError(f"disk {d} extends outside the {self.width}x{self.height} image")
        c = self.centers
        r = np.array([d.radius for d in self.disks])
        for i in range(len(r)):
            dist = np.hypot(*(c[i + 1:] - c[i]).T)
            if np.any(dist < r[i + 1:] + r[i]):
                raise DataError("disks overlap")


def make_scene(seed: int = 0, size: int = 512, n_disks: int = 25, r_min: float = 4.0,
               r_max: float = 24.0, contrast: float = 0.1, background: float = 0.5,
               margin: float = 24.0, max_tries: int = 100_000) -> SyntheticScene:
    """Random non-overlapping disks with log-spaced radii.

    Disks keep ``margin`` px from the border and a clearance proportional to
    their radii from each other, so that detector responses do not interact.
    """
    rng = np.random.default_rng(seed)
    radii = np.geomspace(r_min, r_max, n_disks)[::-1]
    placed: list[Disk] = []
    tries = 0
    for r in radii:
        while True:
            tries += 1
            if tries > max_tries:
                raise DataError("could not place disks without overlap; enlarge the image")
            lo, hi = margin + r, size - 1 - margin - r
            x, y = rng.uniform(lo, hi, size=2)
            if all(math.hypot(x - d.x, y - d.y) >= 1.5 * (r + d.radius) + 10 for d in placed):
                placed.append(Disk(float(x), float(y), float(r)))
                break
    order = np.argsort([d.radius for d in placed])
    return SyntheticScene(size, size, [placed[i] for i in order], contrast, background)


def render_scene(scene: SyntheticScene) -> np.ndarray:
    """Background plus ``contrast`` inside each disk, 4x supersampled at the boundary."""
    scene.check()
    img = np.full((scene.height, scene.width), scene.background, dtype=np.float64)
    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    for d in scene.disks:
        x0 = max(int(math.floor(d.x - d.radius)) - 1, 0)
        x1 = min(int(math.ceil(d.x + d.radius)) + 2, scene.width)
        y0 = max(int(math.floor(d.y - d.radius)) - 1, 0)
        y1 = min(int(math.ceil(d.y + d.radius)) + 2, scene.height)
        ys = (np.arange(y0, y1)[:, None] + sub).ravel()
        xs = (np.arange(x0, x1)[:, None] + sub).ravel()
        inside = ((ys[:, None] - d.y) ** 2 + (xs[None, :] - d.x) ** 2) <= d.radius**2
        cover = inside.reshape(y1 - y0, SUPERSAMPLE, x1 - x0, SUPERSAMPLE).mean(axis=(1, 3))
        img[y0:y1, x0:x1] += scene.contrast * cover
    return img


@dataclass(frozen=True)
class BurstSpec:
    """Noisy burst settings. ``noise`` is a standard deviation unless ``noise_is_variance``."""

    n_frames: int = 7
    max_translation: float = 12.0
    noise: float = 0.03
    noise_is_variance: bool = False
    translations: tuple | None = None
    integer_shifts: bool = True

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if not 0 <= self.max_translation <= 12:
            raise ConfigError("max_translation must lie in [0, 12] px")
        if self.translations is not None:
            t = np.asarray(self.translations, dtype=np.float64)
            if t.shape != (self.n_frames, 2):
                raise ConfigError(f"translations must have shape ({self.n_frames}, 2)")
            if np.any(np.hypot(t[:, 0], t[:, 1]) > 12 + 1e-9):
                raise ConfigError("per-frame translation exceeds 12 px")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.noise) if self.noise_is_variance else self.noise

    @property
    def reference_index(self) -> int:
        return self.n_frames // 2


def burst_translations(spec: BurstSpec, rng) -> np.ndarray:
    """Linear camera motion through the reference frame; the whole burst spans
    at most ``max_translation`` px."""
    if spec.translations is not None:
        return np.asarray(spec.translations, dtype=np.float64)
    n, ref = spec.n_frames, spec.reference_index
    if n == 1:
        return np.zeros((1, 2))
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.5, 1.0) * spec.max_translation / (n - 1)
    step = speed * np.array([math.cos(angle), math.sin(angle)])
    t = (np.arange(n) - ref)[:, None] * step
    return np.round(t) if spec.integer_shifts else t


def synth_burst(scene: SyntheticScene, spec: BurstSpec, seed: int = 0):
    """Render a noisy burst. Returns ``(Burst, translations)``; frame ``z`` shows
    the scene moved by ``translations[z]`` (x, y)."""
    rng = np.random.default_rng(seed)
    shifts = burst_translations(spec, rng)
    if np.any(np.hypot(shifts[:, 0], shifts[:, 1]) > 12 + 1e-9):
        raise ConfigError("per-frame translation exceeds 12 px")
    frames = []
    for tx, ty in shifts:
        clean = render_scene(scene.translated(tx, ty))
        noisy = clean + rng.normal(0.0, spec.sigma, clean.shape) if spec.sigma > 0 else clean
        frames.append(np.clip(noisy, 0.0, 1.0))
    n = spec.n_frames
    schedule = CaptureSchedule(n_frames=n, frame_time=1.0, burst_duration=float(n))
    return Burst(frames, spec.reference_index, schedule), shifts


# --- detector ---------------------------------------------------------------

@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    response: float


@dataclass(frozen=True)
class DetectorConfig:
    """Scale-normalized difference-of-Gaussians over geometric scales."""

    sigma_min: float = math.sqrt(2.0)
    scale_step: float = math.sqrt(2.0)
    n_scales: int = 9
    border: int = 4

    def __post_init__(self):
        if self.n_scales < 5:
            raise ConfigError("the detector needs at least 5 scales")
        if self.sigma_min <= 0 or self.scale_step <= 1:
            raise ConfigError("sigma_min must be > 0 and scale_step > 1")

    @property
    def sigmas(self) -> np.ndarray:
        return self.sigma_min * self.scale_step ** np.arange(self.n_scales + 1)


def dog_stack(image, config: DetectorConfig | None = None) -> np.ndarray:
    """DoG levels ``L(sigma_{i+1}) - L(sigma_i)`` from a reflect-padded FFT blur.

    Computed in single precision; responses of interest are ~1e-2.
    """
    config = config or DetectorConfig()
    sigmas = config.sigmas
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape
    pad = int(math.ceil(3 * sigmas[-1]))
    shape = (sp_fft.next_fast_len(h + 2 * pad, real=True),
             sp_fft.next_fast_len(w + 2 * pad, real=True))
    padded = np.pad(image, ((pad, shape[0] - h - pad), (pad, shape[1] - w - pad)),
                    mode="reflect")
    spec = sp_fft.rfft2(padded)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.rfftfreq(shape[1])[None, :]
    f2 = (fy * fy + fx * fx).astype(np.float32)
    transfer = [np.exp(np.float32(-2 * np.pi**2 * s * s) * f2) for s in sigmas]
    out = np.empty((len(sigmas) - 1, h, w), dtype=np.float32)
    for i in range(len(sigmas) - 1):
        level = sp_fft.irfft2(spec * (transfer[i + 1] - transfer[i]), s=shape)
        out[i] = level[pad:pad + h, pad:pad + w]
    return out


def _parabola_offset(fm, f0, fp):
    denom = fm - 2 * f0 + fp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom != 0, 0.5 * (fm - fp) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


def detect_blobs(image, peak_threshold: float = 0.015,
                 config: DetectorConfig | None = None) -> list[Keypoint]:
    """Local extrema of the DoG scale space over (x, y, scale) with |DoG| >= threshold.

    Positions are refined with per-axis parabola fits.
    """
    config = config or DetectorConfig()
    return detect_in_dog(dog_stack(image, config), peak_threshold, config)


def detect_in_dog(dog, peak_threshold: float, config: DetectorConfig | None = None):
    """Extremum search on a precomputed :func:`dog_stack`."""
    if not peak_threshold > 0:
        raise ConfigError("peak_threshold must be positive")
    config = config or DetectorConfig()
    dog = np.asarray(dog, dtype=np.float64)
    b = max(config.border, 1)
    # extrema need a scale neighbour on both sides and must stay off the border
    strong = np.abs(dog) >= peak_threshold
    strong[0] = strong[-1] = False
    strong[:, :b] = strong[:, -b:] = False
    strong[:, :, :b] = strong[:, :, -b:] = False
    s, y, x = np.nonzero(strong)
    if len(s) == 0:
        return []
    f0 = dog[s, y, x]
    is_max = np.ones(len(s), dtype=bool)
    is_min = np.ones(len(s), dtype=bool)
    for ds in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if ds == dy == dx == 0:
                    continue
                nb = dog[s + ds, y + dy, x + dx]
                is_max &= f0 >= nb
                is_min &= f0 <= nb
    keep = np.where(f0 > 0, is_max, is_min)
    s, y, x, f0 = s[keep], y[keep], x[keep], f0[keep]
    if len(s) == 0:
        return []
    ox = _parabola_offset(dog[s, y, x - 1], f0, dog[s, y, x + 1])
    oy = _parabola_offset(dog[s, y - 1, x], f0, dog[s, y + 1, x])
    os_ = _parabola_offset(dog[s - 1, y, x], f0, dog[s + 1, y, x])
    sig = config.sigmas[s] * config.scale_step ** os_
    return [Keypoint(float(xx), float(yy), float(ss), float(abs(rr)))
            for xx, yy, ss, rr in zip(x + ox, y + oy, sig, f0)]


def keypoints_array(keypoints) -> np.ndarray:
    return np.array([(k.x, k.y) for k in keypoints], dtype=np.float64).reshape(-1, 2)


# --- evaluation ---------------------------------------------------------------

@dataclass
class DetectionEval:
    tp_count: int
    fp_count: int
    n_true: int
    localization_errors: np.ndarray

    @property
    def tp_rate(self) -> float:
        return self.tp_count / self.n_true if self.n_true else 0.0

    @property
    def mean_localization_error(self) -> float:
        e = self.localization_errors
        return float(e.mean()) if len(e) else float("nan")


def match_detections(keypoints, scene, tolerance_px: float = 3.0) -> DetectionEval:
    """Greedy one-to-one assignment of keypoints to disk centres, closest pairs first."""
    if not tolerance_px > 0:
        raise ConfigError("tolerance must be positive")
    pts = keypoints if isinstance(keypoints, np.ndarray) else keypoints_array(keypoints)
    centers = scene.centers if isinstance(scene, SyntheticScene) else np.asarray(scene)
    n_true = len(centers)
    if len(pts) == 0:
        return DetectionEval(0, 0, n_true, np.zeros(0))
    dist = np.hypot(pts[:, None, 0] - centers[None, :, 0], pts[:, None, 1] - centers[None, :, 1])
    ki, di = np.nonzero(dist <= tolerance_px)
    order = np.argsort(dist[ki, di], kind="stable")
    used_k, used_d, errors = set(), set(), []
    for j in order:
        a, b = ki[j], di[j]
        if a in used_k or b in used_d:
            continue
        used_k.add(a)
        used_d.add(b)
        errors.append(dist[a, b])
    tp = len(errors)
    return DetectionEval(tp, len(pts) - tp, n_true, np.array(errors))


def evaluate_conditions(scene, spec: BurstSpec, thresholds, seed: int,
                        align_config: AlignConfig | None = None,
                        merge_config: MergeConfig | None = None,
                        detector: DetectorConfig | None = None, tolerance_px: float = 3.0):
    """Evaluate the three capture strategies on one synthetic burst.

    Returns ``{threshold: {condition: (tp_rate, fp_count, localization_errors)}}``.
    Without merging, every frame is scored against its own shifted scene: the
    TP rate is the mean over frames and false positives are summed over frames.
    """
    if np.isscalar(thresholds):
        thresholds = [thresholds]
    burst, shifts = synth_burst(scene, spec, seed)
    ref = burst.reference_index
    frame_scenes = [scene.translated(*t) for t in shifts]
    frame_dogs = [dog_stack(f, detector) for f in burst.frames]
    fields = align_burst(burst, align_config)
    merged, _ = merge_burst(burst, fields, merge_config)
    merged_dog = dog_stack(merged, detector)

    results = {}
    for thr in thresholds:
        per_frame = [match_detections(detect_in_dog(d, thr, detector), sc, tolerance_px)
                     for d, sc in zip(frame_dogs, frame_scenes)]
        conv = per_frame[ref]
        mev = match_detections(detect_in_dog(merged_dog, thr, detector), frame_scenes[ref],
                               tolerance_px)
        tp = sum(ev.tp_count for ev in per_frame)
        results[thr] = {
            "conventional": (conv.tp_rate, conv.fp_count, conv.localization_errors),
            "burst_no_merge": (tp / (len(scene.disks) * len(burst)),
                               sum(ev.fp_count for ev in per_frame),
                               np.concatenate([ev.localization_errors for ev in per_frame])),
            "burst_merge": (mev.tp_rate, mev.fp_count, mev.localization_errors),
        }
    return results


@dataclass
class SweepRow:
    sigma: float
    threshold: float
    condition: str
    tp_rate: float
    fp_count: float
    loc_err_mean: float
    n_seeds: int


def run_pipeline_comparison(scene, spec: BurstSpec, thresholds, sigmas, seeds,
                            align_config=None, merge_config=None, detector=None,
                            tolerance_px: float = 3.0) -> list[SweepRow]:
    """Sweep noise levels, thresholds and seeds; average each condition over seeds.

    ``scene`` may be a SyntheticScene or a callable ``seed -> SyntheticScene``.
    Localization error is the mean over all true positives pooled across seeds.
    """
    thresholds, sigmas, seeds = list(thresholds), list(sigmas), list(seeds)
    if not thresholds or not sigmas or not seeds:
        raise ConfigError("sweeps need at least one threshold, noise level and seed")
    rows = []
    for sigma in sigmas:
        run_spec = BurstSpec(spec.n_frames, spec.max_translation, sigma, spec.noise_is_variance,
                             spec.translations, spec.integer_shifts)
        acc = {(thr, c): ([], [], []) for thr in thresholds for c in CONDITIONS}
        for seed in seeds:
            sc = scene(seed) if callable(scene) else scene
            res = evaluate_conditions(sc, run_spec, thresholds, seed, align_config,
                                      merge_config, detector, tolerance_px)
            for thr, by_cond in res.items():
                for cond, (tp, fp, errs) in by_cond.items():
                    acc[thr, cond][0].append(tp)
                    acc[thr, cond][1].append(fp)
                    acc[thr, cond][2].append(errs)
        for thr in thresholds:
            for cond in CONDITIONS:
                tps, fps, errs = acc[thr, cond]
                errs = np.concatenate(errs)
                rows.append(SweepRow(sigma, thr, cond, float(np.mean(tps)), float(np.mean(fps)),
                                     float(errs.mean()) if len(errs) else float("nan"),
                                     len(seeds)))
    return rows


SWEEP_COLUMNS = ("sigma", "threshold", "condition", "tp_rate", "fp_count", "loc_err_mean")


def sweep_to_csv(rows, path=None) -> str:
    """Serialize sweep rows with fixed formatting; writes ``path`` when given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([f"{r.sigma:.6g}", f"{r.threshold:.6g}", r.condition,
                         f"{r.tp_rate:.6f}", f"{r.fp_count:.6f}", f"{r.loc_err_mean:.6f}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# --- SfM feature statistics ------------------------------------------------------

@dataclass(frozen=True)
class FeatureMetrics:
    match_ratio: float
    precision: float
    matching_score: float
    degenerate: bool = False


def sfm_feature_metrics(keypoints, putative, inliers) -> FeatureMetrics:
    """Match ratio, precision and matching score from per-image (or summed) counts.

    Zero denominators give 0 and set ``degenerate``.
    """
    k, p, i = (float(np.sum(v)) for v in (keypoints, putative, inliers))
    if min(k, p, i) < 0:
        raise DataError("counts must be non-negative")
    if i > p:
        raise DataError(f"inliers ({i:g}) exceed putative matches ({p:g})")
    degenerate = k == 0 or p == 0
    ratio = p / k if k > 0 else 0.0
    precision = i / p if p > 0 else 0.0
    return FeatureMetrics(ratio, precision, ratio * precision, degenerate)
