import numpy as np
import pytest
from scipy import ndimage


def make_texture(shape, seed=0, smooth=1.5, pad=0):
    """Smoothed uniform noise rescaled to [0, 1]; ``pad`` adds a margin on every side."""
    rng = np.random.default_rng(seed)
    h, w = shape
    tex = ndimage.gaussian_filter(rng.random((h + 2 * pad, w + 2 * pad)), smooth)
    return (tex - tex.min()) / (tex.max() - tex.min())


def shift_image(tex, dx, dy, shape, pad):
    """Crop of ``tex`` such that ``ref(x) == alt(x + d)`` for integer (dx, dy)."""
    h, w = shape
    return tex[pad - dy:pad - dy + h, pad - dx:pad - dx + w]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def texture():
    return make_texture((128, 128), seed=3)


SWEEP_SIGMAS = (0.03, 0.05, 0.07, 0.1)
SWEEP_THRESHOLDS = (0.01, 0.015, 0.02)
SWEEP_SEEDS = tuple(range(10))


@pytest.fixture(scope="session")
def bench_sweep():
    """Ten-seed disk-scene sweep shared by the bench property tests and acceptance.

    Returns ``(rows_by_key, seconds)`` with keys ``(sigma, threshold, condition)``.
    """
    import time

    from burstsfm import bench

    start = time.perf_counter()
    rows = bench.run_pipeline_comparison(bench.make_scene, bench.BurstSpec(), SWEEP_THRESHOLDS,
                                         SWEEP_SIGMAS, SWEEP_SEEDS)
    elapsed = time.perf_counter() - start
    return {(r.sigma, r.threshold, r.condition): r for r in rows}, elapsed


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def report(number, ok, detail, seconds):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({seconds:.2f} s) {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
