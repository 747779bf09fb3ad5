"""Burst alignment and merging for low-light structure-from-motion front ends."""
from .align import AlignConfig, DisplacementField, TileGrid, align_burst
from .bench import (BurstSpec, DetectorConfig, SyntheticScene, detect_blobs, make_scene,
                    match_detections, render_scene, sfm_feature_metrics, synth_burst)
from .config import PipelineConfig
from .estimators import (BilateralDenoiser, BlobDetector, BurstAligner, BurstMerger,
                         WienerShaper, check_burst, check_image)
from .exceptions import BurstError, ConfigError, DataError, NumericalError, RawIOError
from .filters import BilateralConfig, WienerConfig, bilateral, wiener_shape
from .imgio import Burst, CaptureSchedule, DarkFrame, RawFrame, load_burst, save_burst
from .merge import MergeConfig, MergeStats, estimate_noise_variance, merge_burst, merge_frames
from .pyramid import AlignmentRuleWarning, PyramidConfig, build_pyramid
from .traj import Trajectory, evaluate_trajectory, load_trajectory

__version__ = "0.1.0"
