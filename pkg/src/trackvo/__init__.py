"""Visual odometry from long-term point tracks with a heavy-tailed
trajectory uncertainty model and dynamic-track filtering."""

from .geometry import Intrinsics, Pose
from .pipeline import Pipeline, PipelineConfig, run_sequence

__all__ = ["Intrinsics", "Pose", "Pipeline", "PipelineConfig", "run_sequence"]
__version__ = "0.1.0"
