"""Real-time catheter and guidewire tip tracking for fluoroscopy video."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    EvaluationError,
    GenerationError,
    IngestError,
    InvalidArgument,
    MissingAnnotationError,
    OutputError,
    PipelineError,
    TipTrackError,
    UndefinedMetricError,
)
from .imgproc import Component, Frame, LabelMap, ProbMap, connected_components  # noqa: E402
from .postprocess import PostprocessConfig, Skeleton, TipEstimate, extract_tips, skeletonize  # noqa: E402
from .segmentation import ClassicalSegmenter, OracleSegmenter, Segmenter, infer, plan_tiles  # noqa: E402
from .pipeline import PipelineConfig, PipelineStats, TrackingResult, run_pipeline, run_sequential  # noqa: E402
from .metrics import seg_scores, tip_errors  # noqa: E402
from .synth import gen_sequence  # noqa: E402

__all__ = [
    "ClassicalSegmenter", "Component", "ConfigError", "EvaluationError", "Frame",
    "GenerationError", "IngestError", "InvalidArgument", "LabelMap", "MissingAnnotationError",
    "OracleSegmenter", "OutputError", "PipelineConfig", "PipelineError", "PipelineStats",
    "PostprocessConfig", "ProbMap", "Segmenter", "Skeleton", "TipEstimate", "TipTrackError",
    "TrackingResult", "UndefinedMetricError", "connected_components", "extract_tips",
    "gen_sequence", "infer", "plan_tiles", "run_pipeline", "run_sequential", "seg_scores",
    "skeletonize", "tip_errors",
]
