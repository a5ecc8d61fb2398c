"""One-class failure monitoring for imitation-learning robot policies.

Pipeline: nominal demonstrations -> Gaussian feature memory -> optimal
transport anomaly scores and heatmaps -> spatio-temporal conformal
thresholds -> semantic filtering of flagged frames through an external
vision-language endpoint.
"""

from .conformal import (
    CalibrationProfile,
    ThresholdDecision,
    calibrate,
    cp_time_baseline,
    decide,
    gaussian_threshold_baseline,
    load_profile,
    profile_from_json,
    profile_to_json,
    save_profile,
)
from .errors import (
    FailmonError,
    FormatError,
    InsufficientData,
    ParameterError,
    UndefinedMetric,
    ValidationError,
)
from .memory import NominalMemory, build_memory, load_memory, save_memory
from .metrics import ConfusionSummary, auroc, confusion, f1_at_optimal, relabel_failures
from .ot import CostMatrix, TransportPlan, cost_matrix, exact_ot, sinkhorn
from .scoring import (
    ScoreConfig,
    ScoreResult,
    score_episode,
    score_frame,
    write_heatmap_csv,
    write_heatmap_pgm,
)
from .synth import AnomalyEvent, SynthSpec, base_signal, generate, write_labels_csv
from .tensor_io import (
    FeatureTensor,
    read_feature_file,
    read_frame_stream,
    split_nominal,
    write_feature_file,
    write_frame_stream,
)
from .vlm import (
    FallbackPolicy,
    FilterRequest,
    HttpVlmClient,
    StaticVlmClient,
    Verdict,
    VerdictKind,
    VlmEndpointConfig,
    blank_frame,
    build_prompt,
    render_heatmap_overlay,
    semantic_filter,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyEvent",
    "CalibrationProfile",
    "ConfusionSummary",
    "CostMatrix",
    "FailmonError",
    "FallbackPolicy",
    "FeatureTensor",
    "FilterRequest",
    "FormatError",
    "HttpVlmClient",
    "InsufficientData",
    "NominalMemory",
    "ParameterError",
    "ScoreConfig",
    "ScoreResult",
    "StaticVlmClient",
    "SynthSpec",
    "ThresholdDecision",
    "TransportPlan",
    "UndefinedMetric",
    "ValidationError",
    "Verdict",
    "VerdictKind",
    "VlmEndpointConfig",
    "auroc",
    "base_signal",
    "blank_frame",
    "build_memory",
    "build_prompt",
    "calibrate",
    "confusion",
    "cost_matrix",
    "cp_time_baseline",
    "decide",
    "exact_ot",
    "f1_at_optimal",
    "gaussian_threshold_baseline",
    "generate",
    "load_memory",
    "load_profile",
    "profile_from_json",
    "profile_to_json",
    "read_feature_file",
    "read_frame_stream",
    "relabel_failures",
    "render_heatmap_overlay",
    "save_memory",
    "save_profile",
    "score_episode",
    "score_frame",
    "semantic_filter",
    "sinkhorn",
    "split_nominal",
    "write_feature_file",
    "write_frame_stream",
    "write_heatmap_csv",
    "write_heatmap_pgm",
    "write_labels_csv",
]
