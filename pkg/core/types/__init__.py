from .checkpoint import CheckpointPayload, TensorPayload
from .histogram import HistogramPayload
from .manifest import ManifestPayload
from .metrics import StageMetrics, StageTiming

__all__ = (
    "CheckpointPayload",
    "HistogramPayload",
    "ManifestPayload",
    "StageMetrics",
    "StageTiming",
    "TensorPayload",
)
