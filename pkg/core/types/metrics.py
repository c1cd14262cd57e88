from typing import Optional, TypedDict


class StageMetrics(TypedDict):
    stage: int
    loss: float
    interior: float
    penalty: float
    error: Optional[float]
    acceptance: Optional[float]
    samples: int


class StageTiming(TypedDict):
    stage: int
    wall_seconds: float
