from typing import Any, Dict, List, TypedDict


class ManifestPayload(TypedDict):
    experiment: str
    config: Dict[str, Any]
    build_id: str
    seed: int
    metrics: Dict[str, str]
    artifacts: List[str]
    wall_seconds: float
    status: str
