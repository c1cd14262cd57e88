from typing import Any, Dict, List, TypedDict


class TensorPayload(TypedDict):
    shape: List[int]
    dtype: str
    data: List[Any]


class CheckpointPayload(TypedDict):
    format: str
    version: int
    kind: str
    meta: Dict[str, Any]
    tensors: Dict[str, TensorPayload]
