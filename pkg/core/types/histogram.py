from typing import List, TypedDict


class HistogramPayload(TypedDict):
    edges: List[float]
    counts: List[int]
