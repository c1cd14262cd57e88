from __future__ import annotations

# Core Imports
from typing import Any, Dict, List, Optional, Sequence, Tuple


class CommittorError(Exception):
    """Base class for every structured failure raised by the engine"""

    def __init__(self, message: str, **fields: Any) -> None:
        self.fields: Dict[str, Any] = fields
        for key, value in fields.items():
            setattr(self, key, value)
        if fields:
            details = ", ".join(f"{k}={v!r}" for k, v in fields.items())
            message = f"{message} ({details})"
        super().__init__(message)


class ShapeError(CommittorError):
    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]]) -> None:
        super().__init__(
            f"Shape mismatch in '{op}'", op=op, shapes=[tuple(s) for s in shapes]
        )


class NonScalarOutputError(CommittorError):
    def __init__(self, shape: Tuple[int, ...]) -> None:
        super().__init__("grad requires a scalar output", shape=tuple(shape))


class DimensionError(CommittorError):
    def __init__(self, expected: int, got: int, where: str) -> None:
        super().__init__(
            "Input dimension does not match", where=where, expected=expected, got=got
        )


class DomainError(CommittorError):
    """Raised when a point lies on or outside the configured box"""

    def __init__(self, where: str, count: int) -> None:
        super().__init__("Points outside the domain", where=where, count=count)


class UnsupportedError(CommittorError):
    pass


class NonFiniteStateError(CommittorError):
    def __init__(self, step: int) -> None:
        super().__init__("Non-finite state in dynamics", step=step)


class UmbrellaConvergenceError(CommittorError):
    def __init__(self, achieved: float, tolerance: float, steps: int) -> None:
        super().__init__(
            "Umbrella relaxation did not reach the target CVs",
            achieved=achieved,
            tolerance=tolerance,
            steps=steps,
        )


class ImportanceWeightError(CommittorError):
    def __init__(self, where: str, rejected: int, total: int, limit: float) -> None:
        super().__init__(
            "Too many non-finite importance weights",
            where=where,
            rejected=rejected,
            total=total,
            limit=limit,
        )


class EmptyStageError(CommittorError):
    pass


class TrainingDivergedError(CommittorError):
    def __init__(self, what: str, epoch: int) -> None:
        super().__init__("Training loss became non-finite", what=what, epoch=epoch)


class FilterError(CommittorError):
    """Raised when the energy filter rejects too many decoded samples"""

    def __init__(
        self,
        threshold: float,
        edges: List[float],
        counts: List[int],
        message: str = "Energy filter accepted no samples",
        **fields: Any,
    ) -> None:
        super().__init__(
            message,
            **fields,
            threshold=threshold,
            edges=edges,
            counts=counts,
        )


class MetricError(CommittorError):
    pass


class EmptyIsosurfaceError(CommittorError):
    def __init__(self, tol: float, pool_size: int) -> None:
        super().__init__(
            "No pool point lies within tolerance of the 1/2-isosurface; "
            "try a larger tolerance",
            tol=tol,
            pool_size=pool_size,
        )


class StageError(CommittorError):
    """Wraps any failure inside an adaptive stage with the stage index"""

    def __init__(self, stage: int, cause: BaseException) -> None:
        self.cause = cause
        super().__init__(f"Stage failed: {cause}", stage=stage)


class ConfigError(CommittorError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"Invalid config at '{path}': {reason}", path=path)


class ReportError(CommittorError):
    def __init__(self, path: str, reason: str, line: Optional[int] = None) -> None:
        super().__init__(f"Cannot report on '{path}': {reason}", path=path, line=line)
