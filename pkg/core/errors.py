"""
Domain exceptions shared by every DiffTF package.
All of them derive from DiffTFError so the pipeline engine can catch one type
at the command boundary and map it to exit code 1.
"""

from typing import Any, Dict, Optional


class DiffTFError(Exception):
    """Base class for all pipeline failures."""


class ShapeError(DiffTFError, ValueError):
    """An autodiff op received inputs of incompatible shape."""

    def __init__(self, op: str, message: str, *shapes):
        shape_text = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: {message} (shapes: {shape_text})")
        self.op = op
        self.shapes = shapes


class GradientError(DiffTFError):
    """Backward was requested on something that is not a scalar graph output."""


class SnapshotFormatError(DiffTFError):
    """A tensor snapshot file is corrupt, truncated or has the wrong magic."""


class NonFiniteError(DiffTFError):
    """A layer or loss term produced NaN or Inf."""

    def __init__(self, where: str, detail: str = ""):
        message = f"non-finite values in {where}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.where = where


class TrainingDivergedError(DiffTFError):
    """Loss grew beyond the divergence factor of its initial value."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DatasetFormatError(DiffTFError):
    """A dataset manifest or image does not match its recorded contents."""


class MissingArtifactError(DiffTFError):
    """An upstream artifact needed by a command does not exist."""

    def __init__(self, path, hint: str = ""):
        message = f"missing artifact: {path}"
        if hint:
            message = f"{message} ({hint})"
        super().__init__(message)
        self.path = path


class EmptyShapeError(DiffTFError):
    """Surface extraction found no occupied cell."""


class MetricInputError(DiffTFError, ValueError):
    """Empty point clouds or sets, or a degenerate extent."""
