"""
Error hierarchy for the GaGSL pipeline.
"""
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional


class GaGSLError(Exception):
    """Base class for every error raised by the package."""


class ContractViolation(GaGSLError, ValueError):
    """An operation was called outside its stated preconditions."""


class DatasetParseError(GaGSLError):
    """A dataset file could not be parsed."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = str(path)
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{self.path}:{line_number}: {reason}")

    def __reduce__(self):
        return (type(self), (self.path, self.line_number, self.reason))


class DatasetValidationError(GaGSLError):
    """A parsed dataset violates its invariants."""


class NumericError(GaGSLError):
    """A numerical step failed (singular system, non-finite loss)."""

    def __init__(self, message: str, snapshot: Optional[Dict[str, Any]] = None):
        self.message = message
        self.snapshot = snapshot or {}
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.message, self.snapshot))


class AttackError(GaGSLError):
    """A perturbation request cannot be satisfied."""


class ArtifactIntegrityError(GaGSLError):
    """A run artifact is missing or corrupt."""

    def __init__(self, path: str, reason: str):
        self.reason = reason
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")

    def __reduce__(self):
        return (type(self), (self.path, self.reason))


class StageError(GaGSLError):
    """Wraps any failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage_name: str, cause: BaseException):
        self.stage = stage_name
        self.cause = cause
        super().__init__(f"stage '{stage_name}' failed: {cause}")

    def __reduce__(self):
        return (type(self), (self.stage, self.cause))

    @property
    def is_input_error(self) -> bool:
        """Missing or invalid inputs map to exit code 2."""
        return isinstance(
            self.cause,
            (FileNotFoundError, DatasetParseError, DatasetValidationError, ContractViolation),
        )


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Re-raise any exception inside the block as a StageError naming the stage."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e
