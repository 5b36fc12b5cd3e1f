from __future__ import annotations

from typing import Any, Dict, Optional, Sequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class BaseAppException(Exception):
    """Base exception for all application exceptions"""

    error_code = "app_error"

    def __init__(self, message: str, exit_code: int = EXIT_DATA):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ValidationException(BaseAppException):
    """Raised when validation fails"""

    error_code = "validation_error"


class ShapeMismatchException(ValidationException):
    """Raised when array extents disagree"""

    error_code = "shape_mismatch"

    def __init__(self, op: str, expected: Sequence[Any], got: Sequence[Any]):
        self.op = op
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"{op}: expected shape {self.expected}, got {self.got}")


class NotFoundException(BaseAppException):
    """Raised when an artifact is not found"""

    error_code = "not_found"


class StorageException(BaseAppException):
    """Raised when a file operation fails"""

    error_code = "storage_error"


class ContainerException(StorageException):
    """Raised when a dataset container cannot be decoded"""

    error_code = "container_error"


class ChecksumMismatchException(ContainerException):
    error_code = "checksum_mismatch"


class TruncatedContainerException(ContainerException):
    error_code = "truncated_container"


class VersionSkewException(ContainerException):
    error_code = "version_skew"


class MaskPlacementException(BaseAppException):
    """Raised when block anchors cannot be placed without overlap"""

    error_code = "mask_placement"

    def __init__(self, message: str, attempted: Optional[Sequence[tuple[int, int]]] = None):
        self.attempted = list(attempted or [])
        super().__init__(message)


class InterpolationException(BaseAppException):
    error_code = "interpolation_error"


class NumericalAbortException(BaseAppException):
    """Raised when a computation produces non-finite values"""

    error_code = "numerical_abort"

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.context = dict(context or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(f"{message} ({detail})" if detail else message, exit_code=EXIT_NUMERICAL)
