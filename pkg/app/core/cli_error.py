from __future__ import annotations

import json
from dataclasses import dataclass

from pydantic import ValidationError

from app.core.exceptions import EXIT_DATA, EXIT_USAGE, BaseAppException


@dataclass
class CliError(Exception):
    error_code: str
    message: str
    exit_code: int = EXIT_DATA

    def to_record(self) -> str:
        """Single machine-parsable line, always the last one on stderr."""
        return json.dumps(
            {
                "status": "error",
                "error_code": self.error_code,
                "message": self.message,
                "exit_code": self.exit_code,
            },
            sort_keys=True,
        )

    @classmethod
    def usage(cls, message: str) -> "CliError":
        return cls(error_code="usage_error", message=message, exit_code=EXIT_USAGE)

    @classmethod
    def from_exception(cls, exc: BaseException) -> "CliError":
        if isinstance(exc, CliError):
            return exc
        if isinstance(exc, BaseAppException):
            return cls(error_code=exc.error_code, message=exc.message, exit_code=exc.exit_code)
        if isinstance(exc, ValidationError):
            first = exc.errors()[0] if exc.errors() else {}
            loc = ".".join(str(p) for p in first.get("loc", ()))
            msg = f"{loc}: {first.get('msg', str(exc))}" if loc else str(exc)
            return cls(error_code="validation_error", message=msg, exit_code=EXIT_DATA)
        return cls(error_code="internal_error", message=f"{type(exc).__name__}: {exc}", exit_code=EXIT_DATA)
