from __future__ import annotations

from typing import Any


class SpgarchError(Exception):
    """Base class for every error raised by the package."""


class DomainError(SpgarchError, ValueError):
    pass


class ContractViolation(SpgarchError):
    pass


class NumericError(SpgarchError):
    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        if not self.diagnostics:
            return super().__str__()
        details = ", ".join(f"{key}={value}" for key, value in self.diagnostics.items())
        return f"{super().__str__()} ({details})"


class SamplerInitError(NumericError):
    pass


class ParseError(SpgarchError):
    def __init__(self, message: str, row: int | None = None) -> None:
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ConfigError(SpgarchError):
    pass
