"""Shared error base for all subsystems.

Every domain error carries a short machine-readable ``code`` so the
gateway can map it onto HTTP responses and CLI exit codes without
string-matching messages.
"""

from __future__ import annotations


class ZtpomError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "error"

    def __init__(self, message: str, **details: object) -> None:
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict[str, object]:
        return {"error": self.code, "detail": str(self), **self.details}
