"""Error type shared by every mmm module.

Each failure mode carries a stable machine-readable ``code`` (e.g.
``UNKNOWN_PIECE``, ``SYNTAX_ERROR``) so callers, the service and the CLI
can map errors without parsing messages.
"""

from __future__ import annotations


class MmmError(Exception):
    """Domain error with a stable code string."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message or code
        super().__init__(f"{code}: {self.message}" if message else code)


class DecodeError(MmmError):
    """Raised for malformed or out-of-schema MMM-JSON documents."""


class TransportError(MmmError):
    """Raised for peer transport failures (unreachable, bad frame)."""
