"""Helpers for colon-separated lowercase MAC addresses."""

from __future__ import annotations

import re

from .errors import ZtpomError

_MAC_RE = re.compile(r"^([0-9a-f]{2}:){5}[0-9a-f]{2}$")
_PREFIX_RE = re.compile(r"^([0-9a-f]{2}:){3}[0-9a-f]{2}$")


class MacError(ZtpomError):
    code = "bad-mac"


def is_mac(text: str) -> bool:
    return bool(_MAC_RE.match(text))


def check_mac(text: str, where: str = "mac") -> str:
    if not isinstance(text, str) or not _MAC_RE.match(text):
        raise MacError(f"{where}: not a lowercase colon-separated MAC: {text!r}")
    return text


def check_prefix(text: str, where: str = "mac_prefix") -> str:
    """A 4-byte prefix, e.g. ``02:aa:00:00``."""
    if not isinstance(text, str) or not _PREFIX_RE.match(text):
        raise MacError(f"{where}: not a 4-byte lowercase MAC prefix: {text!r}")
    return text


def make_mac(prefix: str, seq: int, ordinal: int) -> str:
    """Append seq and ordinal as the trailing two bytes of a 4-byte prefix.

    Both values must fit a single byte; callers treat overflow as an
    exhausted address space.
    """
    check_prefix(prefix)
    if not 0 <= seq <= 0xFF:
        raise MacError(f"deployment sequence {seq} does not fit one byte")
    if not 0 <= ordinal <= 0xFF:
        raise MacError(f"node ordinal {ordinal} does not fit one byte")
    return f"{prefix}:{seq:02x}:{ordinal:02x}"
