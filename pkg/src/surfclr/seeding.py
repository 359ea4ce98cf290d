"""Deterministic seed derivation.

Python's builtin hash() is salted per process, so anything that must be
reproducible across runs derives child seeds through sha256 instead.
"""

from __future__ import annotations

import hashlib


def stable_seed(*parts) -> int:
    """Derive a 63-bit seed from an arbitrary tuple of printable parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
