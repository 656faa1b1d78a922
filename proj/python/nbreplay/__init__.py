"""Notebook audit, repeat and rollback runtime."""

from ._core import (
    CorruptionError,
    Error,
    RepeatError,
    analyze,
    audit,
    canonicalize_token,
    cell_code_hash,
    command_fingerprint,
    gc,
    inspect,
    repeat,
    rollback,
    sha256_hex,
    verify,
)

__all__ = [
    "CorruptionError",
    "Error",
    "RepeatError",
    "analyze",
    "audit",
    "canonicalize_token",
    "cell_code_hash",
    "command_fingerprint",
    "gc",
    "inspect",
    "repeat",
    "rollback",
    "sha256_hex",
    "verify",
]
