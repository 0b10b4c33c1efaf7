"""Crash-injection hooks for durability testing.

A failpoint kills the process with ``os._exit`` (no cleanup, no atexit), the
closest portable stand-in for SIGKILL. Activation is via the environment so
that subprocess-based tests can arm a point without touching code:

    VAULTSTAMP_FAILPOINTS=record_store_torn_write vaultstamp upload ...

In normal operation every ``check()`` is a cached no-op.
"""

from __future__ import annotations

import os

ENV_VAR = "VAULTSTAMP_FAILPOINTS"
EXIT_CODE = 137

_active: frozenset[str] | None = None


def _active_points() -> frozenset[str]:
    global _active
    if _active is None:
        raw = os.environ.get(ENV_VAR, "")
        _active = frozenset(p.strip() for p in raw.split(",") if p.strip())
    return _active


def reset_cache() -> None:
    """Re-read the environment (tests flip the variable between runs)."""
    global _active
    _active = None


def check(name: str) -> None:
    """Kill the process if failpoint ``name`` is armed."""
    if _active_points() and name in _active_points():
        os._exit(EXIT_CODE)
