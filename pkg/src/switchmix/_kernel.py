"""Import-time selection of the integration kernel.

Prefers the compiled extension, falls back to the pure numpy implementation.
Set SWITCHMIX_KERNEL=pure (or =compiled) to force a backend; forcing an
unavailable backend raises at import.
"""

from __future__ import annotations

import os

from . import _kernel_pure

try:
    from . import _speedups
except ImportError:
    _speedups = None


def available_backends() -> tuple[str, ...]:
    return ("compiled", "pure") if _speedups is not None else ("pure",)


def kernel_module(name: str):
    if name == "pure":
        return _kernel_pure
    if name == "compiled":
        if _speedups is None:
            raise ImportError("compiled kernel is not built")
        return _speedups
    raise ValueError(f"unknown kernel backend {name!r}")


_forced = os.environ.get("SWITCHMIX_KERNEL")
if _forced:
    _active = kernel_module(_forced)
else:
    _active = _speedups if _speedups is not None else _kernel_pure

BACKEND: str = _active.BACKEND
run_pieces = _active.run_pieces
