"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available. ``PAGETOPK_BACKEND`` (``auto``, ``cython``, ``python``)
overrides the choice at import time, and :func:`set_backend` switches it at
runtime (tests and the CLI use this).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

_active: ModuleType | None = None


def _load(name: str) -> ModuleType:
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels_cy  # type: ignore[attr-defined]

        return _kernels_cy
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> tuple[str, ...]:
    names = ["python"]
    try:
        _load("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return tuple(names)


def set_backend(name: str) -> ModuleType:
    """Select the kernel backend by name; ``auto`` prefers the compiled one."""
    global _active
    if name == "auto":
        name = available_backends()[0]
    _active = _load(name)
    return _active


def active_backend() -> ModuleType:
    global _active
    if _active is None:
        set_backend(os.environ.get("PAGETOPK_BACKEND", "auto"))
    assert _active is not None
    return _active


def backend_name() -> str:
    return active_backend().NAME
