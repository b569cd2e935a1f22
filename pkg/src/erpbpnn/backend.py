"""Kernel backend selection.

The compiled extension and the numpy fallback implement the same
forward/backward contract (documented in `_kernels_py`). `resolve` picks one:
explicitly by name, via the ERPBPNN_BACKEND environment variable, or
automatically (compiled when available, fallback otherwise).
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels
except ImportError:  # extension not built on this install
    _kernels = None

_ENV_VAR = "ERPBPNN_BACKEND"


def available() -> tuple[str, ...]:
    """Names of the usable backends, preferred first."""
    return ("compiled", "python") if _kernels is not None else ("python",)


def resolve(name: str | None = None):
    """Return the kernel module for `name` ('compiled', 'python', 'auto'/None)."""
    if name is None or name == "auto":
        name = os.environ.get(_ENV_VAR, "auto")
    if name in (None, "auto"):
        return _kernels if _kernels is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _kernels is None:
            raise RuntimeError(
                "compiled kernel backend requested but the extension is not built; "
                "reinstall the package or set ERPBPNN_BACKEND=python"
            )
        return _kernels
    raise ValueError(f"unknown backend {name!r}; expected 'compiled', 'python', or 'auto'")


def default_name() -> str:
    """Name of the backend `resolve(None)` would pick."""
    return resolve(None).NAME
