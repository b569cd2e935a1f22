"""Small dense linear-algebra helpers shared across the package.

Matrices are row-major 2-D float64 arrays, vectors are 1-D float64 arrays.
Everything here is a pure function over immutable inputs. The largest matrix
in a default network is about 16x16, so clarity wins over cleverness; the
batched hot loops live in the kernel backends, not here.
"""

from __future__ import annotations

import numpy as np

__all__ = ["as_matrix", "as_vector", "matvec", "tanh_vec", "lsq_slope"]


def as_matrix(a) -> np.ndarray:
    """Validate and return `a` as a finite 2-D float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def as_vector(a) -> np.ndarray:
    """Validate and return `a` as a finite 1-D float64 array."""
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product; raises ValueError on dimension mismatch."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1:
        raise ValueError(f"matvec expects (2-D, 1-D), got ({m.ndim}-D, {v.ndim}-D)")
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"matvec dimension mismatch: {m.shape} x ({v.shape[0]},)")
    return m @ v


def tanh_vec(v) -> np.ndarray:
    """Elementwise tanh."""
    return np.tanh(np.asarray(v, dtype=np.float64))


def lsq_slope(xs, ys) -> float:
    """Closed-form least-squares slope of ys against xs.

    Returns (n*sum(x*y) - sum(x)*sum(y)) / (n*sum(x^2) - sum(x)^2). Raises
    ValueError when fewer than two points are given, lengths differ, or xs is
    degenerate (all values equal), which makes the slope undefined.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.size
    if n < 2:
        raise ValueError("lsq_slope needs at least two points")
    if ys.size != n:
        raise ValueError(f"lsq_slope length mismatch: {n} xs vs {ys.size} ys")
    sx = xs.sum()
    sy = ys.sum()
    sxy = float(xs @ ys)
    sxx = float(xs @ xs)
    denom = n * sxx - sx * sx
    # Guard against exact and roundoff-level degeneracy (all xs equal).
    if denom <= abs(n * sxx) * 1e-12:
        raise ValueError("lsq_slope undefined: xs values are all equal")
    return float((n * sxy - sx * sy) / denom)
