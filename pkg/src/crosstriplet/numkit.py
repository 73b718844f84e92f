"""Dense float64 matrix helpers and a central-difference gradient checker.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; the
helpers here only add shape checking and fixed reduction orders so that
repeated runs reproduce results to the bit.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# Row block used when materialising (m, n, d) difference tensors.
_DIST_BLOCK = 256


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array (1-D input becomes a single row)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def relu(x) -> np.ndarray:
    return np.maximum(as_matrix(x), 0.0)


def pairwise_sq_dist(a, b) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Computed from explicit differences rather than the
    ``|a|^2 + |b|^2 - 2ab`` expansion, so ``pairwise_sq_dist(x, x)`` has an
    exactly zero diagonal and is bitwise symmetric.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {a.shape[0]}x{a.shape[1]} vs {b.shape[0]}x{b.shape[1]}"
        )
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], _DIST_BLOCK):
        diff = a[start:start + _DIST_BLOCK, None, :] - b[None, :, :]
        out[start:start + _DIST_BLOCK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def frobenius_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.sum(x * x)))


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], theta, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter vector.

    ``theta`` may have any shape; the returned gradient has the same shape.
    Raises ``FloatingPointError`` naming the coordinate if ``f`` returns a
    non-finite value.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.array(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        f_plus = float(f(theta))
        flat[k] = orig - eps
        f_minus = float(f(theta))
        flat[k] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite function value at coordinate {k}")
        grad[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(theta.shape)
