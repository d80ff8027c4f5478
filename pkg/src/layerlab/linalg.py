"""Dense double-precision matrix kernel.

Everything downstream (network dynamics, diagnostics, initializers) moves
matrices through this module so that validation and error reporting stay in
one place.  Matrices are plain row-major ``numpy`` arrays of ``float64``;
the helpers here add the shape/finiteness contracts and expose the handful
of named operations the rest of the package consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "SvdResult",
    "as_matrix",
    "frobenius_norm",
    "matmul",
    "spectral_norm",
    "svd",
    "trace",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce *a* to a finite 2-D float64 array, or raise.

    Raises:
        ShapeError: not 2-D, or has a zero-length axis.
        NumericalError: contains NaN or infinity.
    """
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.shape[0] == 0 or out.shape[1] == 0:
        raise ShapeError(f"{name} must have positive dimensions, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{name} contains non-finite entries")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with explicit shape checking."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}:"
            " inner dimensions differ"
        )
    return a @ b


@dataclass(frozen=True)
class SvdResult:
    """Thin singular value decomposition ``a = u @ diag(sigma) @ v.T``.

    Attributes:
        u: (rows, r) with orthonormal columns.
        sigma: length-r singular values, non-negative and non-increasing.
        v: (cols, r) with orthonormal columns.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def svd(a) -> SvdResult:
    """Thin SVD of a dense matrix.

    Raises:
        NumericalError: input is non-finite or the decomposition fails to
            converge.
    """
    a = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u=u, sigma=s, v=vt.T)


def frobenius_norm(a) -> float:
    """Square root of the sum of squared entries."""
    a = as_matrix(a)
    return float(np.linalg.norm(a, "fro"))


def spectral_norm(a) -> float:
    """Largest singular value."""
    return float(svd(a).sigma[0])


def trace(a) -> float:
    """Sum of diagonal entries of a square matrix."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace needs a square matrix, got {a.shape[0]}x{a.shape[1]}")
    return float(np.trace(a))
