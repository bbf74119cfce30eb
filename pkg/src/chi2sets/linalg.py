"""Dense linear-algebra kernels: nuclear norm, PSD roots, Toeplitz covariance.

All routines run LAPACK's deterministic dense drivers on float64 inputs; for
fixed input bytes the outputs are reproducible on a given platform.  The
``||.||_n`` convention divides squared norms by the vector length.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInputError, SingularMatrixError

Array = NDArray[np.float64]


def as_matrix(A, name: str = "A") -> Array:
    M = np.ascontiguousarray(A, dtype=float)
    if M.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got ndim={M.ndim}")
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise InvalidInputError(f"{name} must be nonempty, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return M


def as_vector(v, name: str = "v") -> Array:
    w = np.ascontiguousarray(v, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise InvalidInputError(f"{name} must be a nonempty 1-d array")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return w


def nnorm(v) -> float:
    """Normalized norm ||v||_n = sqrt(v'v / n)."""
    w = as_vector(v)
    return float(np.sqrt(w @ w / w.size))


def nuclear_norm(A) -> float:
    """Sum of singular values of ``A`` (equals trace((A'A)^{1/2}))."""
    M = as_matrix(A)
    return float(np.linalg.svd(M, compute_uv=False).sum())


def sym_eigh(S, name: str = "S", sym_tol: float = 1e-8) -> tuple[Array, Array]:
    """Eigendecomposition of a matrix required to be symmetric.

    Symmetry is checked to ``sym_tol`` relative to the largest entry, then the
    matrix is symmetrized exactly before the solve so roundoff asymmetry
    cannot leak into eigenvectors.
    """
    M = as_matrix(S, name)
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {M.shape}")
    scale = float(np.max(np.abs(M))) or 1.0
    if float(np.max(np.abs(M - M.T))) > sym_tol * scale:
        raise InvalidInputError(f"{name} is not symmetric within tolerance {sym_tol}")
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    return w, V


def psd_sqrt(S, name: str = "S") -> Array:
    """Symmetric PSD square root; eigenvalues below roundoff are clipped to zero."""
    w, V = sym_eigh(S, name)
    wmax = float(w[-1]) if w[-1] > 0 else 0.0
    w = np.clip(w, 0.0, None)
    if wmax > 0:
        # clip roundoff negatives only; a genuinely indefinite input fails the caller's PSD contract
        w[w < -1e-12 * wmax] = 0.0
    return (V * np.sqrt(w)) @ V.T


def psd_inv_sqrt(S, rcond: float = 1e-10, name: str = "S") -> Array:
    """Inverse square root S^{-1/2} of a symmetric PSD matrix.

    Raises :class:`SingularMatrixError` (carrying the condition estimate) when
    the smallest eigenvalue is below ``rcond`` times the largest.
    """
    w, V = sym_eigh(S, name)
    wmax = float(w[-1])
    wmin = float(w[0])
    if wmax <= 0 or wmin < rcond * wmax:
        cond = float("inf") if wmin <= 0 else wmax / wmin
        raise SingularMatrixError(
            f"{name} is singular at rcond={rcond:g} (eigenvalue range [{wmin:.3e}, {wmax:.3e}])",
            condition_estimate=cond,
        )
    return (V * (w ** -0.5)) @ V.T


def toeplitz_cov(p: int, rho: float) -> Array:
    """Toeplitz correlation matrix with entries rho^|i-j|."""
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise InvalidInputError(f"p must be a positive integer, got {p!r}")
    if not abs(rho) < 1:
        raise InvalidInputError(f"|rho| must be < 1, got {rho!r}")
    idx = np.arange(p)
    return float(rho) ** np.abs(np.subtract.outer(idx, idx))
