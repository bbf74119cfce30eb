"""De-sparsified group estimator, chi-squared pivot, and confidence ellipsoids.

For a group J of coefficient indices the construction regresses X_J on the
remaining columns with the multivariate square-root Lasso (the nuisance fit
Gamma_hat), forms the residualized instruments A = X_J - X_{-J} Gamma_hat and
the surrogate matrices

    T_tilde = A' X_J / n,      T_hat = A' A / n,      M = sqrt(n) T_hat^{-1/2} T_tilde,

and de-sparsifies an initial square-root Lasso fit to

    b_hat_J = beta_hat_J + T_tilde^{-1} A' (y - X beta_hat) / n.

The pivot ||M (b_hat_J - beta_ref)||^2 / sigma_hat^2 is asymptotically
chi-squared with |J| degrees of freedom.  ``theorem1_decomposition`` checks,
to machine precision, the exact split of the pivot into a Gaussian term with
identity covariance and a remainder controlled by the nuisance dual
certificate; failures there indicate bugs, not statistical events.

Indices in J are 0-based column positions into X.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .chisq import chi2_quantile
from .errors import (
    InternalConsistencyError,
    InvalidInputError,
    SingularMatrixError,
    UnboundedSetError,
)
from .linalg import Array, as_matrix, as_vector, psd_inv_sqrt
from .solvers import MultiFit, NormSpec, SolverOptions, fit_multi_sqrt_lasso


@dataclass(frozen=True)
class GroupInference:
    """Bundle of the group construction for one (X, J, lambda)."""

    J: tuple[int, ...]
    Gamma_hat: Array
    T_tilde: Array
    T_hat: Array
    M: Array
    b_hat_J: Array | None  # None on the normalized-only path (singular T_tilde)
    lam: float
    norm: NormSpec
    nuisance_fit: MultiFit | None = None


@dataclass(frozen=True)
class PivotResult:
    chi2_stat: float
    dof: int
    sigma_used: float
    alpha: float
    covered: bool | None = None
    remainder_linf: float | None = None


class Theorem1Decomposition(NamedTuple):
    gauss_term: Array
    rem: Array
    rem_bound: float


def _split_indices(p: int, J) -> tuple[np.ndarray, np.ndarray]:
    Jarr = np.asarray(sorted(int(j) for j in J), dtype=int)
    if Jarr.size == 0:
        raise InvalidInputError("J must be nonempty")
    if np.unique(Jarr).size != Jarr.size:
        raise InvalidInputError("J contains duplicate indices")
    if Jarr[0] < 0 or Jarr[-1] >= p:
        raise InvalidInputError(f"J indices must lie in [0, {p - 1}]")
    if Jarr.size >= p:
        raise InvalidInputError("J must be a proper subset of the columns")
    mask = np.zeros(p, dtype=bool)
    mask[Jarr] = True
    return Jarr, np.flatnonzero(~mask)


def fit_nuisance(
    X, J, lam: float,
    norm: NormSpec | None = None,
    opts: SolverOptions | None = None,
) -> MultiFit:
    """Multivariate square-root Lasso of X_J on X_{-J} at penalty level ``lam``."""
    if not (lam > 0) or not math.isfinite(lam):
        raise InvalidInputError(f"lambda must be positive and finite, got {lam!r}")
    Xm = as_matrix(X, "X")
    Jarr, rest = _split_indices(Xm.shape[1], J)
    return fit_multi_sqrt_lasso(Xm[:, rest], Xm[:, Jarr], lam, norm=norm, opts=opts)


def surrogate_matrices(X, J, Gamma_hat, rcond: float = 1e-10) -> tuple[Array, Array, Array]:
    """T_tilde, T_hat and the normalization matrix M for a given nuisance fit.

    M is computed through T_hat^{-1/2} and exists whether or not T_tilde is
    invertible; a singular T_hat makes the whole construction unusable and
    raises.
    """
    Xm = as_matrix(X, "X")
    n = Xm.shape[0]
    Jarr, rest = _split_indices(Xm.shape[1], J)
    Gm = as_matrix(Gamma_hat, "Gamma_hat")
    if Gm.shape != (rest.size, Jarr.size):
        raise InvalidInputError(
            f"Gamma_hat must have shape {(rest.size, Jarr.size)}, got {Gm.shape}"
        )
    A = Xm[:, Jarr] - Xm[:, rest] @ Gm
    T_tilde = A.T @ Xm[:, Jarr] / n
    T_hat = A.T @ A / n
    T_hat = (T_hat + T_hat.T) / 2.0
    M = math.sqrt(n) * psd_inv_sqrt(T_hat, rcond=rcond, name="T_hat") @ T_tilde
    return T_tilde, T_hat, M


def desparsify(beta_hat, X, y, J, Gamma_hat, T_tilde, rcond: float = 1e-10) -> Array:
    """De-sparsified group estimate b_hat_J (requires invertible T_tilde)."""
    Xm = as_matrix(X, "X")
    yv = as_vector(y, "y")
    beta = as_vector(beta_hat, "beta_hat")
    n, p = Xm.shape
    Jarr, rest = _split_indices(p, J)
    Tt = as_matrix(T_tilde, "T_tilde")
    sv = np.linalg.svd(Tt, compute_uv=False)
    if sv[-1] < rcond * sv[0] or sv[0] == 0.0:
        raise SingularMatrixError(
            "T_tilde is singular at rcond; the point estimator is unavailable, "
            "use the normalized pivot path",
            condition_estimate=float("inf") if sv[-1] == 0 else float(sv[0] / sv[-1]),
        )
    A = Xm[:, Jarr] - Xm[:, rest] @ as_matrix(Gamma_hat, "Gamma_hat")
    correction = np.linalg.solve(Tt, A.T @ (yv - Xm @ beta) / n)
    return beta[Jarr] + correction


def group_inference(
    X, J, lam: float,
    norm: NormSpec | None = None,
    opts: SolverOptions | None = None,
    rcond: float = 1e-10,
) -> GroupInference:
    """Run the nuisance fit and assemble the full group construction for X, J."""
    nuisance = fit_nuisance(X, J, lam, norm=norm, opts=opts)
    T_tilde, T_hat, M = surrogate_matrices(X, J, nuisance.B_hat, rcond=rcond)
    return GroupInference(
        J=tuple(int(j) for j in np.sort(np.asarray(list(J), dtype=int))),
        Gamma_hat=nuisance.B_hat,
        T_tilde=T_tilde,
        T_hat=T_hat,
        M=M,
        b_hat_J=None,
        lam=float(lam),
        norm=norm or NormSpec(),
        nuisance_fit=nuisance,
    )


def normalized_pivot(inference: GroupInference, X, y, beta_hat, beta_ref) -> Array:
    """M (b_hat_J - beta_ref) computed without inverting T_tilde.

    Evaluates M beta_hat_J + sqrt(n) T_hat^{-1/2} A'(y - X beta_hat)/n - M beta_ref,
    which coincides with the de-sparsified pivot whenever T_tilde is invertible
    and remains defined when it is not.
    """
    Xm = as_matrix(X, "X")
    yv = as_vector(y, "y")
    beta = as_vector(beta_hat, "beta_hat")
    n, p = Xm.shape
    Jarr, rest = _split_indices(p, inference.J)
    ref = as_vector(beta_ref, "beta_ref")
    if ref.size != Jarr.size:
        raise InvalidInputError(f"beta_ref must have length {Jarr.size}")
    A = Xm[:, Jarr] - Xm[:, rest] @ inference.Gamma_hat
    Th_inv_sqrt = psd_inv_sqrt(inference.T_hat, name="T_hat")
    return (
        inference.M @ (beta[Jarr] - ref)
        + math.sqrt(n) * Th_inv_sqrt @ (A.T @ (yv - Xm @ beta) / n)
    )


def nuisance_dual(X, J, Gamma_hat, T_hat, lam: float) -> Array:
    """Dual certificate Z_hat = X_{-J}' A T_hat^{-1/2} / (n lam) of the nuisance fit.

    This is the exact dual matrix appearing in the remainder of the pivot
    decomposition; at a converged nuisance fit its dual norm is <= 1 up to
    solver tolerance.
    """
    if not (lam > 0):
        raise InvalidInputError("lam must be positive")
    Xm = as_matrix(X, "X")
    n, p = Xm.shape
    Jarr, rest = _split_indices(p, J)
    A = Xm[:, Jarr] - Xm[:, rest] @ as_matrix(Gamma_hat, "Gamma_hat")
    return Xm[:, rest].T @ A @ psd_inv_sqrt(T_hat, name="T_hat") / (n * lam)


def theorem1_decomposition(
    b_hat_J, beta0, sigma0: float, eps, X, J,
    Gamma_hat, T_hat, M, Z_hat, lam: float, beta_hat,
    norm: NormSpec | None = None,
    identity_tol: float = 1e-8,
    bound_slack: float = 1e-10,
) -> Theorem1Decomposition:
    """Exact split of the pivot into its Gaussian term and remainder.

    Returns (gauss_term, rem, rem_bound) with

        gauss_term = T_hat^{-1/2} A' eps / sqrt(n),
        rem        = -sqrt(n) lam Z_hat' (beta_hat_{-J} - beta0_{-J}) / sigma0,
        rem_bound  = sqrt(n) lam penalty(beta_hat_{-J} - beta0_{-J}) / sigma0,

    where the penalty is the l1 norm (or the group norm when ``norm`` says so).
    Asserts the reconstruction M(b_hat_J - beta0_J)/sigma0 = gauss_term/sigma0 + rem
    to ``identity_tol`` and ||rem||_inf <= rem_bound + ``bound_slack``; a failure
    of either raises InternalConsistencyError since both are algebraic
    consequences of the construction (the bound additionally needs the dual
    norm of Z_hat to be <= 1, i.e. a converged nuisance fit).
    """
    if not (sigma0 > 0):
        raise InvalidInputError("sigma0 must be positive")
    norm = norm or NormSpec()
    Xm = as_matrix(X, "X")
    n, p = Xm.shape
    Jarr, rest = _split_indices(p, J)
    beta0v = as_vector(beta0, "beta0")
    betav = as_vector(beta_hat, "beta_hat")
    epsv = as_vector(eps, "eps")
    bJ = as_vector(b_hat_J, "b_hat_J")

    A = Xm[:, Jarr] - Xm[:, rest] @ as_matrix(Gamma_hat, "Gamma_hat")
    gauss_term = psd_inv_sqrt(as_matrix(T_hat, "T_hat"), name="T_hat") @ (A.T @ epsv) / math.sqrt(n)

    delta_rest = betav[rest] - beta0v[rest]
    rem = -math.sqrt(n) * lam * (as_matrix(Z_hat, "Z_hat").T @ delta_rest) / sigma0
    rem_bound = math.sqrt(n) * lam * norm.penalty(delta_rest) / sigma0

    pivot = as_matrix(M, "M") @ (bJ - beta0v[Jarr])
    residual = float(np.max(np.abs(pivot / sigma0 - gauss_term / sigma0 - rem)))
    if residual > identity_tol:
        raise InternalConsistencyError(
            f"pivot decomposition identity failed: residual {residual:.3e} > {identity_tol:g} "
            "(solver or certification bug)"
        )
    rem_linf = float(np.max(np.abs(rem)))
    if rem_linf > rem_bound + bound_slack:
        raise InternalConsistencyError(
            f"remainder bound failed: ||rem||_inf={rem_linf:.6e} exceeds "
            f"{rem_bound:.6e} + {bound_slack:g} (nuisance dual norm above 1?)"
        )
    return Theorem1Decomposition(gauss_term, rem, rem_bound)


def chi2_statistic(b_hat_J, beta_ref, M, sigma: float) -> float:
    """||M (b_hat_J - beta_ref)||_2^2 / sigma^2."""
    if not (sigma > 0):
        raise InvalidInputError(f"sigma must be positive, got {sigma!r}")
    diff = as_vector(b_hat_J, "b_hat_J") - as_vector(beta_ref, "beta_ref")
    v = as_matrix(M, "M") @ diff
    return float(v @ v) / (sigma * sigma)


@dataclass(frozen=True)
class EllipsoidSet:
    """Confidence set {b : ||M (center - b)||_2^2 <= radius_sq}."""

    center: Array
    M: Array
    radius_sq: float
    alpha: float
    dof: int

    def contains(self, b) -> bool:
        diff = self.center - as_vector(b, "b")
        v = self.M @ diff
        return bool(v @ v <= self.radius_sq)

    def axes(self) -> tuple[Array, Array]:
        """Semi-axis lengths and directions (rows) of the ellipsoid boundary."""
        U, s, Vt = np.linalg.svd(self.M)
        return np.sqrt(self.radius_sq) / s, Vt


def confidence_set(inference: GroupInference, sigma: float, alpha: float) -> EllipsoidSet:
    """Ellipsoidal confidence set at level 1 - alpha around b_hat_J."""
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not (sigma > 0):
        raise InvalidInputError(f"sigma must be positive, got {sigma!r}")
    if inference.b_hat_J is None:
        raise InvalidInputError(
            "confidence_set needs the point estimate; this inference object "
            "was built on the normalized-only path"
        )
    dof = len(inference.J)
    s = np.linalg.svd(inference.M, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise UnboundedSetError(
            f"normalization matrix is rank-deficient (singular values {s})"
        )
    quantile = chi2_quantile(1.0 - alpha, dof)
    return EllipsoidSet(
        center=np.array(inference.b_hat_J, copy=True),
        M=np.array(inference.M, copy=True),
        radius_sq=sigma * sigma * quantile,
        alpha=alpha,
        dof=dof,
    )


def with_point_estimate(inference: GroupInference, X, y, beta_hat, rcond: float = 1e-10) -> GroupInference:
    """Return a copy of ``inference`` with b_hat_J filled in from a regression fit."""
    b = desparsify(beta_hat, X, y, inference.J, inference.Gamma_hat, inference.T_tilde, rcond=rcond)
    return GroupInference(
        J=inference.J,
        Gamma_hat=inference.Gamma_hat,
        T_tilde=inference.T_tilde,
        T_hat=inference.T_hat,
        M=inference.M,
        b_hat_J=b,
        lam=inference.lam,
        norm=inference.norm,
        nuisance_fit=inference.nuisance_fit,
    )
