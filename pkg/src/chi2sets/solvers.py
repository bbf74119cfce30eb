"""Square-root Lasso and its multivariate (nuclear-norm loss) extension.

The multivariate problem

    minimize_B  ||Y - XB||_nuclear / sqrt(n) + lambda0 * penalty(B)

is solved by a proximal fixpoint scheme exploiting the variational identity

    ||Y - XB||_nuclear / sqrt(n)
        = min_{S > 0} ( trace(Sigma(B) S^{-1/2}) + trace(S^{1/2}) ) / 2,

with Sigma(B) := (Y-XB)'(Y-XB)/n and the minimum attained at S = Sigma(B).
Each outer iteration freezes W = Sigma(B)^{-1/2} and minimizes the resulting
quadratic surrogate trace(Sigma(B')W)/2 + lambda0*penalty(B') by monotone
FISTA with the exact Lipschitz step 1/(lmax(X'X/n) * lmax(W)); then W is
refreshed.  A single inner step after a refresh is precisely the classical
proximal-gradient step on the nuclear-norm objective (whose gradient at a
full-rank residual is -X'(Y-XB)Sigma(B)^{-1/2}/n), so the stationary points
are exactly the subgradient conditions

    X'(Y - XB)Sigma(B)^{-1/2} / n = lambda0 * Z,   dual_norm(Z) <= 1,

which ``kkt_check_multi`` certifies post hoc on the original data.  The
surrogate touches the objective from above at the refresh point, hence the
objective is non-increasing across outer iterates; ``objective_trace``
records it.

The univariate square-root Lasso is the q = 1 instance of the same path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateFitError,
    InvalidInputError,
)
from .linalg import Array, as_matrix, as_vector, nnorm, sym_eigh


# ---------------------------------------------------------------------------
# penalty norms


@dataclass(frozen=True)
class NormSpec:
    """Penalty norm for the coefficient matrix.

    ``kind="l1"`` is the entrywise l1 norm.  ``kind="group"`` penalizes row
    groups: each column contributes sum_t sqrt(|G_t|) * ||B[G_t, col]||_2,
    where ``groups`` partitions the row indices.  The dual norm used in KKT
    certification is the entrywise max for l1 and
    max over (group, column) of ||Z[G_t, col]||_2 / sqrt(|G_t|) for groups.
    """

    kind: str = "l1"
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("l1", "group"):
            raise InvalidInputError(f"unknown norm kind {self.kind!r}")
        if self.kind == "group":
            if not self.groups:
                raise InvalidInputError("group norm requires a nonempty group partition")
            groups = tuple(tuple(int(i) for i in g) for g in self.groups)
            seen: set[int] = set()
            for g in groups:
                if len(g) == 0:
                    raise InvalidInputError("empty group in partition")
                if seen.intersection(g):
                    raise InvalidInputError("groups must be mutually disjoint")
                seen.update(g)
            object.__setattr__(self, "groups", groups)
        elif self.groups is not None:
            raise InvalidInputError("groups are only meaningful for kind='group'")

    def validate_rows(self, p: int) -> None:
        """Check that the group partition covers exactly the p row indices."""
        if self.kind != "group":
            return
        covered = sorted(i for g in self.groups for i in g)
        if covered != list(range(p)):
            raise InvalidInputError(
                f"group partition must cover row indices 0..{p - 1} exactly"
            )

    def weights(self) -> tuple[float, ...]:
        if self.kind != "group":
            raise InvalidInputError("weights are defined for group norms only")
        return tuple(math.sqrt(len(g)) for g in self.groups)

    def penalty(self, B: Array) -> float:
        """Penalty value of a (p x q) matrix or a p-vector (treated as one column)."""
        M = B if B.ndim == 2 else B[:, None]
        if self.kind == "l1":
            return float(np.abs(M).sum())
        total = 0.0
        for g, w in zip(self.groups, self.weights()):
            blk = M[list(g), :]
            total += w * float(np.sqrt((blk * blk).sum(axis=0)).sum())
        return total

    def prox(self, B: Array, thr: float) -> Array:
        """Proximal map of thr * penalty at B."""
        if self.kind == "l1":
            return soft_threshold_phi(B, thr)
        out = np.array(B, copy=True)
        for g, w in zip(self.groups, self.weights()):
            rows = list(g)
            blk = out[rows, :]
            nrm = np.sqrt((blk * blk).sum(axis=0))
            shrink = np.maximum(1.0 - thr * w / np.where(nrm > 0, nrm, 1.0), 0.0)
            shrink[nrm == 0] = 0.0
            out[rows, :] = blk * shrink
        return out

    def dual_norm(self, Z: Array) -> float:
        M = Z if Z.ndim == 2 else Z[:, None]
        if self.kind == "l1":
            return float(np.max(np.abs(M)))
        best = 0.0
        for g, w in zip(self.groups, self.weights()):
            blk = M[list(g), :]
            best = max(best, float(np.sqrt((blk * blk).sum(axis=0)).max()) / w)
        return best


def soft_threshold_phi(a, eta: float, mode: str = "scalar"):
    """Soft-threshold operator.

    ``mode="scalar"`` applies sign(a)*(|a|-eta)+ entrywise (any shape, scalars
    included); ``mode="block"`` shrinks the whole array as one vector in its
    l2 norm, returning a*(1 - eta/||a||)+ and the zero array at ||a|| <= eta.
    Both are proximal maps (of eta*||.||_1 and eta*||.||_2) and the identity
    at eta = 0.
    """
    if eta < 0:
        raise InvalidInputError(f"threshold must be nonnegative, got {eta!r}")
    arr = np.asarray(a, dtype=float)
    if mode == "scalar":
        out = np.sign(arr) * np.maximum(np.abs(arr) - eta, 0.0)
        return float(out) if np.isscalar(a) or arr.ndim == 0 else out
    if mode == "block":
        nrm = float(np.sqrt((arr * arr).sum()))
        if nrm <= eta or nrm == 0.0:
            return np.zeros_like(arr)
        return arr * (1.0 - eta / nrm)
    raise InvalidInputError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# fits and options


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for the proximal solver.

    fix_tol: outer fixpoint tolerance on max-abs coefficient change.
    t_stop: outer iteration cap.
    inner_max: FISTA steps per W refresh.
    kkt_tol: default tolerance handed to KKT certification.
    sigma_floor: relative residual-scale floor; below it the loss has no
        usable curvature and the fit is reported degenerate.
    """

    fix_tol: float = 1e-9
    t_stop: int = 50000
    inner_max: int = 1000
    kkt_tol: float = 1e-8
    sigma_floor: float = 1e-10


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class SqrtLassoFit:
    beta_hat: Array
    residuals: Array
    sigma_hat: float
    lambda0: float
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...] = field(repr=False, default=())

    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclass(frozen=True)
class MultiFit:
    B_hat: Array
    Sigma_hat: Array
    lambda0: float
    iterations: int
    converged: bool
    K_scale: float
    norm: NormSpec = NormSpec()
    objective_trace: tuple[float, ...] = field(repr=False, default=())

    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclass(frozen=True)
class KktReport:
    max_dual_violation: float
    sign_mismatch_count: int
    active_set_size: int
    tolerance_used: float
    dual_applicable: bool = True


# ---------------------------------------------------------------------------
# core iteration


def _sigma_of(H: Array, C: Array, G: Array, B: Array) -> Array:
    GB = G @ B
    S = H - C.T @ B - B.T @ C + B.T @ GB
    return (S + S.T) / 2.0


def _objective(H: Array, C: Array, G: Array, B: Array, lam: float, norm: NormSpec) -> float:
    w = np.linalg.eigvalsh(_sigma_of(H, C, G, B))
    return float(np.sqrt(np.clip(w, 0.0, None)).sum()) + lam * norm.penalty(B)


def _surrogate(H: Array, C: Array, G: Array, W: Array, B: Array, lam: float, norm: NormSpec) -> float:
    S = _sigma_of(H, C, G, B)
    return 0.5 * float((S * W).sum()) + lam * norm.penalty(B)


def _inner_minimize(
    H: Array, C: Array, G: Array, W: Array, B: Array,
    step: float, lam: float, norm: NormSpec, tol: float, max_steps: int,
) -> Array:
    # monotone FISTA on the fixed-W surrogate; momentum restarts on overshoot
    CW = C @ W
    Bk = B
    Bkm = B
    tk = 1.0
    val_k = _surrogate(H, C, G, W, Bk, lam, norm)
    for _ in range(max_steps):
        tn = (1.0 + math.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
        V = Bk + ((tk - 1.0) / tn) * (Bk - Bkm)
        cand = norm.prox(V - step * ((G @ V) @ W - CW), step * lam)
        val = _surrogate(H, C, G, W, cand, lam, norm)
        if val > val_k:
            # plain descent step from the last accepted iterate
            cand = norm.prox(Bk - step * ((G @ Bk) @ W - CW), step * lam)
            val = _surrogate(H, C, G, W, cand, lam, norm)
            tn = 1.0
        moved = float(np.max(np.abs(cand - Bk)))
        Bkm, Bk, tk, val_k = Bk, cand, tn, val
        if moved < tol:
            break
    return Bk


def fit_multi_sqrt_lasso(
    X, Y, lambda0: float,
    norm: NormSpec | None = None,
    opts: SolverOptions | None = None,
    B0=None,
) -> MultiFit:
    """Fit the multivariate square-root Lasso.

    Parameters
    ----------
    X : (n, p) design.
    Y : (n, q) responses; a 1-d array is treated as a single column.
    lambda0 : penalty level (>= 0) multiplying ``norm.penalty``.
    norm : penalty norm, entrywise l1 by default.
    opts : solver options.
    B0 : optional (p, q) warm start; zero start by default.

    Raises
    ------
    DegenerateFitError
        The residual covariance lost full rank at the floor (interpolation).
    ConvergenceError
        Iteration cap reached; the error carries the last iterate as ``last_fit``.
    """
    norm = norm or NormSpec()
    opts = opts or DEFAULT_OPTIONS
    Xm = as_matrix(X, "X")
    Ym = np.asarray(Y, dtype=float)
    if Ym.ndim == 1:
        Ym = Ym[:, None]
    Ym = as_matrix(Ym, "Y")
    n, p = Xm.shape
    q = Ym.shape[1]
    if Ym.shape[0] != n:
        raise InvalidInputError(f"X has {n} rows but Y has {Ym.shape[0]}")
    if not (lambda0 >= 0) or not math.isfinite(lambda0):
        raise InvalidInputError(f"lambda0 must be finite and >= 0, got {lambda0!r}")
    norm.validate_rows(p)

    G = Xm.T @ Xm / n
    G = (G + G.T) / 2.0
    C = Xm.T @ Ym / n
    H = Ym.T @ Ym / n
    H = (H + H.T) / 2.0

    gmax = float(np.linalg.eigvalsh(G)[-1])
    K_scale = max(1.0, math.sqrt(max(gmax, 0.0)))
    floor = opts.sigma_floor * math.sqrt(max(float(np.trace(H)), 0.0) / q)

    B = np.zeros((p, q)) if B0 is None else np.array(B0, dtype=float, copy=True)
    if B.shape != (p, q):
        raise InvalidInputError(f"B0 must have shape {(p, q)}, got {B.shape}")

    trace = [_objective(H, C, G, B, lambda0, norm)]
    converged = False
    iterations = 0
    inner_tol = max(0.25 * opts.fix_tol, 1e-14)

    for t in range(1, opts.t_stop + 1):
        iterations = t
        w, V = np.linalg.eigh(_sigma_of(H, C, G, B))
        wmin = float(w[0])
        if wmin <= 0 or math.sqrt(max(wmin, 0.0)) <= floor:
            raise DegenerateFitError(
                f"residual covariance is rank-deficient at iteration {t} "
                f"(smallest eigenvalue {wmin:.3e}, floor {floor:.3e}); "
                "interpolation regime, no usable curvature",
                last_fit=_build_multifit(Xm, Ym, B, lambda0, t, False, K_scale, norm, trace),
            )
        W = (V * (w ** -0.5)) @ V.T
        if gmax <= 0:
            converged = True  # X == 0: any B only adds penalty, B(0) is optimal
            break
        step = math.sqrt(wmin) / gmax  # 1 / (lmax(G) * lmax(W))
        B_new = _inner_minimize(H, C, G, W, B, step, lambda0, norm, inner_tol, opts.inner_max)
        delta = float(np.max(np.abs(B_new - B)))
        B = B_new
        trace.append(_objective(H, C, G, B, lambda0, norm))
        if delta < opts.fix_tol:
            converged = True
            break

    fit = _build_multifit(Xm, Ym, B, lambda0, iterations, converged, K_scale, norm, trace)
    if not converged:
        raise ConvergenceError(
            f"no fixpoint within t_stop={opts.t_stop} (last change above {opts.fix_tol:g})",
            last_fit=fit,
        )
    return fit


def _build_multifit(Xm, Ym, B, lambda0, iterations, converged, K_scale, norm, trace) -> MultiFit:
    R = Ym - Xm @ B
    Sigma = R.T @ R / Xm.shape[0]
    return MultiFit(
        B_hat=B,
        Sigma_hat=(Sigma + Sigma.T) / 2.0,
        lambda0=float(lambda0),
        iterations=iterations,
        converged=converged,
        K_scale=K_scale,
        norm=norm,
        objective_trace=tuple(trace),
    )


def fit_sqrt_lasso(X, y, lambda0: float, opts: SolverOptions | None = None, beta0=None) -> SqrtLassoFit:
    """Fit the square-root Lasso (single response).

    Same iteration as :func:`fit_multi_sqrt_lasso` with q = 1; the returned
    ``sigma_hat`` is ||y - X beta_hat||_n.
    """
    Xm = as_matrix(X, "X")
    yv = as_vector(y, "y")
    if float(np.min((Xm * Xm).sum(axis=0))) == 0.0:
        raise InvalidInputError("X has a zero column")
    B0 = None if beta0 is None else np.asarray(beta0, dtype=float)[:, None]
    multi = fit_multi_sqrt_lasso(Xm, yv[:, None], lambda0, NormSpec(), opts, B0)
    residuals = yv - Xm @ multi.B_hat[:, 0]
    return SqrtLassoFit(
        beta_hat=multi.B_hat[:, 0],
        residuals=residuals,
        sigma_hat=nnorm(residuals),
        lambda0=multi.lambda0,
        iterations=multi.iterations,
        converged=multi.converged,
        objective_trace=multi.objective_trace,
    )


# ---------------------------------------------------------------------------
# KKT certification


def kkt_check_sqrt(fit: SqrtLassoFit, X, y, tol: float | None = None) -> KktReport:
    """Certify a square-root Lasso fit against its stationarity conditions.

    Computes z = X'(y - X beta_hat) / (n sigma_hat lambda0), reports the worst
    excess of |z| over 1 and the number of active coordinates whose dual entry
    differs from sign(beta_hat_j) by more than ``tol``.  With lambda0 = 0 the
    dual scaling is undefined and the report is marked not applicable.
    """
    tol = DEFAULT_OPTIONS.kkt_tol if tol is None else float(tol)
    Xm = as_matrix(X, "X")
    yv = as_vector(y, "y")
    if fit.sigma_hat <= 0:
        raise InvalidInputError("sigma_hat must be positive for KKT certification")
    active = np.flatnonzero(fit.beta_hat)
    if fit.lambda0 == 0.0:
        return KktReport(0.0, 0, active.size, tol, dual_applicable=False)
    n = Xm.shape[0]
    z = Xm.T @ (yv - Xm @ fit.beta_hat) / (n * fit.sigma_hat * fit.lambda0)
    violation = max(0.0, float(np.max(np.abs(z))) - 1.0)
    mismatches = int(np.count_nonzero(np.abs(z[active] - np.sign(fit.beta_hat[active])) > tol))
    return KktReport(violation, mismatches, active.size, tol)


def kkt_check_multi(fit: MultiFit, X, Y, tol: float | None = None) -> KktReport:
    """Certify a multivariate fit against the matrix stationarity conditions.

    Computes Z = X'(Y - X B_hat) Sigma_hat^{-1/2} / (n lambda0) on the
    original data and measures the dual norm chosen by ``fit.norm``.  Sign
    mismatches count active entries (l1) or active blocks (group) whose dual
    part differs from the penalty subgradient direction by more than ``tol``.
    A singular Sigma_hat propagates as a singularity error.
    """
    from .linalg import psd_inv_sqrt

    tol = DEFAULT_OPTIONS.kkt_tol if tol is None else float(tol)
    Xm = as_matrix(X, "X")
    Ym = np.asarray(Y, dtype=float)
    if Ym.ndim == 1:
        Ym = Ym[:, None]
    Ym = as_matrix(Ym, "Y")
    n = Xm.shape[0]
    norm = fit.norm
    B = fit.B_hat

    if norm.kind == "l1":
        active_size = int(np.count_nonzero(B))
    else:
        active_size = sum(
            1
            for g in norm.groups
            for col in range(B.shape[1])
            if float(np.abs(B[list(g), col]).max()) > 0
        )

    if fit.lambda0 == 0.0:
        return KktReport(0.0, 0, active_size, tol, dual_applicable=False)

    W = psd_inv_sqrt(fit.Sigma_hat, name="Sigma_hat")
    Z = Xm.T @ (Ym - Xm @ B) @ W / (n * fit.lambda0)
    violation = max(0.0, norm.dual_norm(Z) - 1.0)

    mismatches = 0
    if norm.kind == "l1":
        act = B != 0
        mismatches = int(np.count_nonzero(np.abs(Z[act] - np.sign(B[act])) > tol))
    else:
        for g, w in zip(norm.groups, norm.weights()):
            rows = list(g)
            for col in range(B.shape[1]):
                blk = B[rows, col]
                nrm = float(np.sqrt(blk @ blk))
                if nrm == 0.0:
                    continue
                direction = w * blk / nrm
                if float(np.max(np.abs(Z[rows, col] - direction))) > tol:
                    mismatches += 1
    return KktReport(violation, mismatches, active_size, tol)


# ---------------------------------------------------------------------------
# tuning


def theoretical_lambda0(n: int, p: int, alpha0: float, alpha_lower: float, eta: float) -> float:
    """Penalty level 2R/(1-eta) from the Gaussian tail bound.

    R = sqrt( log(2p/alpha0) / (n - 2*sqrt(n*log(1/alpha_lower))) ); requires
    log(1/alpha_lower) < n/4 (so the denominator is positive) and
    0 < eta <= 1/3.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise InvalidInputError(f"n must be a positive integer, got {n!r}")
    if not (isinstance(p, (int, np.integer)) and p >= 1):
        raise InvalidInputError(f"p must be a positive integer, got {p!r}")
    if not (0.0 < alpha0 < 1.0) or not (0.0 < alpha_lower < 1.0):
        raise InvalidInputError("error levels must lie in (0, 1)")
    if not (0.0 < eta <= 1.0 / 3.0):
        raise InvalidInputError(f"eta must lie in (0, 1/3], got {eta!r}")
    log_inv = math.log(1.0 / alpha_lower)
    if not (log_inv < n / 4.0):
        raise InvalidInputError(
            f"log(1/alpha_lower)={log_inv:.4g} must be below n/4={n / 4.0:.4g}"
        )
    denom = n - 2.0 * math.sqrt(n * log_inv)
    R = math.sqrt(math.log(2.0 * p / alpha0) / denom)
    return 2.0 * R / (1.0 - eta)


def simulation_lambda_srl(n: int, p: int) -> float:
    """Default square-root Lasso level for simulations: 3x theoretical, rate scale.

    Uses error levels 1/p and eta = 1/3, divided by sqrt(n) so the level sits
    on the sqrt(log p / n) scale of the empirical dual
    ||X'eps||_inf / (n ||eps||_n) that it must dominate.
    """
    alpha = 1.0 / p
    return 3.0 * theoretical_lambda0(n, p, alpha, alpha, 1.0 / 3.0) / math.sqrt(n)
