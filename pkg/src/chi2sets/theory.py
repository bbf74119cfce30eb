"""Verifiable theory quantities: Gaussian bounds, compatibility constants,
the sharp oracle inequality, and sparsity-based error bounds.

These functions exist so simulations can check the theory's finite-sample
statements as assertions: probability displays by Monte Carlo frequency,
the oracle inequality on its defining event, and the l1-error bounds against
realized errors.  Index sets are 0-based tuples into the columns of X.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InternalConsistencyError, InvalidInputError
from .linalg import Array, as_matrix, as_vector, nnorm
from .rng import stream
from .solvers import SqrtLassoFit


@dataclass(frozen=True)
class GaussianBounds:
    sigma_lower_sq: float
    sigma_upper_sq: float
    R: float
    alpha0: float
    alpha_lower: float
    alpha_upper: float

    @property
    def sigma_lower(self) -> float:
        return math.sqrt(self.sigma_lower_sq)

    @property
    def sigma_upper(self) -> float:
        return math.sqrt(self.sigma_upper_sq)


def gaussian_bounds(
    n: int, p: int, sigma0: float,
    alpha0: float, alpha_lower: float, alpha_upper: float,
) -> GaussianBounds:
    """Noise-norm envelope [sigma_lower, sigma_upper] and the dual bound R.

    sigma_lower^2 = sigma0^2 (1 - 2 sqrt(log(1/alpha_lower)/n)),
    sigma_upper^2 = sigma0^2 (1 + 2 sqrt(log(1/alpha_upper)/n) + 2 log(1/alpha_upper)/n),
    R = sqrt( log(2p/alpha0) / (n - 2 sqrt(n log(1/alpha_lower))) ).

    The three associated tail statements (P(||eps||_n <= sigma_lower) <=
    alpha_lower, P(||eps||_n >= sigma_upper) <= alpha_upper, and
    P(R_hat >= R or ||eps||_n <= sigma_lower) <= alpha0 + alpha_lower for
    normalized designs) are exercised by Monte Carlo in the test suite.
    """
    for name, a in (("alpha0", alpha0), ("alpha_lower", alpha_lower), ("alpha_upper", alpha_upper)):
        if not (0.0 < a < 1.0):
            raise InvalidInputError(f"{name} must lie in (0, 1), got {a!r}")
    if not alpha0 + alpha_lower + alpha_upper < 1.0:
        raise InvalidInputError("error levels must sum below 1")
    if not (sigma0 > 0):
        raise InvalidInputError(f"sigma0 must be positive, got {sigma0!r}")
    log_lower = math.log(1.0 / alpha_lower)
    if not log_lower < n / 4.0:
        raise InvalidInputError(f"log(1/alpha_lower)={log_lower:.4g} must be below n/4")
    log_upper = math.log(1.0 / alpha_upper)
    s2 = sigma0 * sigma0
    return GaussianBounds(
        sigma_lower_sq=s2 * (1.0 - 2.0 * math.sqrt(log_lower / n)),
        sigma_upper_sq=s2 * (1.0 + 2.0 * math.sqrt(log_upper / n) + 2.0 * log_upper / n),
        R=math.sqrt(math.log(2.0 * p / alpha0) / (n - 2.0 * math.sqrt(n * log_lower))),
        alpha0=alpha0,
        alpha_lower=alpha_lower,
        alpha_upper=alpha_upper,
    )


def empirical_R_hat(X, eps) -> float:
    """Empirical dual level R_hat = ||X' eps||_inf / (n ||eps||_n)."""
    Xm = as_matrix(X, "X")
    e = as_vector(eps, "eps")
    norm = nnorm(e)
    if norm == 0.0:
        raise InvalidInputError("eps must be nonzero")
    return float(np.max(np.abs(Xm.T @ e))) / (Xm.shape[0] * norm)


def l1_sparsity_check(beta0, lambda0: float, sigma_lower: float, eta: float) -> bool:
    """True iff lambda0 ||beta0||_1 / sigma_lower <= 2 (sqrt(1 + (eta/2)^2) - 1)."""
    if not (0.0 < eta < 1.0):
        raise InvalidInputError(f"eta must lie in (0, 1), got {eta!r}")
    if not (sigma_lower > 0):
        raise InvalidInputError("sigma_lower must be positive")
    lhs = lambda0 * float(np.abs(as_vector(beta0, "beta0")).sum()) / sigma_lower
    return lhs <= 2.0 * (math.sqrt(1.0 + (eta / 2.0) ** 2) - 1.0)


def sigma_consistency_check(fit: SqrtLassoFit, eps, eta: float) -> bool:
    """True iff |sigma_hat / ||eps||_n - 1| <= eta (simulation-side check)."""
    norm = nnorm(as_vector(eps, "eps"))
    if norm == 0.0:
        raise InvalidInputError("eps must be nonzero")
    return abs(fit.sigma_hat / norm - 1.0) <= eta


# ---------------------------------------------------------------------------
# compatibility constant


def _project_simplex(u: Array) -> Array:
    # Euclidean projection onto {u >= 0, sum u = 1} (sort-based)
    s = np.sort(u)[::-1]
    css = np.cumsum(s) - 1.0
    idx = np.arange(1, u.size + 1)
    cond = s - css / idx > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    theta = css[rho - 1] / rho
    return np.maximum(u - theta, 0.0)


def _project_l1_ball(v: Array, radius: float) -> Array:
    if radius <= 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    w = _project_simplex(a / radius) * radius
    return np.sign(v) * w


def _pattern_minimum(XS: Array, Xrest: Array, L: float, tol: float, restarts: int) -> float:
    # min ||XS u + Xrest v||_n^2 over u in simplex, ||v||_1 <= L (signs folded into XS)
    n = XS.shape[0]
    k = XS.shape[1]
    m = Xrest.shape[1]
    Xall = np.hstack([XS, Xrest])
    G = Xall.T @ Xall / n
    lip = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    if lip <= 0:
        return 0.0
    step = 1.0 / lip

    def project(z: Array) -> Array:
        out = np.empty_like(z)
        out[:k] = _project_simplex(z[:k])
        out[k:] = _project_l1_ball(z[k:], L)
        return out

    def value(z: Array) -> float:
        return float(z @ (G @ z))

    starts = []
    base = np.zeros(k + m)
    base[:k] = 1.0 / k
    starts.append(base)
    for i in range(min(k, 7)):
        z = np.zeros(k + m)
        z[i] = 1.0
        starts.append(z)
    gen = stream(0, "compat", k, m, restarts)
    while len(starts) < restarts:
        z = np.empty(k + m)
        z[:k] = _project_simplex(gen.standard_normal(k))
        z[k:] = _project_l1_ball(gen.standard_normal(m), L * float(gen.random()))
        starts.append(z)

    best = math.inf
    for z0 in starts:
        z = project(np.array(z0, copy=True))
        zm = z.copy()
        t = 1.0
        val = value(z)
        for _ in range(20000):
            tn = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = z + ((t - 1.0) / tn) * (z - zm)
            cand = project(y - step * 2.0 * (G @ y))
            cval = value(cand)
            if cval > val:
                cand = project(z - step * 2.0 * (G @ z))
                cval = value(cand)
                tn = 1.0
            moved = float(np.max(np.abs(cand - z)))
            gain = val - cval
            zm, z, t, val = z, cand, tn, cval
            if moved < tol and gain < tol * tol:
                break
        best = min(best, val)
    return best


def compatibility_constant(X, S, L: float, mode: str = "exact", tol: float = 1e-8) -> float:
    """Compatibility constant phi_hat^2(L, S).

    Minimizes |S| ||X beta||_n^2 over ||beta_S||_1 = 1, ||beta_{-S}||_1 <= L.
    Exact mode enumerates all 2^|S| sign patterns of beta_S (refused for
    |S| > 12) and solves each convex piece by projected gradient with 32
    deterministic restarts.  Heuristic mode samples 64 sign patterns instead
    and its value is only an upper bound on the true constant.
    """
    Xm = as_matrix(X, "X")
    p = Xm.shape[1]
    Sarr = np.asarray(sorted(int(j) for j in S), dtype=int)
    if Sarr.size == 0:
        raise InvalidInputError("S must be nonempty")
    if np.unique(Sarr).size != Sarr.size or Sarr[0] < 0 or Sarr[-1] >= p:
        raise InvalidInputError("S must be a duplicate-free subset of the column indices")
    if not (L > 0) or not math.isfinite(L):
        raise InvalidInputError(f"L must be positive and finite, got {L!r}")
    if mode not in ("exact", "lower-heuristic"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    k = Sarr.size
    if mode == "exact" and k > 12:
        raise InvalidInputError("exact mode is limited to |S| <= 12 (sign enumeration)")

    mask = np.zeros(p, dtype=bool)
    mask[Sarr] = True
    XS = Xm[:, Sarr]
    Xrest = Xm[:, ~mask]
    if Xrest.shape[1] == 0:
        Xrest = np.zeros((Xm.shape[0], 0))

    if mode == "exact":
        patterns = itertools.product((1.0, -1.0), repeat=k)
    else:
        gen = stream(0, "compat-patterns", k)
        patterns = (tuple(gen.choice((1.0, -1.0), size=k)) for _ in range(64))

    best = math.inf
    for signs in patterns:
        signed = XS * np.asarray(signs)[None, :]
        best = min(best, _pattern_minimum(signed, Xrest, L, tol, restarts=32))
    return k * best


# ---------------------------------------------------------------------------
# oracle inequality and sparsity bounds


@dataclass(frozen=True)
class OracleReport:
    applicable: bool
    event_holds: bool
    eq12_holds: bool
    R_hat: float
    eps_norm: float
    lambda_under: float
    lambda_bar: float
    L: float
    lhs: float
    rhs_candidates: dict[str, float]
    rhs_min: float
    holds: bool | None


def oracle_inequality_check(
    fit: SqrtLassoFit, X, y, beta0, eps,
    eta: float, delta: float, R: float, sigma_lower: float,
    compat_mode: str = "exact",
    rel_slack: float = 1e-9,
) -> OracleReport:
    """Evaluate the sharp oracle inequality on its defining event.

    The left side 2 delta lambda_under ||beta_hat - beta0||_1 ||eps||_n
    + ||X(beta_hat - beta0)||_n^2 is compared against the right side evaluated
    at explicit candidate supports (the active set S0, the strong-signal set
    S_star, the singletons inside S0, and the empty set); each candidate upper
    bounds the minimum over all supports, so LHS <= min(candidates) must hold
    whenever the event {R_hat <= R, ||eps||_n >= sigma_lower} and the
    l1-sparsity condition do.  A violation on an applicable draw raises
    InternalConsistencyError.
    """
    Xm = as_matrix(X, "X")
    beta0v = as_vector(beta0, "beta0")
    epsv = as_vector(eps, "eps")
    if not (0.0 <= delta < 1.0):
        raise InvalidInputError(f"delta must lie in [0, 1), got {delta!r}")
    lam0 = fit.lambda0
    lambda_under = lam0 * (1.0 - eta) - R
    if lambda_under <= 0:
        raise InvalidInputError("lambda0 (1 - eta) must exceed R")
    lambda_bar = lam0 * (1.0 + eta) + R + delta * lambda_under
    L = lambda_bar / ((1.0 - delta) * lambda_under)

    eps_norm = nnorm(epsv)
    R_hat = empirical_R_hat(Xm, epsv)
    event = R_hat <= R and eps_norm >= sigma_lower
    eq12 = l1_sparsity_check(beta0v, lam0, sigma_lower, eta)

    n = Xm.shape[0]
    diff = fit.beta_hat - beta0v
    lhs = 2.0 * delta * lambda_under * float(np.abs(diff).sum()) * eps_norm \
        + float(np.sum((Xm @ diff) ** 2)) / n

    S0 = tuple(int(j) for j in np.flatnonzero(beta0v))
    Lambda_max = _lambda_max(Xm, S0)

    candidates: dict[str, float] = {}

    def rhs_at(support: tuple[int, ...], label: str) -> None:
        beta_cand = np.zeros_like(beta0v)
        if support:
            beta_cand[list(support)] = beta0v[list(support)]
        approx = beta_cand - beta0v
        bracket = 2.0 * delta * lambda_under * float(np.abs(approx).sum()) * eps_norm \
            + float(np.sum((Xm @ approx) ** 2)) / n
        if support:
            phi_sq = compatibility_constant(Xm, support, L, mode=compat_mode)
            bracket += lambda_bar ** 2 * len(support) * eps_norm ** 2 / phi_sq
        candidates[label] = bracket

    rhs_at(S0, "S0")
    rhs_at((), "empty")
    for j in S0:
        rhs_at((j,), f"singleton:{j}")
    if S0:
        s_star = tuple(
            int(j) for j in S0
            if abs(beta0v[j]) > lambda_bar * eps_norm / Lambda_max
        )
        if s_star and s_star != S0:
            rhs_at(s_star, "S_star")

    rhs_min = min(candidates.values())
    applicable = event and eq12
    holds: bool | None = None
    if applicable:
        holds = lhs <= rhs_min * (1.0 + rel_slack) + 1e-14
        if not holds:
            raise InternalConsistencyError(
                f"oracle inequality violated on an applicable draw: "
                f"LHS={lhs:.6e} > min RHS={rhs_min:.6e}"
            )
    return OracleReport(
        applicable=applicable,
        event_holds=event,
        eq12_holds=eq12,
        R_hat=R_hat,
        eps_norm=eps_norm,
        lambda_under=lambda_under,
        lambda_bar=lambda_bar,
        L=L,
        lhs=lhs,
        rhs_candidates=candidates,
        rhs_min=rhs_min,
        holds=holds,
    )


@dataclass(frozen=True)
class SparsityReport:
    l1_norm_beta0: float
    s0: int
    S0: tuple[int, ...]
    Lambda_max_S0: float
    rho_r: float
    r_exponent: float
    S_star: tuple[int, ...]
    eta: float
    delta: float
    lambda_under: float
    lambda_bar: float
    L: float
    lr_bound: float
    l0_bound: float


def _lambda_max(Xm: Array, S0: tuple[int, ...]) -> float:
    # sqrt of the largest eigenvalue of X_S0' X_S0 / n; 1.0 for an empty set
    if not S0:
        return 1.0
    XS = Xm[:, list(S0)]
    return math.sqrt(float(np.linalg.eigvalsh(XS.T @ XS / Xm.shape[0])[-1]))


def weak_sparsity_bounds(
    beta0, eps_norm: float, R: float, eta: float, X,
    r_exponent: float, rho_r: float,
    sigma_lower: float | None = None,
    compat_mode: str = "exact",
) -> SparsityReport:
    """Sparsity-based bounds on ||beta_hat - beta0||_1 / ||eps||_n.

    Both displayed bounds use the conventional choices delta = 1/7 and
    lambda0 (1 - eta) = 2R, under which L <= 6:

        lr_bound = (6R)^{1-r} (1 + 36 Lambda_max^r(S0) / phi^2(6, S_star)) (rho_r / s)^r,
        l0_bound = 3R * 36 s0 / phi^2(6, S0),

    with s = sigma_lower when supplied (the event lower bound) and ||eps||_n
    otherwise, and S_star = {j : |beta0_j| > 3 R s / Lambda_max(S0)}.  The
    compatibility constant of an empty set is taken as 1 by convention.
    """
    if not (0.0 < r_exponent < 1.0):
        raise InvalidInputError(f"r_exponent must lie in (0, 1), got {r_exponent!r}")
    if not (rho_r > 0):
        raise InvalidInputError("rho_r must be positive")
    if not (eps_norm > 0):
        raise InvalidInputError("eps_norm must be positive")
    Xm = as_matrix(X, "X")
    beta0v = as_vector(beta0, "beta0")
    scale = sigma_lower if sigma_lower is not None else eps_norm
    if not (scale > 0):
        raise InvalidInputError("sigma_lower must be positive when supplied")

    S0 = tuple(int(j) for j in np.flatnonzero(beta0v))
    Lambda_max = _lambda_max(Xm, S0)
    S_star = tuple(int(j) for j in S0 if abs(beta0v[j]) > 3.0 * R * scale / Lambda_max)

    phi_star = compatibility_constant(Xm, S_star, 6.0, mode=compat_mode) if S_star else 1.0
    phi_S0 = compatibility_constant(Xm, S0, 6.0, mode=compat_mode) if S0 else 1.0

    r = r_exponent
    lr_bound = (6.0 * R) ** (1.0 - r) * (1.0 + 36.0 * Lambda_max ** r / phi_star) * (rho_r / scale) ** r
    l0_bound = 3.0 * R * 36.0 * len(S0) / phi_S0

    lambda0 = 2.0 * R / (1.0 - eta)
    delta = 1.0 / 7.0
    lambda_under = lambda0 * (1.0 - eta) - R  # = R at the conventional choice
    lambda_bar = lambda0 * (1.0 + eta) + R + delta * lambda_under
    return SparsityReport(
        l1_norm_beta0=float(np.abs(beta0v).sum()),
        s0=len(S0),
        S0=S0,
        Lambda_max_S0=Lambda_max,
        rho_r=rho_r,
        r_exponent=r_exponent,
        S_star=S_star,
        eta=eta,
        delta=delta,
        lambda_under=lambda_under,
        lambda_bar=lambda_bar,
        L=lambda_bar / ((1.0 - delta) * lambda_under),
        lr_bound=lr_bound,
        l0_bound=l0_bound,
    )
