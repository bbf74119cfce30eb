import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chi2sets.errors import (
    ConvergenceError,
    DegenerateFitError,
    InvalidInputError,
)
from chi2sets.linalg import nnorm, nuclear_norm
from chi2sets.solvers import (
    NormSpec,
    SolverOptions,
    fit_multi_sqrt_lasso,
    fit_sqrt_lasso,
    kkt_check_multi,
    kkt_check_sqrt,
    simulation_lambda_srl,
    soft_threshold_phi,
    theoretical_lambda0,
)


def _instance(seed, n, p, s=3, sigma=0.5, q=None):
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 77], dtype=np.uint64)))
    X = gen.standard_normal((n, p))
    if q is None:
        beta = np.zeros(p)
        beta[:s] = gen.uniform(1.0, 2.0, size=s)
        y = X @ beta + sigma * gen.standard_normal(n)
        return X, y
    B = np.zeros((p, q))
    B[:s, :] = gen.uniform(1.0, 2.0, size=(s, q))
    E = sigma * gen.standard_normal((n, q))
    return X, X @ B + E


# ---------------------------------------------------------------------------
# soft thresholding and penalty norms


def test_soft_threshold_scalar_values():
    assert soft_threshold_phi(3.0, 1.0) == pytest.approx(2.0, abs=0)
    assert soft_threshold_phi(-3.0, 1.0) == pytest.approx(-2.0, abs=0)
    assert soft_threshold_phi(0.4, 1.0) == 0.0
    assert soft_threshold_phi(-0.4, 1.0) == 0.0
    assert soft_threshold_phi(2.5, 0.0) == 2.5


@given(st.floats(-50, 50), st.floats(0, 20))
def test_soft_threshold_is_prox_of_abs(a, eta):
    # x minimizes (x-a)^2/2 + eta|x|: check the subgradient condition
    x = soft_threshold_phi(a, eta)
    if x != 0.0:
        assert a - x == pytest.approx(eta * math.copysign(1.0, x), abs=1e-12)
    else:
        assert abs(a) <= eta + 1e-12


def test_soft_threshold_block_mode():
    v = np.array([3.0, 4.0])
    out = soft_threshold_phi(v, 2.0, mode="block")
    np.testing.assert_allclose(out, v * (1.0 - 2.0 / 5.0), atol=1e-15)
    np.testing.assert_array_equal(soft_threshold_phi(v, 5.0, mode="block"), np.zeros(2))
    np.testing.assert_array_equal(soft_threshold_phi(np.zeros(3), 1.0, mode="block"), np.zeros(3))


def test_soft_threshold_rejects_bad_args():
    with pytest.raises(InvalidInputError):
        soft_threshold_phi(1.0, -0.1)
    with pytest.raises(InvalidInputError):
        soft_threshold_phi(1.0, 0.1, mode="rows")


def test_l1_norm_spec_penalty_and_dual():
    spec = NormSpec()
    B = np.array([[1.0, -2.0], [0.0, 3.0]])
    assert spec.penalty(B) == pytest.approx(6.0, abs=0)
    assert spec.dual_norm(B) == pytest.approx(3.0, abs=0)


def test_group_norm_spec_penalty_weights():
    spec = NormSpec(kind="group", groups=((0, 1), (2,)))
    B = np.array([[3.0], [4.0], [-2.0]])
    # sqrt(2)*5 + 1*2
    assert spec.penalty(B) == pytest.approx(math.sqrt(2.0) * 5.0 + 2.0, abs=1e-14)
    Z = np.array([[1.0], [1.0], [0.5]])
    assert spec.dual_norm(Z) == pytest.approx(math.sqrt(2.0) / math.sqrt(2.0), abs=1e-14)


def test_group_prox_matches_blockwise_shrinkage():
    spec = NormSpec(kind="group", groups=((0, 2), (1,)))
    gen = np.random.Generator(np.random.Philox(key=np.array([5, 1], dtype=np.uint64)))
    B = gen.standard_normal((3, 2))
    out = spec.prox(B, 0.3)
    for g, w in zip(spec.groups, spec.weights()):
        for col in range(2):
            blk = B[list(g), col]
            np.testing.assert_allclose(
                out[list(g), col],
                soft_threshold_phi(blk, 0.3 * w, mode="block"),
                atol=1e-14,
            )


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_penalty_dual_inequality(seed):
    # <Z, B> <= dual_norm(Z) * penalty(B) for both norm kinds
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 9], dtype=np.uint64)))
    B = gen.standard_normal((4, 2))
    Z = gen.standard_normal((4, 2))
    for spec in (NormSpec(), NormSpec(kind="group", groups=((0, 1), (2, 3)))):
        inner = float((Z * B).sum())
        assert inner <= spec.dual_norm(Z) * spec.penalty(B) + 1e-10


def test_norm_spec_validation():
    with pytest.raises(InvalidInputError):
        NormSpec(kind="nuclear")
    with pytest.raises(InvalidInputError):
        NormSpec(kind="group")
    with pytest.raises(InvalidInputError):
        NormSpec(kind="group", groups=((0, 1), (1, 2)))
    with pytest.raises(InvalidInputError):
        NormSpec(kind="group", groups=((0,), ()))
    with pytest.raises(InvalidInputError):
        NormSpec(kind="l1", groups=((0,),))
    with pytest.raises(InvalidInputError):
        NormSpec(kind="group", groups=((0, 1),)).validate_rows(3)


# ---------------------------------------------------------------------------
# penalty levels

# Frozen with 30-digit arithmetic from the defining formula
# R = sqrt(log(2p/alpha0) / (n - 2 sqrt(n log(1/alpha_lower)))), lambda0 = 2R/(1-eta).
_LAMBDA0_ORACLE = [
    (100, 60, 0.05, 0.05, 1.0 / 3.0, 1.035062317677597772784),
    (400, 150, 0.05, 0.05, 0.25, 0.4324690036241126560271),
    (50, 100, 0.01, 0.01, 1.0 / 3.0, 2.129697654012258572127),
]


def test_theoretical_lambda0_oracle_values():
    for n, p, a0, al, eta, want in _LAMBDA0_ORACLE:
        assert theoretical_lambda0(n, p, a0, al, eta) == pytest.approx(want, rel=1e-14)


def test_theoretical_lambda0_rejects_bad_levels():
    with pytest.raises(InvalidInputError):
        theoretical_lambda0(100, 60, 0.0, 0.05, 0.25)
    with pytest.raises(InvalidInputError):
        theoretical_lambda0(100, 60, 0.05, 1.0, 0.25)
    with pytest.raises(InvalidInputError):
        theoretical_lambda0(100, 60, 0.05, 0.05, 0.5)
    with pytest.raises(InvalidInputError):
        theoretical_lambda0(100, 60, 0.05, 0.05, 0.0)
    with pytest.raises(InvalidInputError):
        theoretical_lambda0(0, 60, 0.05, 0.05, 0.25)
    # log(1/alpha_lower) >= n/4 leaves no room for the variance dip
    with pytest.raises(InvalidInputError):
        theoretical_lambda0(8, 60, 0.05, math.exp(-2.0), 0.25)


def test_simulation_lambda_srl_matches_definition():
    for n, p, want in [(400, 150, 0.0835973348397824011388),
                       (100, 60, 0.347633968781919263738),
                       (50, 100, 0.9035541918174898311327)]:
        assert simulation_lambda_srl(n, p) == pytest.approx(want, rel=1e-14)
        direct = 3.0 * theoretical_lambda0(n, p, 1.0 / p, 1.0 / p, 1.0 / 3.0) / math.sqrt(n)
        assert simulation_lambda_srl(n, p) == direct


# ---------------------------------------------------------------------------
# univariate fits


def test_zero_solution_threshold():
    # beta_hat = 0 exactly when lambda0 >= ||X'y||_inf / (n ||y||_n)
    X, y = _instance(3, 40, 15)
    n = X.shape[0]
    thr = float(np.max(np.abs(X.T @ y))) / (n * nnorm(y))
    above = fit_sqrt_lasso(X, y, 1.001 * thr)
    assert above.converged
    assert np.count_nonzero(above.beta_hat) == 0
    assert above.sigma_hat == pytest.approx(nnorm(y), abs=1e-15)
    assert above.objective() == pytest.approx(nnorm(y), rel=1e-12)

    below = fit_sqrt_lasso(X, y, 0.9 * thr)
    assert below.converged
    assert np.count_nonzero(below.beta_hat) > 0


def test_kkt_certification_on_random_instances():
    for seed in range(8):
        n, p = (40, 20) if seed % 2 == 0 else (30, 50)
        X, y = _instance(seed, n, p)
        lam = simulation_lambda_srl(n, p)
        fit = fit_sqrt_lasso(X, y, lam)
        assert fit.converged
        rep = kkt_check_sqrt(fit, X, y)
        assert rep.dual_applicable
        assert rep.max_dual_violation <= 1e-6
        assert rep.sign_mismatch_count == 0
        assert rep.active_set_size == np.count_nonzero(fit.beta_hat)


def test_objective_trace_is_monotone():
    X, y = _instance(11, 50, 30)
    fit = fit_sqrt_lasso(X, y, 0.2)
    trace = np.array(fit.objective_trace)
    assert trace.size == fit.iterations + 1
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))


def test_objective_matches_direct_evaluation():
    X, y = _instance(4, 35, 12)
    lam = 0.25
    fit = fit_sqrt_lasso(X, y, lam)
    direct = nnorm(y - X @ fit.beta_hat) + lam * float(np.abs(fit.beta_hat).sum())
    assert fit.objective() == pytest.approx(direct, rel=1e-12)
    assert fit.sigma_hat == pytest.approx(nnorm(fit.residuals), abs=1e-15)


def _scaled_alternation(X, y, lam, iters=400):
    # independent reference: alternate sigma <- ||y - X b||_n with a FISTA
    # solve of the lasso whose penalty is lam * sigma (stationary points of
    # the alternation are square-root Lasso optima)
    n, p = X.shape
    G = X.T @ X / n
    c = X.T @ y / n
    L = float(np.linalg.eigvalsh(G)[-1])
    beta = np.zeros(p)
    sigma = nnorm(y)
    for _ in range(iters):
        thr = lam * sigma / L
        b, b_prev, t = beta.copy(), beta.copy(), 1.0
        for _ in range(4000):
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            v = b + ((t - 1.0) / t_next) * (b - b_prev)
            cand = soft_threshold_phi(v - (G @ v - c) / L, thr)
            if float(np.max(np.abs(cand - b))) < 1e-13:
                b_prev, b = b, cand
                break
            b_prev, b, t = b, cand, t_next
        beta = b
        new_sigma = nnorm(y - X @ beta)
        if abs(new_sigma - sigma) < 1e-14:
            sigma = new_sigma
            break
        sigma = new_sigma
    return beta, sigma


def test_agrees_with_scaled_alternation_reference():
    for seed in (0, 1, 2):
        X, y = _instance(seed + 20, 40, 15)
        lam = 0.3
        fit = fit_sqrt_lasso(X, y, lam)
        beta_ref, _ = _scaled_alternation(X, y, lam)
        obj_ref = nnorm(y - X @ beta_ref) + lam * float(np.abs(beta_ref).sum())
        assert fit.objective() == pytest.approx(obj_ref, abs=1e-9)
        np.testing.assert_allclose(fit.beta_hat, beta_ref, atol=1e-6)


def test_scale_equivariance():
    X, y = _instance(7, 30, 10)
    base = fit_sqrt_lasso(X, y, 0.3)
    for c in (0.5, 7.25):
        scaled = fit_sqrt_lasso(X, c * y, 0.3)
        np.testing.assert_allclose(scaled.beta_hat, c * base.beta_hat, atol=1e-7 * c)
        assert scaled.sigma_hat == pytest.approx(c * base.sigma_hat, rel=1e-8)


def test_fit_is_locally_optimal():
    X, y = _instance(13, 30, 12)
    lam = 0.3
    fit = fit_sqrt_lasso(X, y, lam)

    def objective(b):
        return nnorm(y - X @ b) + lam * float(np.abs(b).sum())

    gen = np.random.Generator(np.random.Philox(key=np.array([13, 4], dtype=np.uint64)))
    f0 = objective(fit.beta_hat)
    for scale in (1e-2, 1e-4):
        for _ in range(25):
            delta = scale * gen.standard_normal(12)
            assert f0 <= objective(fit.beta_hat + delta) + 1e-9


def test_rejects_zero_column_and_shape_mismatch():
    X, y = _instance(2, 20, 5)
    X[:, 3] = 0.0
    with pytest.raises(InvalidInputError):
        fit_sqrt_lasso(X, y, 0.5)
    with pytest.raises(InvalidInputError):
        fit_multi_sqrt_lasso(np.ones((4, 2)), np.ones((5, 1)), 0.5)
    with pytest.raises(InvalidInputError):
        fit_multi_sqrt_lasso(np.ones((4, 2)), np.ones((4, 1)), -0.1)
    with pytest.raises(InvalidInputError):
        fit_multi_sqrt_lasso(np.ones((4, 2)), np.ones((4, 1)), float("nan"))
    with pytest.raises(InvalidInputError):
        fit_multi_sqrt_lasso(np.ones((4, 2)), np.ones((4, 1)), 0.5, B0=np.zeros((3, 1)))


def test_interpolation_regime_is_degenerate():
    gen = np.random.Generator(np.random.Philox(key=np.array([21, 1], dtype=np.uint64)))
    X = gen.standard_normal((5, 10))
    y = X @ gen.standard_normal(10)
    with pytest.raises(DegenerateFitError) as exc:
        fit_sqrt_lasso(X, y, 1e-6)
    assert exc.value.last_fit is not None


def test_iteration_cap_raises_with_last_iterate():
    X, y = _instance(6, 40, 20)
    with pytest.raises(ConvergenceError) as exc:
        fit_sqrt_lasso(X, y, 0.1, opts=SolverOptions(fix_tol=1e-15, t_stop=2))
    last = exc.value.last_fit
    assert last is not None
    assert not last.converged
    assert last.iterations == 2


# ---------------------------------------------------------------------------
# multivariate fits


def test_multi_zero_solution_threshold():
    from chi2sets.linalg import psd_inv_sqrt

    X, Y = _instance(31, 40, 12, q=2)
    n = X.shape[0]
    S0 = Y.T @ Y / n
    Z0 = X.T @ Y @ psd_inv_sqrt(S0) / n
    thr = float(np.max(np.abs(Z0)))
    above = fit_multi_sqrt_lasso(X, Y, 1.02 * thr)
    assert above.converged
    assert np.count_nonzero(above.B_hat) == 0
    below = fit_multi_sqrt_lasso(X, Y, 0.9 * thr)
    assert np.count_nonzero(below.B_hat) > 0


def test_multi_fit_kkt_and_consistency():
    X, Y = _instance(32, 60, 25, q=3)
    lam = 0.3
    fit = fit_multi_sqrt_lasso(X, Y, lam)
    assert fit.converged
    R = Y - X @ fit.B_hat
    np.testing.assert_allclose(fit.Sigma_hat, R.T @ R / X.shape[0], atol=1e-13)
    # objective equals the nuclear-norm form evaluated directly
    direct = nuclear_norm(R) / math.sqrt(X.shape[0]) + lam * float(np.abs(fit.B_hat).sum())
    assert fit.objective() == pytest.approx(direct, rel=1e-11)
    rep = kkt_check_multi(fit, X, Y)
    assert rep.max_dual_violation <= 1e-6
    assert rep.sign_mismatch_count == 0


def test_multi_trace_monotone_and_q1_reduction():
    X, y = _instance(33, 45, 18)
    lam = 0.25
    multi = fit_multi_sqrt_lasso(X, y[:, None], lam)
    uni = fit_sqrt_lasso(X, y, lam)
    trace = np.array(multi.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))
    # q = 1 nuclear objective is the square-root Lasso objective
    assert multi.objective() == pytest.approx(uni.objective(), abs=1e-10)
    np.testing.assert_allclose(multi.B_hat[:, 0], uni.beta_hat, atol=1e-9)
    assert multi.Sigma_hat[0, 0] == pytest.approx(uni.sigma_hat ** 2, rel=1e-10)


def test_group_norm_fit_zeroes_whole_blocks():
    gen = np.random.Generator(np.random.Philox(key=np.array([40, 2], dtype=np.uint64)))
    n, p, q = 60, 6, 2
    X = gen.standard_normal((n, p))
    B = np.zeros((p, q))
    B[0:2, :] = 1.5  # only the first group carries signal
    Y = X @ B + 0.3 * gen.standard_normal((n, q))
    spec = NormSpec(kind="group", groups=((0, 1), (2, 3), (4, 5)))
    fit = fit_multi_sqrt_lasso(X, Y, 0.35, norm=spec)
    assert fit.converged
    active = [
        g for g in spec.groups
        if float(np.abs(fit.B_hat[list(g), :]).max()) > 0
    ]
    assert (0, 1) in active
    assert len(active) < 3  # penalty kills at least one pure-noise block
    rep = kkt_check_multi(fit, X, Y)
    assert rep.max_dual_violation <= 1e-6
    assert rep.sign_mismatch_count == 0


def test_zero_design_returns_zero_fit():
    Y = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    fit = fit_multi_sqrt_lasso(np.zeros((3, 2)), Y, 0.5)
    assert fit.converged
    assert np.count_nonzero(fit.B_hat) == 0


def test_warm_start_reaches_same_objective():
    X, y = _instance(9, 40, 15)
    cold = fit_sqrt_lasso(X, y, 0.3)
    warm = fit_sqrt_lasso(X, y, 0.3, beta0=cold.beta_hat)
    assert warm.iterations <= 2
    assert warm.objective() == pytest.approx(cold.objective(), abs=1e-12)


def test_lambda0_zero_kkt_not_applicable():
    X, y = _instance(1, 30, 5)
    fit = fit_sqrt_lasso(X, y, 0.0)
    rep = kkt_check_sqrt(fit, X, y)
    assert not rep.dual_applicable
    assert rep.max_dual_violation == 0.0
