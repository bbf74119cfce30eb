"""Square-root Lasso fitting, group chi-squared inference, and the
simulation machinery used to exercise both.

Submodules and their public names load lazily on first attribute access, so
``import chi2sets`` alone does not pull in numpy.  The command-line entry
point relies on this to pin BLAS threading environment variables before
numpy's first import.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "chisq",
    "cli",
    "configfile",
    "errors",
    "inference",
    "linalg",
    "rng",
    "simulate",
    "solvers",
    "theory",
)

_EXPORTS = {
    # errors
    "Chi2SetsError": "errors",
    "InvalidInputError": "errors",
    "SingularMatrixError": "errors",
    "DegenerateFitError": "errors",
    "ConvergenceError": "errors",
    "InternalConsistencyError": "errors",
    "UnboundedSetError": "errors",
    # rng
    "stream": "rng",
    "stream_key": "rng",
    # linalg
    "nnorm": "linalg",
    "nuclear_norm": "linalg",
    "toeplitz_cov": "linalg",
    "psd_sqrt": "linalg",
    "psd_inv_sqrt": "linalg",
    "sym_eigh": "linalg",
    # chisq
    "chi2_cdf": "chisq",
    "chi2_sf": "chisq",
    "chi2_quantile": "chisq",
    # solvers
    "NormSpec": "solvers",
    "SolverOptions": "solvers",
    "SqrtLassoFit": "solvers",
    "MultiFit": "solvers",
    "KktReport": "solvers",
    "soft_threshold_phi": "solvers",
    "fit_sqrt_lasso": "solvers",
    "fit_multi_sqrt_lasso": "solvers",
    "kkt_check_sqrt": "solvers",
    "kkt_check_multi": "solvers",
    "theoretical_lambda0": "solvers",
    "simulation_lambda_srl": "solvers",
    # inference
    "GroupInference": "inference",
    "PivotResult": "inference",
    "EllipsoidSet": "inference",
    "Theorem1Decomposition": "inference",
    "fit_nuisance": "inference",
    "surrogate_matrices": "inference",
    "desparsify": "inference",
    "group_inference": "inference",
    "with_point_estimate": "inference",
    "normalized_pivot": "inference",
    "nuisance_dual": "inference",
    "theorem1_decomposition": "inference",
    "chi2_statistic": "inference",
    "confidence_set": "inference",
    # theory
    "GaussianBounds": "theory",
    "gaussian_bounds": "theory",
    "empirical_R_hat": "theory",
    "l1_sparsity_check": "theory",
    "sigma_consistency_check": "theory",
    "compatibility_constant": "theory",
    "OracleReport": "theory",
    "oracle_inequality_check": "theory",
    "SparsityReport": "theory",
    "weak_sparsity_bounds": "theory",
    # simulate
    "ExperimentConfig": "simulate",
    "ReplicationRecord": "simulate",
    "ExperimentSummary": "simulate",
    "ExperimentResult": "simulate",
    "gen_design": "simulate",
    "gen_beta": "simulate",
    "cross_validate_lambda": "simulate",
    "run_experiment": "simulate",
    "sweep_experiment": "simulate",
    "levelplot_experiment": "simulate",
    "summarize_records": "simulate",
    "ks_distance": "simulate",
}

__all__ = ["__version__", *_SUBMODULES, *_EXPORTS]


def __getattr__(name: str):
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(__all__))
