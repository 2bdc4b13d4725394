"""Knowledge-gradient policies for ranking and selection with sparse linear and sparse additive beliefs.

Modules
-------
kg            envelope expectation ``h(a, b)`` and knowledge-gradient values
belief        belief states, RLS / correlated / fusion / Beta-Bernoulli updates
group_lasso   l1,inf group Lasso: batch and recursive solvers, KKT checks, sampled covariance
splines       B-spline bases, tensor products, additive feature maps
policy        KGSpLin, KGSpAM, KGLin and exploration rounds
harness       truths, metrics and replicated runs
cli           ``sparsekg`` command line
"""

from .belief import (
    GroupStructure,
    LinearBelief,
    LookupBelief,
    SingularPrecisionError,
    SparseBeliefState,
    beta_bernoulli_update,
    fuse_posterior,
    lookup_update,
    rls_update,
)
from .group_lasso import (
    KKTReport,
    LassoState,
    NonConvergenceError,
    estimate_covariance,
    extract_subgradient,
    kkt_report,
    lambda_schedule,
    recursive_update,
    solve_batch,
)
from .kg import compute_h, enumerate_realizations, kg_argmax, kg_value_sparse, kg_values_sparse, sigma_tilde
from .splines import AdditiveFeatureMap, SplineBasis, eval_basis, eval_tensor

__version__ = "0.1.0"

__all__ = [
    "AdditiveFeatureMap",
    "GroupStructure",
    "KKTReport",
    "LassoState",
    "LinearBelief",
    "LookupBelief",
    "NonConvergenceError",
    "SingularPrecisionError",
    "SparseBeliefState",
    "SplineBasis",
    "beta_bernoulli_update",
    "compute_h",
    "enumerate_realizations",
    "estimate_covariance",
    "eval_basis",
    "eval_tensor",
    "extract_subgradient",
    "fuse_posterior",
    "kg_argmax",
    "kg_value_sparse",
    "kg_values_sparse",
    "kkt_report",
    "lambda_schedule",
    "lookup_update",
    "recursive_update",
    "rls_update",
    "sigma_tilde",
    "solve_batch",
]
