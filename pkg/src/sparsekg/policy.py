"""Measurement policies: sparse KG (linear and additive), linear KG, exploration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import group_lasso as gl
from .belief import (
    GroupStructure,
    LinearBelief,
    SparseBeliefState,
    beta_bernoulli_update,
    fuse_posterior,
    rls_update,
)
from .kg import argmax_lowest, kg_values_correlated, kg_values_sparse
from .splines import AdditiveFeatureMap, reconstruct_component

POLICY_KINDS = ("kgsplin", "kgspam", "kglin", "explore")
SPARSE_KINDS = ("kgsplin", "kgspam", "explore")


@dataclass(frozen=True)
class PolicyConfig:
    """Knobs of one policy run.

    ``lambda_scale`` sets the constant of the regularization schedule as a
    multiple of the noise standard deviation.
    """

    budget: int = 200
    noise_var: float = 1.0
    kind: str = "kgsplin"
    seed: int = 0
    max_terms: int = 16
    n_samples: int = 500
    c_min: float = 0.01
    c_max: float = 100.0
    lambda_scale: float = 0.5
    warmup_rounds: int = 10
    prior_var: float = 100.0**2 / 12.0
    tol: float = 1e-6

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @property
    def lambda_c0(self) -> float:
        return self.lambda_scale * float(np.sqrt(self.noise_var))

    def lam(self, n: int, groups: GroupStructure) -> float:
        return gl.lambda_schedule(n, groups, self.lambda_c0)


@dataclass(frozen=True)
class SparseRunState:
    belief: SparseBeliefState
    lasso: gl.LassoState


@dataclass(frozen=True)
class PolicyStep:
    round: int
    chosen_alternative: int
    kg_value: Optional[float]
    y: float
    belief_after: Union[SparseRunState, LinearBelief]
    lasso_support: tuple[int, ...]

    def record(self, oc: Optional[float] = None) -> dict:
        rec = {
            "round": self.round,
            "choice": self.chosen_alternative,
            "kg_value": self.kg_value,
            "support": list(self.lasso_support),
        }
        if oc is not None:
            rec["oc"] = oc
        return rec


Observer = Callable[[int], float]


def initial_state(kind: str, groups: GroupStructure, config: PolicyConfig):
    if kind == "kglin":
        m = groups.m
        return LinearBelief(np.zeros(m), config.prior_var * np.eye(m))
    return SparseRunState(SparseBeliefState.prior(groups, config.prior_var), gl.LassoState.empty(groups))


def sparse_update(state: SparseRunState, x_feat, y: float, config: PolicyConfig, round_index: int) -> SparseRunState:
    """Lasso update, sampled Lasso covariance, then fusion and Beta-count update.

    Pure: on any exception the caller still holds the untouched input state.
    """
    groups = state.belief.groups
    lam_next = config.lam(state.lasso.n + 1, groups)
    lasso = gl.recursive_update(state.lasso, x_feat, y, lam_next, tol=config.tol)
    belief = state.belief
    active = lasso.active_groups
    if active:
        est = gl.estimate_covariance(
            lasso,
            belief,
            config.noise_var,
            lam_next,
            n_samples=config.n_samples,
            c_min=config.c_min,
            c_max=config.c_max,
            rng_seed=[config.seed, round_index],
        )
        belief = fuse_posterior(
            belief, lasso.beta_hat[est.support], est.sigma_hat, est.support, est.precision_factor
        )
    belief = beta_bernoulli_update(belief, active)
    return SparseRunState(belief, lasso)


def _explore_choice(n_alt: int, rng: np.random.Generator) -> int:
    if n_alt < 1:
        raise ValueError("need at least one alternative")
    return int(rng.integers(n_alt))


def step_kgsplin(
    state: SparseRunState,
    alternatives,
    config: PolicyConfig,
    observe: Observer,
    round_index: int,
    rng: np.random.Generator,
) -> PolicyStep:
    """One round of the sparse KG policy.

    KG selection, then observation, Lasso update, sampled covariance and
    Bayesian update.  Warm-up rounds and rounds with an empty Lasso support
    choose uniformly at random instead.
    """
    X = np.asarray(alternatives, dtype=float)
    # the exploration draw is consumed every round so that traces stay aligned
    fallback = _explore_choice(X.shape[0], rng)
    if round_index < config.warmup_rounds or not state.lasso.active_groups:
        choice, value = fallback, None
    else:
        vals = kg_values_sparse(state.belief, X, config.noise_var, config.max_terms)
        choice = argmax_lowest(vals)
        value = float(vals[choice])
    y = float(observe(choice))
    new = sparse_update(state, X[choice], y, config, round_index)
    return PolicyStep(round_index, choice, value, y, new, new.lasso.active_groups)


def step_kgspam(
    state: SparseRunState,
    alternatives_raw,
    feature_map: AdditiveFeatureMap,
    config: PolicyConfig,
    observe: Observer,
    round_index: int,
    rng: np.random.Generator,
    center=None,
) -> PolicyStep:
    """Sparse additive KG: the sparse KG round on spline features of the raw alternatives.

    ``center`` (optional) is subtracted from every feature row.
    """
    if feature_map.groups != state.belief.groups:
        raise ValueError("feature map does not match the belief's group structure")
    X = feature_map(np.asarray(alternatives_raw, dtype=float))
    if center is not None:
        X = X - center
    return step_kgsplin(state, X, config, observe, round_index, rng)


def component_estimates(state: SparseRunState, feature_map: AdditiveFeatureMap, grids: dict) -> dict:
    """Component functions of the current posterior mean, keyed by component index."""
    return {
        c: reconstruct_component(feature_map, state.belief.vartheta, c, grid)
        for c, grid in grids.items()
    }


def step_kglin(
    belief: LinearBelief,
    alternatives,
    config: PolicyConfig,
    observe: Observer,
    round_index: int,
    rng: np.random.Generator,
    cache: Optional[dict] = None,
) -> PolicyStep:
    """One round of KG with a dense linear belief and recursive least squares.

    ``cache`` (optional, updated in place) carries the induced alternative
    means ``X vartheta`` and covariance ``X Sigma X'`` from round to round,
    where they follow the correlated rank-one update; without it they are
    recomputed from the belief.
    """
    X = np.asarray(alternatives, dtype=float)
    fallback = _explore_choice(X.shape[0], rng)
    induced = None
    if cache is not None and cache.get("belief") is belief:
        induced = cache["induced"]
    if round_index < config.warmup_rounds:
        choice, value = fallback, None
    else:
        if induced is None:
            induced = (X @ belief.vartheta, X @ belief.sigma_vartheta @ X.T)
        vals = kg_values_correlated(induced[0], induced[1], config.noise_var)
        choice = argmax_lowest(vals)
        value = float(vals[choice])
    y = float(observe(choice))
    new = rls_update(belief, X[choice], y, config.noise_var)
    if cache is not None:
        cache.clear()
        if induced is not None:
            cache["belief"] = new
            cache["induced"] = _induced_update(induced, choice, y, config.noise_var)
    return PolicyStep(round_index, choice, value, y, new, ())


def _induced_update(induced, choice: int, y: float, noise_var: float):
    a, C = induced
    col = C[:, choice]
    gamma = noise_var + C[choice, choice]
    scaled = col / np.sqrt(gamma)
    return a + (y - a[choice]) / gamma * col, C - np.outer(scaled, scaled)


def step_explore(
    state,
    alternatives,
    config: PolicyConfig,
    observe: Observer,
    round_index: int,
    rng: np.random.Generator,
    forced_choice: Optional[int] = None,
) -> PolicyStep:
    """Uniform random measurement with the same updating as the matching KG policy."""
    X = np.asarray(alternatives, dtype=float)
    choice = _explore_choice(X.shape[0], rng)
    if forced_choice is not None:
        choice = int(forced_choice)
    y = float(observe(choice))
    if isinstance(state, LinearBelief):
        return PolicyStep(round_index, choice, None, y, rls_update(state, X[choice], y, config.noise_var), ())
    new = sparse_update(state, X[choice], y, config, round_index)
    return PolicyStep(round_index, choice, None, y, new, new.lasso.active_groups)


def posterior_means(state, alternatives) -> np.ndarray:
    """Alternative means used for the final choice.

    For a sparse belief these are the means of the most probable sparsity
    realization, ``X_zeta vartheta_zeta``.
    """
    if isinstance(state, SparseRunState):
        return state.belief.realization_means(alternatives)
    return state.means(alternatives)


def final_selection(state, alternatives) -> int:
    """Alternative with the largest posterior mean (lowest index on ties)."""
    return argmax_lowest(posterior_means(state, alternatives))


def estimated_groups(state, groups: GroupStructure) -> tuple[int, ...]:
    """Groups the run currently estimates as nonzero."""
    if isinstance(state, SparseRunState):
        return state.lasso.active_groups
    return groups.active_groups(state.vartheta)


STEP = {
    "kgsplin": step_kgsplin,
    "kgspam": step_kgsplin,
    "kglin": step_kglin,
    "explore": step_explore,
}


@dataclass
class RunTrace:
    steps: list = field(default_factory=list)
    final_state: object = None

    def to_ndjson(self, oc: Optional[Sequence[float]] = None) -> str:
        lines = []
        for i, step in enumerate(self.steps):
            lines.append(json.dumps(step.record(None if oc is None else float(oc[i]))))
        return "\n".join(lines) + ("\n" if lines else "")


def run_policy(
    kind: str,
    alternatives,
    groups: GroupStructure,
    observe: Observer,
    config: PolicyConfig,
    callback: Optional[Callable[[PolicyStep], None]] = None,
) -> RunTrace:
    """Run ``config.budget`` rounds of one policy from the prior."""
    X = np.asarray(alternatives, dtype=float)
    if X.shape[1] != groups.m:
        raise ValueError("alternative features do not match the group structure")
    rng = np.random.default_rng([config.seed, 0xE7])
    state = initial_state(kind, groups, config)
    step = STEP[kind]
    extra = {"cache": {}} if step is step_kglin else {}
    trace = RunTrace()
    for n in range(config.budget):
        rec = step(state, X, config, observe, n, rng, **extra)
        state = rec.belief_after
        trace.steps.append(rec)
        if callback is not None:
            callback(rec)
    trace.final_state = state
    return trace
