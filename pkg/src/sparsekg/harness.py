"""Simulation harness: truths, metrics, replicated policy runs and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import group_lasso as gl
from .belief import GroupStructure
from .policy import (
    PolicyConfig,
    SparseRunState,
    estimated_groups,
    final_selection,
    run_policy,
)
from .splines import AdditiveFeatureMap, reconstruct_component
from .testfunctions import f3, f4, f5, get_test_function, three_hump_camel, three_hump_local_maxima

log = logging.getLogger(__name__)

POLICY_LABELS = {"kgsplin": "KGSpLin", "kgspam": "KGSpAM", "kglin": "KGLin", "explore": "Exploration"}


@dataclass(frozen=True)
class TruthSpec:
    """What was generated: kind, dimension, true support and variable domains."""

    kind: str
    p: int
    true_groups: tuple[int, ...]
    domains: tuple[tuple[float, float], ...] = ()
    function: Optional[str] = None
    range_target: Optional[float] = None


@dataclass
class Problem:
    """One sampled instance: alternative features, true values and grouping."""

    spec: TruthSpec
    alternatives: np.ndarray
    truth: np.ndarray
    groups: GroupStructure
    noise_sd: float = 0.0
    raw: Optional[np.ndarray] = None
    feature_map: Optional[AdditiveFeatureMap] = None
    center: Optional[np.ndarray] = None
    coefficients: Optional[np.ndarray] = None

    @property
    def true_groups(self) -> tuple[int, ...]:
        return self.spec.true_groups

    def with_noise(self, *, sd: Optional[float] = None, fraction: Optional[float] = None) -> "Problem":
        """Copy with the noise level set absolutely or as a fraction of the realized range."""
        if (sd is None) == (fraction is None):
            raise ValueError("give exactly one of sd and fraction")
        if fraction is not None:
            sd = fraction * float(np.ptp(self.truth))
        return replace(self, noise_sd=float(sd))


def gen_sparse_linear_truth(seed, n_alternatives: int = 100, n_groups: int = 10, group_size: int = 10) -> Problem:
    """Sparse linear truth: only the first two groups carry nonzero coefficients.

    Coefficient ``k`` (1-based, ``k <= 20``) is drawn from ``N(10 + k, (0.3 (10 + k))^2)``.
    Alternatives are standard normal feature vectors.
    """
    rng = np.random.default_rng(seed)
    m = n_groups * group_size
    n_nonzero = 2 * group_size
    means = 10.0 + np.arange(1, n_nonzero + 1)
    alpha = np.zeros(m)
    alpha[:n_nonzero] = rng.normal(means, 0.3 * means)
    X = rng.standard_normal((n_alternatives, m))
    groups = GroupStructure.contiguous([group_size] * n_groups)
    spec = TruthSpec("sparse-linear", n_groups, (0, 1))
    return Problem(spec, X, X @ alpha, groups, coefficients=alpha)


def _center_and_scale(values: np.ndarray, range_target: Optional[float]) -> np.ndarray:
    out = values - values.mean()
    if range_target is not None:
        out = out * (range_target / np.ptp(out))
    return out


def gen_test_function_truth(
    name: str,
    seed,
    embed_dim: int = 200,
    n_alternatives: int = 100,
    K: int = 4,
    order: int = 4,
    range_target: float = 100.0,
) -> Problem:
    """A benchmark hidden in the first coordinates of an ``embed_dim``-dimensional space.

    The truth is the negated benchmark (so larger is better), centered and
    scaled to span ``range_target`` over the sampled alternatives.  Features
    are cubic B-splines per variable plus tensor blocks for interacting pairs,
    centered over the alternative set.
    """
    tf = get_test_function(name)
    if embed_dim < tf.dim:
        raise ValueError("embedding dimension smaller than the function's dimension")
    rng = np.random.default_rng(seed)
    domains = tuple(tf.domain) + ((0.0, 1.0),) * (embed_dim - tf.dim)
    lo = np.array([d[0] for d in domains])
    hi = np.array([d[1] for d in domains])
    raw = lo + (hi - lo) * rng.random((n_alternatives, embed_dim))
    truth = _center_and_scale(-tf(raw[:, : tf.dim]), range_target)

    in_pairs = {v for pair in tf.pairs for v in pair}
    mains = tuple(j for j in range(embed_dim) if j not in in_pairs)
    fmap = AdditiveFeatureMap.uniform(domains, K, order, main_effects=mains, pairs=tf.pairs)
    feats = fmap(raw)
    center = feats.mean(axis=0)
    comps = fmap.components
    true_groups = tuple(
        c for c, lab in enumerate(comps)
        if (isinstance(lab, tuple) and lab in tf.pairs) or (not isinstance(lab, tuple) and lab < tf.dim)
    )
    spec = TruthSpec("test-function", len(comps), true_groups, domains, tf.name, range_target)
    return Problem(spec, feats - center, truth, fmap.groups, raw=raw, feature_map=fmap, center=center)


def ssanova_truth_values(raw: np.ndarray) -> np.ndarray:
    """``f12(x1, x2) + f3(x3) + f4(x4) + f5(x5)`` at raw points."""
    return three_hump_camel(raw[:, 0], raw[:, 1]) + f3(raw[:, 2]) + f4(raw[:, 3]) + f5(raw[:, 4])


def gen_ssanova_truth(
    seed=0, n_variables: int = 100, n_alternatives: int = 400, K: int = 4, order: int = 4
) -> Problem:
    """Functional-ANOVA truth with a three-hump-camel interaction and three main effects.

    Variables 1-2 live on ``[-5, 5]``, the rest on ``[0, 1]``.  The policy
    maximizes the negated, centered sum of components.
    """
    if n_variables < 5:
        raise ValueError("the SS-ANOVA truth needs at least five variables")
    rng = np.random.default_rng(seed)
    domains = ((-5.0, 5.0),) * 2 + ((0.0, 1.0),) * (n_variables - 2)
    lo = np.array([d[0] for d in domains])
    hi = np.array([d[1] for d in domains])
    raw = lo + (hi - lo) * rng.random((n_alternatives, n_variables))
    truth = _center_and_scale(-ssanova_truth_values(raw), None)
    fmap = AdditiveFeatureMap.uniform(
        domains, K, order, main_effects=tuple(range(2, n_variables)), pairs=((0, 1),)
    )
    feats = fmap(raw)
    center = feats.mean(axis=0)
    # components: main effects of variables 2.. first, the (0, 1) pair last
    comps = fmap.components
    true_groups = tuple(sorted([comps.index(2), comps.index(3), comps.index(4), comps.index((0, 1))]))
    spec = TruthSpec("ss-anova", len(comps), true_groups, domains)
    return Problem(spec, feats - center, truth, fmap.groups, raw=raw, feature_map=fmap, center=center)


def opportunity_cost(truth_values, chosen: int) -> float:
    """Best true value minus the true value of the chosen alternative."""
    mu = np.asarray(truth_values, dtype=float)
    if not 0 <= chosen < mu.size:
        raise IndexError("chosen alternative out of range")
    return float(mu.max() - mu[chosen])


def count_misclassified_groups(estimated_support, true_support, p: int) -> int:
    """Groups whose estimated zero/nonzero status disagrees with the truth."""
    est, true = set(estimated_support), set(true_support)
    if any(not 0 <= j < p for j in est | true):
        raise ValueError("support index out of range")
    return len(est ^ true)


@dataclass
class RunResult:
    policy: str
    rep: int
    seed: int
    oc_series: np.ndarray
    misclassified: np.ndarray
    support_size: np.ndarray
    choices: np.ndarray
    trace: Optional[object] = None
    localization: Optional[float] = None

    @property
    def final_oc(self) -> float:
        return float(self.oc_series[-1])


def dense_support(rows: np.ndarray, y: np.ndarray, groups, config: PolicyConfig) -> tuple:
    """Active groups of a group Lasso fitted to data collected by a policy without one."""
    n = rows.shape[0]
    fit = gl.solve_batch(
        rows.T @ rows, rows.T @ y, config.lam(n, groups), groups, tol=config.tol, n=n,
        rows=rows if 2 * n < groups.m else None,
    )
    return fit.active_groups


def _count(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else str(int(v))


def run_single(problem: Problem, kind: str, config: PolicyConfig, noise_seed, keep_trace: bool = False) -> RunResult:
    """Run one policy on one problem and record per-round OC and support accuracy.

    Sparse policies report their Lasso support every round.  Dense policies
    report NaN until the last round, where a group Lasso is fitted to the data
    they collected.

    Observation noise comes from ``noise_seed`` so that policies compared on
    the same problem see the same noise sequence.
    """
    noise_rng = np.random.default_rng(noise_seed)
    truth = problem.truth
    sd = problem.noise_sd

    def observe(x: int) -> float:
        return float(truth[x] + sd * noise_rng.standard_normal())

    X = problem.alternatives
    groups = problem.groups
    p = groups.p
    oc, mis, sup = [], [], []
    rows, ys = [], []

    def on_step(step):
        state = step.belief_after
        oc.append(opportunity_cost(truth, final_selection(state, X)))
        if isinstance(state, SparseRunState):
            est = state.lasso.active_groups
            mis.append(count_misclassified_groups(est, problem.true_groups, p))
            sup.append(len(est))
        else:
            # dense policies carry no support estimate; one is fitted once, at the end
            rows.append(X[step.chosen_alternative])
            ys.append(step.y)
            mis.append(np.nan)
            sup.append(np.nan)

    trace = run_policy(kind, X, groups, observe, config, callback=on_step)
    if rows:
        est = dense_support(np.array(rows), np.array(ys), groups, config)
        mis[-1] = count_misclassified_groups(est, problem.true_groups, p)
        sup[-1] = len(est)
    loc = None
    if problem.spec.kind == "ss-anova":
        loc = interaction_localization(problem, trace.final_state)[1]
    return RunResult(
        kind,
        -1,
        int(config.seed),
        np.array(oc),
        np.array(mis),
        np.array(sup),
        np.array([s.chosen_alternative for s in trace.steps]),
        trace if keep_trace else None,
        loc,
    )


def make_problem(cfg, seed) -> Problem:
    """Sample the configured truth and attach its noise level."""
    if cfg.truth == "sparse-linear":
        prob = gen_sparse_linear_truth(seed, cfg.n_alternatives)
    elif cfg.truth == "test-function":
        prob = gen_test_function_truth(
            cfg.function, seed, cfg.embed_dim, cfg.n_alternatives, cfg.knots, cfg.order
        )
    elif cfg.truth == "ss-anova":
        prob = gen_ssanova_truth(seed, cfg.n_variables, cfg.n_alternatives, cfg.knots, cfg.order)
    else:
        raise ValueError(f"unknown truth kind {cfg.truth!r}")
    if cfg.noise_sd is not None:
        return prob.with_noise(sd=cfg.noise_sd)
    return prob.with_noise(fraction=cfg.noise_fraction)


def policy_config(cfg, kind: str, problem: Problem, seed: int) -> PolicyConfig:
    prior_var = cfg.prior_var
    if prior_var is None:
        prior_var = float(np.ptp(problem.truth)) ** 2 / 12.0
    return PolicyConfig(
        budget=cfg.budget,
        noise_var=problem.noise_sd**2,
        kind=kind,
        seed=int(seed),
        max_terms=cfg.max_terms,
        n_samples=cfg.n_samples,
        c_min=cfg.c_min,
        c_max=cfg.c_max,
        lambda_scale=cfg.lambda_scale,
        warmup_rounds=cfg.warmup_rounds,
        prior_var=prior_var,
        tol=cfg.tol,
    )


def replication_seeds(seed: int, n_reps: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_reps, dtype=np.uint32)]


@dataclass
class RepOutcome:
    rep: int
    seed: int
    results: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def _run_rep(args) -> RepOutcome:
    cfg, rep, seed = args
    out = RepOutcome(rep, seed)
    problem = make_problem(cfg, seed)
    for k, kind in enumerate(cfg.policies):
        pcfg = policy_config(cfg, kind, problem, seed + 7919 * (k + 1))
        try:
            res = run_single(problem, kind, pcfg, noise_seed=[seed, 1])
        except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            log.warning("rep %d policy %s failed: %s", rep, kind, exc)
            out.failures.append({"rep": rep, "policy": kind, "error": str(exc)})
            continue
        res.rep = rep
        out.results.append(res)
    return out


@dataclass
class Aggregate:
    """Per-policy statistics over replications, plus the raw per-run results."""

    policies: tuple[str, ...]
    results: list
    failures: list
    budget: int

    def final_oc(self, policy: str) -> np.ndarray:
        return np.array([r.final_oc for r in self.results if r.policy == policy])

    def oc_matrix(self, policy: str) -> np.ndarray:
        return np.array([r.oc_series for r in self.results if r.policy == policy])

    def misclassified_matrix(self, policy: str) -> np.ndarray:
        return np.array([r.misclassified for r in self.results if r.policy == policy])

    def per_round(self, policy: str) -> dict:
        oc = self.oc_matrix(policy)
        return {
            "mean": oc.mean(axis=0),
            "sd": oc.std(axis=0, ddof=1) if oc.shape[0] > 1 else np.zeros(oc.shape[1]),
            "median": np.median(oc, axis=0),
        }

    def table(self) -> dict:
        """E(OC), sigma(OC), median and standard error of the final OC per policy."""
        rows = {}
        for pol in self.policies:
            oc = self.final_oc(pol)
            if oc.size == 0:
                continue
            sd = float(oc.std(ddof=1)) if oc.size > 1 else 0.0
            rows[POLICY_LABELS.get(pol, pol)] = {
                "E(OC)": float(oc.mean()),
                "sigma(OC)": sd,
                "Med": float(np.median(oc)),
                "se": sd / np.sqrt(oc.size),
                "n": int(oc.size),
                "misclassified": float(self.misclassified_matrix(pol)[:, -1].mean()),
            }
            loc = [r.localization for r in self.results if r.policy == pol and r.localization is not None]
            if loc:
                rows[POLICY_LABELS.get(pol, pol)]["localized"] = float(
                    np.mean(np.array(loc) <= LOCALIZATION_RADIUS)
                )
        return rows


def run_replications(cfg, n_reps: Optional[int] = None, seeds: Optional[Sequence[int]] = None, threads: int = 1) -> Aggregate:
    """Run every configured policy on ``n_reps`` independently sampled problems.

    All policies share the problem and noise stream of a replication.  The
    result does not depend on ``threads`` or on completion order.
    """
    n_reps = cfg.reps if n_reps is None else n_reps
    if n_reps < 1:
        raise ValueError("need at least one replication")
    seeds = replication_seeds(cfg.seed, n_reps) if seeds is None else list(seeds)
    tasks = [(cfg, i, int(s)) for i, s in enumerate(seeds[:n_reps])]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outcomes = list(ex.map(_run_rep, tasks))
    else:
        outcomes = [_run_rep(t) for t in tasks]
    outcomes.sort(key=lambda o: o.rep)
    results = [r for o in outcomes for r in o.results]
    failures = [f for o in outcomes for f in o.failures]
    return Aggregate(tuple(cfg.policies), results, failures, cfg.budget)


CSV_COLUMNS = ("policy", "rep", "round", "oc", "misclassified", "support_size")


def results_csv(agg: Aggregate) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for res in agg.results:
        for n in range(res.oc_series.size):
            w.writerow(
                (res.policy, res.rep, n + 1, repr(float(res.oc_series[n])),
                 _count(res.misclassified[n]), _count(res.support_size[n]))
            )
    return buf.getvalue()


FINAL_COLUMNS = ("policy", "rep", "seed", "final_oc", "misclassified", "support_size", "localization")


def final_csv(agg: Aggregate) -> str:
    """One row per (policy, replication) with end-of-run metrics."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FINAL_COLUMNS)
    for res in agg.results:
        loc = "" if res.localization is None else repr(float(res.localization))
        w.writerow(
            (res.policy, res.rep, res.seed, repr(res.final_oc), _count(res.misclassified[-1]),
             _count(res.support_size[-1]), loc)
        )
    return buf.getvalue()


def per_round_csv(agg: Aggregate) -> str:
    """One row per round: mean/sd/median OC, log of the mean OC and mean misclassified groups per policy."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    present = [p for p in agg.policies if agg.oc_matrix(p).size]
    header = ["round"]
    for p in present:
        header += [f"{p}_mean_oc", f"{p}_sd_oc", f"{p}_median_oc", f"{p}_log_mean_oc", f"{p}_misclassified"]
    w.writerow(header)
    stats = {p: (agg.per_round(p), agg.misclassified_matrix(p).mean(axis=0)) for p in present}
    for n in range(agg.budget):
        row = [n + 1]
        for p in present:
            st, mis = stats[p]
            mean = float(st["mean"][n])
            log_mean = float(np.log10(mean)) if mean > 0 else float("-inf")
            row += [repr(mean), repr(float(st["sd"][n])), repr(float(st["median"][n])), repr(log_mean),
                    "" if np.isnan(mis[n]) else repr(float(mis[n]))]
        w.writerow(row)
    return buf.getvalue()


def summary_document(agg: Aggregate, extra: Optional[dict] = None) -> dict:
    doc = {
        "budget": agg.budget,
        "policies": list(agg.policies),
        "table": agg.table(),
        "failures": agg.failures,
    }
    if extra:
        doc.update(extra)
    return doc


def write_outputs(out_dir: str, files: dict[str, str]) -> None:
    """Write rendered result files, each atomically (temp file then rename).

    Callers render every file before calling this, so a failed computation
    leaves no output behind.
    """
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serializable: {type(obj)}")


KEY_REGION = ((-2.0, 2.0), (-2.0, 2.0))
LOCALIZATION_RADIUS = 0.5


def _coefficients(state) -> np.ndarray:
    return state.belief.vartheta if isinstance(state, SparseRunState) else state.vartheta


def estimated_interaction_surface(problem: Problem, state, grid_x1, grid_x2) -> np.ndarray:
    """Estimated interaction component on a grid (truth scale, so the negated camel), centered."""
    fmap = problem.feature_map
    comp = fmap.components.index((0, 1))
    g1, g2 = np.meshgrid(grid_x1, grid_x2, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    vals = reconstruct_component(fmap, _coefficients(state), comp, pts).reshape(g1.shape)
    return vals - vals.mean()


def interaction_localization(problem: Problem, state, n_grid: int = 81, region=KEY_REGION):
    """Grid argmax of the estimated interaction surface and its distance to the nearest true local maximum."""
    g1 = np.linspace(*region[0], n_grid)
    g2 = np.linspace(*region[1], n_grid)
    surf = estimated_interaction_surface(problem, state, g1, g2)
    i, j = np.unravel_index(int(np.argmax(surf)), surf.shape)
    point = np.array([g1[i], g2[j]])
    dist = float(np.min(np.linalg.norm(three_hump_local_maxima() - point, axis=1)))
    return point, dist
