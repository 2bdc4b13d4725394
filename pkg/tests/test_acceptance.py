"""Acceptance suite: the ten end-to-end checks, each at its stated tolerance and time limit.

Every test records a one-line PASS/FAIL verdict (listed again in the terminal
summary) and then asserts it.  Run just this file with
``pytest tests/test_acceptance.py -v``; the whole suite takes about an hour on
one core.
"""

import json
import os
import time

import numpy as np
import pytest

from oracles import group_lasso_oracle, random_stream
from sparsekg import cli, harness
from sparsekg import group_lasso as gl
from sparsekg import policy as pol
from sparsekg.belief import GroupStructure, SparseBeliefState, fuse_posterior
from sparsekg.config import ExperimentConfig, to_toml
from sparsekg.kg import compute_h
from sparsekg.splines import SplineBasis, eval_basis, least_squares_fit
from sparsekg.testfunctions import f3, f4, f5

pytestmark = pytest.mark.slow

MINUTE = 60.0
# spline fitting errors below this are round-off (the fit is exact), not approximation error
ROUNDOFF = 1e-12


def combined_se(a, b):
    return float(np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size))


# --- 1. envelope correctness --------------------------------------------------


def test_envelope_matches_monte_carlo(verdict):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        size = int(rng.integers(1, 11))
        a = rng.uniform(-3, 3, size)
        b = rng.uniform(-3, 3, size)
        z = rng.standard_normal(1_000_000)
        gain = np.max(a[:, None] + b[:, None] * z[None, :], axis=0) - a.max()
        se = gain.std(ddof=1) / np.sqrt(gain.size)
        dev = abs(compute_h(a, b) - gain.mean())
        worst = max(worst, dev / se if se > 0 else (0.0 if dev <= 1e-12 else np.inf))
    elapsed = time.perf_counter() - start
    ok = worst <= 3.0 and elapsed < MINUTE
    assert verdict(1, "compute_h vs 1e6-draw Monte Carlo", ok,
                   f"worst |h - MC| = {worst:.2f} SE (limit 3), {elapsed:.1f} s (limit 60 s)")


# --- 2 and 3. recursive = batch = oracle, with KKT certificates ----------------


@pytest.fixture(scope="module")
def lasso_streams():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    rec_gap = oracle_gap = stat = dual = 0.0
    n_states = 0
    for _ in range(100):
        groups, X, y, c0 = random_stream(rng)
        state = gl.LassoState.empty(groups)
        for n in range(1, X.shape[0] + 1):
            lam = gl.lambda_schedule(n, groups, c0)
            state = gl.recursive_update(state, X[n - 1], y[n - 1], lam)
            batch = gl.solve_batch(state.R, state.r, lam, groups)
            ref = group_lasso_oracle(state.R, state.r, lam, groups, tol=1e-10)
            rec_gap = max(rec_gap, float(np.linalg.norm(state.beta_hat - batch.beta_hat)))
            oracle_gap = max(oracle_gap, float(np.linalg.norm(batch.beta_hat - ref)))
            for s in (state, batch):
                rep = gl.kkt_report(s.R, s.r, s.beta_hat, lam, groups)
                stat = max(stat, rep.stationarity)
                dual = max(dual, rep.dual_ratio)
                n_states += 1
    elapsed = time.perf_counter() - start
    return dict(rec_gap=rec_gap, oracle_gap=oracle_gap, stat=stat, dual=dual, n_states=n_states, elapsed=elapsed)


def test_recursive_equals_batch(verdict, lasso_streams):
    s = lasso_streams
    ok = s["rec_gap"] <= 1e-6 and s["oracle_gap"] <= 1e-6 and s["elapsed"] < 5 * MINUTE
    assert verdict(2, "recursive_update = solve_batch = proximal-gradient oracle", ok,
                   f"max |rec - batch| = {s['rec_gap']:.2e}, max |batch - oracle| = {s['oracle_gap']:.2e} "
                   f"(limit 1e-6), {s['elapsed']:.0f} s (limit 300 s)")


def test_kkt_certificates(verdict, lasso_streams):
    s = lasso_streams
    ok = s["stat"] <= 1e-6 and s["dual"] <= 1.0 + 1e-6
    assert verdict(3, "KKT certificates of every state", ok,
                   f"{s['n_states']} states, max stationarity {s['stat']:.2e} (limit 1e-6), "
                   f"max dual ratio {s['dual']:.9f} (limit 1 + 1e-6)")


# --- 4. sparse linear truth ordering --------------------------------------------


def test_sparse_linear_ordering(verdict):
    args = cli.build_parser().parse_args(["fig1", "--reps", "100"])
    cfg = cli.fig1_config(args)
    assert cfg.budget == 200 and cfg.noise_fraction == 0.05 and cfg.reps == 100
    start = time.perf_counter()
    files, agg = cli.render(cfg)
    elapsed = time.perf_counter() - start
    best = json.loads(files["summary.json"])["lambda_scale"]
    sp, lin, exp = (agg.final_oc(p) for p in ("kgsplin", "kglin", "explore"))
    gap_lin = (lin.mean() - sp.mean()) / combined_se(sp, lin)
    gap_exp = (exp.mean() - sp.mean()) / combined_se(sp, exp)
    mis = float(agg.misclassified_matrix("kgsplin")[:, -1].mean())
    ok = gap_lin >= 2 and gap_exp >= 2 and mis <= 1 and elapsed < 30 * MINUTE
    assert verdict(4, "sparse linear truth: KGSpLin beats KGLin and exploration", ok,
                   f"mean final OC KGSpLin {sp.mean():.3f}, KGLin {lin.mean():.3f}, explore {exp.mean():.3f}; "
                   f"separations {gap_lin:.2f} / {gap_exp:.2f} SE (need >= 2); "
                   f"misclassified at best scale {best:g}: {mis:.2f} (limit 1); {elapsed / MINUTE:.1f} min (limit 30)")


# --- 5. Matyas in 200 dimensions ------------------------------------------------


def test_matyas_ordering(verdict):
    args = cli.build_parser().parse_args(["table2", "--function", "matyas", "--noise", "1", "20", "--reps", "100"])
    cfgs = cli.table2_configs(args)
    assert [c.budget for c in cfgs] == [50, 50] and [c.reps for c in cfgs] == [100, 100]
    start = time.perf_counter()
    res = {c.noise_sd: harness.run_replications(c) for c in cfgs}
    elapsed = time.perf_counter() - start
    sp1, lin1 = res[1.0].final_oc("kgsplin"), res[1.0].final_oc("kglin")
    sp20, lin20 = res[20.0].final_oc("kgsplin"), res[20.0].final_oc("kglin")
    ok = (sp1.mean() < lin1.mean() and sp1.mean() <= 0.5 and sp20.mean() < lin20.mean()
          and elapsed < 20 * MINUTE)
    assert verdict(5, "Matyas: KGSpLin beats KGLin", ok,
                   f"sd 1: KGSpLin {sp1.mean():.4f} (limit 0.5) vs KGLin {lin1.mean():.4f}; "
                   f"sd 20: KGSpLin {sp20.mean():.4f} vs KGLin {lin20.mean():.4f}; "
                   f"{elapsed / MINUTE:.1f} min (limit 20)")


# --- 6. convergence rate under pure exploration ---------------------------------


def test_exploration_rate(verdict):
    cfg = ExperimentConfig(truth="sparse-linear", policies=("explore",), budget=400, reps=30, noise_fraction=0.05)
    ratios = []
    for seed in harness.replication_seeds(cfg.seed, cfg.reps):
        prob = harness.make_problem(cfg, seed)
        pc = harness.policy_config(cfg, "explore", prob, seed)
        rng = np.random.default_rng([seed, 1])
        snapshots = {}

        def keep(step, snapshots=snapshots):
            n = snapshots["n"] = snapshots.get("n", 0) + 1
            if n in (100, 400):
                snapshots[n] = step.belief_after.belief.vartheta.copy()

        pol.run_policy("explore", prob.alternatives, prob.groups,
                       lambda x: float(prob.truth[x] + prob.noise_sd * rng.standard_normal()), pc, callback=keep)
        off = np.setdiff1d(np.arange(prob.groups.m), prob.groups.columns(prob.true_groups))
        err = {n: float(np.sum((snapshots[n][off] - prob.coefficients[off]) ** 2)) for n in (100, 400)}
        ratios.append(err[400] / err[100])
    mean = float(np.mean(ratios))
    ok = 1 / 12 <= mean <= 3 / 4
    assert verdict(6, "off-support error decay under exploration", ok,
                   f"mean ratio n=400 / n=100 over {len(ratios)} runs = {mean:.3f} (accept [0.083, 0.75])")


# --- 7. spline suite --------------------------------------------------------------


def test_spline_suite(verdict):
    x = np.linspace(0.0, 1.0, 1000)
    pou = max(float(np.max(np.abs(eval_basis(SplineBasis(K, order), x).sum(axis=1) - 1.0)))
              for K in (0, 1, 2, 3, 4, 8, 16) for order in range(1, 7))
    grid = np.linspace(0.0, 1.0, 200)

    def err(f, K):
        basis = SplineBasis(K, 4)
        coef = least_squares_fit(basis, grid, f(grid))
        return float(np.max(np.abs(eval_basis(basis, grid) @ coef - f(grid))))

    errs = {name: [err(f, K) for K in (2, 4, 8, 16)] for name, f in (("f3", f3), ("f4", f4), ("f5", f5))}
    at_k4 = {name: e[1] for name, e in errs.items()}
    monotone = all(b <= a or b <= ROUNDOFF for e in errs.values() for a, b in zip(e, e[1:]))
    ok = pou <= 1e-12 and max(at_k4.values()) <= 0.01 and monotone
    assert verdict(7, "spline partition of unity, cubic fits, error monotone in K", ok,
                   f"partition residual {pou:.1e}; K=4 errors " + ", ".join(f"{k} {v:.1e}" for k, v in at_k4.items())
                   + f"; monotone: {monotone}")


# --- 8. interaction localization ---------------------------------------------------


def test_interaction_localization(verdict):
    cfg = cli.spam_config(cli.build_parser().parse_args(["spam"]))
    assert (cfg.budget, cfg.n_alternatives, cfg.noise_fraction, cfg.reps) == (30, 400, 0.2, 20)
    start = time.perf_counter()
    agg = harness.run_replications(cfg)
    elapsed = time.perf_counter() - start
    dists = np.array([r.localization for r in agg.results if r.policy == "kgspam"])
    hit = float(np.mean(dists <= harness.LOCALIZATION_RADIUS))
    ok = dists.size == cfg.reps and hit >= 0.7 and elapsed < 20 * MINUTE
    assert verdict(8, "KGSpAM localizes the interaction maxima", ok,
                   f"{hit:.0%} of {dists.size} runs within {harness.LOCALIZATION_RADIUS} (need 70%); "
                   f"median distance {np.median(dists):.2f}; {elapsed / MINUTE:.1f} min (limit 20)")


# --- 9. fusion identities ------------------------------------------------------------


def test_fusion_identities(verdict):
    rng = np.random.default_rng(99)
    additivity = halving = 0.0
    for _ in range(100):
        sizes = [int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 4)))]
        groups = GroupStructure.contiguous(sizes)
        m = groups.m
        A = rng.standard_normal((m, m))
        prior = A @ A.T / m + 0.1 * np.eye(m)
        state = SparseBeliefState(rng.standard_normal(m), prior, np.ones((groups.p, 2)), groups)
        S = np.sort(rng.choice(m, size=int(rng.integers(1, m + 1)), replace=False))
        B = rng.standard_normal((S.size, S.size))
        lasso_cov = B @ B.T / S.size + 0.1 * np.eye(S.size)
        post = fuse_posterior(state, rng.standard_normal(S.size), lasso_cov, S)
        expected = np.linalg.inv(prior[np.ix_(S, S)]) + np.linalg.inv(lasso_cov)
        got = np.linalg.inv(post.sigma_vartheta[np.ix_(S, S)])
        additivity = max(additivity, float(np.max(np.abs(got - expected)) / np.max(np.abs(expected))))
        full = np.arange(m)
        same = fuse_posterior(state, state.vartheta, prior, full)
        halving = max(halving, float(np.max(np.abs(same.sigma_vartheta - prior / 2)) / np.max(np.abs(prior))))
    ok = additivity <= 1e-10 and halving <= 1e-10
    assert verdict(9, "fusion precision additivity and equal-weight halving", ok,
                   f"100 instances: max relative additivity residual {additivity:.1e}, "
                   f"halving residual {halving:.1e} (limit 1e-10)")


# --- 10. determinism ------------------------------------------------------------------


def test_cmd_run_determinism(verdict, tmp_path):
    cfg = ExperimentConfig(truth="sparse-linear", policies=("kgsplin", "kglin", "explore"), budget=25, reps=3,
                           seed=11, n_alternatives=40, lambda_grid=(0.5, 1.0), sweep_reps=2)
    path = tmp_path / "exp.toml"
    path.write_text(to_toml(cfg))
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert cli.main(["run", "--config", str(path), "--out", str(out)]) == 0
        outs.append({name: (out / name).read_bytes() for name in sorted(os.listdir(out))})
    ok = outs[0] == outs[1] and len(outs[0]) == 6
    assert verdict(10, "cmd_run byte-identical on repeat", ok,
                   f"{len(outs[0])} files compared: " + ", ".join(outs[0]))
