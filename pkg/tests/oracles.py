"""Slow, independent reference implementations used as test oracles."""

import numpy as np

from sparsekg.belief import GroupStructure


def project_l1(v, radius):
    """Euclidean projection onto the l1 ball by sorting (Duchi et al.)."""
    if radius <= 0:
        return np.zeros_like(v)
    if np.abs(v).sum() <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    cs = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    hits = np.nonzero(u * k > cs - radius)[0]
    rho = hits[-1] if hits.size else 0
    theta = (cs[rho] - radius) / (rho + 1)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def group_lasso_oracle(R, r, lam, groups: GroupStructure, tol=1e-10, max_iter=2_000_000):
    """Minimize 0.5 b'Rb - b'r + lam sum_j ||b_Gj||_inf by accelerated proximal-gradient descent.

    Uses a fixed step ``1/L``, sort-based l1-ball projections and no
    restarts.  Stops once the gradient mapping ``(w - prox(w - grad/L)) L``
    has sup norm at most ``tol``, i.e. the prox fixed-point residual is ``tol``.
    """
    m = groups.m
    L = max(float(np.linalg.eigvalsh(R)[-1]), 1e-12)
    step = 1.0 / L
    idx = [list(g) for g in groups.groups]
    b = np.zeros(m)
    w = b.copy()
    t = 1.0
    for _ in range(max_iter):
        v = w - step * (R @ w - r)
        new = np.empty(m)
        for g in idx:
            new[g] = v[g] - project_l1(v[g], step * lam)
        if L * np.max(np.abs(new - w)) <= tol:
            return new
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        w = new + ((t - 1.0) / t_next) * (new - b)
        b, t = new, t_next
    raise RuntimeError("oracle did not converge")


def random_stream(rng, n_rounds=100):
    """A synthetic Lasso stream: group structure, design rows, responses and a weight constant."""
    p = int(rng.integers(2, 4))
    sizes = [int(s) for s in rng.integers(1, 11, size=p)]
    groups = GroupStructure.contiguous(sizes)
    m = groups.m
    beta = np.zeros(m)
    on = list(groups.groups[0])
    beta[on] = rng.uniform(1, 3, len(on)) * rng.choice([-1, 1], len(on))
    X = rng.standard_normal((n_rounds, m))
    y = X @ beta + 0.5 * rng.standard_normal(n_rounds)
    c0 = float(rng.uniform(0.05, 0.5))
    return groups, X, y, c0
