"""l1,inf group Lasso: batch and recursive solvers, subgradients, sampled covariance.

Problem solved everywhere in this module::

    min_beta  0.5 beta' R beta - beta' r + lam * sum_j max_{k in G_j} |beta_k|

with ``R = sum x x'`` and ``r = sum x y`` the running sufficient statistics.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .belief import GroupStructure, SparseBeliefState

log = logging.getLogger(__name__)

TIE_RTOL = 1e-8


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def proj_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{u : ||u||_1 <= radius}``."""
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        return np.zeros_like(v)
    u = np.abs(v)
    if u.sum() <= radius:
        return v.copy()
    s = np.sort(u)[::-1]
    css = np.cumsum(s) - radius
    idx = np.arange(1, s.size + 1)
    hits = np.nonzero(s > css / idx)[0]
    # rounding can empty the set when the radius is negligible against |v|
    rho = hits[-1] if hits.size else 0
    shift = css[rho] / (rho + 1.0)
    return np.sign(v) * np.maximum(u - shift, 0.0)


def prox_linf_group(v, weight: float) -> np.ndarray:
    """Prox of ``weight * ||.||_inf`` via Moreau: ``v - proj_{l1-ball(weight)}(v)``."""
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    v = np.asarray(v, dtype=float)
    return v - proj_l1_ball(v, weight)


@njit(cache=True)
def _prox_into(v, order, offsets, weight, out, buf):  # pragma: no cover - compiled
    # v - proj_l1(v) per group: magnitudes clipped at the l1-projection threshold,
    # found by Michelot's fixed point (no sort)
    for i in range(v.size):
        out[i] = v[i]
    if weight <= 0.0:
        return
    for g in range(offsets.size - 1):
        lo, hi = offsets[g], offsets[g + 1]
        total = 0.0
        for k in range(lo, hi):
            total += abs(v[order[k]])
        if total <= weight:
            for k in range(lo, hi):
                out[order[k]] = 0.0
            continue
        n = hi - lo
        for k in range(n):
            buf[k] = abs(v[order[lo + k]])
        count = n
        shift = (total - weight) / count
        while True:
            kept = 0
            css = 0.0
            for k in range(count):
                if buf[k] > shift:
                    buf[kept] = buf[k]
                    css += buf[k]
                    kept += 1
            if kept == count:
                break
            count = kept
            shift = (css - weight) / count
        for k in range(lo, hi):
            i = order[k]
            if abs(v[i]) > shift:
                out[i] = shift if v[i] > 0 else -shift


@njit(cache=True)
def _prox_flat(v, order, offsets, weight):  # pragma: no cover - compiled
    out = np.empty_like(v)
    width = 0
    for g in range(offsets.size - 1):
        width = max(width, offsets[g + 1] - offsets[g])
    _prox_into(v, order, offsets, weight, out, np.empty(width))
    return out


@functools.lru_cache(maxsize=64)
def _flat_groups(groups: GroupStructure):
    order = np.array([i for g in groups.groups for i in g], dtype=np.int64)
    offsets = np.cumsum([0] + [len(g) for g in groups.groups]).astype(np.int64)
    return order, offsets


def _prox(v: np.ndarray, weight: float, groups: GroupStructure) -> np.ndarray:
    """Groupwise prox of ``weight * ||.||_inf``."""
    order, offsets = _flat_groups(groups)
    return _prox_flat(np.ascontiguousarray(v, dtype=float), order, offsets, float(weight))


def penalty(beta, groups: GroupStructure) -> float:
    beta = np.abs(np.asarray(beta, dtype=float))
    order, offsets = _flat_groups(groups)
    return float(np.maximum.reduceat(beta[order], offsets[:-1]).sum())


def objective(beta, R, r, lam: float, groups: GroupStructure) -> float:
    beta = np.asarray(beta, dtype=float)
    return float(0.5 * beta @ R @ beta - beta @ r + lam * penalty(beta, groups))


@dataclass(frozen=True)
class Partition:
    """Active groups ``P``, inactive ``Q``, max-sets ``A_j``, rest ``B_j``, and ``C``."""

    P: tuple[int, ...]
    Q: tuple[int, ...]
    A: dict[int, tuple[int, ...]]
    B: dict[int, tuple[int, ...]]
    C: tuple[int, ...]


def _group_max(values: np.ndarray, groups: GroupStructure) -> np.ndarray:
    order, offsets = _flat_groups(groups)
    return np.maximum.reduceat(values[order], offsets[:-1])


def _group_sum(values: np.ndarray, groups: GroupStructure) -> np.ndarray:
    order, offsets = _flat_groups(groups)
    return np.add.reduceat(values[order], offsets[:-1])


def partition(beta, groups: GroupStructure, rtol: float = 0.0) -> Partition:
    """Split ``beta``'s indices into the active-set bookkeeping sets.

    ``rtol`` widens the max-sets to coordinates within ``rtol * max|beta_G|``.
    """
    absb = np.abs(np.asarray(beta, dtype=float))
    tops = _group_max(absb, groups)
    P, Q, A, B, C = [], [], {}, {}, []
    for j, top in enumerate(tops):
        g = groups.groups[j]
        if top > 0:
            P.append(j)
            in_a = absb[list(g)] >= top * (1.0 - rtol)
            A[j] = tuple(k for k, f in zip(g, in_a) if f)
            B[j] = tuple(k for k, f in zip(g, in_a) if not f)
        else:
            Q.append(j)
            C.extend(g)
    return Partition(tuple(P), tuple(Q), A, B, tuple(C))


@dataclass(frozen=True)
class LassoState:
    """Sufficient statistics, current minimizer and its regularization weight."""

    R: np.ndarray
    r: np.ndarray
    beta_hat: np.ndarray
    lam: float
    groups: GroupStructure
    n: int = 0
    iterations: int = field(default=0, compare=False)
    # design rows, kept while n is small relative to m so that ``R v`` can be
    # formed as ``X'(X v)``; ``None`` once the dense product is cheaper
    rows: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @classmethod
    def empty(cls, groups: GroupStructure) -> "LassoState":
        m = groups.m
        return cls(np.zeros((m, m)), np.zeros(m), np.zeros(m), 0.0, groups, 0, rows=np.zeros((0, m)))

    @property
    def partition(self) -> Partition:
        return partition(self.beta_hat, self.groups)

    @property
    def active_groups(self) -> tuple[int, ...]:
        return self.groups.active_groups(self.beta_hat)

    @property
    def support(self) -> np.ndarray:
        """Coefficient indices of the active groups."""
        return self.groups.columns(self.active_groups)


def lambda_schedule(n: int, groups: GroupStructure, c0: float) -> float:
    """Regularization weight ``c0 * d_bar * sqrt(n log p)`` after ``n`` observations."""
    if n <= 0 or groups.p < 2:
        return 0.0
    return float(c0 * groups.d_bar * math.sqrt(n * math.log(groups.p)))


def extract_subgradient(beta, groups: GroupStructure, atol: float = 0.0) -> np.ndarray:
    """A subgradient of ``||beta||_{1,inf}``.

    Active groups put unit l1 mass on their max-magnitude coordinates, split
    equally on ties (entries within ``atol`` of the max), with matching signs.
    Inactive groups get zero.
    """
    beta = np.asarray(beta, dtype=float)
    z = np.zeros_like(beta)
    for g in groups.groups:
        idx = np.array(g)
        vals = np.abs(beta[idx])
        top = vals.max()
        if top == 0:
            continue
        tied = idx[vals >= top - atol]
        z[tied] = np.sign(beta[tied]) / tied.size
    return z


def _subgradients_batch(draws: np.ndarray, groups: GroupStructure) -> np.ndarray:
    # row-wise extract_subgradient for many draws at once
    z = np.zeros_like(draws)
    for g in groups.groups:
        idx = list(g)
        block = np.abs(draws[:, idx])
        top = block.max(axis=1, keepdims=True)
        tied = (block == top) & (top > 0)
        z[:, idx] = np.sign(draws[:, idx]) * tied / np.maximum(tied.sum(axis=1, keepdims=True), 1)
    return z


def _project_signed_simplex(v: np.ndarray) -> np.ndarray:
    # projection onto {w >= 0, sum w = 1}
    s = np.sort(v)[::-1]
    css = np.cumsum(s) - 1.0
    idx = np.arange(1, s.size + 1)
    hits = np.nonzero(s > css / idx)[0]
    rho = hits[-1] if hits.size else 0
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


@dataclass(frozen=True)
class KKTReport:
    stationarity: float  # ||R beta - r + lam z*||_inf, z* the closest valid subgradient
    dual_ratio: float  # max over inactive groups of ||(r - R beta)_G||_1 / lam

    def ok(self, tol: float, scale: float = 1.0) -> bool:
        return self.stationarity <= tol * scale and self.dual_ratio <= 1.0 + tol


def kkt_report(R, r, beta, lam: float, groups: GroupStructure, tie_rtol: float = TIE_RTOL) -> KKTReport:
    """Optimality residuals of ``beta``.

    For active groups, the residual ``g = r - R beta`` must equal ``lam * z``
    with ``z`` a valid subgradient: unit l1 mass on the max-set with matching
    signs and zero elsewhere.  The reported stationarity is the distance (sup
    norm) from ``g`` to the nearest such ``lam * z``.
    """
    beta = np.asarray(beta, dtype=float)
    g = np.asarray(r, dtype=float) - np.asarray(R, dtype=float) @ beta
    if lam == 0:
        return KKTReport(float(np.max(np.abs(g))) if g.size else 0.0, 0.0)
    part = partition(beta, groups, rtol=tie_rtol)
    stat = 0.0
    for j in part.P:
        A = list(part.A[j])
        s = np.sign(beta[A])
        w = _project_signed_simplex(s * g[A] / lam)
        stat = max(stat, float(np.max(np.abs(g[A] - lam * s * w))))
        if part.B[j]:
            stat = max(stat, float(np.max(np.abs(g[list(part.B[j])]))))
    dual = 0.0
    if part.Q:
        dual = float(np.max(_group_sum(np.abs(g), groups)[list(part.Q)])) / lam
    return KKTReport(stat, dual)


def _structured_solve(R, r, lam, groups, part: Partition, signs: dict[int, np.ndarray], near=None, rows=None):
    """Exact minimizer on the manifold fixed by ``part`` (max-sets tied, B free).

    When the reduced system is singular (fewer observations than free
    parameters) the minimizer is not unique; the one closest to ``near`` is
    returned.  Returns ``None`` when the solution violates the assumed structure.
    """
    m = groups.m
    cols = []
    for j in part.P:
        col = np.zeros(m)
        col[list(part.A[j])] = signs[j]
        cols.append(col)
    b_idx = [k for j in part.P for k in part.B[j]]
    for k in b_idx:
        col = np.zeros(m)
        col[k] = 1.0
        cols.append(col)
    if not cols:
        return np.zeros(m)
    D = np.column_stack(cols)
    if rows is not None and rows.shape[0] < groups.m:
        XD = rows @ D
        H = XD.T @ XD
    else:
        H = D.T @ R @ D
    rhs = D.T @ r
    rhs[: len(part.P)] -= lam
    theta = None
    try:
        c = np.linalg.cholesky(H)
        theta = np.linalg.solve(c.T, np.linalg.solve(c, rhs))
        if not np.all(np.isfinite(theta)) or np.linalg.cond(H) > 1e12:
            theta = None
    except np.linalg.LinAlgError:
        theta = None
    if theta is None:
        theta0 = np.zeros(D.shape[1])
        if near is not None:
            near = np.asarray(near, dtype=float)
            theta0[: len(part.P)] = [np.mean(np.abs(near[list(part.A[j])])) for j in part.P]
            theta0[len(part.P):] = near[b_idx]
        theta = theta0 + np.linalg.lstsq(H, rhs - H @ theta0, rcond=1e-12)[0]
    beta = D @ theta
    t = theta[: len(part.P)]
    if np.any(t <= 0):
        return None
    for j, tj in zip(part.P, t):
        if part.B[j] and np.max(np.abs(beta[list(part.B[j])])) >= tj:
            return None
    return beta


def _kkt_scale(r, lam) -> float:
    return max(1.0, float(np.max(np.abs(r))) if r.size else 0.0, float(lam))


def _polish(R, r, lam, groups, beta, tol, rows=None, kscale=None):
    """Try to snap an approximate minimizer onto its exact active structure.

    Candidate structures come from thresholding small coefficients and from
    merging near-ties into max-sets, at several relative levels.
    """
    scale = float(np.max(np.abs(beta))) if beta.size else 0.0
    if kscale is None:
        kscale = _kkt_scale(r, lam)
    if scale == 0.0:
        rep = kkt_report(R, r, beta, lam, groups)
        return beta if rep.ok(tol, kscale) else None
    tried = set()
    for rel in (1e-3, 1e-5, 1e-7, 1e-9):
        trimmed = np.where(np.abs(beta) > rel * scale, beta, 0.0)
        for tie in (rel * 10, 1e-2, 1e-1):
            part = partition(trimmed, groups, rtol=tie)
            key = (part.P, tuple(part.A[j] for j in part.P))
            if key in tried:
                continue
            tried.add(key)
            signs = {j: np.sign(beta[list(part.A[j])]) for j in part.P}
            cand = _structured_solve(R, r, lam, groups, part, signs, near=beta, rows=rows)
            if cand is not None and kkt_report(R, r, cand, lam, groups).ok(tol, kscale):
                return cand
    return None


def _lipschitz(R: np.ndarray, factor: Optional[np.ndarray] = None) -> float:
    if factor is not None:
        if factor.shape[0] == 0:
            return 0.0
        return float(np.linalg.eigvalsh(factor @ factor.T)[-1])
    m = R.shape[0]
    if m <= 200:
        return float(np.linalg.eigvalsh(R)[-1])
    v = np.ones(m) / math.sqrt(m)
    est = 0.0
    for _ in range(50):
        w = R @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(nrm - est) <= 1e-6 * nrm:
            est = nrm
            break
        est = nrm
    # power iteration approaches from below; pad so steps stay safe
    return float(est) * 1.01


def _gradient_mapping(R, r, lam, groups, beta, L):
    grad = R @ beta - r
    return L * (beta - _prox(beta - grad / L, lam / L, groups))


@njit(cache=True)
def _penalty_flat(beta, order, offsets):  # pragma: no cover - compiled
    total = 0.0
    for g in range(offsets.size - 1):
        mx = 0.0
        for k in range(offsets[g], offsets[g + 1]):
            a = abs(beta[order[k]])
            if a > mx:
                mx = a
        total += mx
    return total


@njit(cache=True)
def _rmv_into(A, use_rows, v, out, tmp):  # pragma: no cover - compiled
    # out = R v, with R = A'A when use_rows else R = A
    if use_rows:
        n, m = A.shape
        for i in range(n):
            acc = 0.0
            for k in range(m):
                acc += A[i, k] * v[k]
            tmp[i] = acc
        for k in range(m):
            out[k] = 0.0
        for i in range(n):
            ti = tmp[i]
            for k in range(m):
                out[k] += A[i, k] * ti
    else:
        out[:] = A @ v


@njit(cache=True)
def _fista_kernel(A, use_rows, r, lam, order, offsets, beta0, tol, max_iter, L0):  # pragma: no cover
    m = beta0.size
    width = 0
    for g in range(offsets.size - 1):
        width = max(width, offsets[g + 1] - offsets[g])
    buf = np.empty(width)
    tmp = np.empty(A.shape[0] if use_rows else 0)
    L = max(L0, 1e-12)
    beta = beta0.copy()
    R_beta = np.empty(m)
    _rmv_into(A, use_rows, beta, R_beta, tmp)
    F_beta = 0.5 * (beta @ R_beta) - beta @ r + lam * _penalty_flat(beta, order, offsets)
    y = beta.copy()
    R_y = R_beta.copy()
    f_y = 0.5 * (y @ R_y) - y @ r
    grad_y = np.empty(m)
    point = np.empty(m)
    cand = np.empty(m)
    R_c = np.empty(m)
    t = 1.0
    it = 0
    res = np.inf
    while it < max_iter:
        it += 1
        for k in range(m):
            grad_y[k] = R_y[k] - r[k]
        while True:
            for k in range(m):
                point[k] = y[k] - grad_y[k] / L
            _prox_into(point, order, offsets, lam / L, cand, buf)
            _rmv_into(A, use_rows, cand, R_c, tmp)
            f_c = 0.0
            lin = 0.0
            quad = 0.0
            for k in range(m):
                f_c += cand[k] * (0.5 * R_c[k] - r[k])
                d = cand[k] - y[k]
                lin += grad_y[k] * d
                quad += d * d
            if f_c <= f_y + lin + 0.5 * L * quad + 1e-12 * (abs(f_y) + 1.0):
                break
            L *= 2.0
        F_c = f_c + lam * _penalty_flat(cand, order, offsets)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if F_c > F_beta:
            # restart momentum when the objective goes up
            for k in range(m):
                y[k] = cand[k]
                R_y[k] = R_c[k]
            f_y = f_c
            t_next = 1.0
        else:
            mom = (t - 1.0) / t_next
            f_y = 0.0
            for k in range(m):
                y[k] = cand[k] + mom * (cand[k] - beta[k])
                R_y[k] = R_c[k] + mom * (R_c[k] - R_beta[k])
                f_y += y[k] * (0.5 * R_y[k] - r[k])
        for k in range(m):
            beta[k] = cand[k]
            R_beta[k] = R_c[k]
        F_beta = F_c
        t = t_next
        if it % 10 == 0:
            for k in range(m):
                point[k] = beta[k] - (R_beta[k] - r[k]) / L
            _prox_into(point, order, offsets, lam / L, cand, buf)
            res = 0.0
            for k in range(m):
                v = abs(L * (beta[k] - cand[k]))
                if v > res:
                    res = v
            if res <= tol:
                break
    return beta, it, res, L


def _fista(R, rows, r, lam, groups, beta0, tol, max_iter, L0):
    """Accelerated proximal gradient with backtracking and monotone restart.

    ``tol`` bounds the sup-norm of the gradient mapping.  Products with ``R``
    use the design rows when given (``R = rows' rows``).
    """
    order, offsets = _flat_groups(groups)
    use_rows = rows is not None
    A = np.ascontiguousarray(rows if use_rows else R, dtype=float)
    beta, it, res, L = _fista_kernel(
        A, use_rows, np.ascontiguousarray(r, dtype=float), float(lam), order, offsets,
        np.ascontiguousarray(beta0, dtype=float), float(tol), int(max_iter), float(L0),
    )
    return beta, int(it), float(res), float(L)


def solve_batch(
    R,
    r,
    lam: float,
    groups: GroupStructure,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    beta0: Optional[np.ndarray] = None,
    n: int = 0,
    rows: Optional[np.ndarray] = None,
) -> LassoState:
    """Minimize the l1,inf penalized quadratic from scratch (or from ``beta0``).

    Proximal-gradient iterations identify the active structure; the minimizer
    is then computed exactly on that structure and certified by the KKT
    conditions.  ``tol`` is the certificate tolerance, relative to the scale
    of ``r`` and ``lam``.  ``rows`` (optional) are design rows with
    ``R = rows' rows``, used for cheaper products when there are few of them.
    """
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = groups.m
    if R.shape != (m, m) or r.shape != (m,):
        raise ValueError("statistics do not match the group structure")
    if rows is not None:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != m:
            raise ValueError("design rows do not match the group structure")
    if lam == 0:
        beta = np.linalg.lstsq(R, r, rcond=None)[0]
        return LassoState(R, r, beta, 0.0, groups, n, rows=rows)

    beta = np.zeros(m) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    kscale = _kkt_scale(r, lam)
    if m > WORKING_SET_MIN_M:
        beta, total = _solve_working_set(R, rows, r, lam, groups, tol, max_iter, beta, kscale)
    else:
        beta, total = _solve_core(R, rows, r, lam, groups, tol, max_iter, beta, kscale)
    return LassoState(R, r, beta, float(lam), groups, n, total, rows)


# problems with more coefficients than this are solved on a working set of groups
WORKING_SET_MIN_M = 256
# tolerance of the subproblems solved while the working set grows
WORKING_SET_LOOSE_TOL = 1e-3
# at most this many violating groups enter the working set per pass
WORKING_SET_BATCH = 8


def _worst(norms, candidates, lam, tol) -> set:
    """The (at most ``WORKING_SET_BATCH``) candidate groups violating ``norm <= lam`` the most."""
    idx = np.flatnonzero(candidates & (norms > lam * (1.0 + tol)))
    idx = idx[np.argsort(-norms[idx], kind="stable")[:WORKING_SET_BATCH]]
    return set(idx.tolist())


def _solve_core(R, rows, r, lam, groups, tol, max_iter, beta, kscale):
    """Proximal gradient plus polish on the full problem; returns ``(beta, iterations)``."""
    abs_tol = tol * kscale
    L = _lipschitz(R, rows)
    if L == 0.0:
        return np.zeros(groups.m), 0
    total = 0
    inner_tol = 1e-4 * kscale  # loose: enough to see the structure
    budget = 200
    while total < max_iter:
        beta, it, res, L = _fista(R, rows, r, lam, groups, beta, inner_tol, budget, L)
        total += it
        exact = _polish(R, r, lam, groups, beta, tol, rows, kscale)
        if exact is not None:
            return exact, total
        if res <= abs_tol and kkt_report(R, r, beta, lam, groups).ok(tol * 10, kscale):
            return beta, total
        # first reach the acceptance level itself, then tighten gradually
        if inner_tol > abs_tol:
            inner_tol = max(inner_tol * 1e-2, abs_tol)
        else:
            inner_tol = max(inner_tol * 0.1, abs_tol * 1e-3)
        budget = min(budget * 2, max_iter - total)
    rep = kkt_report(R, r, beta, lam, groups)
    raise NonConvergenceError("group Lasso did not converge", max(rep.stationarity, rep.dual_ratio - 1))


def _subproblem(groups: GroupStructure, members) -> tuple[np.ndarray, GroupStructure]:
    cols = groups.columns(members)
    pos = np.full(groups.m, -1)
    pos[cols] = np.arange(cols.size)
    sub = GroupStructure(tuple(tuple(int(pos[i]) for i in groups.groups[j]) for j in members))
    return cols, sub


def _solve_working_set(R, rows, r, lam, groups, tol, max_iter, beta, kscale):
    """Solve on a growing set of groups until the full KKT conditions hold.

    Groups outside the working set are held at zero, which is optimal for them
    exactly when their residual l1 norm stays within ``lam``.  The set starts
    with the active groups of ``beta`` and grows by the worst violators of
    each pass.
    """
    def residual_norms(b):
        g = r - (rows.T @ (rows @ b) if rows is not None else R @ b)
        return _group_sum(np.abs(g), groups)

    norms = residual_norms(beta)
    live = _group_max(np.abs(beta), groups) > 0
    work = set(np.flatnonzero(live).tolist()) | _worst(norms, ~live, lam, tol)
    total = 0
    # while the set is still growing, subproblems are solved loosely
    loose = max(tol, WORKING_SET_LOOSE_TOL)
    current = loose
    while True:
        if not work:
            return np.zeros(groups.m), total
        members = sorted(work)
        cols, sub = _subproblem(groups, members)
        sub_rows = rows[:, cols] if rows is not None else None
        sub_R = R[np.ix_(cols, cols)]
        sol, it = _solve_core(sub_R, sub_rows, r[cols], lam, sub, current, max_iter - total, beta[cols], kscale)
        total += it
        beta = np.zeros(groups.m)
        beta[cols] = sol
        norms = residual_norms(beta)
        outside = np.ones(groups.p, dtype=bool)
        outside[members] = False
        entering = _worst(norms, outside, lam, tol)
        if not entering:
            if current == tol:
                return beta, total
            current = tol
            continue
        if total >= max_iter:
            raise NonConvergenceError("group Lasso did not converge", float(np.max(norms[outside]) / lam - 1))
        work |= entering


def recursive_update(
    state: LassoState,
    x_new,
    y_new: float,
    lambda_next: float,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> LassoState:
    """Add one observation and move to the minimizer at the new weight ``lambda_next``.

    The previous active structure is tried first on the new statistics, which
    is exact whenever no group or max-set transition happened.  Otherwise the
    solver restarts from the previous minimizer.
    """
    x = np.asarray(x_new, dtype=float)
    R = state.R + np.outer(x, x)
    r = state.r + x * float(y_new)
    groups = state.groups
    lam = float(lambda_next)
    n = state.n + 1
    rows = None
    if state.rows is not None and 2 * n < groups.m:
        rows = np.vstack([state.rows, x[None, :]])
    if lam > 0 and np.any(state.beta_hat != 0):
        part = partition(state.beta_hat, groups, rtol=TIE_RTOL)
        signs = {j: np.sign(state.beta_hat[list(part.A[j])]) for j in part.P}
        cand = _structured_solve(R, r, lam, groups, part, signs, near=state.beta_hat, rows=rows)
        if cand is not None and kkt_report(R, r, cand, lam, groups).ok(tol, _kkt_scale(r, lam)):
            return LassoState(R, r, cand, lam, groups, n, rows=rows)
    return solve_batch(R, r, lam, groups, tol=tol, max_iter=max_iter, beta0=state.beta_hat, n=n, rows=rows)


def eigen_truncate(matrix, c_min: float, c_max: float) -> np.ndarray:
    """Clamp the eigenvalues of a symmetric matrix into ``[c_min, c_max]``."""
    if c_min > c_max:
        raise ValueError("c_min must not exceed c_max")
    a = np.asarray(matrix, dtype=float)
    a = 0.5 * (a + a.T)
    w, V = np.linalg.eigh(a)
    out = (V * np.clip(w, c_min, c_max)) @ V.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sampling covariance of the Lasso estimate on its support.

    ``precision_factor`` is an ``|S| x k`` matrix ``L`` with ``L L' `` equal to
    the estimate's precision.  It stays finite when the support Gram matrix is
    singular (the data then carry no information along its null space), which
    is why the belief update consumes ``L`` rather than ``sigma_hat``.
    ``sigma_hat`` is the covariance itself, or its pseudo-inverse restricted to
    the identifiable subspace when the precision is rank deficient.
    """

    sigma_hat: np.ndarray
    support: np.ndarray
    sample_count: int
    precision_factor: Optional[np.ndarray] = None

    @property
    def full_rank(self) -> bool:
        return self.precision_factor is None or self.precision_factor.shape[1] == self.support.size


_RANK_RTOL = 1e-10


def _precision_factor(R_S: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """``L`` with ``L L' = R_S inner^+ R_S`` for symmetric PSD ``inner``."""
    if not (np.all(np.isfinite(R_S)) and np.all(np.isfinite(inner))):
        raise FloatingPointError("non-finite Lasso statistics")
    w, V = np.linalg.eigh(0.5 * (inner + inner.T))
    keep = w > _RANK_RTOL * max(float(w[-1]), 0.0)
    half = R_S @ (V[:, keep] / np.sqrt(w[keep]))
    precision = half @ half.T
    # re-factor so that directions of negligible precision are dropped
    w, V = np.linalg.eigh(0.5 * (precision + precision.T))
    keep = w > _RANK_RTOL * max(float(w[-1]), 0.0)
    return V[:, keep] * np.sqrt(w[keep])


def estimate_covariance(
    state: LassoState,
    belief: SparseBeliefState,
    noise_var: float,
    lambda_next: float,
    n_samples: int = 500,
    c_min: float = 0.01,
    c_max: float = 100.0,
    rng_seed=0,
) -> CovarianceEstimate:
    """Sampled covariance of the Lasso estimate on its support.

    ``M sigma^2 + lam^2 M Cov(z) M`` with ``M`` the inverse support Gram matrix
    and ``Cov(z)`` the eigen-clamped sample covariance of subgradients at draws
    from the current belief.  Equivalently the precision is
    ``R_S (sigma^2 R_S + lam^2 Cov(z))^-1 R_S``, which is what is factored.
    """
    if not 0 < c_min <= c_max:
        raise ValueError("need 0 < c_min <= c_max")
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    active = state.active_groups
    S = state.groups.columns(active)
    if S.size == 0:
        raise ValueError("empty Lasso support")
    R_S = 0.5 * (state.R[np.ix_(S, S)] + state.R[np.ix_(S, S)].T)
    inner = float(noise_var) * R_S
    if lambda_next != 0:
        rng = np.random.default_rng(rng_seed)
        draws = rng.multivariate_normal(
            belief.vartheta[S], belief.sigma_vartheta[np.ix_(S, S)], size=n_samples, method="eigh"
        )
        pos = {int(k): i for i, k in enumerate(S)}
        sub_groups = GroupStructure(
            tuple(tuple(pos[k] for k in state.groups.groups[j]) for j in active)
        )
        z = _subgradients_batch(draws, sub_groups)
        cov_z = np.atleast_2d(np.cov(z, rowvar=False))
        cov_z = eigen_truncate(cov_z, c_min, c_max)
        inner = inner + float(lambda_next) ** 2 * cov_z
    L = _precision_factor(R_S, inner)
    if L.shape[1] == S.size:
        sigma_hat = np.linalg.inv(L @ L.T)
    else:
        sigma_hat = np.linalg.pinv(L @ L.T, hermitian=True)
    return CovarianceEstimate(0.5 * (sigma_hat + sigma_hat.T), S, int(n_samples), L)
