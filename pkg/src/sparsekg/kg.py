"""Knowledge-gradient values for correlated, linear and sparse linear beliefs.

The central quantity is ``h(a, b) = E[max_i a_i + b_i Z] - max_i a_i`` for a
standard normal ``Z``.  It is computed exactly from the upper envelope of the
lines ``a_i + b_i z``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
SLOPE_TIE = 1e-12


@dataclass(frozen=True)
class SparsityRealization:
    """One on/off pattern of the groups and its prior probability."""

    zeta: np.ndarray
    weight: float


@njit(cache=True)
def _f(z):
    val = _INV_SQRT_2PI * math.exp(-0.5 * z * z) + z * 0.5 * math.erfc(-z / _SQRT2)
    return val if val > 0.0 else 0.0


@njit(cache=True)
def _h_kernel(a, b):
    n = a.shape[0]
    order = np.argsort(b, kind="mergesort")
    sa = a[order]
    sb = b[order]

    # ties in slope: keep only the largest intercept
    keep_a = np.empty(n)
    keep_b = np.empty(n)
    k = 0
    for i in range(n):
        if k > 0 and sb[i] - keep_b[k - 1] < SLOPE_TIE:
            if sa[i] > keep_a[k - 1]:
                keep_a[k - 1] = sa[i]
            continue
        keep_a[k] = sa[i]
        keep_b[k] = sb[i]
        k += 1

    # upper envelope by stack scan; brk[j] is where line j takes over
    st_a = np.empty(k)
    st_b = np.empty(k)
    brk = np.empty(k)
    top = 0
    for i in range(k):
        ai = keep_a[i]
        bi = keep_b[i]
        c = -np.inf
        while top > 0:
            c = (st_a[top - 1] - ai) / (bi - st_b[top - 1])
            if c <= brk[top - 1]:
                top -= 1
                c = -np.inf
            else:
                break
        st_a[top] = ai
        st_b[top] = bi
        brk[top] = c
        top += 1

    total = 0.0
    for i in range(top - 1):
        db = st_b[i + 1] - st_b[i]
        total += db * _f(-abs((st_a[i] - st_a[i + 1]) / db))
    return total


@njit(cache=True)
def _h_columns(a, cov, noise_var):
    # KG value of every alternative x, with b = cov[:, x] / sqrt(noise + cov[x, x])
    m = a.shape[0]
    out = np.zeros(m)
    for x in range(m):
        denom = noise_var + cov[x, x]
        if denom <= 0.0:
            out[x] = np.nan
            continue
        out[x] = _h_kernel(a, cov[:, x] / math.sqrt(denom))
    return out


def f_scalar(z: float) -> float:
    """Return ``phi(z) + z * Phi(z)`` for the standard normal."""
    z = float(z)
    if not math.isfinite(z):
        raise ValueError("z must be finite")
    return float(_f(z))


def compute_h(a, b) -> float:
    """Expected improvement of the pointwise maximum of ``a_i + b_i Z``.

    Parameters
    ----------
    a, b : array_like
        Intercepts and slopes, same nonzero length, all finite.

    Returns
    -------
    float
        ``E[max_i(a_i + b_i Z)] - max_i a_i``, always nonnegative.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("compute_h needs at least one (a, b) pair")
    if a.shape != b.shape:
        raise ValueError("a and b must have equal length")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("a and b must be finite")
    return float(_h_kernel(a, b))


def sigma_tilde(cov_row, cov_diag_xx: float, noise_var: float) -> np.ndarray:
    """Change in the posterior mean vector per unit standardized observation."""
    denom = float(noise_var) + float(cov_diag_xx)
    if not denom > 0.0:
        raise ValueError("noise_var + cov_diag_xx must be positive")
    return np.asarray(cov_row, dtype=float) / math.sqrt(denom)


def kg_values_correlated(theta, sigma, noise_var: float) -> np.ndarray:
    """KG value of every alternative under a correlated normal belief."""
    theta = np.ascontiguousarray(theta, dtype=float)
    sigma = np.ascontiguousarray(sigma, dtype=float)
    vals = _h_columns(theta, sigma, float(noise_var))
    if np.isnan(vals).any():
        raise ValueError("nonpositive sigma-tilde denominator")
    return vals


def kg_values_linear(vartheta, sigma_vartheta, alternatives, noise_var: float) -> np.ndarray:
    """KG values under a linear belief ``mu = X alpha``, ``alpha ~ N(vartheta, Sigma)``."""
    X = np.asarray(alternatives, dtype=float)
    a = X @ np.asarray(vartheta, dtype=float)
    cov = X @ np.asarray(sigma_vartheta, dtype=float) @ X.T
    return kg_values_correlated(a, cov, noise_var)


def _inclusion_probs(beta_counts) -> np.ndarray:
    counts = np.asarray(beta_counts, dtype=float).reshape(-1, 2)
    if np.any(counts < 0) or np.any(counts.sum(axis=1) <= 0) or not np.all(np.isfinite(counts)):
        raise ValueError("Beta counts must be nonnegative with a positive sum")
    return counts[:, 0] / counts.sum(axis=1)


def enumerate_realizations(beta_counts, max_terms: int = 16) -> list[SparsityRealization]:
    """The ``max_terms`` most probable group on/off patterns.

    Best-first search starting from the most likely pattern and flipping the
    least confident groups first. Zero-probability patterns are never returned,
    so fewer than ``max_terms`` may come back when some groups are certain.
    """
    if max_terms < 1:
        raise ValueError("max_terms must be at least 1")
    q = _inclusion_probs(beta_counts)
    p = q.size
    base = q >= 0.5
    hi = np.where(base, q, 1.0 - q)
    lo = 1.0 - hi
    with np.errstate(divide="ignore"):
        log_base = float(np.sum(np.log(hi)))
        log_ratio = np.log(lo) - np.log(hi)  # <= 0; -inf for certain groups

    # candidate flips, least confident first; certain groups never flip
    order = [int(j) for j in np.argsort(-log_ratio, kind="stable") if np.isfinite(log_ratio[j])]
    lr = [float(log_ratio[j]) for j in order]

    out = [SparsityRealization(base.astype(int), math.exp(log_base))]
    heap: list[tuple[float, tuple[int, ...]]] = []
    if order:
        heapq.heappush(heap, (-lr[0], (0,)))
    while heap and len(out) < max_terms:
        neg, subset = heapq.heappop(heap)
        zeta = base.copy()
        zeta[[order[i] for i in subset]] ^= True
        out.append(SparsityRealization(zeta.astype(int), math.exp(log_base - neg)))
        last = subset[-1]
        if last + 1 < len(order):
            heapq.heappush(heap, (neg - lr[last + 1], subset + (last + 1,)))
            heapq.heappush(heap, (neg - lr[last + 1] + lr[last], subset[:-1] + (last + 1,)))
    return out


def _restricted_terms(vartheta, sigma_vartheta, groups, alternatives, realizations):
    for real in realizations:
        cols = groups.columns(np.flatnonzero(real.zeta))
        if cols.size == 0:
            yield real, None, None
            continue
        Xs = alternatives[:, cols]
        a = Xs @ vartheta[cols]
        cov = Xs @ sigma_vartheta[np.ix_(cols, cols)] @ Xs.T
        yield real, np.ascontiguousarray(a), np.ascontiguousarray(cov)


def kg_values_sparse(state, alternatives, noise_var: float, max_terms: int = 16) -> np.ndarray:
    """KG value of every alternative under a sparse (Beta-Bernoulli mixed) belief.

    The value is the probability-weighted sum over the most likely sparsity
    patterns of the ordinary linear-belief KG value restricted to the groups
    switched on in that pattern.  Weights are not renormalized.
    """
    X = np.asarray(alternatives, dtype=float)
    total = np.zeros(X.shape[0])
    reals = enumerate_realizations(state.beta_counts, max_terms)
    for real, a, cov in _restricted_terms(
        state.vartheta, state.sigma_vartheta, state.groups, X, reals
    ):
        if a is None:
            continue  # every line flat: h = 0
        vals = _h_columns(a, cov, float(noise_var))
        if np.isnan(vals).any():
            raise ValueError("nonpositive sigma-tilde denominator for a sparsity realization")
        total += real.weight * vals
    return total


def kg_value_sparse(state, alternatives, x: int, noise_var: float, max_terms: int = 16) -> float:
    """Sparse KG value of the single alternative ``x``."""
    X = np.asarray(alternatives, dtype=float)
    if not 0 <= x < X.shape[0]:
        raise IndexError(f"alternative {x} out of range")
    value = 0.0
    for real, a, cov in _restricted_terms(
        state.vartheta,
        state.sigma_vartheta,
        state.groups,
        X,
        enumerate_realizations(state.beta_counts, max_terms),
    ):
        if a is None:
            continue
        b = sigma_tilde(cov[:, x], cov[x, x], noise_var)
        value += real.weight * compute_h(a, b)
    return value


def argmax_lowest(values) -> int:
    """Index of the maximum, ties resolved toward the lowest index."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("need at least one alternative")
    return int(np.argmax(values))


def kg_argmax(state, alternatives, noise_var: float, max_terms: int = 16) -> int:
    """Alternative with the largest sparse KG value (lowest index on ties)."""
    return argmax_lowest(kg_values_sparse(state, alternatives, noise_var, max_terms))
