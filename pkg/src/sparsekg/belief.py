"""Bayesian belief states and their update rules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

JITTER = 1e-10


class SingularPrecisionError(np.linalg.LinAlgError):
    """Raised when a precision sum cannot be inverted even after jitter."""


@dataclass(frozen=True)
class GroupStructure:
    """Disjoint partition of the coefficient indices ``0..m-1`` into groups."""

    groups: tuple[tuple[int, ...], ...]
    _owner: np.ndarray = field(init=False, repr=False, compare=False)
    _order: np.ndarray = field(init=False, repr=False, compare=False)
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if not groups or any(len(g) == 0 for g in groups):
            raise ValueError("groups must be nonempty")
        flat = [i for g in groups for i in g]
        m = len(flat)
        if sorted(flat) != list(range(m)):
            raise ValueError("groups must be a disjoint cover of 0..m-1")
        owner = np.empty(m, dtype=int)
        for j, g in enumerate(groups):
            owner[list(g)] = j
        object.__setattr__(self, "_owner", owner)
        object.__setattr__(self, "_order", np.array(flat, dtype=int))
        object.__setattr__(self, "_starts", np.cumsum([0] + [len(g) for g in groups[:-1]]))

    @classmethod
    def contiguous(cls, sizes: Iterable[int]) -> "GroupStructure":
        groups, start = [], 0
        for d in sizes:
            groups.append(tuple(range(start, start + int(d))))
            start += int(d)
        return cls(tuple(groups))

    @property
    def p(self) -> int:
        return len(self.groups)

    @property
    def m(self) -> int:
        return self._owner.size

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def d_bar(self) -> int:
        return max(self.sizes)

    def owner(self, index: int) -> int:
        return int(self._owner[index])

    def columns(self, group_ids: Iterable[int]) -> np.ndarray:
        """Coefficient indices of the given groups, sorted."""
        cols = [i for j in group_ids for i in self.groups[int(j)]]
        return np.array(sorted(cols), dtype=int)

    def active_groups(self, beta, atol: float = 0.0) -> tuple[int, ...]:
        beta = np.abs(np.asarray(beta, dtype=float))
        tops = np.maximum.reduceat(beta[self._order], self._starts)
        return tuple(np.flatnonzero(tops > atol).tolist())


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)  # always a private copy
    out.flags.writeable = False
    return out


def _frozen_cov(a) -> np.ndarray:
    # stored exactly symmetric, so symmetric rank-one downdates keep it so
    a = np.asarray(a, dtype=float)
    out = 0.5 * (a + a.T)
    out.flags.writeable = False
    return out


def _unchecked(cls, **values):
    """Build a belief whose invariants hold by construction (internal updates only)."""
    obj = object.__new__(cls)
    for name, value in values.items():
        if isinstance(value, np.ndarray) and value.flags.writeable:
            value.flags.writeable = False
        object.__setattr__(obj, name, value)
    return obj


def _check_cov(sigma: np.ndarray, tol: float = 1e-10) -> None:
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("covariance must be square")
    scale = max(1.0, float(np.max(np.abs(sigma))) if sigma.size else 1.0)
    if not np.allclose(sigma, sigma.T, atol=tol * scale, rtol=0.0):
        raise ValueError("covariance must be symmetric")
    if np.any(np.diag(sigma) < -tol * scale):
        raise ValueError("covariance diagonal must be nonnegative")


@dataclass(frozen=True)
class LookupBelief:
    theta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        _check_cov(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "sigma", _frozen_cov(self.sigma))
        if self.sigma.shape[0] != self.theta.size:
            raise ValueError("theta and sigma dimensions differ")


@dataclass(frozen=True)
class LinearBelief:
    """Normal belief on the coefficients of a linear model."""

    vartheta: np.ndarray
    sigma_vartheta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vartheta", _frozen(self.vartheta))
        _check_cov(np.asarray(self.sigma_vartheta, dtype=float))
        object.__setattr__(self, "sigma_vartheta", _frozen_cov(self.sigma_vartheta))
        if self.sigma_vartheta.shape[0] != self.vartheta.size:
            raise ValueError("vartheta and sigma_vartheta dimensions differ")

    def means(self, alternatives) -> np.ndarray:
        return np.asarray(alternatives, dtype=float) @ self.vartheta


@dataclass(frozen=True)
class SparseBeliefState:
    """Belief conditional on every group being switched on, plus Beta counts.

    ``beta_counts[j] = (xi_j, eta_j)``: pseudo-counts of rounds in which group
    ``j`` was inside / outside the estimated support.
    """

    vartheta: np.ndarray
    sigma_vartheta: np.ndarray
    beta_counts: np.ndarray
    groups: GroupStructure

    def __post_init__(self):
        object.__setattr__(self, "vartheta", _frozen(self.vartheta))
        _check_cov(np.asarray(self.sigma_vartheta, dtype=float), tol=1e-8)
        object.__setattr__(self, "sigma_vartheta", _frozen_cov(self.sigma_vartheta))
        counts = _frozen(np.asarray(self.beta_counts, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "beta_counts", counts)
        if self.vartheta.size != self.groups.m or self.sigma_vartheta.shape[0] != self.groups.m:
            raise ValueError("belief dimensions do not match the group structure")
        if counts.shape[0] != self.groups.p:
            raise ValueError("need one (xi, eta) pair per group")
        if np.any(counts < 0) or np.any(counts.sum(axis=1) <= 0):
            raise ValueError("Beta counts must be nonnegative with a positive sum")

    @classmethod
    def prior(
        cls,
        groups: GroupStructure,
        prior_var: float = 100.0**2 / 12.0,
        prior_mean=None,
        xi0: float = 1.0,
        eta0: float = 1.0,
    ) -> "SparseBeliefState":
        m = groups.m
        mean = np.zeros(m) if prior_mean is None else prior_mean
        counts = np.tile([xi0, eta0], (groups.p, 1))
        return cls(mean, prior_var * np.eye(m), counts, groups)

    def inclusion_probs(self) -> np.ndarray:
        return self.beta_counts[:, 0] / self.beta_counts.sum(axis=1)

    def means(self, alternatives) -> np.ndarray:
        """Posterior mean of every alternative, averaging over group inclusion."""
        weights = self.inclusion_probs()[self.groups._owner]
        return np.asarray(alternatives, dtype=float) @ (weights * self.vartheta)

    def map_realization(self) -> np.ndarray:
        """Most probable sparsity pattern: group ``j`` on iff its inclusion probability is at least 1/2."""
        return (self.inclusion_probs() >= 0.5).astype(int)

    def realization_means(self, alternatives, zeta=None) -> np.ndarray:
        """Alternative means ``X_zeta vartheta_zeta`` under one sparsity pattern (default: the most probable)."""
        zeta = self.map_realization() if zeta is None else np.asarray(zeta, dtype=int)
        mask = zeta[self.groups._owner].astype(bool)
        return np.asarray(alternatives, dtype=float)[:, mask] @ self.vartheta[mask]

    def to_json(self) -> str:
        doc = {
            "vartheta": self.vartheta.tolist(),
            "sigma_vartheta": self.sigma_vartheta.tolist(),
            "beta_counts": self.beta_counts.tolist(),
            "groups": [list(g) for g in self.groups.groups],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SparseBeliefState":
        doc = json.loads(text)
        groups = GroupStructure(tuple(tuple(g) for g in doc["groups"]))
        return cls(
            np.array(doc["vartheta"], dtype=float),
            np.array(doc["sigma_vartheta"], dtype=float),
            np.array(doc["beta_counts"], dtype=float),
            groups,
        )


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def lookup_update(belief: LookupBelief, x: int, y: float, noise_var: float) -> LookupBelief:
    """Correlated normal update after observing ``y`` at alternative ``x``."""
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    M = belief.theta.size
    if not 0 <= x < M:
        raise IndexError(f"alternative {x} out of range")
    col = belief.sigma[:, x]
    denom = noise_var + belief.sigma[x, x]
    theta = belief.theta + (y - belief.theta[x]) / denom * col
    scaled = col / np.sqrt(denom)
    sigma = belief.sigma - np.outer(scaled, scaled)
    return _unchecked(LookupBelief, theta=theta, sigma=sigma)


def rls_update(belief: LinearBelief, x_feat, y: float, noise_var: float) -> LinearBelief:
    """Recursive least squares update of a linear belief."""
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    x = np.asarray(x_feat, dtype=float)
    if x.shape != belief.vartheta.shape:
        raise ValueError("feature vector has the wrong dimension")
    sx = belief.sigma_vartheta @ x
    gamma = noise_var + x @ sx
    resid = y - belief.vartheta @ x
    vartheta = belief.vartheta + resid / gamma * sx
    scaled = sx / np.sqrt(gamma)
    sigma = belief.sigma_vartheta - np.outer(scaled, scaled)
    return _unchecked(LinearBelief, vartheta=vartheta, sigma_vartheta=sigma)


def _chol_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix, one jitter retry."""
    a = _symmetrize(np.asarray(a, dtype=float))
    for jitter in (0.0, JITTER * max(1.0, float(np.trace(a)) / a.shape[0])):
        try:
            c = sla.cho_factor(a + jitter * np.eye(a.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
        return _symmetrize(sla.cho_solve(c, np.eye(a.shape[0])))
    raise SingularPrecisionError("matrix is not positive definite even after jitter")


def fuse_posterior(
    state: SparseBeliefState,
    lasso_mean,
    lasso_cov,
    support: Sequence[int],
    precision_factor=None,
) -> SparseBeliefState:
    """Precision-weighted fusion of the belief with a group-Lasso estimate on ``support``.

    On the support block the result is ``[(S_prior)^-1 + (S_lasso)^-1]^-1`` with
    the matching precision-weighted mean.  The Lasso estimate enters as the
    pseudo-measurement ``L' beta_hat = L' beta_S + e`` with ``e ~ N(0, I)`` and
    ``L L'`` the Lasso precision, and the update is a Joseph-form Kalman step.
    That never inverts the Lasso covariance (which can be extremely
    ill-conditioned), accepts a rank-deficient precision through
    ``precision_factor``, and keeps the covariance PSD.  Coordinates outside
    the support move only through their cross-covariance with the block.
    """
    S = np.asarray(support, dtype=int)
    if S.size == 0:
        return state
    lasso_mean = np.asarray(lasso_mean, dtype=float).ravel()
    if lasso_mean.size != S.size:
        raise ValueError("Lasso mean does not match the support size")
    if precision_factor is None:
        lasso_cov = np.asarray(lasso_cov, dtype=float)
        if lasso_cov.shape != (S.size, S.size):
            raise ValueError("Lasso covariance does not match the support size")
        L = np.linalg.cholesky(_chol_inverse(lasso_cov))
    else:
        L = np.asarray(precision_factor, dtype=float)
        if L.ndim != 2 or L.shape[0] != S.size:
            raise ValueError("precision factor does not match the support size")
        if L.shape[1] == 0:
            return state

    sigma = state.sigma_vartheta
    # only coordinates correlated with the support can move
    U = np.flatnonzero(np.any(sigma[:, S] != 0.0, axis=1) | np.isin(np.arange(sigma.shape[0]), S))
    pos = np.searchsorted(U, S)
    sub = sigma[np.ix_(U, U)]
    cols = sub[:, pos] @ L  # Sigma H', with H = L' on the support
    innov = np.eye(L.shape[1]) + L.T @ cols[pos]
    gain = cols @ _chol_inverse(innov)
    vartheta = state.vartheta.copy()
    vartheta[U] += gain @ (L.T @ (lasso_mean - state.vartheta[S]))
    # Joseph form: (I - K H) Sigma (I - K H)' + K K'
    T = sub - gain @ cols.T
    block = T - (T[:, pos] @ L) @ gain.T + gain @ gain.T
    new = sigma.copy()
    new[np.ix_(U, U)] = _symmetrize(block)
    return _unchecked(
        SparseBeliefState,
        vartheta=vartheta,
        sigma_vartheta=new,
        beta_counts=state.beta_counts,
        groups=state.groups,
    )


def beta_bernoulli_update(state: SparseBeliefState, selected_groups: Iterable[int]) -> SparseBeliefState:
    """Count each group as in (``xi += 1``) or out (``eta += 1``) of the support."""
    selected = np.zeros(state.groups.p, dtype=bool)
    sel = list(selected_groups)
    if sel:
        if min(sel) < 0 or max(sel) >= state.groups.p:
            raise IndexError("selected group out of range")
        selected[sel] = True
    counts = state.beta_counts.copy()
    counts[selected, 0] += 1.0
    counts[~selected, 1] += 1.0
    return _unchecked(
        SparseBeliefState,
        vartheta=state.vartheta,
        sigma_vartheta=state.sigma_vartheta,
        beta_counts=counts,
        groups=state.groups,
    )
