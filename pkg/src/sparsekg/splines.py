"""Normalized B-spline bases, tensor products and additive feature maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .belief import GroupStructure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplineBasis:
    """Order-``order`` B-splines on ``[lo, hi]`` with ``K`` equally spaced interior knots.

    The dimension is ``K + order``; boundary knots are repeated ``order`` times.
    """

    K: int = 4
    order: int = 4
    lo: float = 0.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.K < 0 or self.order < 1:
            raise ValueError("need K >= 0 and order >= 1")
        if not self.hi > self.lo:
            raise ValueError("empty spline domain")
        inner = np.linspace(self.lo, self.hi, self.K + 2)
        t = np.concatenate(
            [np.full(self.order - 1, self.lo), inner, np.full(self.order - 1, self.hi)]
        )
        object.__setattr__(self, "knots", t)

    @property
    def dimension(self) -> int:
        return self.K + self.order

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.K + 2)

    def __call__(self, x) -> np.ndarray:
        return eval_basis(self, x)


def eval_basis(basis: SplineBasis, x) -> np.ndarray:
    """All normalized B-splines at ``x``; shape ``(d,)`` for scalar ``x`` else ``(n, d)``.

    Points outside the domain are clamped to the nearest boundary.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.ndim(x) == 0
    if np.any(xs < basis.lo) or np.any(xs > basis.hi):
        log.warning("clamping %d spline inputs into [%g, %g]",
                    int(np.sum((xs < basis.lo) | (xs > basis.hi))), basis.lo, basis.hi)
        xs = np.clip(xs, basis.lo, basis.hi)

    t = basis.knots
    q = basis.order - 1
    # span i: t[i] <= x < t[i+1] among the K+1 nondegenerate intervals
    span = np.clip(np.searchsorted(t, xs, side="right") - 1, q, q + basis.K)

    n = xs.size
    N = np.zeros((n, q + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, q + 1))
    right = np.zeros((n, q + 1))
    for j in range(1, q + 1):
        left[:, j] = xs - t[span + 1 - j]
        right[:, j] = t[span + j] - xs
        saved = np.zeros(n)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved

    out = np.zeros((n, basis.dimension))
    rows = np.arange(n)[:, None]
    out[rows, span[:, None] - q + np.arange(q + 1)] = N
    return out[0] if scalar else out


def eval_tensor(basis_j: SplineBasis, basis_k: SplineBasis, x_j, x_k) -> np.ndarray:
    """Row-major flattened outer product of the two univariate basis vectors."""
    bj = np.atleast_2d(eval_basis(basis_j, x_j))
    bk = np.atleast_2d(eval_basis(basis_k, x_k))
    out = (bj[:, :, None] * bk[:, None, :]).reshape(bj.shape[0], -1)
    return out[0] if np.ndim(x_j) == 0 else out


@dataclass(frozen=True)
class AdditiveFeatureMap:
    """Spline features of a raw alternative, one group per component function.

    ``main_effects`` lists the variables with a univariate component and
    ``pairs`` the interacting variable pairs with a tensor-product component.
    Components are ordered: main effects first, then pairs.
    """

    bases: tuple[SplineBasis, ...]
    main_effects: tuple[int, ...] = None
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        if self.main_effects is None:
            object.__setattr__(self, "main_effects", tuple(range(len(self.bases))))
        object.__setattr__(self, "main_effects", tuple(int(j) for j in self.main_effects))
        object.__setattr__(self, "pairs", tuple((int(j), int(k)) for j, k in self.pairs))
        p = len(self.bases)
        for j in self.main_effects:
            if not 0 <= j < p:
                raise ValueError(f"main effect {j} out of range")
        for j, k in self.pairs:
            if not (0 <= j < p and 0 <= k < p) or j == k:
                raise ValueError(f"bad interaction pair {(j, k)}")

    @classmethod
    def uniform(cls, domains: Sequence[tuple[float, float]], K: int = 4, order: int = 4,
                main_effects=None, pairs=()) -> "AdditiveFeatureMap":
        return cls(tuple(SplineBasis(K, order, lo, hi) for lo, hi in domains), main_effects, pairs)

    @property
    def n_variables(self) -> int:
        return len(self.bases)

    @property
    def components(self) -> tuple:
        """Component labels: variable index for main effects, pair tuple for interactions."""
        return tuple(self.main_effects) + tuple(self.pairs)

    @property
    def group_sizes(self) -> tuple[int, ...]:
        sizes = [self.bases[j].dimension for j in self.main_effects]
        sizes += [self.bases[j].dimension * self.bases[k].dimension for j, k in self.pairs]
        return tuple(sizes)

    @property
    def dimension(self) -> int:
        return sum(self.group_sizes)

    @property
    def groups(self) -> GroupStructure:
        return GroupStructure.contiguous(self.group_sizes)

    def component_features(self, component: int, x_raw) -> np.ndarray:
        """Basis evaluations of one component at raw points ``(n, n_variables)``."""
        X = np.atleast_2d(np.asarray(x_raw, dtype=float))
        label = self.components[component]
        if isinstance(label, tuple):
            j, k = label
            return eval_tensor(self.bases[j], self.bases[k], X[:, j], X[:, k])
        return eval_basis(self.bases[label], X[:, label])

    def __call__(self, x_raw) -> np.ndarray:
        return map_alternative(self, x_raw)


def map_alternative(fmap: AdditiveFeatureMap, x_raw) -> np.ndarray:
    """Concatenated component features; accepts one point or a ``(n, p)`` array."""
    arr = np.asarray(x_raw, dtype=float)
    single = arr.ndim == 1
    X = np.atleast_2d(arr)
    if X.shape[1] != fmap.n_variables:
        raise ValueError(f"expected {fmap.n_variables} variables, got {X.shape[1]}")
    blocks = [fmap.component_features(c, X) for c in range(len(fmap.components))]
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


def reconstruct_component(fmap: AdditiveFeatureMap, vartheta, component: int, grid) -> np.ndarray:
    """Evaluate one component function from its coefficient block.

    ``grid`` holds points of that component's own variables: a 1-d array for a
    main effect, an ``(n, 2)`` array for an interaction pair.
    """
    if not 0 <= component < len(fmap.components):
        raise IndexError(f"component {component} does not exist")
    vartheta = np.asarray(vartheta, dtype=float)
    block = vartheta[list(fmap.groups.groups[component])]
    label = fmap.components[component]
    if isinstance(label, tuple):
        pts = np.atleast_2d(np.asarray(grid, dtype=float))
        j, k = label
        feats = eval_tensor(fmap.bases[j], fmap.bases[k], pts[:, 0], pts[:, 1])
    else:
        feats = np.atleast_2d(eval_basis(fmap.bases[label], np.atleast_1d(grid)))
    return feats @ block


def least_squares_fit(basis: SplineBasis, x, y) -> np.ndarray:
    """Spline coefficients minimizing the squared error on ``(x, y)``."""
    B = eval_basis(basis, np.asarray(x, dtype=float))
    return np.linalg.lstsq(B, np.asarray(y, dtype=float), rcond=None)[0]
