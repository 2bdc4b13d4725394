"""Standard low-dimensional minimization benchmarks and the additive truth components."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    """A benchmark to be minimized, with its domain and known global minimum.

    ``pairs`` lists the variable pairs that interact (appear in a cross term).
    """

    __test__ = False  # not a pytest class

    name: str
    dim: int
    domain: tuple[tuple[float, float], ...]
    func: Callable[[np.ndarray], np.ndarray]
    x_opt: tuple[tuple[float, ...], ...]
    f_opt: float
    pairs: tuple[tuple[int, int], ...] = ()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"{self.name} expects {self.dim} variables")
        return self.func(x)


def _matyas(x):
    return 0.26 * (x[..., 0] ** 2 + x[..., 1] ** 2) - 0.48 * x[..., 0] * x[..., 1]


def _trid(x):
    return np.sum((x - 1.0) ** 2, axis=-1) - np.sum(x[..., 1:] * x[..., :-1], axis=-1)


def _bohachevsky(x):
    x1, x2 = x[..., 0], x[..., 1]
    return (
        x1**2 + 2.0 * x2**2 - 0.3 * np.cos(3.0 * np.pi * x1) - 0.4 * np.cos(4.0 * np.pi * x2) + 0.7
    )


def _sixhump(x):
    x1, x2 = x[..., 0], x[..., 1]
    return (4.0 - 2.1 * x1**2 + x1**4 / 3.0) * x1**2 + x1 * x2 + (-4.0 + 4.0 * x2**2) * x2**2


def three_hump_camel(x1, x2):
    return 2.0 * x1**2 - 1.05 * x1**4 + x1**6 / 6.0 + x1 * x2 + x2**2


def _three_hump(x):
    return three_hump_camel(x[..., 0], x[..., 1])


def f3(x):
    return 2.0 * np.sin(2.0 * np.pi * np.asarray(x, dtype=float))


def f4(x):
    return 8.0 * (np.asarray(x, dtype=float) - 0.5) ** 2


def f5(x):
    return 2.0 * np.exp(-3.0 * np.asarray(x, dtype=float))


TEST_FUNCTIONS = {
    "matyas": TestFunction("matyas", 2, ((-10.0, 10.0),) * 2, _matyas, ((0.0, 0.0),), 0.0, ((0, 1),)),
    "trid": TestFunction(
        "trid",
        6,
        ((-36.0, 36.0),) * 6,
        _trid,
        (tuple(float(i * (7 - i)) for i in range(1, 7)),),
        -50.0,
        tuple((i, i + 1) for i in range(5)),
    ),
    "bohachevsky": TestFunction(
        "bohachevsky", 2, ((-100.0, 100.0),) * 2, _bohachevsky, ((0.0, 0.0),), 0.0
    ),
    "sixhump": TestFunction(
        "sixhump",
        2,
        ((-3.0, 3.0), (-2.0, 2.0)),
        _sixhump,
        ((0.0898, -0.7126), (-0.0898, 0.7126)),
        -1.0316284534898774,
        ((0, 1),),
    ),
    "three_hump": TestFunction(
        "three_hump", 2, ((-5.0, 5.0),) * 2, _three_hump, ((0.0, 0.0),), 0.0, ((0, 1),)
    ),
}


def get_test_function(name: str) -> TestFunction:
    try:
        return TEST_FUNCTIONS[name.lower().replace("-", "_")]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(TEST_FUNCTIONS)}") from None


def test_function(name: str, x) -> float:
    """Value of the named benchmark at ``x``."""
    return float(get_test_function(name)(np.asarray(x, dtype=float)))


test_function.__test__ = False


def three_hump_local_maxima() -> np.ndarray:
    """Local maximizers of the negative three-hump camel function."""
    # stationary points satisfy x2 = -x1/2 and x1 (x1^4 - 4.2 x1^2 + 3.5) = 0;
    # the outer pair of nonzero roots are minima of f, the inner pair saddles
    x1 = math.sqrt(2.1 + math.sqrt(2.1**2 - 3.5))
    return np.array([(0.0, 0.0), (x1, -x1 / 2.0), (-x1, x1 / 2.0)])
