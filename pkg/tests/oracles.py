"""Independent reference computations used by the tests.

Nothing here imports the gradient code under test: finite differences only
need a scalar function of a flat parameter vector.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from unlearn_lab.numeric import ParameterSet

FD_STEP = 1e-5


def central_difference(f: Callable[[], float], arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of ``f`` w.r.t. every entry of ``arr`` (mutated in place, then restored)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor): relative where the gradient is sizeable, absolute near zero."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def check_parameter_gradients(f: Callable[[], float], params: ParameterSet, grads: ParameterSet) -> float:
    """Worst relative error over every tensor of ``params``."""
    worst = 0.0
    for (_, p), (_, g) in zip(params.tensors(), grads.tensors()):
        worst = max(worst, max_relative_error(g, central_difference(f, p)))
    return worst


def mean_nll_by_hand(logits: list[list[float]], targets: list[int]) -> float:
    """Cross-entropy written out term by term, no vectorization, no max-shift."""
    total = 0.0
    for row, t in zip(logits, targets):
        denom = sum(math.exp(v) for v in row)
        total += -math.log(math.exp(row[t]) / denom)
    return total / len(targets)


def mi_by_hand(joint: list[list[float]]) -> float:
    """Discrete mutual information from the textbook double sum."""
    total_mass = sum(sum(r) for r in joint)
    p = [[v / total_mass for v in r] for r in joint]
    pz = [sum(r) for r in p]
    pg = [sum(p[i][j] for i in range(len(p))) for j in range(len(p[0]))]
    out = 0.0
    for i, r in enumerate(p):
        for j, v in enumerate(r):
            if v > 0:
                out += v * math.log(v / (pz[i] * pg[j]))
    return out


def separable_points(n: int, seed: int, margin: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian blobs on either side of a hyperplane, at least ``margin`` apart."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.normal(size=(n, 2))
    x[:, 0] = np.abs(x[:, 0]) + margin / 2.0
    x[y == 0, 0] *= -1.0
    return x, y
