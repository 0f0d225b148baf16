"""Donsker-Varadhan mutual-information estimation between features and groups."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .models import features, mine_input
from .numeric import ParameterSet, backward_mlp, forward_mlp, sgd_step


class EstimationError(ValueError):
    pass


class MarginalRule(str, enum.Enum):
    UNIFORM = "uniform-random"
    PERMUTE = "permute"


@dataclass
class MiBatch:
    z: np.ndarray
    g: np.ndarray
    g_bar: np.ndarray

    def __post_init__(self) -> None:
        self.g = np.asarray(self.g, dtype=np.int64)
        self.g_bar = np.asarray(self.g_bar, dtype=np.int64)
        if not (len(self.z) == len(self.g) == len(self.g_bar)):
            raise EstimationError("z, g and g_bar must have equal row counts")


def draw_marginal(
    g: np.ndarray,
    rule: MarginalRule | str,
    num_groups: int,
    rng: np.random.Generator | int,
) -> np.ndarray:
    """Groups paired with features as if drawn from the product of marginals."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    g = np.asarray(g, dtype=np.int64)
    if MarginalRule(rule) is MarginalRule.PERMUTE:
        return g[rng.permutation(len(g))]
    return rng.integers(0, num_groups, size=len(g))


def _log_mean_exp(t: np.ndarray) -> tuple[float, np.ndarray]:
    """``log(mean(exp(t)))`` with max-shift, plus its gradient (softmax weights)."""
    top = t.max()
    e = np.exp(t - top)
    s = e.sum()
    return float(top + math.log(s / len(t))), e / s


def mine_objective(
    psi: ParameterSet, batch: MiBatch, num_groups: int
) -> tuple[float, ParameterSet, np.ndarray]:
    """DV value ``mean T(z,g) - log mean exp T(z,g_bar)`` with gradients w.r.t. psi and z."""
    n = len(batch.g)
    if n == 0:
        raise EstimationError("empty batch")
    cache_j, t_joint = forward_mlp(psi, mine_input(batch.z, batch.g, num_groups))
    cache_m, t_marg = forward_mlp(psi, mine_input(batch.z, batch.g_bar, num_groups))
    lme, weights = _log_mean_exp(t_marg[:, 0])
    value = float(t_joint.mean()) - lme
    grad_j, din_j = backward_mlp(psi, cache_j, np.full((n, 1), 1.0 / n))
    grad_m, din_m = backward_mlp(psi, cache_m, -weights[:, None])
    z_dim = batch.z.shape[1]
    grad_z = din_j[:, :z_dim] + din_m[:, :z_dim]
    return value, grad_j.add_(grad_m), grad_z


def mine_value(psi: ParameterSet, batch: MiBatch, num_groups: int) -> float:
    if len(batch.g) == 0:
        raise EstimationError("empty batch")
    t_joint = forward_mlp(psi, mine_input(batch.z, batch.g, num_groups))[1][:, 0]
    t_marg = forward_mlp(psi, mine_input(batch.z, batch.g_bar, num_groups))[1][:, 0]
    return float(t_joint.mean()) - _log_mean_exp(t_marg)[0]


def fit_mine(
    psi: ParameterSet,
    z: np.ndarray,
    g: np.ndarray,
    num_groups: int,
    steps: int,
    batch_size: int,
    lr: float,
    rule: MarginalRule | str = MarginalRule.UNIFORM,
    rng: np.random.Generator | int = 0,
    momentum: float = 0.0,
) -> ParameterSet:
    """Gradient ascent on the DV value over seeded minibatches of fixed features."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n = len(g)
    if n == 0:
        raise EstimationError("no data to fit the estimator on")
    bs = min(batch_size, n)
    for _ in range(steps):
        idx = rng.choice(n, size=bs, replace=False)
        gb = g[idx]
        batch = MiBatch(z[idx], gb, draw_marginal(gb, rule, num_groups, rng))
        _, grad_psi, _ = mine_objective(psi, batch, num_groups)
        for _, arr in grad_psi.tensors():
            arr *= -1.0
        sgd_step(psi, grad_psi, lr, momentum=momentum)
    return psi


def tune_mine(
    psi: ParameterSet,
    theta: ParameterSet,
    x: np.ndarray,
    g: np.ndarray,
    num_groups: int,
    steps: int,
    batch_size: int,
    lr: float,
    rule: MarginalRule | str = MarginalRule.UNIFORM,
    rng: np.random.Generator | int = 0,
    momentum: float = 0.0,
) -> ParameterSet:
    """Update ``psi`` in place on features of the frozen backbone ``theta``."""
    if steps < 1:
        raise ValueError("tune_mine needs at least one step")
    return fit_mine(psi, features(theta, x), g, num_groups, steps, batch_size, lr, rule, rng, momentum)


def exact_discrete_mi(joint: np.ndarray) -> float:
    """Mutual information (nats) of a joint histogram over (z-bucket, group)."""
    joint = np.asarray(joint, dtype=np.float64)
    if (joint < 0).any() or not joint.sum() > 0:
        raise ValueError("histogram must be non-negative with positive mass")
    p = joint / joint.sum()
    pz = p.sum(axis=1, keepdims=True)
    pg = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float((p[nz] * np.log(p[nz] / (pz @ pg)[nz])).sum())


def sample_discrete_pairs(
    joint: np.ndarray, centers: np.ndarray, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(z, g)`` from a joint table whose z-buckets sit at fixed ``centers``."""
    p = np.asarray(joint, dtype=np.float64)
    p = p / p.sum()
    cell = rng.choice(p.size, size=n, p=p.ravel())
    bucket, g = np.divmod(cell, p.shape[1])
    return centers[bucket].copy(), g.astype(np.int64)
