"""Synthetic grouped datasets, forget-set construction and group reweighting."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ROLES = ("train", "val", "test", "remaining", "forget")


class ConfigError(ValueError):
    pass


class ForgetSpecError(ValueError):
    pass


class DistributionError(ValueError):
    pass


class LabeledExample(NamedTuple):
    x: np.ndarray
    y: int
    a: int
    g: int


def group_index(y, a, num_attrs: int):
    """Encode ``(y, a)`` as ``y * |A| + a``."""
    return np.asarray(y) * num_attrs + np.asarray(a)


def decode_group(g, num_attrs: int):
    g = np.asarray(g)
    return g // num_attrs, g % num_attrs


@dataclass
class GroupedDataset:
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    num_classes: int
    num_attrs: int
    role: str = "train"
    ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x.reshape(0, 0) if self.x.size == 0 else self.x.reshape(1, -1)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        n = len(self.y)
        if self.x.shape[0] != n or self.a.shape != (n,):
            raise ValueError(f"inconsistent lengths: x {self.x.shape}, y {self.y.shape}, a {self.a.shape}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if n and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("label out of range")
        if n and (self.a.min() < 0 or self.a.max() >= self.num_attrs):
            raise ValueError("attribute out of range")
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.x[i], int(self.y[i]), int(self.a[i]), int(self.g[i]))

    @property
    def g(self) -> np.ndarray:
        return group_index(self.y, self.a, self.num_attrs)

    @property
    def num_groups(self) -> int:
        return self.num_classes * self.num_attrs

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, index: np.ndarray, role: str | None = None) -> "GroupedDataset":
        index = np.asarray(index, dtype=np.intp)
        return GroupedDataset(
            self.x[index],
            self.y[index],
            self.a[index],
            self.num_classes,
            self.num_attrs,
            role or self.role,
            self.ids[index],
        )

    def equals(self, other: "GroupedDataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and self.num_attrs == other.num_attrs
            and self.x.tobytes() == other.x.tobytes()
            and self.y.tobytes() == other.y.tobytes()
            and self.a.tobytes() == other.a.tobytes()
            and self.ids.tobytes() == other.ids.tobytes()
        )

    def to_csv(self, path: str | Path) -> None:
        d = self.dim
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j}" for j in range(d)] + ["y", "a"])
            for row, y, a in zip(self.x, self.y, self.a):
                writer.writerow([repr(float(v)) for v in row] + [int(y), int(a)])

    @classmethod
    def from_csv(
        cls,
        path: str | Path,
        dim: int,
        num_classes: int,
        num_attrs: int,
        role: str = "train",
    ) -> "GroupedDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            expected = [f"x{j}" for j in range(dim)] + ["y", "a"]
            if header != expected:
                raise ConfigError(f"{path}: header {header[:3]}... does not match d={dim}")
            rows = list(reader)
        x = np.array([[float(v) for v in r[:dim]] for r in rows], dtype=np.float64).reshape(len(rows), dim)
        y = np.array([int(r[dim]) for r in rows], dtype=np.int64)
        a = np.array([int(r[dim + 1]) for r in rows], dtype=np.int64)
        if len(rows) and (y.max() >= num_classes or a.max() >= num_attrs or min(y.min(), a.min()) < 0):
            raise ConfigError(f"{path}: labels exceed |Y|={num_classes} or |A|={num_attrs}")
        return cls(x, y, a, num_classes, num_attrs, role)


@dataclass
class SyntheticConfig:
    num_classes: int = 2
    num_attrs: int = 2
    dim: int = 16
    proportions: Sequence[float] = (0.44, 0.41, 0.14, 0.01)
    sigma: float = 1.0
    spurious: float = 0.6
    class_scale: float = 2.0
    attr_scale: float = 4.0
    n_train: int = 8000
    n_val: int = 1000
    n_test: int = 2000
    seed: int = 0

    def validate(self) -> None:
        props = np.asarray(self.proportions, dtype=np.float64)
        if props.shape != (self.num_classes * self.num_attrs,):
            raise ConfigError(
                f"need {self.num_classes * self.num_attrs} group proportions, got {props.size}"
            )
        if (props < 0).any() or abs(props.sum() - 1.0) > 1e-9:
            raise ConfigError(f"group proportions must be non-negative and sum to 1 (sum={props.sum()!r})")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not 0.0 <= self.spurious <= 1.0:
            raise ConfigError("spurious strength must lie in [0, 1]")


def largest_remainder(proportions: Sequence[float], total: int) -> np.ndarray:
    """Integer counts summing to ``total``; leftover units go to the largest fractional parts."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    remainder = raw - counts
    short = total - int(counts.sum())
    # stable sort: ties go to the lower group index
    order = np.argsort(-remainder, kind="stable")
    counts[order[:short]] += 1
    return counts


def _draw_split(
    config: SyntheticConfig,
    n: int,
    class_means: np.ndarray,
    attr_means: np.ndarray,
    rng: np.random.Generator,
    role: str,
) -> GroupedDataset:
    counts = largest_remainder(config.proportions, n)
    g = np.repeat(np.arange(len(counts)), counts)
    g = g[rng.permutation(n)]
    y, a = decode_group(g, config.num_attrs)
    noise = rng.normal(0.0, config.sigma, size=(n, config.dim))
    x = class_means[y] + config.spurious * attr_means[a] + noise
    return GroupedDataset(x, y, a, config.num_classes, config.num_attrs, role)


def generate_synthetic(
    config: SyntheticConfig,
) -> tuple[GroupedDataset, GroupedDataset, GroupedDataset]:
    """Gaussian clusters ``x = mu_class[y] + rho * mu_attr[a] + eps``.

    Mean vectors are random Gaussian directions drawn from the seed, scaled so
    their expected norm is ``class_scale`` / ``attr_scale``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.dim
    class_means = rng.normal(size=(config.num_classes, d)) * config.class_scale / math.sqrt(d)
    attr_means = rng.normal(size=(config.num_attrs, d)) * config.attr_scale / math.sqrt(d)
    train = _draw_split(config, config.n_train, class_means, attr_means, rng, "train")
    val = _draw_split(config, config.n_val, class_means, attr_means, rng, "val")
    test = _draw_split(config, config.n_test, class_means, attr_means, rng, "test")
    return train, val, test


def group_frequencies(ds: GroupedDataset) -> np.ndarray:
    return np.bincount(ds.g, minlength=ds.num_groups).astype(np.int64)


@dataclass
class ForgetSpec:
    entries: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entries = [(int(g), float(r)) for g, r in self.entries]
        groups = [g for g, _ in self.entries]
        if len(set(groups)) != len(groups):
            raise ForgetSpecError(f"duplicate groups in forget spec: {groups}")
        for g, r in self.entries:
            if not 0.0 <= r <= 1.0:
                raise ForgetSpecError(f"ratio {r} for group {g} outside [0, 1]")

    @classmethod
    def single(cls, group: int, ratio: float) -> "ForgetSpec":
        return cls([(group, ratio)])

    @property
    def groups(self) -> list[int]:
        return [g for g, r in self.entries if r > 0]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def split_forget(
    train: GroupedDataset, spec: ForgetSpec, seed: int
) -> tuple[GroupedDataset, GroupedDataset]:
    """Draw ``round(r * nu_tr[g])`` examples of each listed group into the forget set."""
    rng = np.random.default_rng(seed)
    groups = train.g
    counts = group_frequencies(train)
    forget_mask = np.zeros(len(train), dtype=bool)
    for g, r in spec.entries:
        if not 0 <= g < train.num_groups or counts[g] == 0:
            raise ForgetSpecError(f"group {g} is not present in the training set")
        members = np.flatnonzero(groups == g)
        k = round_half_up(r * counts[g])
        chosen = rng.choice(members, size=k, replace=False)
        forget_mask[chosen] = True
    remaining = train.subset(np.flatnonzero(~forget_mask), "remaining")
    forget = train.subset(np.flatnonzero(forget_mask), "forget")
    return remaining, forget


def reweight_alpha(nu_train: np.ndarray, nu_remaining: np.ndarray) -> np.ndarray:
    """Per-group weights ``nu_tr / nu_r``; fully removed groups get weight 0."""
    nu_train = np.asarray(nu_train, dtype=np.float64)
    nu_remaining = np.asarray(nu_remaining, dtype=np.float64)
    if nu_train.shape != nu_remaining.shape:
        raise ValueError("group frequency vectors differ in length")
    alpha = np.zeros_like(nu_train)
    present = nu_remaining > 0
    alpha[present] = nu_train[present] / nu_remaining[present]
    emptied = np.flatnonzero((nu_train > 0) & ~present)
    if emptied.size:
        logger.warning("groups %s fully unlearned; their sampling weight is set to 0", emptied.tolist())
    return alpha


def sampling_distribution(ds: GroupedDataset, alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (ds.num_groups,):
        raise ValueError(f"alpha must have length {ds.num_groups}")
    weights = alpha[ds.g]
    total = weights.sum()
    if not total > 0:
        raise DistributionError("sampling weights are all zero")
    return weights / total


def weighted_batches(
    probabilities: np.ndarray,
    batch_size: int,
    epoch_length: int,
    seed: int | np.random.Generator,
) -> Iterator[np.ndarray]:
    """One epoch of ``epoch_length`` index batches, drawn with replacement."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = np.asarray(probabilities, dtype=np.float64)
    draws = rng.choice(len(p), size=(epoch_length, batch_size), replace=True, p=p)
    yield from draws


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch over a fresh permutation; the last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def batches_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))
