"""Evaluation metrics: accuracies, membership-inference efficacy, fairness
gaps, worst-group accuracy and the average gap against a gold standard."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import GroupedDataset
from .models import ModelCheckpoint, predict_logits
from .numeric import per_example_cross_entropy

GAP_METRICS = ("RA", "UA", "TA", "MIA", "EO", "GA")
ALL_METRICS = GAP_METRICS + ("DP", "EP", "WG")


class MetricError(ValueError):
    pass


def predict(ckpt: ModelCheckpoint, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(predict_logits(ckpt, x), axis=1)


def _pct(hits: np.ndarray) -> float:
    return 100.0 * float(np.mean(hits))


def accuracy_of(pred: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return _pct(pred == y)


def accuracy(ckpt: ModelCheckpoint, ds: GroupedDataset) -> float:
    if len(ds) == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return accuracy_of(predict(ckpt, ds.x), ds.y)


def group_accuracy_of(pred, y, g, groups: Iterable[int]) -> float:
    groups = list(groups)
    if not groups:
        raise MetricError("no forget groups given")
    sel = np.isin(g, groups)
    if not sel.any():
        raise MetricError(f"test set has no examples of groups {groups}")
    return accuracy_of(pred[sel], y[sel])


def group_accuracy(ckpt: ModelCheckpoint, test_ds: GroupedDataset, forget_groups: Iterable[int]) -> float:
    return group_accuracy_of(predict(ckpt, test_ds.x), test_ds.y, test_ds.g, forget_groups)


def worst_group_of(pred, y, g, num_groups: int) -> float:
    accs = []
    for k in range(num_groups):
        sel = g == k
        if not sel.any():
            raise MetricError(f"test set has no examples of group {k}")
        accs.append(accuracy_of(pred[sel], y[sel]))
    return min(accs)


def worst_group(ckpt: ModelCheckpoint, test_ds: GroupedDataset) -> float:
    return worst_group_of(predict(ckpt, test_ds.x), test_ds.y, test_ds.g, test_ds.num_groups)


# -- fairness ---------------------------------------------------------------


def binarize(pred, y, a, target_class: int, protected_attr: int):
    """One-vs-rest reduction: the designated class/attribute become 1, everything else 0."""
    return (
        (np.asarray(pred) == target_class).astype(int),
        (np.asarray(y) == target_class).astype(int),
        (np.asarray(a) == protected_attr).astype(int),
    )


def _positive_rate(pred_bin, mask, cell: str) -> float:
    if not mask.any():
        raise MetricError(f"empty conditioning cell {cell}")
    return float(pred_bin[mask].mean())


def equalized_odds_of(pred_bin, y_bin, a_bin) -> float:
    total = 0.0
    for yv in (0, 1):
        r0 = _positive_rate(pred_bin, (y_bin == yv) & (a_bin == 0), f"(y={yv}, a=0)")
        r1 = _positive_rate(pred_bin, (y_bin == yv) & (a_bin == 1), f"(y={yv}, a=1)")
        total += abs(r0 - r1)
    return 100.0 * total / 2.0


def demographic_parity_of(pred_bin, a_bin) -> float:
    r0 = _positive_rate(pred_bin, a_bin == 0, "(a=0)")
    r1 = _positive_rate(pred_bin, a_bin == 1, "(a=1)")
    return 100.0 * abs(r0 - r1)


def equal_opportunity_of(pred_bin, y_bin, a_bin) -> float:
    r0 = _positive_rate(pred_bin, (y_bin == 1) & (a_bin == 0), "(y=1, a=0)")
    r1 = _positive_rate(pred_bin, (y_bin == 1) & (a_bin == 1), "(y=1, a=1)")
    return 100.0 * abs(r0 - r1)


def equalized_odds(ckpt, test_ds: GroupedDataset, target_class: int = 1, protected_attr: int = 1) -> float:
    return equalized_odds_of(*binarize(predict(ckpt, test_ds.x), test_ds.y, test_ds.a, target_class, protected_attr))


def demographic_parity(ckpt, test_ds: GroupedDataset, target_class: int = 1, protected_attr: int = 1) -> float:
    p, _, a = binarize(predict(ckpt, test_ds.x), test_ds.y, test_ds.a, target_class, protected_attr)
    return demographic_parity_of(p, a)


def equal_opportunity(ckpt, test_ds: GroupedDataset, target_class: int = 1, protected_attr: int = 1) -> float:
    return equal_opportunity_of(*binarize(predict(ckpt, test_ds.x), test_ds.y, test_ds.a, target_class, protected_attr))


# -- membership inference -----------------------------------------------------


def _gini(pos: np.ndarray, tot: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tot > 0, pos / np.maximum(tot, 1), 0.0)
    return 2.0 * p * (1.0 - p)


@dataclass
class _Node:
    threshold: float | None = None
    left: "_Node | None" = None
    right: "_Node | None" = None
    label: int = 0


class MembershipAttack:
    """Depth-2 decision tree on the scalar per-example loss (label 1 = member).

    Splits are ``loss <= t`` with ``t`` taken from the training values, so the
    fitted rule is unchanged by any strictly increasing transform of the losses.
    Ties between equally good splits, and between classes in a leaf, are broken
    with the seeded generator.
    """

    def __init__(self, max_depth: int = 2, seed: int = 0):
        self.max_depth = max_depth
        self.rng = np.random.default_rng(seed)
        self.root: _Node | None = None

    def fit(self, losses: np.ndarray, members: np.ndarray) -> "MembershipAttack":
        losses = np.asarray(losses, dtype=np.float64)
        members = np.asarray(members, dtype=np.int64)
        order = np.argsort(losses, kind="stable")
        self.root = self._grow(losses[order], members[order], self.max_depth)
        return self

    def _leaf(self, labels: np.ndarray) -> _Node:
        pos = int(labels.sum())
        neg = len(labels) - pos
        if pos == neg:
            return _Node(label=int(self.rng.integers(0, 2)))
        return _Node(label=int(pos > neg))

    def _grow(self, x: np.ndarray, labels: np.ndarray, depth: int) -> _Node:
        n = len(x)
        if depth == 0 or n < 2 or labels.min() == labels.max():
            return self._leaf(labels)
        # candidate cut after position i (x sorted), only where the value changes
        cut = np.flatnonzero(x[1:] > x[:-1])
        if cut.size == 0:
            return self._leaf(labels)
        cum = np.cumsum(labels)
        left_n = cut + 1
        left_pos = cum[cut]
        right_n = n - left_n
        right_pos = cum[-1] - left_pos
        impurity = (left_n * _gini(left_pos, left_n) + right_n * _gini(right_pos, right_n)) / n
        best = np.flatnonzero(impurity <= impurity.min() + 1e-15)
        choice = cut[best[self.rng.integers(0, best.size)]] if best.size > 1 else cut[best[0]]
        node = _Node(threshold=float(x[choice]))
        node.left = self._grow(x[: choice + 1], labels[: choice + 1], depth - 1)
        node.right = self._grow(x[choice + 1 :], labels[choice + 1 :], depth - 1)
        return node

    def predict(self, losses: np.ndarray) -> np.ndarray:
        if self.root is None:
            raise MetricError("attack has not been fitted")
        losses = np.asarray(losses, dtype=np.float64)
        out = np.empty(len(losses), dtype=np.int64)
        for i, v in enumerate(losses):
            node = self.root
            while node.threshold is not None:
                node = node.left if v <= node.threshold else node.right
            out[i] = node.label
        return out

    @property
    def thresholds(self) -> list[float]:
        found, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node is not None and node.threshold is not None:
                found.append(node.threshold)
                stack.extend([node.left, node.right])
        return sorted(found)


def example_losses(ckpt: ModelCheckpoint, ds: GroupedDataset) -> np.ndarray:
    return per_example_cross_entropy(predict_logits(ckpt, ds.x), ds.y)


def mia_efficacy_from_losses(
    member_losses: np.ndarray,
    nonmember_losses: np.ndarray,
    forget_losses: np.ndarray,
    seed: int = 0,
    balance: bool = True,
) -> float:
    """Percentage of forget examples the attack labels as non-members (TN / |D_f|)."""
    if min(len(member_losses), len(nonmember_losses), len(forget_losses)) == 0:
        raise MetricError("membership inference needs non-empty member, non-member and forget sets")
    rng = np.random.default_rng(seed)
    member_losses = np.asarray(member_losses)
    if balance and len(member_losses) > len(nonmember_losses):
        keep = np.sort(rng.choice(len(member_losses), size=len(nonmember_losses), replace=False))
        member_losses = member_losses[keep]
    losses = np.concatenate([member_losses, nonmember_losses])
    labels = np.concatenate([np.ones(len(member_losses), int), np.zeros(len(nonmember_losses), int)])
    attack = MembershipAttack(seed=seed).fit(losses, labels)
    predicted_members = attack.predict(forget_losses)
    return 100.0 * float((predicted_members == 0).sum()) / len(forget_losses)


def mia_efficacy(
    ckpt: ModelCheckpoint,
    remaining_ds: GroupedDataset,
    val_ds: GroupedDataset,
    forget_ds: GroupedDataset,
    seed: int = 0,
) -> float:
    return mia_efficacy_from_losses(
        example_losses(ckpt, remaining_ds),
        example_losses(ckpt, val_ds),
        example_losses(ckpt, forget_ds),
        seed,
    )


# -- reports ------------------------------------------------------------------


@dataclass
class MetricsReport:
    method: str
    reweight: bool
    seed: int
    values: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, metric: str) -> float:
        return self.values[metric]


def evaluate(
    ckpt: ModelCheckpoint,
    remaining_ds: GroupedDataset,
    forget_ds: GroupedDataset,
    val_ds: GroupedDataset,
    test_ds: GroupedDataset,
    forget_groups: Sequence[int],
    target_class: int,
    protected_attr: int,
    seed: int = 0,
) -> dict[str, float]:
    """All nine metrics as percentages. UA and MIA are NaN when the forget set is empty."""
    test_pred = predict(ckpt, test_ds.x)
    pb, yb, ab = binarize(test_pred, test_ds.y, test_ds.a, target_class, protected_attr)
    empty_forget = len(forget_ds) == 0
    return {
        "RA": accuracy(ckpt, remaining_ds),
        "UA": math.nan if empty_forget else accuracy(ckpt, forget_ds),
        "TA": accuracy_of(test_pred, test_ds.y),
        "MIA": math.nan if empty_forget else mia_efficacy(ckpt, remaining_ds, val_ds, forget_ds, seed),
        "EO": equalized_odds_of(pb, yb, ab),
        "GA": group_accuracy_of(test_pred, test_ds.y, test_ds.g, forget_groups),
        "DP": demographic_parity_of(pb, ab),
        "EP": equal_opportunity_of(pb, yb, ab),
        "WG": worst_group_of(test_pred, test_ds.y, test_ds.g, test_ds.num_groups),
    }


def _abs_delta(u: float, gold: float) -> float:
    # a metric that is undefined for both models (empty forget set) contributes no gap
    if math.isnan(u) and math.isnan(gold):
        return 0.0
    return abs(u - gold)


def metric_deltas(
    reports: Sequence[MetricsReport], gold: Sequence[MetricsReport], metrics: Sequence[str] = GAP_METRICS
) -> dict[str, float]:
    """Per-metric absolute difference, computed per seed and averaged over seeds."""
    by_seed = {r.seed: r for r in gold}
    seeds = sorted(r.seed for r in reports)
    if seeds != sorted(by_seed) or len(set(seeds)) != len(seeds):
        raise MetricError(f"seed sets differ: {seeds} vs {sorted(by_seed)}")
    return {
        m: float(np.mean([_abs_delta(r.values[m], by_seed[r.seed].values[m]) for r in reports]))
        for m in metrics
    }


def avg_gap_from_deltas(deltas: Iterable[float]) -> float:
    deltas = list(deltas)
    return float(np.mean([100.0 - d for d in deltas]))


def avg_gap(reports: Sequence[MetricsReport], gold: Sequence[MetricsReport]) -> float:
    return avg_gap_from_deltas(metric_deltas(reports, gold).values())


# -- serialization --------------------------------------------------------------

REPORT_COLUMNS = ("method", "reweight", "seed") + ALL_METRICS


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def write_reports_csv(path: str | Path, rows: Sequence[dict], extra_columns: Sequence[str] = ()) -> None:
    columns = list(REPORT_COLUMNS) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def report_row(report: MetricsReport, seed_label=None) -> dict:
    row = {"method": report.method, "reweight": int(report.reweight), "seed": report.seed if seed_label is None else seed_label}
    row.update(report.values)
    return row
