"""Experiment orchestration: unlearning tables, ratio sweeps, multi-group
forgetting, ablations and the group-probe check. Emits CSV reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .algorithms import (
    MiuConfig,
    TrainConfig,
    finetune,
    finetune_config,
    group_dro_retrain,
    l1_sparse,
    miu,
    pretrain,
    retrain,
    salun_lite,
    scrub_lite,
)
from .data import (
    ForgetSpec,
    GroupedDataset,
    SyntheticConfig,
    decode_group,
    generate_synthetic,
    group_frequencies,
    reweight_alpha,
    split_forget,
)
from .metrics import (
    ALL_METRICS,
    GAP_METRICS,
    MetricsReport,
    _fmt,
    avg_gap_from_deltas,
    evaluate,
    metric_deltas,
)
from .mine import MarginalRule
from .models import ModelCheckpoint, config_hash, features, init_group_probe
from .numeric import sgd_step, softmax_cross_entropy, forward_mlp, backward_mlp

logger = logging.getLogger(__name__)

METHODS = ("pretrain", "retrain", "gdro", "finetune", "l1sparse", "salun", "scrub", "miu")
EXACT_METHODS = ("pretrain", "retrain", "gdro")


class PlanError(ValueError):
    pass


class RunError(RuntimeError):
    def __init__(self, method: str, seed: int, cause: Exception):
        super().__init__(f"{method} failed for seed {seed}: {cause}")
        self.method = method
        self.seed = seed


# -- scenarios ------------------------------------------------------------------


def celeba_like(**overrides) -> SyntheticConfig:
    """Binary target, binary attribute, a ~1% minority group (index 3)."""
    return replace(SyntheticConfig(), **overrides)


def fairface_like(**overrides) -> SyntheticConfig:
    """Five classes by five attributes with geometrically skewed group sizes."""
    weights = 0.9 ** np.arange(25)
    props = tuple(float(w) for w in weights / weights.sum())
    base = SyntheticConfig(
        num_classes=5, num_attrs=5, proportions=props, n_train=6000, n_val=1000, n_test=3000,
        class_scale=3.0, attr_scale=4.0,
    )
    return replace(base, **overrides)


SCENARIOS = {"celeba-like": celeba_like, "fairface-like": fairface_like}


# -- plans --------------------------------------------------------------------------


@dataclass
class MethodSpec:
    name: str
    reweight: bool = False
    params: dict[str, Any] = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self) -> None:
        if self.name not in METHODS:
            raise PlanError(f"unknown method {self.name!r}; choose from {METHODS}")

    @property
    def key(self) -> str:
        return self.label or (self.name + ("+rw" if self.reweight else ""))

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        name, _, flag = text.strip().partition("+")
        if flag not in ("", "rw"):
            raise PlanError(f"cannot parse method {text!r}")
        return cls(name, flag == "rw")


# Learning rates for the approximate methods, picked by avg_gap from the grid
# {1e-3, 1e-2, 1e-1} on the celeba-like scenario at r=0.5.
METHOD_DEFAULTS: dict[str, dict[str, Any]] = {
    "finetune": {"lr": 0.1},
    "l1sparse": {"lr": 0.1, "gamma": 1e-3},
    "salun": {"lr": 0.01, "prune_fraction": 0.5},
    "scrub": {"lr": 0.1, "stop_epoch": 5, "ce_weight": 0.99, "kl_weight": 0.001},
    "miu": {"lr": 0.01, "forget_lr": 0.1, "lam": 1.0, "forget_epochs": 5},
    "gdro": {"eta": 0.01},
}


@dataclass
class ExperimentPlan:
    data: SyntheticConfig = field(default_factory=celeba_like)
    forget: ForgetSpec = field(default_factory=lambda: ForgetSpec.single(3, 0.5))
    methods: list[MethodSpec] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    gold: str = "retrain+rw"
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=finetune_config)
    miu: dict[str, Any] = field(default_factory=dict)
    out_dir: str | None = None

    def validate(self) -> None:
        if not self.seeds:
            raise PlanError("a plan needs at least one seed")
        keys = [m.key for m in self.methods]
        if len(set(keys)) != len(keys):
            raise PlanError(f"duplicate method entries: {keys}")
        if self.gold not in keys:
            raise PlanError(f"gold standard {self.gold!r} is not one of the plan's methods {keys}")
        self.data.validate()

    def describe(self) -> dict[str, Any]:
        """JSON-friendly description used for hashing (excludes the output directory)."""
        return {
            "data": dataclasses.asdict(self.data),
            "forget": self.forget.entries,
            "methods": [dataclasses.asdict(m) for m in self.methods],
            "seeds": list(self.seeds),
            "gold": self.gold,
            "train": dataclasses.asdict(self.train),
            "finetune": dataclasses.asdict(self.finetune),
            "miu": dict(self.miu),
        }

    @property
    def hash(self) -> str:
        return config_hash(self.describe())


def default_methods() -> list[MethodSpec]:
    specs = [
        MethodSpec("pretrain"), MethodSpec("retrain"), MethodSpec("retrain", True),
        MethodSpec("gdro"), MethodSpec("finetune"),
    ]
    for name in ("l1sparse", "salun", "scrub", "miu"):
        specs += [MethodSpec(name, False), MethodSpec(name, True)]
    return specs


def default_plan(**overrides) -> ExperimentPlan:
    plan = ExperimentPlan(methods=default_methods())
    return replace(plan, **overrides)


# -- single runs ------------------------------------------------------------------


@dataclass
class Splits:
    train: GroupedDataset
    val: GroupedDataset
    test: GroupedDataset
    remaining: GroupedDataset
    forget: GroupedDataset

    @property
    def nu_train(self) -> np.ndarray:
        return group_frequencies(self.train)


def make_splits(data: SyntheticConfig, spec: ForgetSpec, seed: int) -> Splits:
    train, val, test = generate_synthetic(replace(data, seed=seed))
    remaining, forget = split_forget(train, spec, seed)
    return Splits(train, val, test, remaining, forget)


def _params(spec: MethodSpec) -> dict[str, Any]:
    merged = dict(METHOD_DEFAULTS.get(spec.name, {}))
    merged.update(spec.params)
    return merged


def build_miu_config(ft: TrainConfig, params: dict[str, Any], reweight: bool, seed: int) -> MiuConfig:
    cfg_fields = {f.name for f in dataclasses.fields(MiuConfig)} - {"train"}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    train = replace(ft, seed=seed, **{k: v for k, v in params.items() if k in train_fields})
    kwargs = {k: v for k, v in params.items() if k in cfg_fields}
    if "rule" in kwargs:
        kwargs["rule"] = MarginalRule(kwargs["rule"])
    return MiuConfig(train=train, reweight=reweight, **kwargs)


def run_method(
    spec: MethodSpec,
    ckpt_o: ModelCheckpoint,
    splits: Splits,
    plan: ExperimentPlan,
    seed: int,
) -> ModelCheckpoint:
    p = _params(spec)
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    tweaks = {k: v for k, v in p.items() if k in train_fields}
    nu = splits.nu_train
    if spec.name == "pretrain":
        return ckpt_o
    if spec.name in ("retrain", "gdro"):
        cfg = replace(plan.train, seed=seed, **tweaks)
        if spec.name == "gdro":
            return group_dro_retrain(splits.remaining, cfg, eta=p["eta"])
        return retrain(splits.remaining, cfg, spec.reweight, nu)
    ft = replace(plan.finetune, seed=seed, **tweaks)
    if spec.name == "finetune":
        return finetune(ckpt_o, splits.remaining, ft, spec.reweight, nu)
    if spec.name == "l1sparse":
        return l1_sparse(ckpt_o, splits.remaining, p["gamma"], ft, spec.reweight, nu)
    if spec.name == "salun":
        return salun_lite(ckpt_o, splits.remaining, splits.forget, ft, p["prune_fraction"], spec.reweight, nu)
    if spec.name == "scrub":
        return scrub_lite(
            ckpt_o, splits.remaining, splits.forget, ft, p["stop_epoch"],
            p["ce_weight"], p["kl_weight"], spec.reweight, nu,
        )
    if spec.name == "miu":
        params = dict(METHOD_DEFAULTS["miu"])
        params.update(plan.miu)
        params.update(spec.params)
        cfg = build_miu_config(plan.finetune, params, spec.reweight, seed)
        return miu(ckpt_o, splits.train, splits.remaining, splits.forget, cfg, nu)
    raise PlanError(f"unknown method {spec.name}")


def fairness_pair(spec: ForgetSpec, num_attrs: int) -> tuple[int, int]:
    """Target class and protected attribute of the (first) dominant forget group."""
    groups = spec.groups or [g for g, _ in spec.entries]
    y, a = decode_group(groups[0], num_attrs)
    return int(y), int(a)


def evaluate_checkpoint(ckpt: ModelCheckpoint, splits: Splits, spec: ForgetSpec, seed: int) -> dict[str, float]:
    target, attr = fairness_pair(spec, splits.train.num_attrs)
    forget_groups = spec.groups or [g for g, _ in spec.entries]
    return evaluate(
        ckpt, splits.remaining, splits.forget, splits.val, splits.test, forget_groups, target, attr, seed
    )


# -- tables -----------------------------------------------------------------------------


@dataclass
class TableResult:
    plan_hash: str
    reports: dict[str, list[MetricsReport]]
    deltas: dict[str, dict[str, float]]
    avg_gaps: dict[str, float]
    methods: list[MethodSpec]

    def mean(self, key: str, metric: str) -> float:
        return float(np.mean([r.values[metric] for r in self.reports[key]]))

    def median(self, key: str, metric: str) -> float:
        return float(np.median([r.values[metric] for r in self.reports[key]]))

    def per_seed_avg_gap(self, key: str, gold: str) -> list[float]:
        gold_by_seed = {r.seed: r for r in self.reports[gold]}
        return [
            avg_gap_from_deltas(
                abs(r.values[m] - gold_by_seed[r.seed].values[m]) for m in GAP_METRICS
            )
            for r in self.reports[key]
        ]


def run_table(plan: ExperimentPlan, write: bool = True) -> TableResult:
    """Run every method of the plan on every seed and compare against the gold standard."""
    plan.validate()
    phash = plan.hash
    reports: dict[str, list[MetricsReport]] = {m.key: [] for m in plan.methods}
    for seed in plan.seeds:
        splits = make_splits(plan.data, plan.forget, seed)
        ckpt_o = pretrain(splits.train, replace(plan.train, seed=seed))
        ckpt_o.config_hash = phash
        for spec in plan.methods:
            try:
                model = run_method(spec, ckpt_o, splits, plan, seed)
                values = evaluate_checkpoint(model, splits, plan.forget, seed)
            except Exception as exc:  # abort the whole table, naming the failing cell
                raise RunError(spec.key, seed, exc) from exc
            reports[spec.key].append(MetricsReport(spec.key, spec.reweight, seed, values))
            logger.info("seed %d %-12s %s", seed, spec.key, {k: round(v, 1) for k, v in values.items()})
    gold = reports[plan.gold]
    deltas = {key: metric_deltas(reps, gold, ALL_METRICS) for key, reps in reports.items()}
    gaps = {key: avg_gap_from_deltas(deltas[key][m] for m in GAP_METRICS) for key in reports}
    result = TableResult(phash, reports, deltas, gaps, list(plan.methods))
    if write and plan.out_dir:
        out = Path(plan.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table_csv(out / "metrics.csv", result)
        write_summary_csv(out / "summary.csv", result)
    return result


def _method_label(spec: MethodSpec) -> str:
    return spec.label or spec.name


def table_rows(result: TableResult, prefix: dict[str, Any] | None = None) -> list[dict[str, Any]]:
    rows = []
    for spec in result.methods:
        reps = result.reports[spec.key]
        base = dict(prefix or {})
        base.update({"method": _method_label(spec), "reweight": int(spec.reweight)})
        for rep in reps:
            rows.append({**base, "seed": rep.seed, **rep.values, "avg_gap": "", "config_hash": result.plan_hash})
        agg = {m: float(np.mean([r.values[m] for r in reps])) for m in ALL_METRICS}
        rows.append({**base, "seed": "mean", **agg, "avg_gap": result.avg_gaps[spec.key], "config_hash": result.plan_hash})
    return rows


def _write_rows(path: Path, columns: Sequence[str], rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


TABLE_COLUMNS = ("method", "reweight", "seed") + ALL_METRICS + ("avg_gap", "config_hash")
SUMMARY_COLUMNS = ("method", "reweight", "metric", "value", "delta", "avg_gap", "config_hash")


def write_table_csv(path: Path, result: TableResult) -> None:
    _write_rows(path, TABLE_COLUMNS, table_rows(result))


def summary_rows(result: TableResult, prefix: dict[str, Any] | None = None) -> list[dict[str, Any]]:
    rows = []
    for spec in result.methods:
        for m in ALL_METRICS:
            rows.append(
                {
                    **(prefix or {}),
                    "method": _method_label(spec),
                    "reweight": int(spec.reweight),
                    "metric": m,
                    "value": result.mean(spec.key, m),
                    "delta": result.deltas[spec.key][m],
                    "avg_gap": result.avg_gaps[spec.key],
                    "config_hash": result.plan_hash,
                }
            )
    return rows


def write_summary_csv(path: Path, result: TableResult) -> None:
    _write_rows(path, SUMMARY_COLUMNS, summary_rows(result))


def write_manifest(out_dir: str | Path, plan_hash: str, started: float, extra: dict | None = None) -> None:
    manifest = {
        "config_hash": plan_hash,
        "versions": {
            "unlearn_lab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    manifest.update(extra or {})
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- sweeps -------------------------------------------------------------------------------


def _with_ratio(spec: ForgetSpec, ratio: float) -> ForgetSpec:
    return ForgetSpec([(g, ratio) for g, _ in spec.entries])


def sweep_ratio(
    plan: ExperimentPlan, ratios: Sequence[float] = (0.1, 0.5, 0.9)
) -> dict[float, TableResult]:
    results = {}
    rows = []
    for r in ratios:
        sub = replace(plan, forget=_with_ratio(plan.forget, r), out_dir=None)
        results[r] = run_table(sub, write=False)
        rows += table_rows(results[r], {"ratio": r})
    if plan.out_dir:
        Path(plan.out_dir).mkdir(parents=True, exist_ok=True)
        _write_rows(Path(plan.out_dir) / "sweep_ratio.csv", ("ratio",) + TABLE_COLUMNS, rows)
    return results


def choose_groups(num_classes: int, num_attrs: int, count: int, seed: int) -> list[int]:
    """Pick ``count`` groups: all of them, an s-by-s block when count = s*s fits, else a random subset."""
    total = num_classes * num_attrs
    if count < 1 or count > total:
        raise PlanError(f"cannot forget from {count} groups out of {total}")
    if count == total:
        return list(range(total))
    rng = np.random.default_rng(seed)
    s = math.isqrt(count)
    if s * s == count and s <= num_classes and s <= num_attrs and count > 1:
        ys = np.sort(rng.choice(num_classes, size=s, replace=False))
        as_ = np.sort(rng.choice(num_attrs, size=s, replace=False))
        return sorted(int(y * num_attrs + a) for y in ys for a in as_)
    return sorted(int(g) for g in rng.choice(total, size=count, replace=False))


def multi_group_specs(
    plan: ExperimentPlan, group_counts: Sequence[int], ratio: float = 0.5, seed: int = 0
) -> dict[int, ForgetSpec]:
    d = plan.data
    specs = {}
    for k in group_counts:
        if k == 1 and plan.forget.entries:
            specs[k] = _with_ratio(ForgetSpec([plan.forget.entries[0]]), ratio)
            continue
        specs[k] = ForgetSpec([(g, ratio) for g in choose_groups(d.num_classes, d.num_attrs, k, seed)])
    return specs


def multi_group(
    plan: ExperimentPlan, group_counts: Sequence[int] = (1, 9, 25), ratio: float = 0.5
) -> dict[int, TableResult]:
    specs = multi_group_specs(plan, group_counts, ratio)
    results, rows = {}, []
    for k, spec in specs.items():
        results[k] = run_table(replace(plan, forget=spec, out_dir=None), write=False)
        rows += table_rows(results[k], {"groups": k})
    if plan.out_dir:
        Path(plan.out_dir).mkdir(parents=True, exist_ok=True)
        _write_rows(Path(plan.out_dir) / "multi_group.csv", ("groups",) + TABLE_COLUMNS, rows)
    return results


def alpha_spread(train: GroupedDataset, spec: ForgetSpec, seed: int) -> float:
    """max/min of the nonzero reweighting factors produced by a forget spec."""
    remaining, _ = split_forget(train, spec, seed)
    alpha = reweight_alpha(group_frequencies(train), group_frequencies(remaining))
    alpha = alpha[alpha > 0]
    return float(alpha.max() / alpha.min())


# -- ablations ------------------------------------------------------------------------------


@dataclass
class AblationRow:
    retain: bool
    unlearn: bool
    calibration: bool
    reweight: bool
    lam: float = 1.0

    def __post_init__(self) -> None:
        if not (self.retain or self.unlearn or self.calibration):
            raise PlanError("an ablation row needs at least one active term")

    @property
    def label(self) -> str:
        flags = "".join(c if on else "-" for c, on in zip("RUC", (self.retain, self.unlearn, self.calibration)))
        lam = self.lam if self.calibration else 0.0
        return f"miu[{flags}{'W' if self.reweight else '-'}|lam={lam:g}]"

    def method(self) -> MethodSpec:
        params = {
            "retain_term": self.retain,
            "unlearn_term": self.unlearn,
            "lam": self.lam if self.calibration else 0.0,
        }
        return MethodSpec("miu", self.reweight, params, label=self.label)


TERM_ROWS = (
    AblationRow(True, True, False, False),
    AblationRow(True, True, True, False),
    AblationRow(False, True, True, False),
    AblationRow(True, True, True, True),
)


@dataclass
class AblationPlan:
    base: ExperimentPlan = field(default_factory=default_plan)
    rows: Sequence[AblationRow] = TERM_ROWS
    lambdas: Sequence[float] = (0.0, 1.0, 5.0, 10.0)

    def all_rows(self) -> list[AblationRow]:
        rows = list(self.rows)
        for lam in self.lambdas:
            row = AblationRow(True, True, lam > 0, True, lam)
            if row.label not in {r.label for r in rows}:
                rows.append(row)
        return rows


ABLATION_COLUMNS = ("row", "retain", "unlearn", "calibration", "reweight", "lambda", "UA", "GA", "avg_gap", "config_hash")


def ablate(ablation: AblationPlan) -> tuple[TableResult, list[dict[str, Any]]]:
    rows = ablation.all_rows()
    methods = [MethodSpec("retrain", True)] + [r.method() for r in rows]
    plan = replace(ablation.base, methods=methods, gold="retrain+rw", out_dir=None)
    result = run_table(plan, write=False)
    out_rows = []
    for i, row in enumerate(rows):
        key = row.label
        out_rows.append(
            {
                "row": key,
                "retain": int(row.retain),
                "unlearn": int(row.unlearn),
                "calibration": int(row.calibration),
                "reweight": int(row.reweight),
                "lambda": row.lam if row.calibration else 0.0,
                "UA": result.mean(key, "UA"),
                "GA": result.mean(key, "GA"),
                "avg_gap": result.avg_gaps[key],
                "config_hash": result.plan_hash,
            }
        )
    if ablation.base.out_dir:
        Path(ablation.base.out_dir).mkdir(parents=True, exist_ok=True)
        _write_rows(Path(ablation.base.out_dir) / "ablation.csv", ABLATION_COLUMNS, out_rows)
        write_table_csv(Path(ablation.base.out_dir) / "ablation_metrics.csv", result)
    return result, out_rows


# -- group probe -----------------------------------------------------------------------------


@dataclass
class ProbeResult:
    before: float
    after: float
    degenerate: bool = False


def train_group_probe(
    z: np.ndarray, g: np.ndarray, num_groups: int, seed: int, steps: int = 300, lr: float = 0.5
):
    """Fit a linear group classifier on standardized features; returns a predict function."""
    mu = z.mean(axis=0)
    sd = z.std(axis=0) + 1e-8
    zs = (z - mu) / sd
    probe = init_group_probe(z.shape[1], num_groups, np.random.default_rng(seed))
    for _ in range(steps):
        cache, logits = forward_mlp(probe, zs)
        _, dlogits = softmax_cross_entropy(logits, g)
        grads, _ = backward_mlp(probe, cache, dlogits)
        sgd_step(probe, grads, lr, momentum=0.9, weight_decay=1e-4)
    return lambda zq: np.argmax(forward_mlp(probe, (zq - mu) / sd)[1], axis=1)


def probe_accuracy(ckpt: ModelCheckpoint, ds: GroupedDataset, seed: int, holdout: float = 0.5) -> float:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    cut = int(round(len(ds) * (1.0 - holdout)))
    fit_idx, test_idx = order[:cut], order[cut:]
    z = features(ckpt.backbone, ds.x)
    g = ds.g
    predict = train_group_probe(z[fit_idx], g[fit_idx], ds.num_groups, seed)
    return 100.0 * float(np.mean(predict(z[test_idx]) == g[test_idx]))


def probe_validation(
    ckpt_before: ModelCheckpoint,
    ckpt_after: ModelCheckpoint,
    forget_ds: GroupedDataset,
    seed: int = 0,
    probe_seeds: int = 1,
) -> ProbeResult:
    """Group-probe accuracy on forget-set features before and after unlearning."""
    if ckpt_before.z_dim != ckpt_after.z_dim:
        raise PlanError("checkpoints have different feature dimensions")
    if len(np.unique(forget_ds.g)) < 2:
        logger.warning("forget set holds a single group; probe accuracy is trivially 100")
        return ProbeResult(100.0, 100.0, degenerate=True)
    seeds = [seed * 1000 + k for k in range(probe_seeds)]
    before = float(np.mean([probe_accuracy(ckpt_before, forget_ds, s) for s in seeds]))
    after = float(np.mean([probe_accuracy(ckpt_after, forget_ds, s) for s in seeds]))
    return ProbeResult(before, after)


PROBE_COLUMNS = ("seed", "before", "after", "degenerate", "config_hash")

# Forget passes only. The estimator is refreshed with the full step budget every
# epoch; with the lighter budget the backbone outpaces it and merely fools T.
PROBE_MIU = {"retain_term": False, "lam": 0.0, "forget_lr": 0.01, "mine_steps_rest": 100}


def probe_check(
    plan: ExperimentPlan, method: MethodSpec | None = None, write: bool = True
) -> list[ProbeResult]:
    """Pretrain, run MIU forget passes (or ``method``), then probe forget-set features."""
    plan.validate()
    method = method or MethodSpec("miu", False, dict(PROBE_MIU), label="miu-forget")
    started = time.perf_counter()
    results = []
    for seed in plan.seeds:
        splits = make_splits(plan.data, plan.forget, seed)
        ckpt_o = pretrain(splits.train, replace(plan.train, seed=seed))
        after = run_method(method, ckpt_o, splits, plan, seed)
        results.append(probe_validation(ckpt_o, after, splits.forget, seed))
    if write and plan.out_dir:
        out = Path(plan.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [
            {"seed": s, "before": r.before, "after": r.after, "degenerate": r.degenerate, "config_hash": plan.hash}
            for s, r in zip(plan.seeds, results)
        ]
        _write_rows(out / "probe.csv", PROBE_COLUMNS, rows)
        write_manifest(out, plan.hash, started, {"command": "probe-check", "method": method.key})
    return results
