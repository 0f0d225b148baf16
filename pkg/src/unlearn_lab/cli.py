"""Command-line entry point: ``unlearn-lab <command> [options]``.

Every command accepts ``--config FILE`` (see :mod:`unlearn_lab.config`) and
``--set key=value`` overrides. Precedence is file, then flags, then the
``UNLEARN_LAB_SEED`` environment variable for the seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .algorithms import TrainConfig, finetune_config, pretrain
from .config import SEED_ENV, load_config, parse_value, section
from .data import ForgetSpec, SyntheticConfig, generate_synthetic
from .harness import (
    METHODS,
    SCENARIOS,
    TABLE_COLUMNS,
    AblationPlan,
    ExperimentPlan,
    MethodSpec,
    _write_rows,
    ablate,
    default_methods,
    evaluate_checkpoint,
    make_splits,
    multi_group,
    probe_check,
    run_method,
    run_table,
    sweep_ratio,
    write_manifest,
    write_summary_csv,
    write_table_csv,
)
from .models import ModelCheckpoint

logger = logging.getLogger("unlearn_lab")


def _as_list(value: Any) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _pick(cfg: dict[str, Any], cls) -> dict[str, Any]:
    names = _fields(cls)
    out = {k: v for k, v in cfg.items() if k in names}
    if "proportions" in out:
        out["proportions"] = tuple(float(p) for p in _as_list(out["proportions"]))
    return out


def build_plan(cfg: dict[str, Any]) -> ExperimentPlan:
    """Assemble an experiment plan from a flat dotted-key configuration."""
    data_cfg = section(cfg, "data")
    scenario = data_cfg.pop("scenario", "celeba-like")
    if scenario not in SCENARIOS:
        raise SystemExit(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    data = SCENARIOS[scenario](**_pick(data_cfg, SyntheticConfig))

    forget_cfg = section(cfg, "forget")
    groups = [int(g) for g in _as_list(forget_cfg.get("groups", 3))]
    ratios = [float(r) for r in _as_list(forget_cfg.get("ratio", 0.5))]
    if len(ratios) == 1:
        ratios = ratios * len(groups)
    if len(ratios) != len(groups):
        raise SystemExit("forget.ratio needs one value or one per group")
    forget = ForgetSpec(list(zip(groups, ratios)))

    plan_cfg = section(cfg, "plan")
    methods = (
        [MethodSpec.parse(str(m)) for m in _as_list(plan_cfg["methods"])]
        if "methods" in plan_cfg
        else default_methods()
    )
    seeds = [int(s) for s in _as_list(plan_cfg.get("seeds", [0, 1, 2]))]
    if os.environ.get(SEED_ENV):
        seeds = [int(os.environ[SEED_ENV])]
    train = replace(TrainConfig(), **_pick(section(cfg, "train"), TrainConfig))
    ft = replace(finetune_config(), **_pick(section(cfg, "finetune"), TrainConfig))
    return ExperimentPlan(
        data=data,
        forget=forget,
        methods=methods,
        seeds=seeds,
        gold=str(plan_cfg.get("gold", "retrain+rw")),
        train=train,
        finetune=ft,
        miu=section(cfg, "miu"),
        out_dir=cfg.get("out"),
    )


def _collect_config(args: argparse.Namespace) -> dict[str, Any]:
    cfg: dict[str, Any] = load_config(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = parse_value(value)
    if args.scenario:
        cfg["data.scenario"] = args.scenario
    if args.seeds:
        cfg["plan.seeds"] = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "ratio", None) is not None:
        cfg["forget.ratio"] = args.ratio
    if getattr(args, "groups", None):
        cfg["forget.groups"] = [int(g) for g in args.groups.split(",")]
    if getattr(args, "lam", None) is not None:
        cfg["miu.lam"] = args.lam
    cfg["out"] = args.out
    return cfg


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# -- commands -------------------------------------------------------------------


def cmd_generate_data(plan: ExperimentPlan, args) -> None:
    out = Path(plan.out_dir)
    seed = plan.seeds[0]
    for name, ds in zip(("train", "val", "test"), generate_synthetic(replace(plan.data, seed=seed))):
        ds.to_csv(out / f"{name}.csv")
    print(f"wrote train/val/test CSVs for seed {seed} to {out}")


def cmd_pretrain(plan: ExperimentPlan, args) -> None:
    seed = plan.seeds[0]
    splits = make_splits(plan.data, plan.forget, seed)
    ckpt = pretrain(splits.train, replace(plan.train, seed=seed))
    ckpt.config_hash = plan.hash
    path = Path(plan.out_dir) / "pretrained.ckpt"
    ckpt.save(path)
    print(f"saved {path}")


def _original(plan: ExperimentPlan, splits, seed: int, path: str | None) -> ModelCheckpoint:
    if path:
        return ModelCheckpoint.load(path)
    ckpt = pretrain(splits.train, replace(plan.train, seed=seed))
    ckpt.config_hash = plan.hash
    return ckpt


def _single_row(plan, spec: MethodSpec, ckpt: ModelCheckpoint, splits, seed: int) -> dict[str, Any]:
    values = evaluate_checkpoint(ckpt, splits, plan.forget, seed)
    return {"method": spec.key, "reweight": int(spec.reweight), "seed": seed, **values,
            "avg_gap": "", "config_hash": plan.hash}


def cmd_unlearn(plan: ExperimentPlan, args) -> None:
    seed = plan.seeds[0]
    spec = MethodSpec(args.method, args.reweight)
    splits = make_splits(plan.data, plan.forget, seed)
    ckpt_o = _original(plan, splits, seed, args.checkpoint)
    model = run_method(spec, ckpt_o, splits, plan, seed)
    model.config_hash = plan.hash
    out = Path(plan.out_dir)
    model.save(out / "unlearned.ckpt")
    _write_rows(out / "metrics.csv", TABLE_COLUMNS, [_single_row(plan, spec, model, splits, seed)])
    print(f"saved {out / 'unlearned.ckpt'} and {out / 'metrics.csv'}")


def cmd_evaluate(plan: ExperimentPlan, args) -> None:
    seed = plan.seeds[0]
    splits = make_splits(plan.data, plan.forget, seed)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    spec = MethodSpec("pretrain", label=ckpt.role)
    out = Path(plan.out_dir)
    _write_rows(out / "metrics.csv", TABLE_COLUMNS, [_single_row(plan, spec, ckpt, splits, seed)])
    print(f"wrote {out / 'metrics.csv'}")


def cmd_table(plan: ExperimentPlan, args) -> None:
    result = run_table(plan, write=False)
    out = Path(plan.out_dir)
    write_table_csv(out / "metrics.csv", result)
    write_summary_csv(out / "summary.csv", result)
    for spec in plan.methods:
        print(f"{spec.key:14s} avg_gap={result.avg_gaps[spec.key]:.2f}")


def cmd_sweep_ratio(plan: ExperimentPlan, args) -> None:
    results = sweep_ratio(plan, _floats(args.ratios))
    print(f"wrote sweep_ratio.csv for ratios {sorted(results)}")


def cmd_multi_group(plan: ExperimentPlan, args) -> None:
    counts = [int(c) for c in args.counts.split(",")]
    multi_group(plan, counts, ratio=args.ratio if args.ratio is not None else 0.5)
    print(f"wrote multi_group.csv for group counts {counts}")


def cmd_ablate(plan: ExperimentPlan, args) -> None:
    _, rows = ablate(AblationPlan(base=plan, lambdas=tuple(_floats(args.lambdas))))
    for row in rows:
        print(f"{row['row']:24s} UA={row['UA']:.1f} GA={row['GA']:.1f} avg_gap={row['avg_gap']:.2f}")


def cmd_probe_check(plan: ExperimentPlan, args) -> None:
    for seed, res in zip(plan.seeds, probe_check(plan)):
        flag = " (degenerate)" if res.degenerate else ""
        print(f"seed {seed}: probe accuracy {res.before:.1f} -> {res.after:.1f}{flag}")


COMMANDS = {
    "generate-data": cmd_generate_data,
    "pretrain": cmd_pretrain,
    "unlearn": cmd_unlearn,
    "evaluate": cmd_evaluate,
    "table": cmd_table,
    "sweep-ratio": cmd_sweep_ratio,
    "multi-group": cmd_multi_group,
    "ablate": cmd_ablate,
    "probe-check": cmd_probe_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("--scenario", choices=sorted(SCENARIOS))
    common.add_argument("--seeds", help="comma-separated seeds")
    common.add_argument("--groups", help="comma-separated forget groups")
    common.add_argument("--ratio", type=float, help="unlearning ratio for every forget group")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="unlearn-lab", description="Group-robust machine unlearning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="write synthetic train/val/test CSVs")
    sub.add_parser("pretrain", parents=[common], help="train the original model")
    p = sub.add_parser("unlearn", parents=[common], help="run one unlearning method")
    p.add_argument("--method", required=True, choices=[m for m in METHODS if m != "pretrain"])
    p.add_argument("--reweight", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, help="MIU calibration weight")
    p.add_argument("--checkpoint", help="original model; pretrained on the fly when omitted")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    sub.add_parser("table", parents=[common], help="all methods x seeds with deltas and avg_gap")
    p = sub.add_parser("sweep-ratio", parents=[common], help="repeat the table across unlearning ratios")
    p.add_argument("--ratios", default="0.1,0.5,0.9")
    p = sub.add_parser("multi-group", parents=[common], help="forget from several groups at once")
    p.add_argument("--counts", default="1,9,25")
    p = sub.add_parser("ablate", parents=[common], help="MIU term and lambda ablation")
    p.add_argument("--lambdas", default="0,1,5,10")
    sub.add_parser("probe-check", parents=[common], help="group-probe accuracy before/after forget passes")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    plan = build_plan(_collect_config(args))
    Path(plan.out_dir).mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    COMMANDS[args.command](plan, args)
    write_manifest(plan.out_dir, plan.hash, started, {"command": args.command, "argv": list(argv or sys.argv[1:])})
    return 0


if __name__ == "__main__":
    sys.exit(main())
