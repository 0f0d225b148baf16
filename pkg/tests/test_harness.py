"""Experiment plans, tables, sweeps, ablations, the group probe and the CLI."""
import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from unlearn_lab.algorithms import TrainConfig, finetune_config, pretrain
from unlearn_lab.cli import _collect_config, build_parser, build_plan, main
from unlearn_lab.config import ConfigSyntaxError, dump_config, parse_config, section
from unlearn_lab.data import ForgetSpec, SyntheticConfig, generate_synthetic, group_frequencies
from unlearn_lab.harness import (
    TABLE_COLUMNS,
    AblationPlan,
    AblationRow,
    ExperimentPlan,
    MethodSpec,
    PlanError,
    RunError,
    alpha_spread,
    choose_groups,
    fairface_like,
    make_splits,
    multi_group_specs,
    probe_validation,
    run_method,
    run_table,
    sweep_ratio,
)
from unlearn_lab.models import ModelCheckpoint, ModelShape, checkpoint_clone
from unlearn_lab.numeric import ParameterSet

TINY = SyntheticConfig(n_train=500, n_val=100, n_test=200, proportions=(0.4, 0.3, 0.2, 0.1))
FAST_MIU = {"forget_epochs": 1, "mine_steps_first": 10, "mine_steps_rest": 2, "mine_hidden": 16}


def tiny_plan(methods=("retrain+rw", "finetune"), seeds=(0,), out_dir=None, **kw) -> ExperimentPlan:
    return ExperimentPlan(
        data=TINY,
        forget=kw.pop("forget", ForgetSpec.single(3, 0.5)),
        methods=[MethodSpec.parse(m) for m in methods],
        seeds=list(seeds),
        gold=kw.pop("gold", "retrain+rw"),
        train=TrainConfig(epochs=2),
        finetune=finetune_config(epochs=5),
        miu=dict(FAST_MIU),
        out_dir=out_dir,
        **kw,
    )


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestPlan:
    def test_method_parsing(self):
        assert MethodSpec.parse("miu+rw").key == "miu+rw"
        assert MethodSpec.parse(" retrain ").reweight is False
        with pytest.raises(PlanError):
            MethodSpec.parse("miu+fast")
        with pytest.raises(PlanError):
            MethodSpec("distill")

    @pytest.mark.parametrize(
        "kwargs",
        [{"seeds": []}, {"gold": "gdro"}, {"methods": [MethodSpec("retrain", True), MethodSpec("retrain", True)]}],
    )
    def test_invalid_plans(self, kwargs):
        with pytest.raises(PlanError):
            replace(tiny_plan(), **kwargs).validate()

    def test_hash_ignores_output_directory(self):
        assert tiny_plan(out_dir="a").hash == tiny_plan(out_dir="b").hash
        assert tiny_plan().hash != tiny_plan(seeds=(1,)).hash

    def test_failure_names_method_and_seed(self):
        plan = tiny_plan(methods=("retrain+rw", "l1sparse"))
        plan.methods[1].params["gamma"] = -1.0
        with pytest.raises(RunError, match=r"l1sparse failed for seed 0"):
            run_table(plan, write=False)


@pytest.fixture(scope="module")
def table(tmp_path_factory):
    out = tmp_path_factory.mktemp("table")
    plan = tiny_plan(seeds=(0, 1, 2), out_dir=str(out))
    return plan, run_table(plan), out


class TestTable:
    def test_row_count(self, table):
        _, _, out = table
        rows = _read(out / "metrics.csv")
        assert len(rows) == 2 * (3 + 1)
        assert [r["seed"] for r in rows[:4]] == ["0", "1", "2", "mean"]
        assert list(rows[0]) == list(TABLE_COLUMNS)

    def test_gold_against_itself(self, table):
        _, result, _ = table
        assert result.avg_gaps["retrain+rw"] == 100.0
        assert all(d == 0.0 for d in result.deltas["retrain+rw"].values())

    def test_every_row_carries_the_hash(self, table):
        plan, _, out = table
        for name in ("metrics.csv", "summary.csv"):
            assert {r["config_hash"] for r in _read(out / name)} == {plan.hash}

    def test_summary_layout(self, table):
        _, result, out = table
        rows = _read(out / "summary.csv")
        assert len(rows) == 2 * 9
        ta = next(r for r in rows if r["method"] == "finetune" and r["metric"] == "TA")
        assert float(ta["value"]) == pytest.approx(result.mean("finetune", "TA"), abs=1e-6)
        assert float(ta["avg_gap"]) == pytest.approx(result.avg_gaps["finetune"], abs=1e-6)

    def test_aggregate_is_the_seed_mean(self, table):
        _, result, out = table
        rows = [r for r in _read(out / "metrics.csv") if r["method"] == "finetune"]
        assert float(rows[-1]["RA"]) == pytest.approx(np.mean([float(r["RA"]) for r in rows[:3]]), abs=1e-6)
        assert float(rows[-1]["avg_gap"]) == pytest.approx(result.avg_gaps["finetune"], abs=1e-6)

    def test_byte_identical_rerun(self, table, tmp_path):
        plan, _, out = table
        run_table(replace(plan, out_dir=str(tmp_path)))
        for name in ("metrics.csv", "summary.csv"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


class TestSweeps:
    def test_sweep_has_one_aggregate_per_ratio_and_method(self, tmp_path):
        plan = tiny_plan(out_dir=str(tmp_path))
        results = sweep_ratio(plan, (0.1, 0.5, 0.9))
        assert sorted(results) == [0.1, 0.5, 0.9]
        rows = _read(tmp_path / "sweep_ratio.csv")
        assert sum(r["seed"] == "mean" for r in rows) == 3 * 2
        assert {float(r["ratio"]) for r in rows} == {0.1, 0.5, 0.9}

    def test_zero_ratio_changes_nothing(self):
        plan = tiny_plan(methods=("pretrain", "retrain"), gold="retrain", forget=ForgetSpec.single(3, 0.0))
        result = run_table(plan, write=False)
        assert all(d == 0.0 for d in result.deltas["pretrain"].values())
        assert math.isnan(result.reports["pretrain"][0].values["UA"])

    def test_choose_groups(self):
        assert choose_groups(5, 5, 25, 0) == list(range(25))
        block = choose_groups(5, 5, 9, 0)
        ys, as_ = {g // 5 for g in block}, {g % 5 for g in block}
        assert len(block) == 9 and len(ys) == 3 and len(as_) == 3
        assert choose_groups(5, 5, 9, 0) == block
        assert len(set(choose_groups(5, 5, 7, 1))) == 7
        for bad in (0, 26):
            with pytest.raises(PlanError):
                choose_groups(5, 5, bad, 0)

    def test_alpha_spread_shrinks_with_more_groups(self):
        data = fairface_like()
        plan = ExperimentPlan(data=data, forget=ForgetSpec.single(0, 0.5), methods=[MethodSpec("retrain", True)])
        train, _, _ = generate_synthetic(data)
        specs = multi_group_specs(plan, (1, 9, 25), 0.5)
        spread = {k: alpha_spread(train, spec, 0) for k, spec in specs.items()}
        assert spread[1] == pytest.approx(2.0, abs=0.01)
        # forgetting half of every group leaves the group shares, and so alpha, nearly flat
        assert spread[25] < 1.05 < spread[1]
        assert spread[9] == pytest.approx(2.0, abs=0.05)


class TestAblation:
    def test_term_rows(self):
        plan = AblationPlan(base=tiny_plan(), lambdas=(0.0, 1.0, 5.0))
        labels = [r.label for r in plan.all_rows()]
        assert labels[:4] == ["miu[RU--|lam=0]", "miu[RUC-|lam=1]", "miu[-UC-|lam=1]", "miu[RUCW|lam=1]"]
        assert labels[4:] == ["miu[RU-W|lam=0]", "miu[RUCW|lam=5]"]

    def test_all_off_row(self):
        with pytest.raises(PlanError):
            AblationRow(False, False, False, True)

    def test_zero_lambda_is_calibration_off(self):
        plan = tiny_plan()
        splits = make_splits(plan.data, plan.forget, 0)
        ckpt_o = pretrain(splits.train, replace(plan.train, seed=0))
        off = AblationRow(True, True, False, True).method()
        zero = AblationRow(True, True, True, True, lam=0.0).method()
        a = run_method(off, ckpt_o, splits, plan, 0)
        b = run_method(zero, ckpt_o, splits, plan, 0)
        assert a.to_bytes() == b.to_bytes()


@pytest.fixture(scope="module")
def model():
    splits = make_splits(TINY, ForgetSpec([(0, 0.2), (1, 0.2), (2, 0.3), (3, 0.5)]), 0)
    return splits, pretrain(splits.train, TrainConfig(epochs=2, seed=0))


class TestProbe:
    def test_single_group_is_degenerate(self, model):
        splits, ckpt = model
        only = splits.forget.subset(np.flatnonzero(splits.forget.g == 3), "forget")
        res = probe_validation(ckpt, ckpt, only)
        assert res.degenerate and res.before == res.after == 100.0

    def test_identical_checkpoints(self, model):
        splits, ckpt = model
        res = probe_validation(ckpt, checkpoint_clone(ckpt), splits.forget, seed=3, probe_seeds=5)
        assert abs(res.before - res.after) <= 1.0

    def test_constant_features_give_the_majority_share(self, model):
        splits, ckpt = model
        shape = ModelShape(in_dim=TINY.dim, z_dim=ckpt.z_dim)
        blank = ModelCheckpoint.init(shape, np.random.default_rng(0))
        blank.backbone = ParameterSet.zeros(blank.backbone.sizes)
        res = probe_validation(ckpt, blank, splits.forget, probe_seeds=3)
        shares = group_frequencies(splits.forget) / len(splits.forget)
        assert res.after <= 100.0 * shares.max() + 10.0
        assert res.before > res.after

    def test_dimension_mismatch(self, model):
        splits, ckpt = model
        other = ModelCheckpoint.init(ModelShape(in_dim=TINY.dim, z_dim=ckpt.z_dim + 1), np.random.default_rng(0))
        with pytest.raises(PlanError):
            probe_validation(ckpt, other, splits.forget)


class TestConfig:
    def test_grammar(self):
        cfg = parse_config(
            "# comment\n"
            "data.n_train = 400   # trailing\n"
            "data.proportions = 0.5, 0.3, 0.15, 0.05\n"
            "plan.methods = retrain+rw, miu\n"
            "miu.retain_term = false\n"
            "data.n_train = 300\n"
        )
        assert cfg["data.n_train"] == 300
        assert cfg["data.proportions"] == [0.5, 0.3, 0.15, 0.05]
        assert cfg["plan.methods"] == ["retrain+rw", "miu"]
        assert section(cfg, "miu") == {"retain_term": False}
        assert parse_config(dump_config(cfg)) == cfg

    @pytest.mark.parametrize("text", ["just words", "= 3", "data..x = 1"])
    def test_syntax_errors(self, text):
        with pytest.raises(ConfigSyntaxError):
            parse_config(text)

    def test_precedence(self, tmp_path, monkeypatch):
        path = tmp_path / "run.cfg"
        path.write_text("plan.seeds = 1, 2\nforget.ratio = 0.3\ntrain.epochs = 4\n")
        monkeypatch.delenv("UNLEARN_LAB_SEED", raising=False)

        def plan_for(*flags):
            args = build_parser().parse_args(["table", "--config", str(path), *flags])
            return build_plan(_collect_config(args))

        plan = plan_for()
        assert plan.seeds == [1, 2] and plan.forget.entries == [(3, 0.3)] and plan.train.epochs == 4
        plan = plan_for("--seeds", "5", "--ratio", "0.9", "--set", "train.epochs=6")
        assert plan.seeds == [5] and plan.forget.entries == [(3, 0.9)] and plan.train.epochs == 6
        monkeypatch.setenv("UNLEARN_LAB_SEED", "11")
        assert plan_for("--seeds", "5").seeds == [11]

    def test_scenario_flag(self, monkeypatch):
        monkeypatch.delenv("UNLEARN_LAB_SEED", raising=False)
        args = build_parser().parse_args(["table", "--scenario", "fairface-like", "--groups", "0,6", "--ratio", "0.2"])
        plan = build_plan(_collect_config(args))
        assert plan.data.num_classes == 5
        assert plan.forget.entries == [(0, 0.2), (6, 0.2)]


class TestCli:
    CONFIG = (
        "data.n_train = 400\ndata.n_val = 100\ndata.n_test = 200\n"
        "data.proportions = 0.4, 0.3, 0.2, 0.1\n"
        "train.epochs = 2\nfinetune.epochs = 3\n"
        "plan.methods = retrain+rw, finetune\nplan.seeds = 0\n"
        "miu.forget_epochs = 1\nmiu.mine_steps_first = 10\nmiu.mine_steps_rest = 2\n"
    )

    @pytest.fixture
    def cfg(self, tmp_path, monkeypatch):
        monkeypatch.delenv("UNLEARN_LAB_SEED", raising=False)
        path = tmp_path / "run.cfg"
        path.write_text(self.CONFIG)
        return str(path)

    def test_generate_data(self, tmp_path, cfg, capsys):
        assert main(["generate-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
        assert sorted(p.name for p in (tmp_path / "d").iterdir()) == ["manifest.json", "test.csv", "train.csv", "val.csv"]
        assert "seed 0" in capsys.readouterr().out

    def test_table_writes_csv_and_manifest(self, tmp_path, cfg):
        out = tmp_path / "t"
        assert main(["table", "--config", cfg, "--out", str(out)]) == 0
        rows = _read(out / "metrics.csv")
        assert len(rows) == 2 * 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_hash"] == rows[0]["config_hash"]
        assert manifest["command"] == "table"
        assert {"unlearn_lab", "numpy", "python"} <= set(manifest["versions"])
        assert manifest["wall_time_s"] >= 0

    def test_pretrain_unlearn_evaluate(self, tmp_path, cfg):
        out = str(tmp_path / "p")
        main(["pretrain", "--config", cfg, "--out", out])
        ckpt = tmp_path / "p" / "pretrained.ckpt"
        assert ModelCheckpoint.load(ckpt).role == "pretrained"
        main(["unlearn", "--config", cfg, "--out", out, "--method", "miu", "--reweight",
              "--lambda", "2", "--checkpoint", str(ckpt)])
        row = _read(tmp_path / "p" / "metrics.csv")[0]
        assert row["method"] == "miu+rw" and row["reweight"] == "1"
        main(["evaluate", "--config", cfg, "--out", out, "--checkpoint", str(ckpt)])
        assert _read(tmp_path / "p" / "metrics.csv")[0]["method"] == "pretrained"

    def test_unknown_method(self, cfg):
        with pytest.raises(SystemExit):
            main(["unlearn", "--config", cfg, "--method", "distill"])
