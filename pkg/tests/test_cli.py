"""End-to-end command-line behavior: files, exit codes, precedence."""

import csv
import json
import os

import numpy as np
import pytest

from uavd2d import cli
from uavd2d.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_THRESHOLD,
    config_hash,
    load_run_config,
    main,
)
from uavd2d.gnn import GnnConfig, load_params
from uavd2d.scenario import load
from uavd2d.training import DivergenceError, GradCheckReport, evaluate


def write_config(tmp_path, name="cfg.json", **overrides):
    path = tmp_path / name
    path.write_text(json.dumps(overrides))
    return str(path)


def tiny_config(tmp_path, **extra):
    base = {
        "n_train": 3,
        "n_test": 2,
        "train": {"iters": 4, "batch": 2, "eval_every": 2},
    }
    base.update(extra)
    return write_config(tmp_path, **base)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    meta = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    return meta, rows[0], rows[1:]


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "uavd2d" in capsys.readouterr().out


def test_gen_writes_datasets_and_meta(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    ds_train = load(os.path.join(out, "train.jsonl"))
    ds_test = load(os.path.join(out, "test.jsonl"))
    assert len(ds_train.items) == 3
    assert len(ds_test.items) == 2
    # the test set must come from a shifted stream, not repeat the train set
    assert not np.array_equal(ds_train.items[0].du_xy, ds_test.items[0].du_xy)
    meta = json.loads((tmp_path / "run" / "gen_meta.json").read_text())
    assert meta["config_hash"] == config_hash(meta["config"])
    out_text = capsys.readouterr().out
    first, second = out_text.splitlines()[:2]
    assert first.startswith("uavd2d ") and "gen" in first
    announced = json.loads(second)
    assert announced["config"]["n_train"] == 3


def test_gen_is_byte_reproducible(tmp_path):
    cfg = tiny_config(tmp_path)
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["gen", "--config", cfg, "--out", out_a, "--seed", "9"]) == EXIT_OK
    assert main(["gen", "--config", cfg, "--out", out_b, "--seed", "9"]) == EXIT_OK
    for name in ("train.jsonl", "test.jsonl"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b


def test_gen_refuses_overwrite_without_force(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_CONFIG
    assert "--force" in capsys.readouterr().err
    assert main(["gen", "--config", cfg, "--out", out, "--force"]) == EXIT_OK


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, bogus=1)
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    nested = write_config(tmp_path, name="n.json", gen={"n_uavs": 4})
    assert main(["gen", "--config", nested, "--out", str(tmp_path / "y")]) == EXIT_CONFIG
    assert "gen.n_uavs" in capsys.readouterr().err


def test_invalid_configs_exit_2(tmp_path, capsys):
    bad_counts = write_config(tmp_path, name="c1.json", n_train=0)
    assert main(["gen", "--config", bad_counts, "--out", str(tmp_path / "o1")]) == EXIT_CONFIG
    assert "n_train" in capsys.readouterr().err
    notjson = tmp_path / "c2.json"
    notjson.write_text("{")
    assert main(["gen", "--config", str(notjson), "--out", str(tmp_path / "o2")]) == EXIT_CONFIG
    missing = str(tmp_path / "absent.json")
    assert main(["gen", "--config", missing, "--out", str(tmp_path / "o3")]) == EXIT_CONFIG
    bad_value = write_config(tmp_path, name="c3.json", train={"lr": -1.0})
    assert main(["gen", "--config", bad_value, "--out", str(tmp_path / "o4")]) == EXIT_CONFIG


def test_seed_flag_sets_both_seeds():
    cfg = load_run_config(seed=17)
    assert cfg.gen.seed == 17
    assert cfg.train.seed == 17


def test_env_out_dir_and_flag_precedence(tmp_path, monkeypatch):
    cfg = tiny_config(tmp_path)
    env_dir = str(tmp_path / "from_env")
    monkeypatch.setenv("UAVD2D_OUT", env_dir)
    assert main(["gen", "--config", cfg]) == EXIT_OK
    assert os.path.exists(os.path.join(env_dir, "train.jsonl"))
    flag_dir = str(tmp_path / "from_flag")
    assert main(["gen", "--config", cfg, "--out", flag_dir]) == EXIT_OK
    assert os.path.exists(os.path.join(flag_dir, "train.jsonl"))


def test_train_eval_round_trip(tmp_path):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["train", "--config", cfg, "--out", out]) == EXIT_OK

    ckpt = os.path.join(out, "checkpoint.json")
    meta, header, rows = read_csv(tmp_path / "run" / "history.csv")
    assert header == ["iter", "train_loss", "test_sum_rate", "violations", "seconds"]
    assert [int(r[0]) for r in rows] == [0, 2, 4]
    assert meta["config_hash"] == config_hash(meta["config"])

    # the checkpoint reproduces the recorded final test metric exactly
    params = load_params(ckpt)
    ds_test = load(os.path.join(out, "test.jsonl"))
    metrics = evaluate(params, ds_test)
    assert metrics.mean_sum_rate == pytest.approx(float(rows[-1][2]), rel=1e-12)

    assert main(
        ["eval", "--config", cfg, "--out", out, "--scheme", "gnn", "--checkpoint", ckpt]
    ) == EXIT_OK
    _, eheader, erows = read_csv(tmp_path / "run" / "eval_gnn.csv")
    assert eheader[0] == "scenario_id"
    assert [r[0] for r in erows] == ["0", "1", "mean"]
    assert erows[0][1] == "gnn"
    per_rates = [float(r[2]) for r in erows[:-1]]
    assert float(erows[-1][2]) == pytest.approx(float(np.mean(per_rates)), rel=1e-9)
    assert metrics.mean_sum_rate == pytest.approx(float(erows[-1][2]), rel=1e-9)


def test_eval_baseline_schemes(tmp_path):
    cfg = tiny_config(tmp_path, ao={"outer_iters": 3, "inner_steps": 3})
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    for scheme in ("random", "fixed_power", "ao"):
        assert main(["eval", "--config", cfg, "--out", out, "--scheme", scheme]) == EXIT_OK
        _, _, rows = read_csv(tmp_path / "run" / f"eval_{scheme}.csv")
        assert len(rows) == 3  # 2 scenarios + mean
        assert all(r[1] == scheme for r in rows)
        for r in rows[:-1]:
            assert int(r[4]) >= 0  # violations column is an integer count


def test_eval_gnn_requires_checkpoint(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["eval", "--config", cfg, "--out", out, "--scheme", "gnn"]) == EXIT_CONFIG
    assert "checkpoint" in capsys.readouterr().err


def test_eval_oracle_tiny_instance_and_guard(tmp_path, capsys):
    tiny = write_config(
        tmp_path,
        name="tiny.json",
        n_train=1,
        n_test=2,
        gen={"n_uav": 1, "n_du": 1, "n_d2d": 1},
        grid={"pos_resolution": 7, "power_levels": 3},
    )
    out = str(tmp_path / "tiny_run")
    assert main(["gen", "--config", tiny, "--out", out]) == EXIT_OK
    assert main(["eval", "--config", tiny, "--out", out, "--scheme", "oracle"]) == EXIT_OK
    _, _, rows = read_csv(tmp_path / "tiny_run" / "eval_oracle.csv")
    assert len(rows) == 3

    # default-size instances must be refused before enumeration starts
    cfg = tiny_config(tmp_path)
    big_out = str(tmp_path / "big_run")
    assert main(["gen", "--config", cfg, "--out", big_out]) == EXIT_OK
    assert main(["eval", "--config", cfg, "--out", big_out, "--scheme", "oracle"]) == EXIT_CONFIG
    assert "guard" in capsys.readouterr().err


def test_eval_missing_dataset_exits_2(tmp_path):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "nowhere")
    assert main(["eval", "--config", cfg, "--out", out, "--scheme", "random"]) == EXIT_CONFIG


def test_sweep_produces_per_value_rows(tmp_path):
    cfg = write_config(
        tmp_path,
        n_train=2,
        n_test=2,
        train={"iters": 2, "batch": 2, "eval_every": 2},
        ao={"outer_iters": 2, "inner_steps": 2},
    )
    out = str(tmp_path / "sweep")
    assert main(["sweep", "--config", cfg, "--out", out, "--axis", "M", "--values", "1,2"]) == EXIT_OK
    meta, header, rows = read_csv(tmp_path / "sweep" / "sweep_M.csv")
    assert header[0] == "axis" and header[-1] == "config_hash"
    assert [r[0] for r in rows] == ["M", "M"]
    assert [int(r[1]) for r in rows] == [1, 2]
    # per-value seeds shift with the value, and hashes differ per point
    assert [int(r[2]) for r in rows] == [1, 2]
    assert rows[0][-1] != rows[1][-1]
    for r in rows:
        assert all(float(r[i]) >= 0.0 for i in (6, 7, 8, 9, 10, 11))


def test_sweep_rejects_bad_values(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "s")
    assert main(["sweep", "--config", cfg, "--out", out, "--axis", "M", "--values", "2,1"]) == EXIT_CONFIG
    assert "ascending" in capsys.readouterr().err
    assert main(["sweep", "--config", cfg, "--out", out, "--axis", "M", "--values", "x"]) == EXIT_CONFIG
    assert main(["sweep", "--config", cfg, "--out", out, "--axis", "M", "--values", ""]) == EXIT_CONFIG


def test_gradcheck_passes_and_reports(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli, "_GRADCHECK_COORDS", 30)
    cfg = tiny_config(tmp_path)
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path / "g")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "max rel err" in out
    assert "kinks excluded" in out


def test_gradcheck_threshold_exit(tmp_path, monkeypatch):
    def fake_check(*args, **kwargs):
        return GradCheckReport(
            max_rel_err=0.5, n_checked=10, per_block={}, kinks=0, eps=(1e-4,)
        )

    monkeypatch.setattr(cli, "gradient_check", fake_check)
    cfg = tiny_config(tmp_path)
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path / "g")]) == EXIT_THRESHOLD


def test_divergence_maps_to_runtime_exit(tmp_path, monkeypatch, capsys):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK

    def exploding_train(*args, **kwargs):
        raise DivergenceError("batch loss is not finite (nan)")

    monkeypatch.setattr(cli, "train", exploding_train)
    assert main(["train", "--config", cfg, "--out", out]) == EXIT_RUNTIME
    assert "runtime error" in capsys.readouterr().err


def test_corrupt_dataset_is_a_config_error(tmp_path):
    cfg = tiny_config(tmp_path)
    out = str(tmp_path / "run")
    assert main(["gen", "--config", cfg, "--out", out]) == EXIT_OK
    path = os.path.join(out, "test.jsonl")
    lines = open(path).read().splitlines()
    open(path, "w").write("\n".join(lines[:-1]) + "\n")
    assert main(["eval", "--config", cfg, "--out", out, "--scheme", "random"]) == EXIT_CONFIG
