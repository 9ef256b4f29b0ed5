"""Experiment harness: dataset generation, training, evaluation,
baseline comparison, parameter sweeps, and gradient checking.

Configuration comes from a JSON file selected with --config, overridden
by flags (flags > file > defaults); the UAVD2D_OUT environment variable
overrides the output directory between the two. Unknown keys anywhere in
the file are rejected before any work starts, and the effective
configuration is printed at startup and embedded in every output file.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error,
4 verification threshold exceeded.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, physics
from .baselines import (
    AoConfig,
    AscentError,
    GridConfig,
    GridSizeError,
    GRID_GUARD,
    alternating_optimization,
    fixed_power,
    grid_oracle,
    random_deployment,
)
from .gnn import CheckpointError, GnnConfig, forward, load_params, init_params, save_params
from .scenario import DatasetFormatError, GenConfig, generate, load, save
from .training import (
    DivergenceError,
    TrainConfig,
    evaluate_decisions,
    gradient_check,
    save_history_csv,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_THRESHOLD = 4

_ENV_OUT = "UAVD2D_OUT"
_GRADCHECK_TOL = 1e-4
_GRADCHECK_COORDS = 1000
_GRADCHECK_SCENARIOS = 5

_SCHEMES = ("gnn", "random", "fixed_power", "ao", "oracle")


class ConfigError(ValueError):
    """Bad configuration file, flag, or input file."""


_DEFAULT_CONSTANTS = {
    "beta0_db": -30.0,
    "noise_dbm": -60.0,
    "p_max_uav_dbm": 30.0,
    "p_max_d2d_dbm": 10.0,
    "altitude_m": 10.0,
    "wavelength_m": 0.125,
    "d1_m": 1.0,
    "gamma": 3.0,
    "r_min": 0.2,
}

_DEFAULTS = {
    "experiment": "run",
    "out_dir": "runs/run",
    "n_train": 500,
    "n_test": 200,
    "gen": {
        "seed": 0,
        "n_uav": 4,
        "n_du": 4,
        "n_d2d": 6,
        "area_half": 50.0,
        "d2d_dist_range": [1.0, 5.0],
        "constants": dict(_DEFAULT_CONSTANTS),
    },
    "train": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_adam": 1e-8,
        "alpha": 10.0,
        "iters": 500,
        "batch": 16,
        "seed": 20,
        "eval_every": 10,
    },
    "ao": {
        "outer_iters": 25,
        "inner_steps": 6,
        "step_size_pos": 5.0,
        "step_size_logit": 0.5,
        "tol": 1e-6,
    },
    "grid": {"pos_resolution": 21, "power_levels": 8},
}


@dataclass
class RunConfig:
    experiment: str
    out_dir: str
    n_train: int
    n_test: int
    gen: GenConfig
    train: TrainConfig
    ao: AoConfig
    grid: GridConfig
    raw: dict  # canonical dict form, embedded in outputs


def _merge_strict(base, override, path=""):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a section")
            _merge_strict(base[key], value, path + key + ".")
        else:
            base[key] = value


def _constants_from(raw):
    return physics.PhysConstants.from_db(
        beta0_db=raw["beta0_db"],
        noise_dbm=raw["noise_dbm"],
        p_max_uav_dbm=raw["p_max_uav_dbm"],
        p_max_d2d_dbm=raw["p_max_d2d_dbm"],
        altitude=raw["altitude_m"],
        wavelength=raw["wavelength_m"],
        d1=raw["d1_m"],
        gamma=raw["gamma"],
        r_min=raw["r_min"],
    )


def load_run_config(path=None, seed=None, out=None):
    """Merge defaults, optional file, environment, and flag overrides."""
    raw = json.loads(json.dumps(_DEFAULTS))
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge_strict(raw, file_cfg)
    if os.environ.get(_ENV_OUT):
        raw["out_dir"] = os.environ[_ENV_OUT]
    if out is not None:
        raw["out_dir"] = out
    if seed is not None:
        raw["gen"]["seed"] = seed
        raw["train"]["seed"] = seed
    try:
        gen_raw = dict(raw["gen"])
        constants = _constants_from(gen_raw.pop("constants"))
        gen = GenConfig(constants=constants, **{**gen_raw, "d2d_dist_range": tuple(raw["gen"]["d2d_dist_range"])})
        cfg = RunConfig(
            experiment=str(raw["experiment"]),
            out_dir=str(raw["out_dir"]),
            n_train=int(raw["n_train"]),
            n_test=int(raw["n_test"]),
            gen=gen,
            train=TrainConfig(**raw["train"]),
            ao=AoConfig(**raw["ao"]),
            grid=GridConfig(**raw["grid"]),
            raw=raw,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    if cfg.n_train < 1 or cfg.n_test < 1:
        raise ConfigError("invalid configuration: n_train and n_test must be positive")
    return cfg


def config_hash(raw):
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()[:12]


def _announce(cfg, command):
    print(f"uavd2d {__version__} {command} (config hash {config_hash(cfg.raw)})")
    print(json.dumps({"version": __version__, "config": cfg.raw}))


def _meta(cfg):
    return {"version": __version__, "config_hash": config_hash(cfg.raw), "config": cfg.raw}


def _write_csv(path, header, rows, meta):
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_gen(cfg, force=False):
    os.makedirs(cfg.out_dir, exist_ok=True)
    train_path = os.path.join(cfg.out_dir, "train.jsonl")
    test_path = os.path.join(cfg.out_dir, "test.jsonl")
    for p in (train_path, test_path):
        if os.path.exists(p) and not force:
            raise ConfigError(f"{p} exists; pass --force to overwrite")
    ds_train = generate(cfg.gen, cfg.n_train)
    ds_test = generate(dataclasses.replace(cfg.gen, seed=cfg.gen.seed + 1), cfg.n_test)
    save(ds_train, train_path)
    save(ds_test, test_path)
    with open(os.path.join(cfg.out_dir, "gen_meta.json"), "w") as fh:
        json.dump(_meta(cfg), fh, indent=2)
        fh.write("\n")
    print(f"wrote {train_path} ({cfg.n_train} items), {test_path} ({cfg.n_test} items)")
    return EXIT_OK


def _load_dataset(path):
    try:
        return load(path)
    except OSError as e:
        raise ConfigError(f"cannot read dataset: {e}") from e
    except DatasetFormatError as e:
        raise ConfigError(f"bad dataset {path}: {e}") from e


def _dataset_paths(cfg, train_set, test_set):
    return (
        train_set or os.path.join(cfg.out_dir, "train.jsonl"),
        test_set or os.path.join(cfg.out_dir, "test.jsonl"),
    )


def cmd_train(cfg, train_set=None, test_set=None):
    train_path, test_path = _dataset_paths(cfg, train_set, test_set)
    ds_train = _load_dataset(train_path)
    ds_test = _load_dataset(test_path)
    os.makedirs(cfg.out_dir, exist_ok=True)
    params, history = train(ds_train, ds_test, cfg.train)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.json")
    save_params(params, ckpt_path)
    save_history_csv(history, os.path.join(cfg.out_dir, "history.csv"), _meta(cfg))
    last = history.rows[-1]
    print(
        f"trained {cfg.train.iters} iters: train_loss {last.train_loss:.4f}, "
        f"test sum rate {last.test_sum_rate:.4f}, "
        f"mean violations {last.test_violations:.3f}"
    )
    print(f"wrote {ckpt_path}")
    return EXIT_OK


def _oracle_guard(cfg, n_uav, n_d2d):
    combos = (cfg.grid.pos_resolution ** (2 * n_uav)) * (
        cfg.grid.power_levels ** (n_uav + n_d2d)
    )
    if combos > GRID_GUARD:
        raise ConfigError(
            f"oracle enumeration needs {combos:.3g} combinations, "
            f"above the {GRID_GUARD:.1g} guard; shrink the instance or grid"
        )


def _scheme_decisions(cfg, scheme, ds, checkpoint):
    n_uav = ds.meta.n_uav
    area = ds.meta.area_half
    alpha = cfg.train.alpha
    if scheme == "gnn":
        if checkpoint is None:
            raise ConfigError("scheme gnn needs --checkpoint")
        try:
            params = load_params(checkpoint)
        except OSError as e:
            raise ConfigError(f"cannot read checkpoint: {e}") from e
        except CheckpointError as e:
            raise ConfigError(f"bad checkpoint: {e}") from e
        gcfg = GnnConfig(n_uav=n_uav, area_half=area)
        return [forward(s, params, gcfg) for s in ds.items]
    if scheme == "random":
        return [
            random_deployment(s, cfg.gen.seed + i, n_uav, cfg.ao, area, alpha)
            for i, s in enumerate(ds.items)
        ]
    if scheme == "fixed_power":
        return [fixed_power(s, cfg.ao, n_uav, area, alpha) for s in ds.items]
    if scheme == "ao":
        return [alternating_optimization(s, cfg.ao, n_uav, area, alpha) for s in ds.items]
    if scheme == "oracle":
        _oracle_guard(cfg, n_uav, ds.meta.n_d2d)
        return [grid_oracle(s, cfg.grid, n_uav, area, alpha) for s in ds.items]
    raise ConfigError(f"unknown scheme {scheme!r}")


def cmd_eval(cfg, scheme, checkpoint=None, test_set=None):
    if scheme not in _SCHEMES:
        raise ConfigError(f"scheme must be one of {', '.join(_SCHEMES)}")
    _, test_path = _dataset_paths(cfg, None, test_set)
    ds = _load_dataset(test_path)
    decisions = _scheme_decisions(cfg, scheme, ds, checkpoint)
    rows = []
    sum_rates = []
    for i, (s, d) in enumerate(zip(ds.items, decisions)):
        m = evaluate_decisions(s, d)
        objective = -physics.penalized_loss(s, d, cfg.train.alpha)
        min_rate = "" if not s.n_d2d else f"{m.min_d2d_rate:.10g}"
        rows.append(
            [i, scheme, f"{m.sum_rate:.10g}", min_rate, m.violations, f"{objective:.10g}"]
        )
        sum_rates.append(m.sum_rate)
    rows.append(["mean", scheme, f"{np.mean(sum_rates):.10g}", "", "", ""])
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, f"eval_{scheme}.csv")
    _write_csv(
        out_path,
        ["scenario_id", "scheme", "sum_rate", "min_d2d_rate", "violations", "objective"],
        rows,
        _meta(cfg),
    )
    print(f"{scheme}: mean sum rate {np.mean(sum_rates):.4f} over {len(ds.items)} scenarios")
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_sweep(cfg, axis, values):
    if axis not in ("M", "N"):
        raise ConfigError("axis must be M or N")
    if not values:
        raise ConfigError("--values must list at least one integer")
    if sorted(values) != list(values):
        raise ConfigError("--values must be ascending")
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows = []
    for value in values:
        field = "n_d2d" if axis == "M" else "n_uav"
        gen = dataclasses.replace(cfg.gen, **{field: value, "seed": cfg.gen.seed + value})
        point_raw = json.loads(json.dumps(cfg.raw))
        point_raw["gen"][field] = value
        point_raw["gen"]["seed"] = gen.seed
        ds_train = generate(gen, cfg.n_train)
        ds_test = generate(dataclasses.replace(gen, seed=gen.seed + 1), cfg.n_test)
        params, _ = train(ds_train, ds_test, cfg.train)
        gnn_metrics = _eval_scheme_mean(cfg, "gnn", ds_test, params)
        rand_mean = _eval_scheme_mean(cfg, "random", ds_test, None)
        fixed_mean = _eval_scheme_mean(cfg, "fixed_power", ds_test, None)
        ao_mean = _eval_scheme_mean(cfg, "ao", ds_test, None)
        rows.append(
            [
                axis,
                value,
                gen.seed,
                cfg.n_train,
                cfg.n_test,
                cfg.train.iters,
                f"{gnn_metrics[0]:.10g}",
                f"{gnn_metrics[1]:.10g}",
                f"{gnn_metrics[2]:.10g}",
                f"{rand_mean[0]:.10g}",
                f"{fixed_mean[0]:.10g}",
                f"{ao_mean[0]:.10g}",
                config_hash(point_raw),
            ]
        )
        print(
            f"{axis}={value}: gnn {gnn_metrics[0]:.4f}, random {rand_mean[0]:.4f}, "
            f"fixed {fixed_mean[0]:.4f}, ao {ao_mean[0]:.4f}"
        )
    out_path = os.path.join(cfg.out_dir, f"sweep_{axis}.csv")
    _write_csv(
        out_path,
        [
            "axis",
            "value",
            "seed",
            "n_train",
            "n_test",
            "iters",
            "gnn_sum_rate",
            "gnn_mean_violations",
            "gnn_all_satisfied",
            "random_sum_rate",
            "fixed_power_sum_rate",
            "ao_sum_rate",
            "config_hash",
        ],
        rows,
        _meta(cfg),
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def _eval_scheme_mean(cfg, scheme, ds, params):
    if scheme == "gnn":
        gcfg = GnnConfig(n_uav=ds.meta.n_uav, area_half=ds.meta.area_half)
        decisions = [forward(s, params, gcfg) for s in ds.items]
    else:
        decisions = _scheme_decisions(cfg, scheme, ds, None)
    metrics = [evaluate_decisions(s, d) for s, d in zip(ds.items, decisions)]
    rates = [m.sum_rate for m in metrics]
    violations = [m.violations for m in metrics]
    satisfied = sum(1 for v in violations if v == 0) / len(metrics)
    return (
        float(np.mean(rates)),
        float(np.mean(violations)),
        float(satisfied),
    )


def cmd_gradcheck(cfg):
    scenarios = generate(cfg.gen, _GRADCHECK_SCENARIOS).items
    params = init_params(cfg.train.seed)
    gcfg = GnnConfig(n_uav=cfg.gen.n_uav, area_half=cfg.gen.area_half)
    report = gradient_check(
        params,
        scenarios,
        gcfg,
        alpha=cfg.train.alpha,
        n_coords=_GRADCHECK_COORDS,
        seed=cfg.train.seed,
    )
    for name in sorted(report.per_block):
        info = report.per_block[name]
        print(
            f"block {name}: {info['count']} coords checked, "
            f"max rel err {info['max_rel_err']:.3g}"
        )
    print(
        f"gradcheck: {report.n_checked} coordinates over {len(scenarios)} scenarios, "
        f"max rel err {report.max_rel_err:.3g}, kinks excluded {report.kinks}"
    )
    if report.max_rel_err >= _GRADCHECK_TOL:
        print(f"threshold {_GRADCHECK_TOL:g} exceeded")
        return EXIT_THRESHOLD
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="uavd2d",
        description="Scheduling experiments for aerial broadcast over D2D spectrum",
    )
    parser.add_argument("--version", action="version", version=f"uavd2d {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override gen and train seeds")
        p.add_argument("--out", help="override output directory")

    p_gen = sub.add_parser("gen", help="generate train/test datasets")
    common(p_gen)
    p_gen.add_argument("--force", action="store_true", help="overwrite existing files")

    p_train = sub.add_parser("train", help="train the scheduler")
    common(p_train)
    p_train.add_argument("--train-set", help="training dataset path")
    p_train.add_argument("--test-set", help="test dataset path")

    p_eval = sub.add_parser("eval", help="evaluate a scheme on the test set")
    common(p_eval)
    p_eval.add_argument("--scheme", required=True, choices=_SCHEMES)
    p_eval.add_argument("--checkpoint", help="checkpoint path (scheme gnn)")
    p_eval.add_argument("--test-set", help="test dataset path")

    p_sweep = sub.add_parser("sweep", help="regenerate/train/evaluate along an axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=("M", "N"))
    p_sweep.add_argument("--values", required=True, help="comma-separated ascending ints")

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p_gc)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, seed=args.seed, out=args.out)
        _announce(cfg, args.command)
        if args.command == "gen":
            return cmd_gen(cfg, force=args.force)
        if args.command == "train":
            return cmd_train(cfg, args.train_set, args.test_set)
        if args.command == "eval":
            return cmd_eval(cfg, args.scheme, args.checkpoint, args.test_set)
        if args.command == "sweep":
            try:
                values = [int(v) for v in args.values.split(",") if v.strip()]
            except ValueError as e:
                raise ConfigError(f"--values must be integers: {e}") from e
            return cmd_sweep(cfg, args.axis, values)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, AscentError, GridSizeError, DatasetFormatError, CheckpointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
