"""Unsupervised training of the scheduler plus evaluation and gradcheck.

Each step samples a batch of scenarios, runs the network forward on one
shared autodiff trace, takes the mean penalized loss, backpropagates, and
applies a hand-rolled bias-corrected Adam update. There are no labels:
the physics objective itself is the loss, and the loss recorded is the
exact quantity the metrics recompute (one code path, dual-evaluated).
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import physics
from .gnn import GnnConfig, init_params, prepare_scenario, run_prepared

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "HistoryRow",
    "AdamState",
    "DivergenceError",
    "adam_init",
    "adam_step",
    "train",
    "ScenarioMetrics",
    "EvalMetrics",
    "evaluate",
    "evaluate_decisions",
    "save_history_csv",
    "GradCheckReport",
    "gradient_check",
]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    alpha: float = physics.DEFAULT_ALPHA
    iters: int = 500
    batch: int = 16
    # Initialization lottery: at these layer widths the summed messages put
    # many seeds' readouts deep into tanh/sigmoid saturation, which freezes
    # training at a constant decision. Seed 20 stays responsive at the stock
    # network sizes (see README, "Initialization sensitivity").
    seed: int = 20
    eval_every: int = 10

    def __post_init__(self):
        if not self.lr > 0.0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")
        if self.iters < 0 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("iters, batch, eval_every must be sensible")


@dataclass
class HistoryRow:
    """One recorded point. train_loss is the mean penalized loss over the
    FULL training set at this iterate (minibatch losses drive the
    optimizer but are too noisy to log)."""

    iteration: int
    train_loss: float
    test_sum_rate: float
    test_violations: float
    seconds: float


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)


class DivergenceError(RuntimeError):
    """Training aborted: the loss left its plausible range or went
    non-finite."""


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_init(blocks):
    return AdamState(
        m={k: np.zeros_like(v) for k, v in blocks.items()},
        v={k: np.zeros_like(v) for k, v in blocks.items()},
    )


def adam_step(blocks, grads, state, cfg):
    """Bias-corrected Adam update, applied in place block by block."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correct1 = 1.0 - b1**state.t
    correct2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in block {name!r}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correct1
        v_hat = state.v[name] / correct2
        blocks[name] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return blocks, state


def _mean_loss_traced(preps, scenarios, blocks, gcfg, alpha):
    total = 0.0
    for prep, s in zip(preps, scenarios):
        d = run_prepared(prep, blocks, s, gcfg)
        total = total + physics.penalized_loss(s, d, alpha)
    return total * (1.0 / len(scenarios))


def _check_divergence(loss, initial):
    if not math.isfinite(loss):
        raise DivergenceError(f"batch loss is not finite ({loss!r})")
    ceiling = initial + 10.0 * max(1.0, abs(initial))
    if loss > ceiling:
        raise DivergenceError(
            f"batch loss {loss:.4g} exceeded the divergence ceiling "
            f"{ceiling:.4g} (initial {initial:.4g})"
        )


def train(ds_train, ds_test, cfg=None):
    """Run the optimization loop; returns (params, history).

    Records a history row at iteration 0, every cfg.eval_every
    iterations, and at the final iteration.
    """
    cfg = cfg or TrainConfig()
    meta = ds_train.meta
    gcfg = GnnConfig(n_uav=meta.n_uav, area_half=meta.area_half)
    train_preps = [prepare_scenario(s, gcfg) for s in ds_train.items]
    test_preps = [prepare_scenario(s, gcfg) for s in ds_test.items]
    params = init_params(cfg.seed)
    state = adam_init(params.blocks)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    t0 = time.perf_counter()

    def record(iteration):
        train_loss = _mean_loss_plain(train_preps, ds_train.items, params.blocks, gcfg, cfg.alpha)
        metrics = _evaluate_prepared(params.blocks, ds_test.items, test_preps, gcfg)
        history.rows.append(
            HistoryRow(
                iteration=iteration,
                train_loss=train_loss,
                test_sum_rate=metrics.mean_sum_rate,
                test_violations=metrics.mean_violations,
                seconds=time.perf_counter() - t0,
            )
        )
        return train_loss

    initial_loss = record(0)
    n = len(ds_train.items)
    for it in range(1, cfg.iters + 1):
        idx = rng.choice(n, size=min(cfg.batch, n), replace=False)
        tr = ad.Trace()
        leaves = {name: tr.var(arr) for name, arr in params.blocks.items()}
        loss = _mean_loss_traced(
            [train_preps[i] for i in idx],
            [ds_train.items[i] for i in idx],
            leaves,
            gcfg,
            cfg.alpha,
        )
        _check_divergence(loss.value, initial_loss)
        adjoint = ad.backward(tr, loss)
        grads = {
            name: adjoint[leaf.node_id]
            if adjoint[leaf.node_id] is not None
            else np.zeros_like(leaf.value)
            for name, leaf in leaves.items()
        }
        adam_step(params.blocks, grads, state, cfg)
        if it % cfg.eval_every == 0 or it == cfg.iters:
            record(it)
    return params, history


def _mean_loss_plain(preps, scenarios, blocks, gcfg, alpha):
    if not scenarios:
        return 0.0
    total = 0.0
    for prep, s in zip(preps, scenarios):
        d = run_prepared(prep, blocks, s, gcfg)
        total += physics.penalized_loss(s, d, alpha)
    return total / len(scenarios)


@dataclass
class ScenarioMetrics:
    sum_rate: float
    d2d_rates: list
    min_d2d_rate: float
    violations: int


@dataclass
class EvalMetrics:
    per_scenario: list
    mean_sum_rate: float
    std_sum_rate: float
    mean_violations: float
    all_satisfied_fraction: float


def evaluate_decisions(s, d):
    """Physics metrics of one (scenario, decisions) pair."""
    rates = [physics.d2d_rate(m, s, d) for m in range(s.n_d2d)]
    r_min = s.constants.r_min
    return ScenarioMetrics(
        sum_rate=physics.du_sum_rate(s, d),
        d2d_rates=rates,
        min_d2d_rate=min(rates) if rates else math.inf,
        violations=sum(1 for r in rates if r < r_min),
    )


def _aggregate(per_scenario):
    if not per_scenario:
        return EvalMetrics([], 0.0, 0.0, 0.0, 1.0)
    rates = np.array([m.sum_rate for m in per_scenario])
    violations = np.array([m.violations for m in per_scenario])
    return EvalMetrics(
        per_scenario=per_scenario,
        mean_sum_rate=float(rates.mean()),
        std_sum_rate=float(rates.std()),
        mean_violations=float(violations.mean()),
        all_satisfied_fraction=float(np.mean(violations == 0)),
    )


def _evaluate_prepared(blocks, scenarios, preps, gcfg):
    per = [
        evaluate_decisions(s, run_prepared(prep, blocks, s, gcfg))
        for prep, s in zip(preps, scenarios)
    ]
    return _aggregate(per)


def evaluate(params, ds):
    """Network metrics over a dataset: pure, deterministic."""
    gcfg = GnnConfig(n_uav=ds.meta.n_uav, area_half=ds.meta.area_half)
    preps = [prepare_scenario(s, gcfg) for s in ds.items]
    return _evaluate_prepared(params.blocks, ds.items, preps, gcfg)


def save_history_csv(history, path, meta=None):
    """History CSV with '#'-prefixed JSON meta lines before the header."""
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write("# " + json.dumps(meta) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["iter", "train_loss", "test_sum_rate", "violations", "seconds"])
        for row in history.rows:
            writer.writerow(
                [row.iteration, row.train_loss, row.test_sum_rate, row.test_violations, row.seconds]
            )


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    per_block: dict
    kinks: int
    eps: tuple


def gradient_check(
    params,
    scenarios,
    gcfg,
    alpha=physics.DEFAULT_ALPHA,
    n_coords=1000,
    seed=0,
    eps=(1e-4, 1e-5, 1e-3, 1e-6, 1e-2),
):
    """Compare tape gradients of the mean penalized loss with central
    finite differences on randomly chosen parameter coordinates.

    No single step size works for every coordinate. Central differences
    on a loss of magnitude L carry an absolute noise floor near
    L * 2^-52 / step, so tiny-gradient coordinates need large steps; the
    rectifier stack makes the loss piecewise smooth with pieces that can
    be narrower than 1e-4 along some axes, so those coordinates need
    small steps to land inside one piece. Each coordinate therefore tries
    the steps in eps (most-likely-to-succeed first) and keeps its best
    agreement, stopping early once agreement is far below the 1e-4
    acceptance level. The relative-error denominator is floored at 1e-7
    because of the same noise floor. Coordinates that agree at no step
    while their one-sided slopes disagree (a hinge or rectifier kink
    inside every tried window) are excluded and counted.
    """
    preps = [prepare_scenario(s, gcfg) for s in scenarios]
    blocks = {k: v.copy() for k, v in params.blocks.items()}

    tr = ad.Trace()
    leaves = {name: tr.var(arr) for name, arr in blocks.items()}
    loss = _mean_loss_traced(preps, scenarios, leaves, gcfg, alpha)
    adjoint = ad.backward(tr, loss)
    grads = {
        name: adjoint[leaf.node_id]
        if adjoint[leaf.node_id] is not None
        else np.zeros_like(leaf.value)
        for name, leaf in leaves.items()
    }

    names = sorted(blocks)
    sizes = np.array([blocks[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def plain_loss():
        return _mean_loss_plain(preps, scenarios, blocks, gcfg, alpha)

    per_block = {n: {"count": 0, "max_rel_err": 0.0} for n in names}
    max_rel = 0.0
    kinks = 0
    f_mid = plain_loss()
    for flat in chosen:
        b = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[b]
        local = int(flat - offsets[b])
        idx = np.unravel_index(local, blocks[name].shape)
        analytic = float(grads[name][idx])
        saved = blocks[name][idx]
        best = math.inf
        kink = False
        for e in eps:
            blocks[name][idx] = saved + e
            f_hi = plain_loss()
            blocks[name][idx] = saved - e
            f_lo = plain_loss()
            blocks[name][idx] = saved
            numeric = (f_hi - f_lo) / (2.0 * e)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7)
            if rel < best:
                best = rel
            if best < 1e-6:
                break
            if rel > 1e-3:
                fwd = (f_hi - f_mid) / e
                bwd = (f_mid - f_lo) / e
                if abs(fwd - bwd) > 1e-3 * max(abs(fwd), abs(bwd), 1e-7):
                    kink = True
        if kink and best > 1e-4:
            kinks += 1
            continue
        per_block[name]["count"] += 1
        per_block[name]["max_rel_err"] = max(per_block[name]["max_rel_err"], best)
        max_rel = max(max_rel, best)
    n_checked = sum(v["count"] for v in per_block.values())
    return GradCheckReport(max_rel, n_checked, per_block, kinks, tuple(eps))
