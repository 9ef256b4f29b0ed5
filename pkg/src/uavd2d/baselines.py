"""Comparison schemes: random placement, fixed power, alternating
optimization, and an exhaustive grid oracle for tiny instances.

The optimizing schemes all climb the same objective the network trains
on, -penalized_loss, so comparisons are like-for-like. The climber is a
block projected-gradient ascent: position blocks move by a normalized
gradient step (the step size is the maximum displacement in meters) and
are clipped to the deployment square; powers are parameterized as
cap * sigmoid(logit) so the caps hold structurally. Every trial step is
backtracked (halved) until the objective does not decrease, which makes
the accepted-objective sequence monotone by construction.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import physics
from .physics import Decisions
from .scenario import DEFAULT_AREA_HALF

__all__ = [
    "AoConfig",
    "GridConfig",
    "AscentError",
    "GridSizeError",
    "random_deployment",
    "fixed_power",
    "alternating_optimization",
    "alternating_optimization_with_trace",
    "grid_oracle",
]

_BACKTRACKS = 6
_ACCEPT_TOL = 1e-9
_INIT_LOGIT = 2.0  # sigmoid(2) ~ 0.88, near-cap but with usable gradient
_LOGIT_CLIP = 20.0

GRID_GUARD = 10_000_000


@dataclass
class AoConfig:
    outer_iters: int = 25
    inner_steps: int = 6
    step_size_pos: float = 5.0
    step_size_logit: float = 0.5
    tol: float = 1e-6

    def __post_init__(self):
        if min(self.outer_iters, self.inner_steps) < 1:
            raise ValueError("iteration counts must be positive")
        if min(self.step_size_pos, self.step_size_logit, self.tol) <= 0.0:
            raise ValueError("step sizes and tol must be positive")


@dataclass
class GridConfig:
    pos_resolution: int = 21
    power_levels: int = 8

    def __post_init__(self):
        if self.pos_resolution < 2 or self.power_levels < 2:
            raise ValueError("grid needs at least 2 points per axis")


class AscentError(RuntimeError):
    """The ascent hit a non-finite objective."""


class GridSizeError(ValueError):
    """The requested exhaustive search exceeds the enumeration guard."""


def _decisions(s, pos, lu, ld):
    """Assemble Decisions from ascent state; logit arrays may hold traced
    scalars. lu/ld of None mean powers pinned at their caps."""
    c = s.constants
    uav_xy = [(pos[n][0], pos[n][1]) for n in range(len(pos))]
    if lu is None:
        p_uav = [c.p_max_uav] * len(pos)
    else:
        p_uav = [c.p_max_uav * ad.sigmoid(v) for v in lu]
    if ld is None:
        p_d2d = [c.p_max_d2d] * s.n_d2d
    else:
        p_d2d = [c.p_max_d2d * ad.sigmoid(v) for v in ld]
    return Decisions(uav_xy, p_uav, p_d2d)


def _objective(s, pos, lu, ld, alpha):
    value = -physics.penalized_loss(s, _decisions(s, pos, lu, ld), alpha)
    if not math.isfinite(value):
        raise AscentError(f"objective is not finite ({value!r})")
    return value


def _block_step(s, pos, lu, ld, alpha, block, cfg, area_half, current):
    """One backtracking ascent step on a single variable block.

    Returns the updated state and objective; a step that cannot improve
    within the backtracking budget leaves the state unchanged.
    """
    tr = ad.Trace()
    if block == "pos":
        t_pos = [(tr.var(x), tr.var(y)) for x, y in pos]
        loss = physics.penalized_loss(s, _decisions(s, t_pos, lu, ld), alpha)
        adj = ad.backward(tr, loss)
        grad = np.array(
            [
                [-_adj(adj, x), -_adj(adj, y)]
                for x, y in t_pos
            ]
        )
        scale = np.max(np.abs(grad))
        if scale == 0.0:
            return pos, lu, ld, current
        direction = grad / scale
        step = cfg.step_size_pos
        for _ in range(_BACKTRACKS):
            trial = np.clip(pos + step * direction, -area_half, area_half)
            value = _objective(s, trial, lu, ld, alpha)
            if value >= current - _ACCEPT_TOL:
                return trial, lu, ld, max(value, current)
            step *= 0.5
        return pos, lu, ld, current

    t_lu = None if lu is None else [tr.var(v) for v in lu]
    t_ld = None if ld is None else [tr.var(v) for v in ld]
    loss = physics.penalized_loss(s, _decisions(s, pos, t_lu, t_ld), alpha)
    adj = ad.backward(tr, loss)
    g_lu = None if lu is None else np.array([-_adj(adj, v) for v in t_lu])
    g_ld = None if ld is None else np.array([-_adj(adj, v) for v in t_ld])
    scale = max(
        np.max(np.abs(g_lu)) if g_lu is not None and g_lu.size else 0.0,
        np.max(np.abs(g_ld)) if g_ld is not None and g_ld.size else 0.0,
    )
    if scale == 0.0:
        return pos, lu, ld, current
    step = cfg.step_size_logit
    for _ in range(_BACKTRACKS):
        trial_lu = None if lu is None else np.clip(lu + step * g_lu / scale, -_LOGIT_CLIP, _LOGIT_CLIP)
        trial_ld = None if ld is None else np.clip(ld + step * g_ld / scale, -_LOGIT_CLIP, _LOGIT_CLIP)
        value = _objective(s, pos, trial_lu, trial_ld, alpha)
        if value >= current - _ACCEPT_TOL:
            return pos, trial_lu, trial_ld, max(value, current)
        step *= 0.5
    return pos, lu, ld, current


def _adj(adjoint, tv):
    g = adjoint[tv.node_id]
    return 0.0 if g is None else g


def _ascend(s, pos, lu, ld, blocks, cfg, alpha, area_half):
    """Alternating block ascent; returns final state and the objective
    trace (one entry per outer iteration, non-decreasing)."""
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 2)
    current = _objective(s, pos, lu, ld, alpha)
    trace = [current]
    for _ in range(cfg.outer_iters):
        before = current
        for block in blocks:
            if block == "pow" and lu is None and (ld is None or not len(ld)):
                continue
            for _ in range(cfg.inner_steps):
                pos, lu, ld, current = _block_step(
                    s, pos, lu, ld, alpha, block, cfg, area_half, current
                )
        trace.append(current)
        if current - before < cfg.tol:
            break
    return pos, lu, ld, trace


def _starts(s, n_uav, area_half):
    """Deterministic multi-start positions: circle around the user
    centroid, stacked above users, and the area center."""
    center = s.du_xy.mean(axis=0)
    ang = 2.0 * np.pi * np.arange(n_uav) / n_uav
    circle = center + (area_half / 4.0) * np.column_stack([np.cos(ang), np.sin(ang)])
    over_users = np.array([s.du_xy[n % s.n_du] for n in range(n_uav)], dtype=np.float64)
    centered = np.zeros((n_uav, 2))
    return [circle, over_users, centered]


def alternating_optimization_with_trace(
    s, cfg=None, n_uav=4, area_half=DEFAULT_AREA_HALF, alpha=physics.DEFAULT_ALPHA
):
    """Best-of-multi-start block ascent; also returns the winning run's
    objective trace."""
    cfg = cfg or AoConfig()
    best = None
    for start in _starts(s, n_uav, area_half):
        lu0 = np.full(n_uav, _INIT_LOGIT)
        ld0 = np.full(s.n_d2d, _INIT_LOGIT)
        pos, lu, ld, trace = _ascend(
            s, start, lu0, ld0, ("pos", "pow"), cfg, alpha, area_half
        )
        if best is None or trace[-1] > best[3][-1]:
            best = (pos, lu, ld, trace)
    pos, lu, ld, trace = best
    return _decisions(s, pos, lu, ld), trace


def alternating_optimization(
    s, cfg=None, n_uav=4, area_half=DEFAULT_AREA_HALF, alpha=physics.DEFAULT_ALPHA
):
    """Jointly optimize positions and powers by alternating blocks."""
    decisions, _ = alternating_optimization_with_trace(s, cfg, n_uav, area_half, alpha)
    return decisions


def fixed_power(
    s, cfg=None, n_uav=4, area_half=DEFAULT_AREA_HALF, alpha=physics.DEFAULT_ALPHA
):
    """Every power pinned at its cap; only positions are optimized."""
    cfg = cfg or AoConfig()
    best = None
    for start in _starts(s, n_uav, area_half):
        pos, _, _, trace = _ascend(s, start, None, None, ("pos",), cfg, alpha, area_half)
        if best is None or trace[-1] > best[1][-1]:
            best = (pos, trace)
    return _decisions(s, best[0], None, None)


def random_deployment(
    s, seed, n_uav=4, cfg=None, area_half=DEFAULT_AREA_HALF, alpha=physics.DEFAULT_ALPHA
):
    """Uniform random placement; powers tuned by the power-only ascent."""
    cfg = cfg or AoConfig()
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-area_half, area_half, size=(n_uav, 2))
    lu0 = np.full(n_uav, _INIT_LOGIT)
    ld0 = np.full(s.n_d2d, _INIT_LOGIT)
    pos, lu, ld, _ = _ascend(s, pos, lu0, ld0, ("pow",), cfg, alpha, area_half)
    return _decisions(s, pos, lu, ld)


def grid_oracle(
    s, cfg=None, n_uav=1, area_half=DEFAULT_AREA_HALF, alpha=physics.DEFAULT_ALPHA
):
    """Exhaustive argmax of the objective over a position/power grid.

    Rejects instances whose enumeration would exceed GRID_GUARD
    combinations. Power grids are geometric from cap/1000 to the cap, so
    the top level is exactly the cap.
    """
    cfg = cfg or GridConfig()
    res, levels = cfg.pos_resolution, cfg.power_levels
    m = s.n_d2d
    combos = (res ** (2 * n_uav)) * (levels ** (n_uav + m))
    if combos > GRID_GUARD:
        raise GridSizeError(
            f"{combos:.3g} grid combinations exceed the guard ({GRID_GUARD:.1g})"
        )
    axis = np.linspace(-area_half, area_half, res)
    p_uav_grid = np.geomspace(s.constants.p_max_uav * 1e-3, s.constants.p_max_uav, levels)
    p_d2d_grid = np.geomspace(s.constants.p_max_d2d * 1e-3, s.constants.p_max_d2d, levels)

    best = -math.inf
    best_dec = None
    pos_points = list(itertools.product(axis, axis))
    for pos_combo in itertools.product(pos_points, repeat=n_uav):
        for pu in itertools.product(p_uav_grid, repeat=n_uav):
            for pd in itertools.product(p_d2d_grid, repeat=m):
                d = Decisions([tuple(p) for p in pos_combo], list(pu), list(pd))
                value = -physics.penalized_loss(s, d, alpha)
                if value > best:
                    best = value
                    best_dec = d
    return best_dec
