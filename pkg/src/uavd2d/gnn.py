"""Message-passing network that maps an interference graph to decisions.

Three rounds of message passing with embedding widths 32, 64, 32. In round
l every vertex i sums, over the neighbors j on its adjacency row, a small
MLP applied to [neighbor embedding, edge weight], then feeds [own
embedding, summed message] through a second MLP with a ReLU on the output.
Each MLP has one ReLU hidden layer as wide as its output.

The readout applies a 3-unit head to every broadcast-link vertex, averages
the logits over the K vertices of the same transmitter, and squashes:
positions are area_half * tanh(logit) offsets from the area center, powers
are cap * sigmoid(logit). D2D powers come from a 1-unit head per D2D
vertex. The squashing makes every power land in (0, cap] and every
position land inside the square for any parameter values, so those
constraints never need penalty terms.

All heavy steps are numpy matrix products recorded on the autodiff tape,
so one forward pass costs a few dozen tape nodes. Vertices and edges are
enumerated in a fixed order (ascending destination, then source), which
keeps repeated runs bit-identical.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphmodel import NODE_FEATURES, build_graph, default_init
from .physics import Decisions
from .scenario import DEFAULT_AREA_HALF

__all__ = [
    "WIDTHS",
    "GnnConfig",
    "GnnParams",
    "CheckpointError",
    "expected_shapes",
    "init_params",
    "PreparedGraph",
    "prepare",
    "prepare_scenario",
    "layer_forward",
    "readout",
    "run_prepared",
    "forward",
    "save_params",
    "load_params",
]

WIDTHS = (32, 64, 32)

_FORMAT = "uav-d2d-gnn-checkpoint"
_VERSION = 1


@dataclass
class GnnConfig:
    """Decision-space context the network needs beyond the scenario."""

    n_uav: int
    area_half: float = DEFAULT_AREA_HALF


@dataclass
class GnnParams:
    """Named parameter blocks; blocks maps name -> float64 ndarray."""

    blocks: dict
    widths: tuple = WIDTHS
    feat_dim: int = NODE_FEATURES


def expected_shapes(widths=WIDTHS, feat_dim=NODE_FEATURES):
    """Block name -> shape, in deterministic order."""
    shapes = {}
    d_in = feat_dim
    for l, w in enumerate(widths, start=1):
        shapes[f"l{l}.mlp1.w1"] = (d_in + 1, w)
        shapes[f"l{l}.mlp1.b1"] = (w,)
        shapes[f"l{l}.mlp1.w2"] = (w, w)
        shapes[f"l{l}.mlp1.b2"] = (w,)
        shapes[f"l{l}.mlp2.w1"] = (d_in + w, w)
        shapes[f"l{l}.mlp2.b1"] = (w,)
        shapes[f"l{l}.mlp2.w2"] = (w, w)
        shapes[f"l{l}.mlp2.b2"] = (w,)
        d_in = w
    shapes["head_green.w"] = (d_in, 3)
    shapes["head_green.b"] = (3,)
    shapes["head_yellow.w"] = (d_in, 1)
    shapes["head_yellow.b"] = (1,)
    return shapes


def init_params(seed, widths=WIDTHS, feat_dim=NODE_FEATURES):
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    blocks = {}
    for name, shape in expected_shapes(widths, feat_dim).items():
        if len(shape) == 1:
            blocks[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            blocks[name] = rng.uniform(-bound, bound, size=shape)
    return GnnParams(blocks, tuple(widths), feat_dim)


@dataclass
class PreparedGraph:
    """Static per-graph arrays shared by every forward pass.

    e_src/e_dst list edges in fixed (dst, src) order; agg[i, e] = 1 when
    edge e lands on vertex i; green_mean averages green rows per
    transmitter.
    """

    graph: object
    e_src: np.ndarray
    e_dst: np.ndarray
    e_feat: np.ndarray
    agg: np.ndarray
    green_mean: np.ndarray


def prepare(graph):
    dst, src = np.nonzero(graph.adj)
    e_feat = graph.adj[dst, src].reshape(-1, 1)
    agg = np.zeros((graph.n_nodes, dst.size))
    agg[dst, np.arange(dst.size)] = 1.0
    k = graph.n_du
    green_mean = np.zeros((graph.n_uav, graph.green_count))
    for n in range(graph.n_uav):
        green_mean[n, n * k : (n + 1) * k] = 1.0 / k
    return PreparedGraph(graph, src, dst, e_feat, agg, green_mean)


def prepare_scenario(s, cfg):
    """Default-deployment graph for a scenario, ready to run."""
    init = default_init(s, cfg.n_uav, cfg.area_half)
    return prepare(build_graph(s, init, cfg.area_half))


def _mlp(x, blocks, prefix):
    h = ad.max0(ad.add(ad.matmul(x, blocks[prefix + ".w1"]), blocks[prefix + ".b1"]))
    return ad.add(ad.matmul(h, blocks[prefix + ".w2"]), blocks[prefix + ".b2"])


def _layer(prep, emb, blocks, l):
    src_emb = ad.gather_rows(emb, prep.e_src)
    per_edge = _mlp(ad.concat_cols([src_emb, prep.e_feat]), blocks, f"l{l}.mlp1")
    messages = ad.matmul(prep.agg, per_edge)
    combined = ad.concat_cols([emb, messages])
    return ad.max0(_mlp(combined, blocks, f"l{l}.mlp2"))


def layer_forward(l, graph, emb, params):
    """One message-passing round (l is 1-based)."""
    return _layer(prepare(graph), emb, params.blocks, l)


# Additive floor on the squashed power fraction. The sigmoid is positive
# for every finite logit mathematically, but float64 underflows it to 0.0
# past about -745; the floor keeps emitted powers strictly positive for
# any parameter values while being invisible at realistic magnitudes
# (0.5 + 1e-300 == 0.5 exactly) and leaving p <= cap intact.
_POWER_FLOOR = 1e-300


def _readout(prep, emb, blocks, s, cfg):
    g = prep.graph
    cap_u = s.constants.p_max_uav
    cap_d = s.constants.p_max_d2d
    green = ad.gather_rows(emb, np.arange(g.green_count))
    logits = ad.matmul(prep.green_mean, _head(green, blocks, "head_green"))
    uav_xy = []
    p_uav = []
    for n in range(g.n_uav):
        x = cfg.area_half * ad.tanh(ad.item(logits, (n, 0)))
        y = cfg.area_half * ad.tanh(ad.item(logits, (n, 1)))
        uav_xy.append((x, y))
        p_uav.append(cap_u * (ad.sigmoid(ad.item(logits, (n, 2))) + _POWER_FLOOR))
    p_d2d = []
    if g.n_d2d:
        yellow = ad.gather_rows(emb, g.green_count + np.arange(g.n_d2d))
        ylog = _head(yellow, blocks, "head_yellow")
        for m in range(g.n_d2d):
            p_d2d.append(cap_d * (ad.sigmoid(ad.item(ylog, (m, 0))) + _POWER_FLOOR))
    return Decisions(uav_xy, p_uav, p_d2d)


def _head(x, blocks, name):
    return ad.add(ad.matmul(x, blocks[name + ".w"]), blocks[name + ".b"])


def readout(graph, emb, params, s, cfg):
    """Decode final embeddings into placements and powers."""
    return _readout(prepare(graph), emb, params.blocks, s, cfg)


def run_prepared(prep, blocks, s, cfg):
    """Full pass over a prepared graph; blocks may be plain or traced."""
    if prep.graph.n_uav != cfg.n_uav:
        raise ValueError("prepared graph was built for a different n_uav")
    emb = prep.graph.node_feat
    for l in range(1, len(WIDTHS) + 1):
        emb = _layer(prep, emb, blocks, l)
    return _readout(prep, emb, blocks, s, cfg)


def forward(s, params, cfg):
    """Scenario in, Decisions out, via the default initial deployment."""
    return run_prepared(prepare_scenario(s, cfg), params.blocks, s, cfg)


class CheckpointError(ValueError):
    """A checkpoint file failed structural validation."""


def save_params(params, path):
    """Versioned JSON checkpoint listing every block with its shape."""
    payload = {
        "format": _FORMAT,
        "version": _VERSION,
        "widths": list(params.widths),
        "feat_dim": params.feat_dim,
        "blocks": {
            name: {"shape": list(arr.shape), "data": arr.tolist()}
            for name, arr in params.blocks.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_params(path):
    """Load a checkpoint, rejecting wrong shapes or missing blocks."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"checkpoint is not valid JSON: {e}") from e
    if payload.get("format") != _FORMAT:
        raise CheckpointError("unrecognized checkpoint format tag")
    if payload.get("version") != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    widths = tuple(payload.get("widths", ()))
    feat_dim = payload.get("feat_dim", NODE_FEATURES)
    shapes = expected_shapes(widths, feat_dim)
    raw = payload.get("blocks", {})
    extra = set(raw) - set(shapes)
    if extra:
        raise CheckpointError(f"unexpected parameter blocks: {sorted(extra)}")
    blocks = {}
    for name, shape in shapes.items():
        if name not in raw:
            raise CheckpointError(f"missing parameter block {name!r}")
        arr = np.asarray(raw[name]["data"], dtype=np.float64)
        if tuple(raw[name]["shape"]) != shape or arr.shape != shape:
            raise CheckpointError(
                f"block {name!r} has shape {arr.shape}, expected {shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"block {name!r} contains non-finite values")
        blocks[name] = arr
    return GnnParams(blocks, widths, feat_dim)
