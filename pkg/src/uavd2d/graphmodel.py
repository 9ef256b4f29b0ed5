"""Relational graph over transmission links.

Vertices stand for links, not radios. The first N*K vertices are "green"
broadcast links, one per (transmitter n, user k) pair in row-major order;
the remaining M are "yellow" D2D links. Vertex i carries four features
measured at a fixed initial deployment: transmit power as a fraction of
its cap, the link's own channel gain, and the receiver-end coordinates.

Row i of the adjacency matrix describes the interference footprint of
link i's transmitter: entry (i, j) is the coupling gain from that
transmitter to link j's receiver, and a vertex aggregates messages along
its own row. Green rows carry the constant LoS reference gain toward
every yellow column (green-green coupling is zero: all broadcast signals
are the same message); yellow rows carry recomputed ground-channel gains
toward every green column and every other yellow column. Gains enter
features and weights as dB/100 and coordinates are scaled by the area
half-width, so everything lands near [-1, 1].
"""

import math
from dataclasses import dataclass

import numpy as np

from .physics import ground_gain, los_gain
from .scenario import DEFAULT_AREA_HALF

__all__ = [
    "InterferenceGraph",
    "InitDeployment",
    "default_init",
    "green_index",
    "yellow_index",
    "green_link",
    "gain_feature",
    "build_graph",
    "neighbors",
    "NODE_FEATURES",
]

NODE_FEATURES = 4


@dataclass
class InterferenceGraph:
    """Dense weighted digraph with per-vertex feature rows.

    node_feat: (n_nodes, 4) float64
    adj: (n_nodes, n_nodes) float64, adj[i, j] weights edge i <- j
    """

    node_feat: np.ndarray
    adj: np.ndarray
    green_count: int
    n_uav: int
    n_du: int
    n_d2d: int

    @property
    def n_nodes(self):
        return self.node_feat.shape[0]


@dataclass
class InitDeployment:
    """The fixed placement/power state the graph features are measured at."""

    uav_xy: np.ndarray
    p_uav0: np.ndarray
    p_d2d0: np.ndarray

    def __post_init__(self):
        self.uav_xy = np.asarray(self.uav_xy, dtype=np.float64).reshape(-1, 2)
        self.p_uav0 = np.asarray(self.p_uav0, dtype=np.float64).reshape(-1)
        self.p_d2d0 = np.asarray(self.p_d2d0, dtype=np.float64).reshape(-1)
        if self.uav_xy.shape[0] != self.p_uav0.shape[0]:
            raise ValueError("one initial power per transmitter required")

    @property
    def n_uav(self):
        return self.uav_xy.shape[0]


def default_init(s, n_uav, area_half=DEFAULT_AREA_HALF):
    """Canonical starting state: a circle around the user centroid.

    Transmitters sit evenly spaced on a circle of radius area_half / 4
    centered at the mean user position; every power starts at its cap.
    """
    center = s.du_xy.mean(axis=0)
    radius = area_half / 4.0
    ang = 2.0 * np.pi * np.arange(n_uav) / n_uav
    uav_xy = center + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    p_uav0 = np.full(n_uav, s.constants.p_max_uav)
    p_d2d0 = np.full(s.n_d2d, s.constants.p_max_d2d)
    return InitDeployment(uav_xy, p_uav0, p_d2d0)


def green_index(n, k, n_du):
    """Vertex id of broadcast link (transmitter n, user k); row-major."""
    return n * n_du + k


def yellow_index(m, n_uav, n_du):
    """Vertex id of D2D link m; yellows come after all greens."""
    return n_uav * n_du + m


def green_link(vid, n_du):
    """Inverse of green_index: vertex id -> (n, k)."""
    return divmod(vid, n_du)


def gain_feature(g):
    """Normalize a linear gain for the feature space: dB / 100."""
    return 10.0 * math.log10(g) / 100.0


def build_graph(s, init, area_half=DEFAULT_AREA_HALF):
    """Assemble the link graph for scenario s at the given deployment."""
    c = s.constants
    n_uav, k_du, m_d2d = init.n_uav, s.n_du, s.n_d2d
    if init.p_d2d0.shape[0] != m_d2d:
        raise ValueError("one initial power per D2D pair required")
    nk = n_uav * k_du
    n_nodes = nk + m_d2d

    feat = np.zeros((n_nodes, NODE_FEATURES))
    for n in range(n_uav):
        for k in range(k_du):
            g = los_gain(init.uav_xy[n], s.du_xy[k], c)
            feat[green_index(n, k, k_du)] = (
                init.p_uav0[n] / c.p_max_uav,
                gain_feature(g),
                s.du_xy[k, 0] / area_half,
                s.du_xy[k, 1] / area_half,
            )
    for m in range(m_d2d):
        d = float(np.hypot(*(s.dt_xy[m] - s.dr_xy[m])))
        feat[yellow_index(m, n_uav, k_du)] = (
            init.p_d2d0[m] / c.p_max_d2d,
            gain_feature(ground_gain(d, c)),
            s.dr_xy[m, 0] / area_half,
            s.dr_xy[m, 1] / area_half,
        )

    adj = np.zeros((n_nodes, n_nodes))
    beta0_feat = gain_feature(c.beta0)
    # green row i <- yellow column j: constant cross-type marker
    adj[:nk, nk:] = beta0_feat
    # A yellow row holds the interference its own transmitter inflicts on
    # every other link's receiver: the ground gain toward each user for
    # green columns (the column's user index is column mod K) and toward
    # each other pair's receiver for yellow columns.
    for i in range(m_d2d):
        row = yellow_index(i, n_uav, k_du)
        dt = s.dt_xy[i]
        for j in range(nk):
            k = j % k_du
            d = float(np.hypot(*(dt - s.du_xy[k])))
            adj[row, j] = gain_feature(ground_gain(d, c))
        for j in range(m_d2d):
            if j == i:
                continue
            d = float(np.hypot(*(dt - s.dr_xy[j])))
            adj[row, yellow_index(j, n_uav, k_du)] = gain_feature(ground_gain(d, c))
    return InterferenceGraph(feat, adj, nk, n_uav, k_du, m_d2d)


def neighbors(g, i):
    """Ascending (j, weight) pairs for the in-edges of vertex i."""
    cols = np.nonzero(g.adj[i])[0]
    return [(int(j), float(g.adj[i, j])) for j in cols]
