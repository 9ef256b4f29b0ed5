"""Channel gains, SINRs, rates, and the penalized scheduling objective.

The setting: N aerial transmitters at a common altitude broadcast the same
message to K ground users, reusing spectrum licensed to M ground
device-to-device (D2D) pairs. Air-to-ground links are line-of-sight with an
inverse-square law; ground-to-ground links follow a two-segment power law
with reference distance d1 and exponent gamma.

All quantities are linear (watts, power ratios, meters); decibel forms are
converted once at the configuration boundary. Decision variables may be
plain floats or autodiff traced values: every function below is written
against the generic operations in `autodiff`, so the same code path serves
metric evaluation and gradient-based training.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "DEFAULT_ALPHA",
    "PhysConstants",
    "default_constants",
    "Scenario",
    "Decisions",
    "db_to_linear",
    "dbm_to_watts",
    "rayleigh_fading",
    "los_gain",
    "ground_gain",
    "du_sinr",
    "dr_sinr",
    "d2d_rate",
    "du_sum_rate",
    "penalized_loss",
]

# weight of the QoS hinge term in the penalized objective
DEFAULT_ALPHA = 10.0


def db_to_linear(v_db):
    """Convert a decibel ratio to linear scale."""
    return 10.0 ** (v_db / 10.0)


def dbm_to_watts(v_dbm):
    """Convert a dBm power level to watts."""
    return 10.0 ** ((v_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class PhysConstants:
    """Propagation and resource constants, all in linear units.

    beta0       LoS reference gain at 1 m
    altitude    transmitter altitude in meters
    wavelength  carrier wavelength in meters
    d1          ground-model reference distance in meters
    gamma       ground path-loss exponent
    noise       receiver noise power in watts
    p_max_uav   per-transmitter broadcast power cap in watts
    p_max_d2d   per-pair D2D power cap in watts
    r_min       minimum acceptable D2D rate in bit/s/Hz
    """

    beta0: float = 1e-3
    altitude: float = 10.0
    wavelength: float = 0.125
    d1: float = 1.0
    gamma: float = 3.0
    noise: float = 1e-9
    p_max_uav: float = 1.0
    p_max_d2d: float = 0.01
    r_min: float = 0.2

    def __post_init__(self):
        for name in (
            "beta0",
            "altitude",
            "wavelength",
            "d1",
            "noise",
            "p_max_uav",
            "p_max_d2d",
        ):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.gamma >= 2.0:
            raise ValueError("gamma must be at least 2")
        if not self.r_min >= 0.0:
            raise ValueError("r_min must be nonnegative")

    @classmethod
    def from_db(
        cls,
        beta0_db=-30.0,
        noise_dbm=-60.0,
        p_max_uav_dbm=30.0,
        p_max_d2d_dbm=10.0,
        altitude=10.0,
        wavelength=0.125,
        d1=1.0,
        gamma=3.0,
        r_min=0.2,
    ):
        """Build constants from decibel-form inputs."""
        return cls(
            beta0=db_to_linear(beta0_db),
            altitude=altitude,
            wavelength=wavelength,
            d1=d1,
            gamma=gamma,
            noise=dbm_to_watts(noise_dbm),
            p_max_uav=dbm_to_watts(p_max_uav_dbm),
            p_max_d2d=dbm_to_watts(p_max_d2d_dbm),
            r_min=r_min,
        )


def default_constants():
    return PhysConstants.from_db()


@dataclass
class Scenario:
    """One problem instance: fixed ground geometry plus constants.

    du_xy: (K, 2) downlink-user coordinates, K >= 1
    dt_xy: (M, 2) D2D transmitter coordinates
    dr_xy: (M, 2) D2D receiver coordinates
    """

    du_xy: np.ndarray
    dt_xy: np.ndarray
    dr_xy: np.ndarray
    constants: PhysConstants = field(default_factory=default_constants)

    def __post_init__(self):
        self.du_xy = np.atleast_2d(np.asarray(self.du_xy, dtype=np.float64))
        self.dt_xy = np.asarray(self.dt_xy, dtype=np.float64).reshape(-1, 2)
        self.dr_xy = np.asarray(self.dr_xy, dtype=np.float64).reshape(-1, 2)
        if self.du_xy.shape[0] < 1 or self.du_xy.shape[1] != 2:
            raise ValueError("du_xy must hold at least one (x, y) row")
        if self.dt_xy.shape != self.dr_xy.shape:
            raise ValueError("dt_xy and dr_xy must pair up one to one")
        for name in ("du_xy", "dt_xy", "dr_xy"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite coordinates")
        if self.n_d2d:
            dist = np.hypot(*(self.dt_xy - self.dr_xy).T)
            if np.any(dist <= 0.0):
                raise ValueError("each D2D pair needs a positive TX-RX distance")

    @property
    def n_du(self):
        return self.du_xy.shape[0]

    @property
    def n_d2d(self):
        return self.dt_xy.shape[0]


@dataclass
class Decisions:
    """Scheduler output: transmitter placements and all transmit powers.

    Entries are floats for evaluation or traced scalars during training,
    so no validation happens on construction; call validate() on plain
    decisions to enforce the power caps and placement finiteness.
    """

    uav_xy: list
    p_uav: list
    p_d2d: list

    @property
    def n_uav(self):
        return len(self.uav_xy)

    def validate(self, constants):
        if len(self.p_uav) != self.n_uav:
            raise ValueError("one broadcast power per transmitter required")
        for x, y in self.uav_xy:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("non-finite transmitter position")
        for p in self.p_uav:
            if not 0.0 < p <= constants.p_max_uav:
                raise ValueError("broadcast power outside (0, p_max_uav]")
        for p in self.p_d2d:
            if not 0.0 < p <= constants.p_max_d2d:
                raise ValueError("D2D power outside (0, p_max_d2d]")


def rayleigh_fading(seed, n):
    """Unit-mean squared-envelope fading draws.

    Hook for fading experiments; nothing in the default pipeline applies
    it (all links are deterministic).
    """
    return np.random.default_rng(seed).exponential(1.0, size=n)


def los_gain(uav_xy, ground_xy, c, fading=1.0):
    """Line-of-sight air-to-ground channel gain.

    beta0 over the squared 3-D separation between a transmitter at
    altitude c.altitude above uav_xy and a ground node at ground_xy.
    Either coordinate pair may contain traced scalars.
    """
    dx = uav_xy[0] - ground_xy[0]
    dy = uav_xy[1] - ground_xy[1]
    d_sq = dx * dx + dy * dy + c.altitude * c.altitude
    return fading * c.beta0 / d_sq


def ground_gain(d, c, fading=1.0):
    """Ground-to-ground channel gain at distance d > 0.

    Free-space gain at the reference distance d1 times (d1/d)^gamma.
    """
    dv = d.value if ad.is_traced(d) else d
    if dv <= 0.0:
        raise ValueError("ground distance must be positive")
    ref = (c.wavelength / (4.0 * math.pi * c.d1)) ** 2
    return fading * ref * (c.d1 / d) ** c.gamma


def _rows(arr):
    return [(float(r[0]), float(r[1])) for r in arr]


def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def du_sinr(k, s, d):
    """SINR of downlink user k under decisions d.

    All N broadcast signals carry the same message and combine in the
    numerator; D2D transmitters interfere through the ground channel.
    """
    c = s.constants
    du = (float(s.du_xy[k, 0]), float(s.du_xy[k, 1]))
    signal = 0.0
    for n in range(d.n_uav):
        signal = signal + d.p_uav[n] * los_gain(d.uav_xy[n], du, c)
    interference = 0.0
    for m, dt in enumerate(_rows(s.dt_xy)):
        interference = interference + d.p_d2d[m] * ground_gain(_dist(dt, du), c)
    return signal / (interference + c.noise)


def dr_sinr(m, s, d):
    """SINR of D2D receiver m under decisions d.

    Interference comes from the other D2D transmitters (each at its own
    power) and from every broadcast transmitter overhead.
    """
    c = s.constants
    dts = _rows(s.dt_xy)
    dr = (float(s.dr_xy[m, 0]), float(s.dr_xy[m, 1]))
    signal = d.p_d2d[m] * ground_gain(_dist(dts[m], dr), c)
    interference = 0.0
    for i, dt in enumerate(dts):
        if i != m:
            interference = interference + d.p_d2d[i] * ground_gain(_dist(dt, dr), c)
    for n in range(d.n_uav):
        interference = interference + d.p_uav[n] * los_gain(d.uav_xy[n], dr, c)
    return signal / (interference + c.noise)


def d2d_rate(m, s, d):
    """Achievable rate of D2D pair m in bit/s/Hz."""
    return ad.log2_1p(dr_sinr(m, s, d))


def du_sum_rate(s, d):
    """Total downlink-user rate in bit/s/Hz."""
    total = 0.0
    for k in range(s.n_du):
        total = total + ad.log2_1p(du_sinr(k, s, d))
    return total


def penalized_loss(s, d, alpha=DEFAULT_ALPHA):
    """Negative DU sum rate plus a hinge on each unmet D2D rate floor.

    The QoS constraint (every D2D rate at least r_min) enters as
    alpha * sum_m max(0, r_min - rate_m); power caps are expected to be
    enforced structurally by whoever produced the decisions.
    """
    loss = -1.0 * du_sum_rate(s, d)
    for m in range(s.n_d2d):
        loss = loss + alpha * ad.max0(s.constants.r_min - d2d_rate(m, s, d))
    return loss
