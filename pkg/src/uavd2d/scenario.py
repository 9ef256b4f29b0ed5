"""Random problem instances and line-delimited dataset files.

A generated scenario scatters K downlink users and M D2D transmitters
uniformly over a square of side 2 * area_half centered at the origin; each
D2D receiver sits at a uniform random bearing and distance from its
transmitter. Datasets serialize as JSON lines: a header record with format
tag, version, units, the exact generator config, and the item count,
followed by one geometry record per scenario.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .physics import PhysConstants, Scenario, default_constants

__all__ = [
    "DEFAULT_AREA_HALF",
    "DEFAULT_D2D_RANGE",
    "GenConfig",
    "Dataset",
    "DatasetFormatError",
    "generate",
    "save",
    "load",
]

DEFAULT_AREA_HALF = 50.0
DEFAULT_D2D_RANGE = (1.0, 5.0)

_FORMAT = "uav-d2d-scenarios"
_VERSION = 1
_UNITS = {"coordinates": "m", "powers": "W", "gains": "linear", "rates": "bit/s/Hz"}


@dataclass(frozen=True)
class GenConfig:
    """Everything needed to regenerate a dataset from its seed."""

    seed: int = 0
    n_uav: int = 4
    n_du: int = 4
    n_d2d: int = 6
    area_half: float = DEFAULT_AREA_HALF
    d2d_dist_range: tuple = DEFAULT_D2D_RANGE
    constants: PhysConstants = field(default_factory=default_constants)

    def __post_init__(self):
        object.__setattr__(self, "d2d_dist_range", tuple(self.d2d_dist_range))
        if self.n_uav < 1:
            raise ValueError("n_uav must be at least 1")
        if self.n_du < 1:
            raise ValueError("n_du must be at least 1")
        if self.n_d2d < 0:
            raise ValueError("n_d2d must be nonnegative")
        if not self.area_half > 0.0:
            raise ValueError("area_half must be positive")
        lo, hi = self.d2d_dist_range
        if not 0.0 < lo <= hi:
            raise ValueError("d2d_dist_range must satisfy 0 < lo <= hi")


@dataclass
class Dataset:
    """A list of scenarios plus the config that produced them."""

    items: list
    meta: GenConfig


class DatasetFormatError(ValueError):
    """A dataset file failed structural validation."""

    def __init__(self, message, line=None, fieldname=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if fieldname is not None:
            where.append(f"field {fieldname!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.line = line
        self.fieldname = fieldname


def generate(cfg, count):
    """Draw `count` scenarios deterministically from cfg.seed."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = np.random.default_rng(cfg.seed)
    a = cfg.area_half
    lo, hi = cfg.d2d_dist_range
    items = []
    for _ in range(count):
        du = rng.uniform(-a, a, size=(cfg.n_du, 2))
        dt = rng.uniform(-a, a, size=(cfg.n_d2d, 2))
        bearing = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_d2d)
        dist = rng.uniform(lo, hi, size=cfg.n_d2d)
        dr = dt + dist[:, None] * np.column_stack([np.cos(bearing), np.sin(bearing)])
        items.append(Scenario(du, dt, dr, cfg.constants))
    return Dataset(items, cfg)


def _config_dict(cfg):
    d = asdict(cfg)
    d["d2d_dist_range"] = list(cfg.d2d_dist_range)
    return d


def _config_from_dict(d, line):
    try:
        constants = PhysConstants(**d.pop("constants"))
        d["d2d_dist_range"] = tuple(d["d2d_dist_range"])
        return GenConfig(constants=constants, **d)
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"bad config record: {e}", line=line) from e


def save(ds, path):
    """Write a dataset as JSON lines (header record first)."""
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "units": _UNITS,
        "count": len(ds.items),
        "config": _config_dict(ds.meta),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in ds.items:
            rec = {
                "du_xy": s.du_xy.tolist(),
                "dt_xy": s.dt_xy.tolist(),
                "dr_xy": s.dr_xy.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def _check_coords(rec, name, expect_rows, line):
    if name not in rec:
        raise DatasetFormatError("missing field", line=line, fieldname=name)
    arr = np.asarray(rec[name], dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DatasetFormatError("expected (x, y) rows", line=line, fieldname=name)
    if arr.shape[0] != expect_rows:
        raise DatasetFormatError(
            f"expected {expect_rows} rows, found {arr.shape[0]}",
            line=line,
            fieldname=name,
        )
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError("non-finite coordinate", line=line, fieldname=name)
    return arr


def load(path):
    """Read a dataset file, validating structure and counts."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty file, header record missing", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"header is not valid JSON: {e}", line=1) from e
    if header.get("format") != _FORMAT:
        raise DatasetFormatError("unrecognized format tag", line=1, fieldname="format")
    if header.get("version") != _VERSION:
        raise DatasetFormatError(
            f"unsupported version {header.get('version')!r}", line=1, fieldname="version"
        )
    if "config" not in header or "count" not in header:
        raise DatasetFormatError("header needs config and count", line=1)
    cfg = _config_from_dict(dict(header["config"]), line=1)
    declared = header["count"]

    items = []
    for i, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"record is not valid JSON: {e}", line=i) from e
        du = _check_coords(rec, "du_xy", cfg.n_du, i)
        dt = _check_coords(rec, "dt_xy", cfg.n_d2d, i)
        dr = _check_coords(rec, "dr_xy", cfg.n_d2d, i)
        try:
            items.append(Scenario(du, dt, dr, cfg.constants))
        except ValueError as e:
            raise DatasetFormatError(str(e), line=i) from e
    if len(items) != declared:
        raise DatasetFormatError(
            f"header declares {declared} items, file holds {len(items)}", line=1
        )
    return Dataset(items, cfg)
