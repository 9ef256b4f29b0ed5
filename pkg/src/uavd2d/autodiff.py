"""Reverse-mode automatic differentiation on a recorded tape.

Values flowing through the tape are float64 scalars or numpy arrays.
Every operation also accepts plain (untraced) operands and then returns a
plain result computed by the exact same expression, so model code written
against this module runs identically with and without gradient recording.

Array-valued primitives (matmul, gather_rows, concat_cols, item) exist so
that a message-passing layer records a few dozen tape nodes instead of
millions of scalar ones; their backward rules are the standard dense ones
and are tested for equivalence against scalar composition.
"""

import math
from dataclasses import dataclass

import numpy as np

_LN2 = math.log(2.0)

__all__ = [
    "DomainError",
    "Trace",
    "TracedValue",
    "backward",
    "is_traced",
    "add",
    "sub",
    "mul",
    "div",
    "pow_const",
    "exp",
    "log",
    "max0",
    "sigmoid",
    "tanh",
    "log2_1p",
    "matmul",
    "gather_rows",
    "concat_cols",
    "item",
    "FiniteDiffReport",
    "finite_diff_check",
]


class DomainError(ValueError):
    """An operation was evaluated outside its mathematical domain."""

    def __init__(self, message, primal):
        super().__init__(f"{message} (operand value: {primal!r})")
        self.primal = primal


def _as_value(v):
    if isinstance(v, np.ndarray):
        return np.asarray(v, dtype=np.float64)
    if isinstance(v, TracedValue):
        raise TypeError("cannot wrap a TracedValue in a new tape entry")
    return float(v)


class Node:
    """One tape entry: operation tag, parent node ids, primal value."""

    __slots__ = ("op", "parents", "value", "aux")

    def __init__(self, op, parents, value, aux=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.aux = aux


class Trace:
    """Append-only record of a computation, consumed by backward()."""

    def __init__(self):
        self.nodes = []
        self.gradients = None

    def __len__(self):
        return len(self.nodes)

    def var(self, value):
        """Record a differentiable leaf."""
        return self._record("leaf", (), _as_value(value))

    def const(self, value):
        """Record a constant; backward never accumulates into it."""
        return self._record("const", (), _as_value(value))

    def _record(self, op, parents, value, aux=None):
        self.nodes.append(Node(op, parents, value, aux))
        return TracedValue(self, len(self.nodes) - 1, value)


class TracedValue:
    """Handle to one tape node; supports arithmetic like a number."""

    __slots__ = ("trace", "node_id", "value")

    def __init__(self, trace, node_id, value):
        self.trace = trace
        self.node_id = node_id
        self.value = value

    def __repr__(self):
        return f"TracedValue(node_id={self.node_id}, value={self.value!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __neg__(self):
        return mul(self, -1.0)


def is_traced(v):
    return isinstance(v, TracedValue)


def _value(v):
    return v.value if isinstance(v, TracedValue) else v


def _trace_of(*operands):
    tr = None
    for v in operands:
        if isinstance(v, TracedValue):
            if tr is None:
                tr = v.trace
            elif tr is not v.trace:
                raise ValueError("operands belong to different traces")
    return tr


def _nid(trace, v):
    if isinstance(v, TracedValue):
        return v.node_id
    return trace.const(v).node_id


def _unary(op, x, value):
    tr = _trace_of(x)
    if tr is None:
        return value
    return tr._record(op, (x.node_id,), value)


def _binary(op, a, b, value):
    tr = _trace_of(a, b)
    if tr is None:
        return value
    return tr._record(op, (_nid(tr, a), _nid(tr, b)), value)


# ---------------------------------------------------------------------------
# scalar / elementwise primitives


def add(a, b):
    return _binary("add", a, b, _value(a) + _value(b))


def sub(a, b):
    return _binary("sub", a, b, _value(a) - _value(b))


def mul(a, b):
    return _binary("mul", a, b, _value(a) * _value(b))


def div(a, b):
    bv = _value(b)
    if isinstance(bv, np.ndarray):
        if np.any(bv == 0.0):
            raise DomainError("division by zero", bv)
    elif bv == 0.0:
        raise DomainError("division by zero", bv)
    return _binary("div", a, b, _value(a) / bv)


def pow_const(x, p):
    """x raised to a fixed (untraced) real exponent."""
    p = float(p)
    xv = _value(x)
    out = xv**p
    tr = _trace_of(x)
    if tr is None:
        return out
    return tr._record("pow_const", (x.node_id,), out, aux=p)


def exp(x):
    xv = _value(x)
    out = np.exp(xv) if isinstance(xv, np.ndarray) else math.exp(xv)
    return _unary("exp", x, out)


def log(x):
    xv = _value(x)
    if isinstance(xv, np.ndarray):
        if np.any(xv <= 0.0):
            raise DomainError("log of a non-positive value", xv)
        out = np.log(xv)
    else:
        if xv <= 0.0:
            raise DomainError("log of a non-positive value", xv)
        out = math.log(xv)
    return _unary("log", x, out)


def max0(x):
    """max(x, 0); the subgradient at exactly zero is zero."""
    xv = _value(x)
    out = np.maximum(xv, 0.0) if isinstance(xv, np.ndarray) else (xv if xv > 0.0 else 0.0)
    return _unary("max0", x, out)


def _sigmoid_value(x):
    if isinstance(x, np.ndarray):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    return _unary("sigmoid", x, _sigmoid_value(_value(x)))


def tanh(x):
    xv = _value(x)
    out = np.tanh(xv) if isinstance(xv, np.ndarray) else math.tanh(xv)
    return _unary("tanh", x, out)


def log2_1p(x):
    """log2(1 + x), defined for x > -1."""
    xv = _value(x)
    if isinstance(xv, np.ndarray):
        if np.any(xv <= -1.0):
            raise DomainError("log2_1p of a value at or below -1", xv)
        out = np.log1p(xv) / _LN2
    else:
        if xv <= -1.0:
            raise DomainError("log2_1p of a value at or below -1", xv)
        out = math.log1p(xv) / _LN2
    return _unary("log2_1p", x, out)


# ---------------------------------------------------------------------------
# array primitives


def matmul(a, b):
    """2-D matrix product."""
    av, bv = _value(a), _value(b)
    if getattr(av, "ndim", 0) != 2 or getattr(bv, "ndim", 0) != 2:
        raise ValueError("matmul expects two 2-D arrays")
    return _binary("matmul", a, b, av @ bv)


def gather_rows(x, idx):
    """Select rows of a 2-D array; repeated indices are allowed."""
    xv = _value(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = xv[idx]
    tr = _trace_of(x)
    if tr is None:
        return out
    return tr._record("gather_rows", (x.node_id,), out, aux=idx)


def concat_cols(parts):
    """Concatenate 2-D blocks with equal row counts along columns."""
    values = [_value(p) for p in parts]
    out = np.concatenate(values, axis=1)
    tr = _trace_of(*parts)
    if tr is None:
        return out
    widths = tuple(v.shape[1] for v in values)
    parents = tuple(_nid(tr, p) for p in parts)
    return tr._record("concat_cols", parents, out, aux=widths)


def item(x, index):
    """Extract one entry of an array as a scalar."""
    xv = _value(x)
    index = tuple(np.atleast_1d(index)) if isinstance(index, (tuple, list)) else (index,)
    out = float(xv[index])
    tr = _trace_of(x)
    if tr is None:
        return out
    return tr._record("item", (x.node_id,), out, aux=index)


# ---------------------------------------------------------------------------
# backward


def _shape(v):
    return v.shape if isinstance(v, np.ndarray) else ()


def _unbroadcast(g, ref):
    """Reduce an adjoint g to the shape of the operand it flows into."""
    shape = _shape(ref)
    if shape == ():
        return float(np.sum(g)) if isinstance(g, np.ndarray) else g
    out = g
    while out.ndim > len(shape):
        out = out.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and out.shape[ax] != 1:
            out = out.sum(axis=ax, keepdims=True)
    return out


def _bw_add(g, node, nodes):
    a, b = (nodes[p].value for p in node.parents)
    return _unbroadcast(g, a), _unbroadcast(g, b)


def _bw_sub(g, node, nodes):
    a, b = (nodes[p].value for p in node.parents)
    return _unbroadcast(g, a), _unbroadcast(g, b) * -1.0


def _bw_mul(g, node, nodes):
    a, b = (nodes[p].value for p in node.parents)
    return _unbroadcast(g * b, a), _unbroadcast(g * a, b)


def _bw_div(g, node, nodes):
    a, b = (nodes[p].value for p in node.parents)
    return _unbroadcast(g / b, a), _unbroadcast(-g * a / (b * b), b)


def _bw_pow_const(g, node, nodes):
    a = nodes[node.parents[0]].value
    p = node.aux
    return (g * p * a ** (p - 1.0),)


def _bw_exp(g, node, nodes):
    return (g * node.value,)


def _bw_log(g, node, nodes):
    return (g / nodes[node.parents[0]].value,)


def _bw_max0(g, node, nodes):
    a = nodes[node.parents[0]].value
    if isinstance(a, np.ndarray):
        return (g * (a > 0.0),)
    return (g if a > 0.0 else 0.0,)


def _bw_sigmoid(g, node, nodes):
    s = node.value
    return (g * s * (1.0 - s),)


def _bw_tanh(g, node, nodes):
    t = node.value
    return (g * (1.0 - t * t),)


def _bw_log2_1p(g, node, nodes):
    a = nodes[node.parents[0]].value
    return (g / ((1.0 + a) * _LN2),)


def _bw_matmul(g, node, nodes):
    a, b = (nodes[p].value for p in node.parents)
    return g @ b.T, a.T @ g


def _bw_gather_rows(g, node, nodes):
    x = nodes[node.parents[0]].value
    dx = np.zeros_like(x)
    np.add.at(dx, node.aux, g)
    return (dx,)


def _bw_concat_cols(g, node, nodes):
    outs = []
    start = 0
    for w in node.aux:
        outs.append(g[:, start : start + w])
        start += w
    return tuple(outs)


def _bw_item(g, node, nodes):
    x = nodes[node.parents[0]].value
    dx = np.zeros_like(x)
    dx[node.aux] = g
    return (dx,)


_BACKWARD = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "div": _bw_div,
    "pow_const": _bw_pow_const,
    "exp": _bw_exp,
    "log": _bw_log,
    "max0": _bw_max0,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "log2_1p": _bw_log2_1p,
    "matmul": _bw_matmul,
    "gather_rows": _bw_gather_rows,
    "concat_cols": _bw_concat_cols,
    "item": _bw_item,
}


def backward(trace, root):
    """Accumulate adjoints of root with respect to every tape node.

    Returns the adjoint list indexed by node id (None where no gradient
    flows); the same list is stored on trace.gradients. Constant nodes
    never receive adjoints.
    """
    if not isinstance(root, TracedValue) or root.trace is not trace:
        raise ValueError("root does not belong to this trace")
    nodes = trace.nodes
    adjoint = [None] * len(nodes)
    rv = root.value
    adjoint[root.node_id] = np.ones_like(rv) if isinstance(rv, np.ndarray) else 1.0
    for nid in range(root.node_id, -1, -1):
        g = adjoint[nid]
        if g is None:
            continue
        node = nodes[nid]
        if node.op in ("leaf", "const"):
            continue
        contribs = _BACKWARD[node.op](g, node, nodes)
        for pid, pg in zip(node.parents, contribs):
            if nodes[pid].op == "const":
                continue
            adjoint[pid] = pg if adjoint[pid] is None else adjoint[pid] + pg
    trace.gradients = adjoint
    return adjoint


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FiniteDiffReport:
    """Comparison of tape gradients against central finite differences.

    rel_err holds one entry per coordinate, NaN where the coordinate was
    flagged as a kink (one-sided slopes disagree) and excluded from
    max_rel_err.
    """

    max_rel_err: float
    rel_err: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    kinks: list


def finite_diff_check(f, x, eps=1e-5):
    """Check df/dx from the tape against central differences.

    f must accept a sequence of scalars (floats or traced values) and
    return a scalar of matching kind. Relative errors use an absolute
    floor of 1e-8 in the denominator. Coordinates sitting on a kink are
    detected by one-sided slope disagreement and excluded.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    tr = Trace()
    xs = [tr.var(float(v)) for v in x]
    y = f(xs)
    if isinstance(y, TracedValue):
        adj = backward(tr, y)
        analytic = np.array(
            [adj[v.node_id] if adj[v.node_id] is not None else 0.0 for v in xs]
        )
    else:
        analytic = np.zeros(n)

    base = [float(v) for v in x]
    f_hi = np.empty(n)
    f_lo = np.empty(n)
    numeric = np.empty(n)
    for i in range(n):
        hi = list(base)
        lo = list(base)
        hi[i] += eps
        lo[i] -= eps
        f_hi[i] = float(f(hi))
        f_lo[i] = float(f(lo))
        numeric[i] = (f_hi[i] - f_lo[i]) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel_err = np.abs(analytic - numeric) / denom

    kinks = []
    suspect = np.nonzero(rel_err > 1e-3)[0]
    if suspect.size:
        f0 = float(f(base))
        for i in suspect:
            fwd = (f_hi[i] - f0) / eps
            bwd = (f0 - f_lo[i]) / eps
            if abs(fwd - bwd) > 0.01 * max(abs(fwd), abs(bwd), 1.0):
                kinks.append(int(i))
                rel_err[i] = np.nan
    max_rel = float(np.nanmax(rel_err)) if np.any(np.isfinite(rel_err)) else 0.0
    return FiniteDiffReport(max_rel, rel_err, analytic, numeric, kinks)
