"""Minimal dense-tensor reverse-mode automatic differentiation.

Every value is a float64 numpy array of rank 1 to 3 wrapped in a :class:`Node`.
Nodes are created by :func:`forward_primitive` (or the thin wrappers
``matmul``, ``add``, ``relu`` ...), which records the parents and the primitive
kind so that :func:`backward` can replay the graph in reverse.

The primitive set is deliberately small: it is what the two-branch price
forecaster and the stateless baseline need, nothing more.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_RANK = 3


class ShapeMismatchError(ValueError):
    def __init__(self, kind: str, *shapes):
        shapes_txt = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{kind}: incompatible shapes {shapes_txt}")
        self.kind = kind
        self.shapes = shapes


class UnknownPrimitiveError(KeyError):
    pass


class NonScalarLossError(ValueError):
    pass


class NonDeterministicBuilderError(RuntimeError):
    pass


def _as_tensor(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > MAX_RANK:
        raise ValueError(f"tensor rank {arr.ndim} exceeds the cap of {MAX_RANK}")
    if 0 in arr.shape:
        raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
    return arr


class Node:
    """A value in the computation graph together with its accumulated gradient."""

    __slots__ = ("value", "grad", "parents", "kind", "attrs", "ctx", "name")

    def __init__(self, value, parents=(), kind="leaf", attrs=None, ctx=None, name=None):
        self.value = _as_tensor(value) if kind == "leaf" else value
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.kind = kind
        self.attrs = attrs or {}
        self.ctx = ctx
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node<{self.kind}{label} shape={self.shape}>"


def leaf(value, name=None) -> Node:
    """Wrap an array (parameter or constant input) as a graph leaf."""
    return Node(value, name=name)


# --- primitive definitions --------------------------------------------------
# Each forward returns (value, ctx); each backward maps (grad_out, node) to one
# gradient per parent.


def _matmul_fwd(a, b):
    if b.ndim != 2 or a.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return a @ b, None


def _matmul_bwd(g, node):
    a, b = (p.value for p in node.parents)
    da = g @ b.T
    db = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return da, db


def _suffix_broadcastable(big, small):
    return small.ndim <= big.ndim and big.shape[big.ndim - small.ndim:] == small.shape


def _reduce_to(g, shape):
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


def _add_fwd(a, b):
    if not _suffix_broadcastable(a, b):
        raise ShapeMismatchError("add", a.shape, b.shape)
    return a + b, None


def _add_bwd(g, node):
    return g, _reduce_to(g, node.parents[1].shape)


def _sub_fwd(a, b):
    if not _suffix_broadcastable(a, b):
        raise ShapeMismatchError("sub", a.shape, b.shape)
    return a - b, None


def _sub_bwd(g, node):
    return g, -_reduce_to(g, node.parents[1].shape)


def _mul_fwd(a, b):
    if not _suffix_broadcastable(a, b):
        raise ShapeMismatchError("mul", a.shape, b.shape)
    return a * b, None


def _mul_bwd(g, node):
    a, b = (p.value for p in node.parents)
    return g * b, _reduce_to(g * a, b.shape)


def _relu_fwd(x):
    return np.maximum(x, 0.0), None


def _relu_bwd(g, node):
    # subgradient 0 at the kink
    return (g * (node.parents[0].value > 0.0),)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigmoid_fwd(x):
    return _sigmoid(x), None


def _sigmoid_bwd(g, node):
    s = node.value
    return (g * s * (1.0 - s),)


def _tanh_fwd(x):
    return np.tanh(x), None


def _tanh_bwd(g, node):
    t = node.value
    return (g * (1.0 - t * t),)


def _concat_fwd(*xs):
    first = xs[0]
    for x in xs[1:]:
        if x.ndim != first.ndim or x.shape[:-1] != first.shape[:-1]:
            raise ShapeMismatchError("concat", first.shape, x.shape)
    return np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs]


def _concat_bwd(g, node):
    bounds = np.cumsum(node.ctx)[:-1]
    return tuple(np.split(g, bounds, axis=-1))


def _slice_fwd(x, axis=-1, start=0, stop=None):
    n = x.shape[axis]
    stop = n if stop is None else stop
    if not (0 <= start < stop <= n):
        raise ShapeMismatchError("slice", x.shape, (start, stop))
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return x[tuple(index)], tuple(index)


def _slice_bwd(g, node):
    dx = np.zeros_like(node.parents[0].value)
    dx[node.ctx] = g
    return (dx,)


def _reshape_fwd(x, shape=()):
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size or len(shape) > MAX_RANK:
        raise ShapeMismatchError("reshape", x.shape, shape)
    return x.reshape(shape), None


def _reshape_bwd(g, node):
    return (g.reshape(node.parents[0].shape),)


def _sum_fwd(x):
    return np.array([x.sum()]), None


def _sum_bwd(g, node):
    return (np.full_like(node.parents[0].value, g[0]),)


def _mae_fwd(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatchError("mae", pred.shape, target.shape)
    return np.array([np.abs(pred - target).mean()]), None


def _mae_bwd(g, node):
    pred, target = (p.value for p in node.parents)
    d = np.sign(pred - target) * (g[0] / pred.size)
    return d, -d


def _conv_pad(width):
    left = (width - 1) // 2
    return left, width - 1 - left


def _conv1d_fwd(x, w, b):
    """Stride-1 'same' convolution: x (batch, length, c_in), w (width, c_in, c_out)."""
    squeeze = x.ndim == 2
    xb = x[None] if squeeze else x
    if (xb.ndim != 3 or w.ndim != 3 or b.ndim != 1 or w.shape[1] != xb.shape[2]
            or b.shape[0] != w.shape[2] or w.shape[0] > xb.shape[1]):
        raise ShapeMismatchError("conv1d", x.shape, w.shape, b.shape)
    width, c_in, c_out = w.shape
    length = xb.shape[1]
    left, right = _conv_pad(width)
    xp = np.pad(xb, ((0, 0), (left, right), (0, 0)))
    cols = np.stack([xp[:, j:j + length, :] for j in range(width)], axis=2)
    cols = cols.reshape(xb.shape[0], length, width * c_in)
    out = cols @ w.reshape(width * c_in, c_out) + b
    return (out[0] if squeeze else out), cols


def _conv1d_bwd(g, node):
    x, w, _ = (p.value for p in node.parents)
    cols = node.ctx
    gb = g[None] if g.ndim == 2 else g
    width, c_in, c_out = w.shape
    batch, length = gb.shape[0], gb.shape[1]
    g2 = gb.reshape(-1, c_out)
    dw = (cols.reshape(-1, width * c_in).T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    dcols = (g2 @ w.reshape(width * c_in, c_out).T).reshape(batch, length, width, c_in)
    left, right = _conv_pad(width)
    dxp = np.zeros((batch, length + left + right, c_in))
    for j in range(width):
        dxp[:, j:j + length, :] += dcols[:, :, j, :]
    dx = dxp[:, left:left + length, :]
    return (dx[0] if x.ndim == 2 else dx), dw, db


def _lstm_fwd(x, w_x, w_h, b):
    """Fused LSTM over a (batch, steps, features) sequence; returns the last hidden state.

    Gate column blocks are ordered input, forget, output, candidate.
    """
    if x.ndim != 3 or w_x.shape[0] != x.shape[2] or w_h.shape[1] != 4 * w_h.shape[0] \
            or w_x.shape[1] != w_h.shape[1] or b.shape != (w_h.shape[1],):
        raise ShapeMismatchError("lstm", x.shape, w_x.shape, w_h.shape, b.shape)
    batch, steps, _ = x.shape
    units = w_h.shape[0]
    # time-major buffers: gates hold activated values, tcs holds tanh(c_t)
    gates = (x @ w_x + b).transpose(1, 0, 2).copy()
    hs = np.zeros((steps + 1, batch, units))
    cs = np.zeros((steps + 1, batch, units))
    tcs = np.empty((steps, batch, units))
    sig = slice(0, 3 * units)
    for t in range(steps):
        a = gates[t]
        a += hs[t] @ w_h
        # sigmoid(v) = 0.5 * (1 + tanh(v / 2))
        s = a[:, sig]
        s *= 0.5
        np.tanh(s, out=s)
        s += 1.0
        s *= 0.5
        np.tanh(a[:, 3 * units:], out=a[:, 3 * units:])
        c = cs[t + 1]
        np.multiply(a[:, units:2 * units], cs[t], out=c)
        c += a[:, :units] * a[:, 3 * units:]
        np.tanh(c, out=tcs[t])
        np.multiply(a[:, 2 * units:3 * units], tcs[t], out=hs[t + 1])
    return hs[steps].copy(), (hs, cs, tcs, gates)


def _lstm_bwd(g, node):
    x, w_x, w_h, _ = (p.value for p in node.parents)
    hs, cs, tcs, gates = node.ctx
    steps, batch, four_units = gates.shape
    units = four_units // 4
    w_h_t = np.ascontiguousarray(w_h.T)
    dh = g.copy()
    dc = np.zeros_like(g)
    da_all = np.empty_like(gates)
    for t in range(steps - 1, -1, -1):
        a = gates[t]
        gi = a[:, :units]
        gf = a[:, units:2 * units]
        go = a[:, 2 * units:3 * units]
        gc = a[:, 3 * units:]
        tc = tcs[t]
        dc += dh * go * (1.0 - tc * tc)
        da = da_all[t]
        np.multiply(dc * gc, gi * (1.0 - gi), out=da[:, :units])
        np.multiply(dc * cs[t], gf * (1.0 - gf), out=da[:, units:2 * units])
        np.multiply(dh * tc, go * (1.0 - go), out=da[:, 2 * units:3 * units])
        np.multiply(dc * gi, 1.0 - gc * gc, out=da[:, 3 * units:])
        np.matmul(da, w_h_t, out=dh)
        dc *= gf
    flat = da_all.reshape(-1, four_units)
    dw_h = hs[:-1].reshape(-1, units).T @ flat
    x_tm = x.transpose(1, 0, 2).reshape(-1, x.shape[2])
    dw_x = x_tm.T @ flat
    db = flat.sum(axis=0)
    dx = (da_all @ w_x.T).transpose(1, 0, 2)
    return dx, dw_x, dw_h, db


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    backward: Callable
    arity: int | None  # None: variadic


PRIMITIVES: dict[str, Primitive] = {
    "matmul": Primitive(_matmul_fwd, _matmul_bwd, 2),
    "add": Primitive(_add_fwd, _add_bwd, 2),
    "sub": Primitive(_sub_fwd, _sub_bwd, 2),
    "mul": Primitive(_mul_fwd, _mul_bwd, 2),
    "relu": Primitive(_relu_fwd, _relu_bwd, 1),
    "sigmoid": Primitive(_sigmoid_fwd, _sigmoid_bwd, 1),
    "tanh": Primitive(_tanh_fwd, _tanh_bwd, 1),
    "concat": Primitive(_concat_fwd, _concat_bwd, None),
    "slice": Primitive(_slice_fwd, _slice_bwd, 1),
    "reshape": Primitive(_reshape_fwd, _reshape_bwd, 1),
    "sum": Primitive(_sum_fwd, _sum_bwd, 1),
    "mae": Primitive(_mae_fwd, _mae_bwd, 2),
    "conv1d": Primitive(_conv1d_fwd, _conv1d_bwd, 3),
    "lstm": Primitive(_lstm_fwd, _lstm_bwd, 4),
}


def forward_primitive(kind: str, inputs: Sequence[Node], **attrs) -> Node:
    """Apply primitive ``kind`` to ``inputs`` and record it in the graph."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise UnknownPrimitiveError(f"unknown primitive kind {kind!r}") from None
    if prim.arity is not None and len(inputs) != prim.arity:
        raise ValueError(f"{kind} takes {prim.arity} inputs, got {len(inputs)}")
    value, ctx = prim.forward(*(n.value for n in inputs), **attrs)
    return Node(value, parents=inputs, kind=kind, attrs=attrs, ctx=ctx)


def matmul(a, b): return forward_primitive("matmul", [a, b])
def add(a, b): return forward_primitive("add", [a, b])
def sub(a, b): return forward_primitive("sub", [a, b])
def mul(a, b): return forward_primitive("mul", [a, b])
def relu(x): return forward_primitive("relu", [x])
def sigmoid(x): return forward_primitive("sigmoid", [x])
def tanh(x): return forward_primitive("tanh", [x])
def concat(*xs): return forward_primitive("concat", list(xs))
def reshape(x, shape): return forward_primitive("reshape", [x], shape=tuple(shape))
def sum_all(x): return forward_primitive("sum", [x])
def mae(pred, target): return forward_primitive("mae", [pred, target])
def conv1d(x, w, b): return forward_primitive("conv1d", [x, w, b])
def lstm(x, w_x, w_h, b): return forward_primitive("lstm", [x, w_x, w_h, b])


def slice_(x, start, stop, axis=-1):
    return forward_primitive("slice", [x], axis=axis, start=start, stop=stop)


def dense(x, w, b):
    return add(matmul(x, w), b)


# --- reverse pass -----------------------------------------------------------


def _topological_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents if id(p) not in seen)
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every ancestor of ``loss``.

    Gradients accumulate: a second call without zeroing doubles them.
    """
    if loss.shape != (1,):
        raise NonScalarLossError(f"backward needs a scalar loss of shape (1,), got {loss.shape}")
    order = _topological_order(loss)
    adjoint = {id(loss): np.ones(1)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if not node.parents:
            continue
        grads = PRIMITIVES[node.kind].backward(g, node)
        for parent, pg in zip(node.parents, grads):
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


# --- gradient checking ------------------------------------------------------


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if v > self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(builder: Callable[[dict[str, Node]], Node], params: dict[str, np.ndarray],
               tolerance: float = 1e-4, step: float = 1e-5,
               max_entries: int | None = None, rng=None) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``builder`` maps a dict of parameter leaves to a scalar loss node. With
    ``max_entries`` set, at most that many entries per parameter are checked,
    sampled with ``rng``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        return builder({k: leaf(v, name=k) for k, v in values.items()})

    leaves = {k: leaf(v, name=k) for k, v in params.items()}
    loss = builder(leaves)
    again = evaluate(params)
    if not np.array_equal(loss.value, again.value):
        raise NonDeterministicBuilderError(
            f"builder returned {loss.value[0]!r} then {again.value[0]!r} at identical parameters")
    backward(loss)

    rng = np.random.default_rng(0) if rng is None else rng
    report = GradCheckReport(tolerance)
    for name, value in params.items():
        flat_idx = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_idx = np.sort(rng.choice(value.size, size=max_entries, replace=False))
        analytic = leaves[name].grad.reshape(-1)
        worst = 0.0
        for i in flat_idx:
            perturbed = dict(params)
            shifted = value.copy().reshape(-1)
            orig = shifted[i]
            shifted[i] = orig + step
            perturbed[name] = shifted.reshape(value.shape)
            up = evaluate(perturbed).value[0]
            shifted[i] = orig - step
            down = evaluate(perturbed).value[0]
            numeric = (up - down) / (2 * step)
            g = analytic[i]
            err = abs(g - numeric) / max(1e-8, abs(g) + abs(numeric))
            worst = max(worst, err)
        report.max_rel_error[name] = worst
        report.checked[name] = len(flat_idx)
    return report
