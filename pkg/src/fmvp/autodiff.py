"""Dense tensors with reverse-mode gradients.

Values are numpy arrays (float32 in normal use; float64 flows through
unchanged so gradient checks can run in double precision).  A :class:`Node`
holds a value, its parent nodes and a vector-Jacobian product closure.
:func:`backward` walks the graph once in reverse topological order.

Only same-shape elementwise arithmetic is supported; use ``broadcast``
explicitly where a smaller tensor must be expanded.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float32
MAX_RANK = 5

_leaf_ids = itertools.count()


class ShapeError(ValueError):
    """Incompatible operand shapes for a primitive."""

    def __init__(self, kind: str, *extents, detail: str = ""):
        self.kind = kind
        self.extents = tuple(tuple(e) if isinstance(e, (tuple, list)) else e for e in extents)
        msg = f"{kind}: incompatible shapes {', '.join(map(str, self.extents))}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ContractError(ValueError):
    """A documented precondition was violated."""


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "vjp", "kind", "name", "trainable", "requires_grad", "spent")

    def __init__(self, value, parents=(), vjp=None, kind="leaf", name=None, trainable=False):
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.kind = kind
        self.name = name
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in self.parents)
        self.spent = False
        if not self.requires_grad:
            # nothing upstream wants gradients: drop the graph
            self.parents = ()
            self.vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return hadamard(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __repr__(self):
        tag = self.name or self.kind
        return f"Node({tag}, shape={self.shape}, dtype={self.value.dtype})"


def leaf(value, name: str | None = None, trainable: bool = True) -> Node:
    arr = _as_array(value)
    if name is None:
        name = f"leaf{next(_leaf_ids)}"
    return Node(arr, kind="leaf", name=name, trainable=trainable)


def constant(value) -> Node:
    return Node(_as_array(value), kind="leaf", trainable=False)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DTYPE)
    if arr.ndim > MAX_RANK:
        raise ShapeError("tensor", arr.shape, detail=f"rank above {MAX_RANK}")
    return arr


def _make(value, parents, vjp, kind) -> Node:
    return Node(value, parents, vjp, kind)


def _same_shape(kind, a: Node, b: Node):
    if a.shape != b.shape:
        raise ShapeError(kind, a.shape, b.shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("add", a, b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("sub", a, b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def hadamard(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _same_shape("hadamard", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "hadamard")


def scalar_mul(a, c: float) -> Node:
    a = as_node(a)
    c = a.value.dtype.type(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scalar-mul")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu_grad(x, s):
    return s * (1.0 + x * (1.0 - s))


def silu(a) -> Node:
    a = as_node(a)
    x = a.value
    s = _sigmoid(x)
    return _make(x * s, (a,), lambda g: (g * _silu_grad(x, s),), "silu")


def relu(a) -> Node:
    a = as_node(a)
    x = a.value
    pos = x > 0
    return _make(np.where(pos, x, 0).astype(x.dtype), (a,), lambda g: (g * pos,), "relu")


def tanh(a) -> Node:
    a = as_node(a)
    y = np.tanh(a.value)
    return _make(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def clamp01(a) -> Node:
    """Clip to [0, 1]; gradient passes where the input lies in [0, 1], else 0."""
    a = as_node(a)
    x = a.value
    inside = (x >= 0) & (x <= 1)
    return _make(np.clip(x, 0, 1), (a,), lambda g: (g * inside,), "clamp01")


# ------------------------------------------------------------------ reductions


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def sum(a, axes=None) -> Node:  # noqa: A001 - primitive name
    a = as_node(a)
    shape = a.shape
    ax = _norm_axes(axes, a.value.ndim)
    out = a.value.sum(axis=ax, keepdims=True)
    kept = out.shape
    out = out.reshape([s for i, s in enumerate(kept) if i not in ax]) if axes is not None else out.reshape(())
    return _make(out, (a,), lambda g: (np.broadcast_to(g.reshape(kept), shape),), "sum")


def mean(a, axes=None) -> Node:
    a = as_node(a)
    ax = _norm_axes(axes, a.value.ndim)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    return scalar_mul(sum(a, axes), 1.0 / count) if count != 1 else sum(a, axes)


def l2norm(a) -> Node:
    a = as_node(a)
    x = a.value
    n = np.sqrt(np.sum(x.astype(np.float64) ** 2)).astype(x.dtype)

    def vjp(g):
        if n == 0:
            return (np.zeros_like(x),)
        return (x * (g / n),)

    return _make(n.reshape(()), (a,), vjp, "l2norm")


# --------------------------------------------------------------------- shaping


def reshape(a, shape: Sequence[int]) -> Node:
    a = as_node(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.value.size or len(shape) > MAX_RANK:
        raise ShapeError("reshape", a.shape, shape)
    orig = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def concat_channel(*nodes) -> Node:
    nodes = [as_node(n) for n in nodes]
    ref = nodes[0].shape
    for n in nodes[1:]:
        if len(n.shape) != len(ref) or n.shape[:1] + n.shape[2:] != ref[:1] + ref[2:]:
            raise ShapeError("concat-channel", ref, n.shape)
    splits = np.cumsum([n.shape[1] for n in nodes])[:-1]
    out = np.concatenate([n.value for n in nodes], axis=1)
    return _make(out, nodes, lambda g: tuple(np.split(g, splits, axis=1)), "concat-channel")


def slice_channel(a, lo: int, hi: int) -> Node:
    """Channels ``lo:hi`` of a (B, C, ...) tensor; inverse of concat-channel."""
    a = as_node(a)
    if not 0 <= lo < hi <= a.shape[1]:
        raise ShapeError("slice-channel", a.shape, (lo, hi))
    src = a.value

    def vjp(g):
        full = np.zeros_like(src)
        full[:, lo:hi] = g
        return (full,)

    return _make(src[:, lo:hi], (a,), vjp, "slice-channel")


def broadcast(a, shape: Sequence[int]) -> Node:
    """Expand singleton axes of ``a`` to ``shape`` (ranks must match)."""
    a = as_node(a)
    shape = tuple(int(s) for s in shape)
    src = a.shape
    if len(src) != len(shape) or any(s != 1 and s != t for s, t in zip(src, shape)):
        raise ShapeError("broadcast", src, shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(src, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(a.value, shape)
    return _make(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),), "broadcast")


# ---------------------------------------------------------------------- linear


def linear(x, w, b=None) -> Node:
    """``x @ w.T + b`` with x (B, in), w (out, in), b (out,)."""
    x, w = as_node(x), as_node(w)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError("linear", x.shape, w.shape)
    out = x.value @ w.value.T
    parents = [x, w]
    if b is not None:
        b = as_node(b)
        if b.shape != (w.shape[0],):
            raise ShapeError("linear", w.shape, b.shape, detail="bias")
        out = out + b.value
        parents.append(b)
    xv, wv = x.value, w.value

    def vjp(g):
        grads = [g @ wv if x.requires_grad else None, g.T @ xv if w.requires_grad else None]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, vjp, "linear")


# ---------------------------------------------------------------------- conv3d


def _conv_plan(spatial, ksize):
    pads = tuple(k // 2 for k in ksize)
    padded = tuple(s + 2 * p for s, p in zip(spatial, pads))
    strides = (padded[1] * padded[2], padded[2], 1)
    shifts = [i * strides[0] + j * strides[1] + k for i in range(ksize[0]) for j in range(ksize[1]) for k in range(ksize[2])]
    n_full = padded[0] * padded[1] * padded[2]
    span = n_full - shifts[-1]
    return pads, padded, shifts, span


def _pad_flat(x, pads):
    B, C = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in pads))
    return xp.reshape(B, C, -1)


def _unflatten(out, spatial, padded, span):
    """Map values indexed by top-left corner in the padded flat grid to (T,H,W)."""
    B, O = out.shape[:2]
    n_full = padded[0] * padded[1] * padded[2]
    full = np.zeros((B, O, n_full), out.dtype)
    full[:, :, :span] = out
    T, H, W = spatial
    return full.reshape(B, O, *padded)[:, :, :T, :H, :W]


def _correlate(x, k):
    """Zero-padded 'same' cross-correlation, stride 1, odd kernels."""
    B, C, T, H, W = x.shape
    O = k.shape[0]
    ksize = k.shape[2:]
    pads, padded, shifts, span = _conv_plan((T, H, W), ksize)
    xp = _pad_flat(x, pads)
    nk = len(shifts)
    if C < O:
        cols = np.empty((B, nk, C, span), x.dtype)
        for i, s in enumerate(shifts):
            cols[:, i] = xp[:, :, s:s + span]
        km = k.transpose(0, 2, 3, 4, 1).reshape(O, nk * C)
        out = np.matmul(km, cols.reshape(B, nk * C, span))
    else:
        kall = k.transpose(2, 3, 4, 0, 1).reshape(nk * O, C)
        y = np.matmul(kall, xp).reshape(B, nk, O, -1)
        out = y[:, 0, :, :span].copy()
        for i in range(1, nk):
            s = shifts[i]
            out += y[:, i, :, s:s + span]
    return _unflatten(out, (T, H, W), padded, span)


def _kernel_grad(x, g, ksize):
    B, C, T, H, W = x.shape
    O = g.shape[1]
    pads, padded, shifts, span = _conv_plan((T, H, W), ksize)
    xp = _pad_flat(x, pads)
    # gradient placed on the padded grid at top-left-corner indices
    gfull = np.zeros((B, O) + padded, g.dtype)
    gfull[:, :, :T, :H, :W] = g
    gflat = gfull.reshape(B, O, -1)[:, :, :span]
    nk = len(shifts)
    dk = np.zeros((O, nk, C), np.result_type(x.dtype, g.dtype))
    for b in range(B):
        cols = np.empty((nk, C, span), xp.dtype)
        for i, s in enumerate(shifts):
            cols[i] = xp[b, :, s:s + span]
        dk += (gflat[b] @ cols.reshape(nk * C, span).T).reshape(O, nk, C)
    return dk.reshape(O, *ksize, C).transpose(0, 4, 1, 2, 3)


def conv3d(x, k, b=None) -> Node:
    """3D convolution (cross-correlation), stride 1, 'same' zero padding.

    x: (B, Cin, T, H, W); k: (Cout, Cin, kt, kh, kw) with odd extents; b: (Cout,).
    """
    x, k = as_node(x), as_node(k)
    if x.value.ndim != 5 or k.value.ndim != 5 or x.shape[1] != k.shape[1]:
        raise ShapeError("conv3d", x.shape, k.shape)
    if any(e % 2 == 0 for e in k.shape[2:]):
        raise ShapeError("conv3d", k.shape, detail="kernel extents must be odd")
    xv, kv = x.value, k.value
    out = _correlate(xv, kv)
    parents = [x, k]
    if b is not None:
        b = as_node(b)
        if b.shape != (k.shape[0],):
            raise ShapeError("conv3d", k.shape, b.shape, detail="bias")
        out = out + b.value.reshape(1, -1, 1, 1, 1)
        parents.append(b)

    def vjp(g):
        gx = gk = None
        if x.requires_grad:
            flipped = kv[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
            gx = _correlate(np.ascontiguousarray(g), np.ascontiguousarray(flipped))
        if k.requires_grad:
            gk = _kernel_grad(xv, g, kv.shape[2:])
        grads = [gx, gk]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    return _make(out, parents, vjp, "conv3d")


def avg_pool(a, size: int = 2) -> Node:
    """Non-overlapping average pooling over (T, H, W)."""
    a = as_node(a)
    B, C, T, H, W = a.shape
    if T % size or H % size or W % size:
        raise ShapeError("avg-pool", a.shape, detail=f"extents not divisible by {size}")
    out = a.value.reshape(B, C, T // size, size, H // size, size, W // size, size).mean(axis=(3, 5, 7))
    scale = 1.0 / size**3

    def vjp(g):
        gg = np.repeat(np.repeat(np.repeat(g, size, axis=2), size, axis=3), size, axis=4)
        return (gg * a.value.dtype.type(scale),)

    return _make(out, (a,), vjp, "avg-pool")


def cross_entropy(logits, labels) -> Node:
    """Mean softmax cross-entropy; labels are integer class indices."""
    logits = as_node(logits)
    z = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError("cross-entropy", z.shape, labels.shape)
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / z.shape[0]),)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), vjp, "cross-entropy")


PRIMITIVES: dict[str, Callable[..., Node]] = {
    "add": add,
    "sub": sub,
    "hadamard": hadamard,
    "scalar-mul": scalar_mul,
    "linear": linear,
    "conv3d": conv3d,
    "silu": silu,
    "relu": relu,
    "tanh": tanh,
    "clamp01": clamp01,
    "sum": sum,
    "mean": mean,
    "l2norm": l2norm,
    "reshape": reshape,
    "concat-channel": concat_channel,
    "slice-channel": slice_channel,
    "broadcast": broadcast,
    "avg-pool": avg_pool,
    "cross-entropy": cross_entropy,
}


def apply_primitive(kind: str, *inputs, **attrs) -> Node:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **attrs)


# -------------------------------------------------------------------- backward


def _topo_order(root: Node) -> list[Node]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, inputs: Iterable[Node] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every reachable trainable leaf, keyed by name.

    A graph can be differentiated once; a second call raises ContractError.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.spent:
        raise ContractError("graph already differentiated; rebuild it before calling backward again")
    grads: dict[str, np.ndarray] = {}
    if not loss.requires_grad:
        loss.spent = True
        return grads
    order = _topo_order(loss)
    for node in order:
        if node.spent and not node.is_leaf:
            raise ContractError(f"node {node!r} belongs to an already differentiated graph")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if not node.is_leaf:
            node.spent = True
        if g is None:
            continue
        if node.is_leaf:
            if node.trainable:
                if node.name in grads:
                    raise ContractError(f"duplicate leaf name {node.name!r}")
                grads[node.name] = np.asarray(g, dtype=node.value.dtype).reshape(node.shape)
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in pending:
                pending[id(p)] = pending[id(p)] + pg
            else:
                pending[id(p)] = pg
        # free closure state held by this node
        node.vjp = None
        node.parents = ()
    return grads


# ------------------------------------------------------------------ grad check


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3

    @property
    def failed(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed


def grad_check(
    builder: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, np.ndarray],
    h: float = 1e-3,
    tol: float = 1e-3,
    floor: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    ``builder`` maps a dict of leaves to a scalar loss node.  The relative
    error of an entry is ``|a - n| / max(|a|, |n|, floor)``; the report holds
    the maximum per leaf.  ``max_entries`` caps the number of coordinates
    probed per leaf (chosen at random with ``seed``).
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    report = GradCheckReport(tol=tol)
    if not base:
        return report

    def evaluate(values, trainable):
        leaves = {k: Node(v, kind="leaf", name=k, trainable=trainable) for k, v in values.items()}
        return builder(leaves)

    analytic = backward(evaluate(base, True))
    picker = np.random.default_rng(seed)
    for name, arr in base.items():
        grad = analytic.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = picker.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = float(evaluate(base, False).value)
            flat[i] = old - h
            fm = float(evaluate(base, False).value)
            flat[i] = old
            num = (fp - fm) / (2 * h)
            ana = float(grad.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
        report.errors[name] = worst
    return report
