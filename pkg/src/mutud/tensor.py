"""Dense float64 tensors with reverse-mode differentiation.

A deliberately small op inventory: elementwise arithmetic, matrix multiply,
axis reductions (sum/mean/L2 norm), dot, exp/log/sqrt/abs, clipping,
concatenation, basic slicing, and the data-movement ops reshape/transpose.
Broadcasting follows numpy's trailing-alignment rules.

Every operation that touches a gradient-carrying tensor appends one entry to
an implicit recording (a monotone sequence number per op). `backward` replays
the entries reachable from a scalar loss in exact reverse recording order and
accumulates exactly one adjoint per tensor. All storage is float64; arrays
are frozen after construction so recorded values cannot drift.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputationRecord",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "assert_finite",
    "backward",
    "concat",
    "cosine_similarity",
    "no_grad",
    "record_for",
    "softmax_tempered",
    "tensor",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible; message names the op and shapes."""


class GraphError(RuntimeError):
    """Backward was asked for something the recording cannot provide."""


class NonFiniteError(FloatingPointError):
    """A value failed an explicit finiteness check."""


_SEQ = itertools.count()
_STATE = threading.local()


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager that disables recording (forward values unchanged)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


def _freeze(a: np.ndarray) -> np.ndarray:
    try:
        a.flags.writeable = False
    except ValueError:
        pass  # view of an already frozen base
    return a


def _as_f64(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    return a


class _Op:
    """One recorded primitive: output of `op` over `inputs`, with its vjp."""

    __slots__ = ("seq", "op", "inputs", "out", "vjp")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], out: "Tensor",
                 vjp: Callable[[np.ndarray], tuple]):
        self.seq = next(_SEQ)
        self.op = op
        self.inputs = inputs
        self.out = out
        self.vjp = vjp


class Tensor:
    """Immutable dense float64 array, optionally carrying gradient state."""

    __slots__ = ("data", "requires_grad", "grad", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _freeze(np.array(data, dtype=np.float64, copy=True))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: _Op | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        if self.ndim == 0:
            raise ShapeError("len: 0-d tensor has no length")
        return self.shape[0]

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return _elementwise("add", self, other, np.add,
                            lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _elementwise("sub", self, other, np.subtract,
                            lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _elementwise("sub", _coerce(other), self, np.subtract,
                            lambda g, a, b: (g, -g))

    def __mul__(self, other):
        return _elementwise("mul", self, other, np.multiply,
                            lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _elementwise("div", self, other, np.divide,
                            lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _elementwise("div", _coerce(other), self, np.divide,
                            lambda g, a, b: (g / b, -g * a / (b * b)))

    def __neg__(self):
        return _unary("neg", self, lambda a: -a, lambda g, a, out: -g)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        if p == 2:
            return self * self
        raise ShapeError("pow: only exponent 2 is supported (use mul/sqrt/exp)")

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _unary(
            "reshape", self,
            lambda a: a.reshape(shape),
            lambda g, a, out: g.reshape(a.shape),
            op_label=f"reshape{shape}",
        )

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError(f"transpose: expected 2-d tensor, got shape {self.shape}")
        return _unary("transpose", self, lambda a: a.T.copy(),
                      lambda g, a, out: g.T)

    def __getitem__(self, idx) -> "Tensor":
        data = self.data[idx]

        def vjp(g, a=self.data, idx=idx):
            z = np.zeros_like(a)
            z[idx] = g
            return (z,)

        return _make("slice", (self,), np.array(data, dtype=np.float64, copy=True), vjp)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def vjp(g, a=self.data, axis=axis, keepdims=keepdims):
            return (_spread(g, a.shape, axis, keepdims),)

        return _make("sum", (self,), self.data.sum(axis=axis, keepdims=keepdims), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else _axis_count(self.shape, axis)

        def vjp(g, a=self.data, axis=axis, keepdims=keepdims, n=n):
            return (_spread(g, a.shape, axis, keepdims) / n,)

        return _make("mean", (self,), self.data.mean(axis=axis, keepdims=keepdims), vjp)

    def norm(self, axis=None, keepdims: bool = False) -> "Tensor":
        """L2 norm over `axis` (all axes when None). Subgradient 0 at 0."""
        out = np.sqrt((self.data * self.data).sum(axis=axis, keepdims=keepdims))

        def vjp(g, a=self.data, out=out, axis=axis, keepdims=keepdims):
            denom = np.where(out > 0.0, out, 1.0)
            gs = _spread(g / denom, a.shape, axis, keepdims)
            return (gs * a,)

        return _make("norm", (self,), out, vjp)

    # -- pointwise functions -------------------------------------------------

    def exp(self) -> "Tensor":
        return _unary("exp", self, np.exp, lambda g, a, out: g * out)

    def log(self) -> "Tensor":
        return _unary("log", self, np.log, lambda g, a, out: g / a)

    def sqrt(self) -> "Tensor":
        return _unary("sqrt", self, np.sqrt, lambda g, a, out: g / (2.0 * out))

    def abs(self) -> "Tensor":
        return _unary("abs", self, np.abs, lambda g, a, out: g * np.sign(a))

    def clip(self, lo: float | None = None, hi: float | None = None) -> "Tensor":
        def vjp(g, a=self.data, lo=lo, hi=hi):
            mask = np.ones_like(a)
            if lo is not None:
                mask = mask * (a >= lo)
            if hi is not None:
                mask = mask * (a <= hi)
            return (g * mask,)

        return _make("clip", (self,), np.clip(self.data, lo, hi), vjp)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_as_f64(x))


def _make(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
          vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _freeze(np.asarray(out_data, dtype=np.float64))
    out.grad = None
    out._op = None
    track = _grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    if track:
        out._op = _Op(op, inputs, out, vjp)
    return out


def _unary(op, t: Tensor, fn, vjp_fn, op_label: str | None = None) -> Tensor:
    out_data = fn(t.data)

    def vjp(g, a=t.data, out=out_data):
        return (vjp_fn(g, a, out),)

    return _make(op_label or op, (t,), out_data, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _elementwise(op, a, b, fn, grads) -> Tensor:
    ta, tb = _coerce(a), _coerce(b)
    try:
        np.broadcast_shapes(ta.shape, tb.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {ta.shape} and {tb.shape} do not broadcast") from None
    out_data = fn(ta.data, tb.data)

    def vjp(g, da=ta.data, db=tb.data, grads=grads,
            sa=ta.shape, sb=tb.shape):
        ga, gb = grads(g, da, db)
        return (_unbroadcast(ga, sa), _unbroadcast(gb, sb))

    return _make(op, (ta, tb), out_data, vjp)


def _axis_count(shape, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back over the reduced axes."""
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        gshape = list(np.shape(g))
        for ax in sorted(axes):
            gshape.insert(ax, 1)
        g = np.reshape(g, gshape)
    return np.broadcast_to(g, shape).copy()


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ta, tb = _coerce(a), _coerce(b)
    if ta.ndim != 2 or tb.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {ta.shape} and {tb.shape}")
    if ta.shape[1] != tb.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {ta.shape} vs {tb.shape}")
    out = ta.data @ tb.data

    def vjp(g, da=ta.data, db=tb.data):
        return (g @ db.T, da.T @ g)

    return _make("matmul", (ta, tb), out, vjp)


def dot(a: Tensor, b: Tensor) -> Tensor:
    ta, tb = _coerce(a), _coerce(b)
    if ta.ndim != 1 or tb.ndim != 1 or ta.shape != tb.shape:
        raise ShapeError(f"dot: expected equal 1-d operands, got {ta.shape} and {tb.shape}")
    out = np.dot(ta.data, tb.data)

    def vjp(g, da=ta.data, db=tb.data):
        return (g * db, g * da)

    return _make("dot", (ta, tb), out, vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(_coerce(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: empty input list")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.shape for t in ts]} do not align on axis {axis}"
        ) from None
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g, axis=axis, offsets=offsets, n=len(ts)):
        sl = [slice(None)] * g.ndim
        parts = []
        for i in range(n):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _make("concat", ts, out, vjp)


def assert_finite(t: Tensor | np.ndarray, context: str = "tensor") -> None:
    """Explicit NaN/Inf check; values are never screened silently elsewhere."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{context}: non-finite values detected")


# -- composite numeric kernels ------------------------------------------------

def softmax_tempered(v: Tensor, tau: float, axis: int = -1) -> Tensor:
    """Softmax of `tau * v` over `axis`, shifted by the (detached) row max.

    Output rows are positive and sum to 1; tau == 0 gives the uniform
    distribution. The max shift leaves both value and gradient unchanged.
    """
    v = _coerce(v)
    if not np.isfinite(tau):
        raise NonFiniteError("softmax_tempered: tau must be finite")
    z = v * float(tau)
    shift = np.max(z.data, axis=axis, keepdims=True)
    e = (z - Tensor(shift)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def cosine_similarity(x: Tensor, y: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalized inner product of two same-length vectors, clipped to [-1, 1].

    Each norm is floored at `eps`, so zero vectors yield 0 instead of NaN.
    """
    tx, ty = _coerce(x), _coerce(y)
    if tx.ndim != 1 or ty.ndim != 1 or tx.shape != ty.shape:
        raise ShapeError(f"cosine_similarity: expected equal 1-d operands, got {tx.shape} and {ty.shape}")
    num = dot(tx, ty)
    den = tx.norm().clip(lo=eps) * ty.norm().clip(lo=eps)
    return (num / den).clip(-1.0, 1.0)


# -- reverse-mode replay -------------------------------------------------------

class ComputationRecord:
    """Ordered list of the recorded ops reachable from one output tensor."""

    __slots__ = ("ops",)

    def __init__(self, ops: list[_Op]):
        self.ops = ops

    def __len__(self):
        return len(self.ops)

    def op_names(self) -> list[str]:
        return [op.op for op in self.ops]


def record_for(out: Tensor) -> ComputationRecord:
    """Collect the ops reachable from `out`, in recording order."""
    seen: set[int] = set()
    ops: list[_Op] = []
    stack = [out]
    while stack:
        t = stack.pop()
        op = t._op
        if op is None or id(op) in seen:
            continue
        seen.add(id(op))
        ops.append(op)
        stack.extend(op.inputs)
    ops.sort(key=lambda o: o.seq)
    return ComputationRecord(ops)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) for every gradient-carrying leaf.

    Replays the recording in exact reverse order, so repeated calls on the
    same graph produce identical gradients. When `params` is given, the
    returned map covers exactly those tensors, with zeros for any parameter
    the loss does not reach; otherwise the leaves are discovered from the
    recording and an unconnected loss is an error. Leaf `.grad` attributes
    are overwritten (one accumulated adjoint per backward pass).
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    record = record_for(loss)
    if not record.ops and params is None:
        raise GraphError("backward: loss is not connected to any gradient-carrying leaf")

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    keep: dict[int, Tensor] = {id(loss): loss}
    for op in reversed(record.ops):
        g = adjoint.get(id(op.out))
        if g is None:
            continue
        contribs = op.vjp(g)
        for inp, contrib in zip(op.inputs, contribs):
            if not inp.requires_grad or contrib is None:
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + contrib
            else:
                adjoint[key] = np.array(contrib, dtype=np.float64, copy=True)
                keep[key] = inp

    leaves: dict[Tensor, np.ndarray] = {}
    if params is not None:
        for p in params:
            g = adjoint.get(id(p))
            leaves[p] = np.zeros_like(p.data) if g is None else g
    else:
        for key, t in keep.items():
            if t._op is None and t.requires_grad:
                leaves[t] = adjoint[key]
        if not leaves:
            raise GraphError("backward: loss is not connected to any gradient-carrying leaf")
    for t, g in leaves.items():
        t.grad = g
    return leaves
