"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

A ``Tape`` records primitive ops as they execute and replays them in
reverse on ``backward``, accumulating exactly one adjoint per recorded
node.  Tensors that are not attached to a tape act as plain constants:
the same op functions work on them and simply skip recording.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the op that received them."""

    def __init__(self, op: str, shapes: tuple) -> None:
        super().__init__(f"{op}: incompatible operand shapes {shapes}")
        self.op = op
        self.shapes = shapes


class DomainError(ValueError):
    """Operand values outside an op's domain (e.g. log of a non-positive entry)."""


class TapeError(RuntimeError):
    """Tape misuse: mixing tensors from different tapes or reusing a finished tape."""


class Tensor:
    """Dense 2-D float64 array, optionally attached to a tape node."""

    __slots__ = ("values", "node_id", "tape")

    def __init__(self, values, node_id: int | None = None, tape: "Tape | None" = None):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError("tensor", (arr.shape,))
        self.values = arr
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ShapeError("item", (self.values.shape,))
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        tag = "leaf" if self.node_id is not None else "const"
        return f"Tensor(shape={self.values.shape}, {tag})"


def constant(values) -> Tensor:
    """Wrap an array as a detached (non-differentiable) tensor."""
    return values if isinstance(values, Tensor) and values.tape is None else Tensor(
        values.values if isinstance(values, Tensor) else values
    )


@dataclass(frozen=True)
class Op:
    """A primitive: forward computes values, vjp maps the output adjoint back."""

    forward: Callable[[list[np.ndarray], dict], tuple[np.ndarray, Any]]
    vjp: Callable[[np.ndarray, Any, list[np.ndarray], dict], list[np.ndarray | None]]


OPS: dict[str, Op] = {}


def register_op(name: str, forward, vjp) -> None:
    if name in OPS:
        raise ValueError(f"op {name!r} already registered")
    OPS[name] = Op(forward=forward, vjp=vjp)


@dataclass
class _Record:
    op_kind: str
    input_ids: list[int | None]
    input_values: list[np.ndarray]
    attrs: dict
    ctx: Any
    out_id: int


class Tape:
    """Ordered record of ops; one backward pass, then the tape is finished."""

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._shapes: dict[int, tuple[int, int]] = {}
        self._leaf_ids: list[int] = []
        self._next_id = 0
        self._finished = False

    def _new_id(self, shape: tuple[int, int]) -> int:
        nid = self._next_id
        self._next_id += 1
        self._shapes[nid] = shape
        return nid

    def leaf(self, values) -> Tensor:
        """Attach an array as a differentiable leaf; backward reports its gradient."""
        if self._finished:
            raise TapeError("tape already finished; create a new tape")
        t = Tensor(values)
        nid = self._new_id(t.values.shape)
        self._leaf_ids.append(nid)
        return Tensor(t.values, node_id=nid, tape=self)

    def _record(self, op_kind: str, inputs: list[Tensor], attrs: dict,
                out: np.ndarray, ctx: Any) -> Tensor:
        if self._finished:
            raise TapeError("tape already finished; create a new tape")
        out_id = self._new_id(out.shape)
        self._records.append(_Record(
            op_kind=op_kind,
            input_ids=[t.node_id for t in inputs],
            input_values=[t.values for t in inputs],
            attrs=attrs,
            ctx=ctx,
            out_id=out_id,
        ))
        return Tensor(out, node_id=out_id, tape=self)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a 1x1 loss; returns gradient per leaf node id.

        Leaves the loss does not depend on get zero gradients.  The tape is
        finished afterwards and cannot record further ops.
        """
        if self._finished:
            raise TapeError("tape already finished; create a new tape")
        if loss.tape is not self or loss.node_id is None:
            raise TapeError("loss tensor is not attached to this tape")
        if loss.values.shape != (1, 1):
            raise ShapeError("backward", (loss.values.shape,))

        adjoints: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
        for rec in reversed(self._records):
            g = adjoints.pop(rec.out_id, None)
            if g is None:
                continue
            grads = OPS[rec.op_kind].vjp(g, rec.ctx, rec.input_values, rec.attrs)
            for nid, grad in zip(rec.input_ids, grads):
                if nid is None or grad is None:
                    continue
                acc = adjoints.get(nid)
                adjoints[nid] = grad if acc is None else acc + grad

        out = {}
        for nid in self._leaf_ids:
            out[nid] = adjoints.get(nid, np.zeros(self._shapes[nid]))
        self._finished = True
        self._records.clear()
        return out


def _common_tape(tensors: list[Tensor]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("inputs attached to different tapes")
    return tape


def forward(op_kind: str, inputs: list, attrs: dict | None = None) -> Tensor:
    """Run a registered op; the result is recorded when any input is attached."""
    try:
        op = OPS[op_kind]
    except KeyError:
        raise KeyError(f"unknown op kind {op_kind!r}") from None
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    attrs = attrs or {}
    tape = _common_tape(tensors)
    out, ctx = op.forward([t.values for t in tensors], attrs)
    if tape is None:
        return Tensor(out)
    return tape._record(op_kind, tensors, attrs, out, ctx)


# ---------------------------------------------------------------------------
# primitive definitions


def _matmul_fwd(vals, attrs):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", (a.shape, b.shape))
    return a @ b, None


def _matmul_vjp(g, ctx, vals, attrs):
    a, b = vals
    return [g @ b.T, a.T @ g]


def _add_fwd(vals, attrs):
    a, b = vals
    if a.shape != b.shape and not (b.shape == (1, a.shape[1])):
        raise ShapeError("add", (a.shape, b.shape))
    return a + b, None


def _add_vjp(g, ctx, vals, attrs):
    a, b = vals
    gb = g if b.shape == g.shape else g.sum(axis=0, keepdims=True)
    return [g, gb]


def _sub_fwd(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeError("sub", (a.shape, b.shape))
    return a - b, None


def _sub_vjp(g, ctx, vals, attrs):
    return [g, -g]


def _mul_fwd(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeError("elementwise_mul", (a.shape, b.shape))
    return a * b, None


def _mul_vjp(g, ctx, vals, attrs):
    a, b = vals
    return [g * b, g * a]


def _scalar_mul_fwd(vals, attrs):
    (a,) = vals
    return float(attrs["c"]) * a, None


def _scalar_mul_vjp(g, ctx, vals, attrs):
    return [float(attrs["c"]) * g]


def _relu_fwd(vals, attrs):
    (a,) = vals
    return np.maximum(a, 0.0), None


def _relu_vjp(g, ctx, vals, attrs):
    (a,) = vals
    return [g * (a > 0.0)]


def _exp_fwd(vals, attrs):
    (a,) = vals
    out = np.exp(a)
    return out, out


def _exp_vjp(g, ctx, vals, attrs):
    return [g * ctx]


def _log_fwd(vals, attrs):
    (a,) = vals
    if np.any(a <= 0.0):
        raise DomainError("log: non-positive entry")
    return np.log(a), None


def _log_vjp(g, ctx, vals, attrs):
    (a,) = vals
    return [g / a]


def _row_softmax_fwd(vals, attrs):
    (a,) = vals
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    return s, s


def _row_softmax_vjp(g, ctx, vals, attrs):
    s = ctx
    return [s * (g - (g * s).sum(axis=1, keepdims=True))]


def _row_l2_normalize_fwd(vals, attrs):
    (a,) = vals
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    safe = np.where(norms == 0.0, 1.0, norms)
    return a / safe, (a / safe, safe, norms != 0.0)


def _row_l2_normalize_vjp(g, ctx, vals, attrs):
    y, safe, nonzero = ctx
    grad = (g - y * (g * y).sum(axis=1, keepdims=True)) / safe
    return [grad * nonzero]


def _transpose_fwd(vals, attrs):
    (a,) = vals
    return a.T.copy(), None


def _transpose_vjp(g, ctx, vals, attrs):
    return [g.T]


def _concat_cols_fwd(vals, attrs):
    a, b = vals
    if a.shape[0] != b.shape[0]:
        raise ShapeError("concat_cols", (a.shape, b.shape))
    return np.hstack([a, b]), a.shape[1]


def _concat_cols_vjp(g, ctx, vals, attrs):
    k = ctx
    return [g[:, :k], g[:, k:]]


def _sum_all_fwd(vals, attrs):
    (a,) = vals
    return np.array([[a.sum()]]), None


def _sum_all_vjp(g, ctx, vals, attrs):
    (a,) = vals
    return [np.full(a.shape, g[0, 0])]


def _mean_all_fwd(vals, attrs):
    (a,) = vals
    return np.array([[a.mean()]]), None


def _mean_all_vjp(g, ctx, vals, attrs):
    (a,) = vals
    return [np.full(a.shape, g[0, 0] / a.size)]


def _row_sum_fwd(vals, attrs):
    (a,) = vals
    return a.sum(axis=1, keepdims=True), None


def _row_sum_vjp(g, ctx, vals, attrs):
    (a,) = vals
    return [np.broadcast_to(g, a.shape).copy()]


def _gather_rows_fwd(vals, attrs):
    (a,) = vals
    idx = np.asarray(attrs["indices"], dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows", (idx.shape,))
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DomainError("gather_rows: index out of range")
    return a[idx], idx


def _gather_rows_vjp(g, ctx, vals, attrs):
    (a,) = vals
    out = np.zeros_like(a)
    np.add.at(out, ctx, g)
    return [out]


register_op("matmul", _matmul_fwd, _matmul_vjp)
register_op("add", _add_fwd, _add_vjp)
register_op("sub", _sub_fwd, _sub_vjp)
register_op("elementwise_mul", _mul_fwd, _mul_vjp)
register_op("scalar_mul", _scalar_mul_fwd, _scalar_mul_vjp)
register_op("relu", _relu_fwd, _relu_vjp)
register_op("exp", _exp_fwd, _exp_vjp)
register_op("log", _log_fwd, _log_vjp)
register_op("row_softmax", _row_softmax_fwd, _row_softmax_vjp)
register_op("row_l2_normalize", _row_l2_normalize_fwd, _row_l2_normalize_vjp)
register_op("transpose", _transpose_fwd, _transpose_vjp)
register_op("concat_cols", _concat_cols_fwd, _concat_cols_vjp)
register_op("sum_all", _sum_all_fwd, _sum_all_vjp)
register_op("mean_all", _mean_all_fwd, _mean_all_vjp)
register_op("row_sum", _row_sum_fwd, _row_sum_vjp)
register_op("gather_rows", _gather_rows_fwd, _gather_rows_vjp)


# named wrappers used throughout the package

def matmul(a, b) -> Tensor:
    return forward("matmul", [a, b])


def add(a, b) -> Tensor:
    return forward("add", [a, b])


def sub(a, b) -> Tensor:
    return forward("sub", [a, b])


def elementwise_mul(a, b) -> Tensor:
    return forward("elementwise_mul", [a, b])


def scalar_mul(a, c: float) -> Tensor:
    return forward("scalar_mul", [a], {"c": c})


def relu(a) -> Tensor:
    return forward("relu", [a])


def exp(a) -> Tensor:
    return forward("exp", [a])


def log(a) -> Tensor:
    return forward("log", [a])


def row_softmax(a) -> Tensor:
    return forward("row_softmax", [a])


def row_l2_normalize(a) -> Tensor:
    return forward("row_l2_normalize", [a])


def transpose(a) -> Tensor:
    return forward("transpose", [a])


def concat_cols(a, b) -> Tensor:
    return forward("concat_cols", [a, b])


def sum_all(a) -> Tensor:
    return forward("sum_all", [a])


def mean_all(a) -> Tensor:
    return forward("mean_all", [a])


def row_sum(a) -> Tensor:
    return forward("row_sum", [a])


def gather_rows(a, indices) -> Tensor:
    return forward("gather_rows", [a], {"indices": list(indices)})


def finite_diff_check(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-4) -> float:
    """Compare tape gradients of a scalar-valued f against central differences.

    ``f`` must be a deterministic composition of registered ops mapping one
    tensor to a 1x1 tensor.  Returns the max over entries of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x)
    loss = f(xt)
    analytic = tape.backward(loss)[xt.node_id]

    numeric = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            bump = np.zeros_like(x)
            bump[i, j] = h
            hi = f(Tensor(x + bump)).item()
            lo = f(Tensor(x - bump)).item()
            numeric[i, j] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
