"""Reverse-mode differentiation over real matrices.

Eager, define-by-run: every op computes its value immediately and records
how to push gradients back to its parents. The primitive set is the minimum
needed by the attention encoder and the contrastive losses: matmul, add,
elementwise mul/div, concat, LeakyReLU/ReLU/ELU, masked (segment) softmax,
exp, log, sqrt, sum/mean, row gather/scatter. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""


class BackwardError(RuntimeError):
    """Raised on misuse of the backward pass (double backward, non-scalar root)."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """A node in the computation graph: a float64 array plus grad plumbing."""

    __slots__ = ("value", "grad", "op", "_parents", "_backward")

    def __init__(self, value, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    # Arithmetic sugar so loss code reads like the math.
    def __add__(self, other): return add(self, _wrap(other))
    def __radd__(self, other): return add(_wrap(other), self)
    def __sub__(self, other): return add(self, neg(_wrap(other)))
    def __rsub__(self, other): return add(_wrap(other), neg(self))
    def __mul__(self, other): return mul(self, _wrap(other))
    def __rmul__(self, other): return mul(_wrap(other), self)
    def __truediv__(self, other): return div(self, _wrap(other))
    def __rtruediv__(self, other): return div(_wrap(other), self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def forward(root: Tensor) -> np.ndarray:
    """Return the value at the graph root (evaluation is eager at build time)."""
    return root.value


def topo_order(root: Tensor) -> list[Tensor]:
    """Deterministic topological order of the subgraph rooted at `root`."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of the scalar `root` into every node's `.grad`.

    Gradients sum over all paths; leaves not reachable from the root keep
    `grad=None` (read them back with `grad_of`, which substitutes zeros).
    Higher-order differentiation is out of contract: a second backward
    through the same root is an error.
    """
    if root.value.size != 1:
        raise BackwardError(f"backward root must be scalar, got shape {root.value.shape}")
    if root.grad is not None:
        raise BackwardError("backward already ran on this root; double backward is unsupported")
    root.grad = np.ones_like(root.value)
    for node in reversed(topo_order(root)):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


def grad_of(leaf: Tensor) -> np.ndarray:
    """Gradient accumulated at a leaf, zeros if no path reached it."""
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)


# ---------------------------------------------------------------------------
# primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))
    return Tensor(value, "add", (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accumulate(a, -g)
    return Tensor(-a.value, "neg", (a,), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))
    return Tensor(value, "mul", (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        value = a.value / b.value
    except ValueError as exc:
        raise ShapeError(f"div: {a.shape} vs {b.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))
    return Tensor(value, "div", (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim not in (1, 2):
        raise ShapeError(f"matmul: unsupported ranks {a.value.ndim} @ {b.value.ndim}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    value = a.value @ b.value

    def back(g):
        if b.value.ndim == 2:
            _accumulate(a, g @ b.value.T)
            _accumulate(b, a.value.T @ g)
        else:
            _accumulate(a, np.outer(g, b.value))
            _accumulate(b, a.value.T @ g)
    return Tensor(value, "matmul", (a, b), back)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows a[idx]; the backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.intp)
    value = a.value[idx]

    def back(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        np.add.at(a.grad, idx, g)
    return Tensor(value, "take_rows", (a,), back)


def permute_within_rows(a: Tensor, col_idx: np.ndarray) -> Tensor:
    """out[i, j] = a[i, col_idx[i, j]] with col_idx a per-row permutation."""
    col_idx = np.asarray(col_idx, dtype=np.intp)
    if col_idx.shape != a.value.shape:
        raise ShapeError(f"permute_within_rows: index {col_idx.shape} vs value {a.shape}")
    rows = np.arange(a.value.shape[0])[:, None]
    value = a.value[rows, col_idx]

    def back(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        np.add.at(a.grad, (rows, col_idx), g)
    return Tensor(value, "permute_within_rows", (a,), back)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[p.shape for p in parts]}") from exc
    sizes = [p.value.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        for part, piece in zip(parts, np.split(g, bounds, axis=axis)):
            _accumulate(part, piece)
    return Tensor(value, "concat", tuple(parts), back)


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    value = a.value.T

    def back(g):
        _accumulate(a, g.T)
    return Tensor(value, "transpose", (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    value = a.value.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.value.shape))
    return Tensor(value, "reshape", (a,), back)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.value.shape).copy())
    return Tensor(value, "sum", (a,), back)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.value.size if axis is None else a.value.shape[axis]
    return tsum(a, axis=axis) * (1.0 / count)


def texp(a: Tensor) -> Tensor:
    value = np.exp(a.value)

    def back(g):
        _accumulate(a, g * value)
    return Tensor(value, "exp", (a,), back)


def tlog(a: Tensor) -> Tensor:
    value = np.log(a.value)

    def back(g):
        _accumulate(a, g / a.value)
    return Tensor(value, "log", (a,), back)


def tsqrt(a: Tensor) -> Tensor:
    value = np.sqrt(a.value)

    def back(g):
        _accumulate(a, g * 0.5 / value)
    return Tensor(value, "sqrt", (a,), back)


def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.value, 0.0)

    def back(g):
        _accumulate(a, g * (a.value > 0.0))
    return Tensor(value, "relu", (a,), back)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    value = np.where(a.value > 0.0, a.value, slope * a.value)

    def back(g):
        _accumulate(a, g * np.where(a.value > 0.0, 1.0, slope))
    return Tensor(value, "leaky_relu", (a,), back)


def elu(a: Tensor) -> Tensor:
    value = np.where(a.value > 0.0, a.value, np.expm1(a.value))

    def back(g):
        _accumulate(a, g * np.where(a.value > 0.0, 1.0, value + 1.0))
    return Tensor(value, "elu", (a,), back)


def softmax(a: Tensor) -> Tensor:
    """Softmax over a 1-D score vector."""
    if a.value.ndim != 1:
        raise ShapeError(f"softmax: expected 1-D scores, got {a.shape}")
    shifted = a.value - a.value.max()
    e = np.exp(shifted)
    p = e / e.sum()

    def back(g):
        _accumulate(a, p * (g - np.dot(p, g)))
    return Tensor(p, "softmax", (a,), back)


def segment_softmax(scores: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over index sets: entries sharing a segment id normalize together.

    The segment ids carry the sparsity mask of a graph view: scores live on
    edges, segments are the edges' center nodes. Entries of an empty segment
    simply do not exist. Numerically stabilized by a per-segment max shift.
    """
    if scores.value.ndim != 1:
        raise ShapeError(f"segment_softmax: expected 1-D scores, got {scores.shape}")
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape != scores.value.shape:
        raise ShapeError(f"segment_softmax: segments {seg.shape} vs scores {scores.shape}")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, scores.value)
    e = np.exp(scores.value - seg_max[seg])
    denom = np.bincount(seg, weights=e, minlength=num_segments)
    p = e / denom[seg]

    def back(g):
        weighted = np.bincount(seg, weights=p * g, minlength=num_segments)
        _accumulate(scores, p * (g - weighted[seg]))
    return Tensor(p, "segment_softmax", (scores,), back)


def segment_sum(values: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows (or scalars) of `values` into per-segment buckets."""
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape[0] != values.value.shape[0]:
        raise ShapeError(f"segment_sum: segments {seg.shape} vs values {values.shape}")
    out_shape = (num_segments,) + values.value.shape[1:]
    out = np.zeros(out_shape)
    np.add.at(out, seg, values.value)

    def back(g):
        _accumulate(values, g[seg])
    return Tensor(out, "segment_sum", (values,), back)


# ---------------------------------------------------------------------------
# composites used throughout the model code

def sum_of_squares(tensors: Iterable[Tensor]) -> Tensor:
    total = None
    for t in tensors:
        sq = tsum(mul(t, t))
        total = sq if total is None else add(total, sq)
    if total is None:
        raise ValueError("sum_of_squares: no tensors given")
    return total


def row_norms(a: Tensor) -> Tensor:
    """Euclidean norm of each row of a 2-D tensor."""
    return tsqrt(tsum(mul(a, a), axis=1))


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity between two equal-shape 2-D tensors."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"cosine_rows: {a.shape} vs {b.shape}")
    dots = tsum(mul(a, b), axis=1)
    return div(dots, mul(row_norms(a), row_norms(b)))


def cosine_vec(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity between two 1-D tensors."""
    dots = tsum(mul(a, b))
    na = tsqrt(tsum(mul(a, a)))
    nb = tsqrt(tsum(mul(b, b)))
    return div(dots, mul(na, nb))


# ---------------------------------------------------------------------------
# gradient verification

@dataclass
class BlockCheck:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class FiniteDiffReport:
    blocks: list[BlockCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def worst(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    def failing(self) -> list[str]:
        return [b.name for b in self.blocks if not b.passed]


def finite_diff_check(loss_fn: Callable[[dict[str, Tensor]], Tensor],
                      params: dict[str, np.ndarray],
                      step: float = 1e-5,
                      tolerance: float = 1e-4,
                      floor: float = 1e-3) -> FiniteDiffReport:
    """Compare reverse-mode gradients of a scalar loss to central differences.

    `loss_fn` must build a fresh graph from the leaf tensors it is handed and
    return a scalar Tensor. Per entry, the relative error is
    |fd - ad| / max(|fd|, |ad|, floor); a block passes when its max relative
    error stays within `tolerance`.
    """
    leaves = {name: Tensor(value.copy()) for name, value in params.items()}
    out = loss_fn(leaves)
    if out.value.size != 1:
        raise BackwardError("finite_diff_check: loss must be scalar-valued")
    backward(out)
    analytic = {name: grad_of(leaf).copy() for name, leaf in leaves.items()}

    work = {name: value.copy() for name, value in params.items()}

    def eval_loss() -> float:
        t = {name: Tensor(value) for name, value in work.items()}
        return float(loss_fn(t).value)

    report = FiniteDiffReport()
    for name in params:
        block = work[name]
        ad = analytic[name]
        worst = 0.0
        flat = block.reshape(-1)
        ad_flat = ad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = eval_loss()
            flat[k] = orig - step
            down = eval_loss()
            flat[k] = orig
            fd = (up - down) / (2.0 * step)
            denom = max(abs(fd), abs(ad_flat[k]), floor)
            worst = max(worst, abs(fd - ad_flat[k]) / denom)
        report.blocks.append(BlockCheck(name, worst, worst <= tolerance))
    return report
