"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

The primitive set is deliberately small: matmul, broadcasting add/mul, scalar
scale, reshape/transpose, softmax (last axis), layer normalization (last
axis), GELU, gather (embedding lookup), full sum/mean reductions, and a fused
pairwise rotation used by rotary position embeddings. Everything else in the
package is composed from these.

Recording is scoped by a ``Tape`` context:

    with Tape() as tape:
        loss = tmean(mul(x, x))
    grads = tape.grad(loss, {"x": x})

Outside a tape, the same functions run as plain numpy and record nothing.
All arithmetic is float64; forward and backward are deterministic given the
same inputs, and gradient accumulation follows tape order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "reshape",
    "transpose",
    "softmax",
    "layer_norm",
    "gelu",
    "gather",
    "rope_rotate",
    "tsum",
    "tmean",
    "grad",
    "finite_diff_check",
]

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715
_LN_EPS = 1e-6


class Tensor:
    """Immutable float64 array, row-major, optionally attached to a tape node."""

    __slots__ = ("data", "node")

    def __init__(self, data, node: "_Node | None" = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.flags.writeable:
            arr = arr.view()
            arr.flags.writeable = False
        self.data = arr
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, taped={self.node is not None})"


def tensor(data) -> Tensor:
    """Constant tensor (never a differentiation leaf by itself)."""
    return data if isinstance(data, Tensor) else Tensor(data)


class _Node:
    __slots__ = ("idx", "op", "parents", "vjp")

    def __init__(self, idx: int, op: str, parents: tuple[int, ...], vjp):
        self.idx = idx
        self.op = op
        self.parents = parents  # node ids of differentiable inputs
        self.vjp = vjp  # vjp(g) -> tuple of parent cotangents, aligned with parents


_ACTIVE: "Tape | None" = None


class Tape:
    """Ordered record of primitive operations; construction order is topological."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._shapes: list[tuple[int, ...]] = []

    # -- context management -------------------------------------------------

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None

    # -- recording ----------------------------------------------------------

    def leaf(self, t: Tensor) -> Tensor:
        """Register a differentiation leaf (parameter or watched input)."""
        if t.node is not None:
            return t
        node = _Node(len(self._nodes), "leaf", (), None)
        self._nodes.append(node)
        self._shapes.append(t.shape)
        return Tensor(t.data, node)

    def _record(self, op: str, out: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
        ids = tuple(p.node.idx for p in parents if p.node is not None)
        node = _Node(len(self._nodes), op, ids, vjp)
        self._nodes.append(node)
        self._shapes.append(out.shape)
        return Tensor(out, node)

    def operations(self) -> list[tuple[int, str, tuple[int, ...]]]:
        """(output id, op name, input ids) per recorded primitive."""
        return [(n.idx, n.op, n.parents) for n in self._nodes]

    # -- backward -----------------------------------------------------------

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> list[np.ndarray | None]:
        """Cotangents for every node reachable from ``out``.

        ``seed`` defaults to ones (scalar out gets d out/d out = 1).
        Accumulation order is fixed by tape order, so results are bit-stable.
        """
        if out.node is None:
            raise ValueError("output is not attached to this tape")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        if seed is None:
            seed = np.ones(out.shape, dtype=np.float64)
        grads[out.node.idx] = np.asarray(seed, dtype=np.float64)
        for node in reversed(self._nodes):
            g = grads[node.idx]
            if g is None or node.vjp is None:
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        return grads

    def grad(self, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Named gradients of a scalar loss; parameters never used get zeros."""
        if loss.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads = self.backward(loss)
        out: dict[str, np.ndarray] = {}
        for name, p in params.items():
            if p.node is None or grads[p.node.idx] is None:
                out[name] = np.zeros(p.shape, dtype=np.float64)
            else:
                out[name] = grads[p.node.idx]
        return out


def grad(loss: Tensor, params: dict[str, Tensor], tape: Tape) -> dict[str, np.ndarray]:
    return tape.grad(loss, params)


# -- primitive helpers -------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(op: str, a: Tensor, b: Tensor, out: np.ndarray, vjp) -> Tensor:
    if _ACTIVE is None or (a.node is None and b.node is None):
        return Tensor(out)
    return _ACTIVE._record(op, out, (a, b), vjp)


def _unary(op: str, x: Tensor, out: np.ndarray, vjp) -> Tensor:
    if _ACTIVE is None or x.node is None:
        return Tensor(out)
    return _ACTIVE._record(op, out, (x,), vjp)


# -- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked leading dims broadcast as in numpy."""
    a, b = tensor(a), tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        gs = []
        if a.node is not None:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.multiply.outer(g, b.data)
            gs.append(_unbroadcast(ga, a.shape))
        if b.node is not None:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.multiply.outer(a.data, g)
            gs.append(_unbroadcast(gb, b.shape))
        return tuple(gs)

    return _binary("matmul", a, b, out, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data + b.data

    def vjp(g):
        gs = []
        if a.node is not None:
            gs.append(_unbroadcast(g, a.shape))
        if b.node is not None:
            gs.append(_unbroadcast(g, b.shape))
        return tuple(gs)

    return _binary("add", a, b, out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data * b.data

    def vjp(g):
        gs = []
        if a.node is not None:
            gs.append(_unbroadcast(g * b.data, a.shape))
        if b.node is not None:
            gs.append(_unbroadcast(g * a.data, b.shape))
        return tuple(gs)

    return _binary("mul", a, b, out, vjp)


def scale(x: Tensor, s: float) -> Tensor:
    x = tensor(x)
    s = float(s)
    return _unary("scale", x, x.data * s, lambda g: (g * s,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = tensor(x)
    old = x.shape
    out = x.data.reshape(shape)
    return _unary("reshape", x, out, lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = tensor(x)
    inv = np.argsort(axes)
    out = x.data.transpose(axes)
    return _unary("transpose", x, out, lambda g: (g.transpose(inv),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    x = tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _unary("softmax", x, y, vjp)


def layer_norm(x: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    x = tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    y = xc * inv
    n = x.shape[-1]

    def vjp(g):
        gy_mean = g.mean(axis=-1, keepdims=True)
        gyy_mean = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gy_mean - y * gyy_mean),)

    return _unary("layer_norm", x, y, vjp)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = tensor(x)
    v = x.data
    inner = _SQRT_2_OVER_PI * (v + _GELU_C * v**3)
    th = np.tanh(inner)
    y = 0.5 * v * (1.0 + th)

    def vjp(g):
        sech2 = 1.0 - th * th
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v * v)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * sech2 * dinner),)

    return _unary("gelu", x, y, vjp)


def gather(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (embedding lookup)."""
    table = tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"gather ids out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros(table.shape, dtype=np.float64)
        np.add.at(gt, ids, g)
        return (gt,)

    return _unary("gather", table, out, vjp)


def rope_rotate(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive pairs of the last axis by per-(position, pair) angles.

    ``x`` has shape (..., T, 2m); ``cos``/``sin`` have shape (T, m). Pair j of
    position p is rotated by its angle; an identity pair uses cos=1, sin=0.
    The backward pass rotates the cotangent by the negated angles.
    """
    x = tensor(x)
    if x.shape[-1] % 2 != 0:
        raise ValueError(f"rope_rotate needs an even last axis, got {x.shape[-1]}")
    m = x.shape[-1] // 2
    if cos.shape != (x.shape[-2], m) or sin.shape != cos.shape:
        raise ValueError(f"cos/sin shape {cos.shape} does not match x {x.shape}")
    xp = x.data.reshape(x.shape[:-1] + (m, 2))
    x0, x1 = xp[..., 0], xp[..., 1]
    out = np.empty_like(xp)
    out[..., 0] = x0 * cos - x1 * sin
    out[..., 1] = x0 * sin + x1 * cos
    out = out.reshape(x.shape)

    def vjp(g):
        gp = g.reshape(g.shape[:-1] + (m, 2))
        g0, g1 = gp[..., 0], gp[..., 1]
        gx = np.empty_like(gp)
        gx[..., 0] = g0 * cos + g1 * sin
        gx[..., 1] = -g0 * sin + g1 * cos
        return (gx.reshape(x.shape),)

    return _unary("rope_rotate", x, out, vjp)


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    x = tensor(x)
    out = np.asarray(x.data.sum())
    shp = x.shape
    return _unary("sum", x, out, lambda g: (np.broadcast_to(g, shp).astype(np.float64),))


def tmean(x: Tensor) -> Tensor:
    x = tensor(x)
    n = x.data.size
    out = np.asarray(x.data.mean())
    shp = x.shape
    return _unary("mean", x, out, lambda g: (np.broadcast_to(g / n, shp).astype(np.float64),))


# -- gradient checking --------------------------------------------------------


def finite_diff_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    param_names: Iterable[str] | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps a parameter dict to a scalar Tensor. The analytic gradient is
    taken once on a tape; the numeric side re-evaluates ``f`` untaped at
    ``p ± step`` per coordinate. Relative error per coordinate is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with Tape() as tape:
        leaves = {k: tape.leaf(v) for k, v in params.items()}
        loss = f(leaves)
    if loss.shape != ():
        raise ValueError("finite_diff_check needs a scalar-valued function")
    if not np.isfinite(loss.data):
        raise ArithmeticError("loss is not finite at the probe point")
    analytic = tape.grad(loss, leaves)

    names = list(param_names) if param_names is not None else list(params)
    worst = 0.0
    base = {k: np.array(v.data) for k, v in params.items()}
    for name in names:
        flat = base[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f({k: Tensor(v) for k, v in base.items()}).item()
            flat[i] = orig - step
            lo = f({k: Tensor(v) for k, v in base.items()}).item()
            flat[i] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise ArithmeticError(f"non-finite loss while probing {name}[{i}]")
            numeric = (hi - lo) / (2.0 * step)
            ana = analytic[name].reshape(-1)[i]
            err = abs(ana - numeric) / (abs(ana) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
