"""
vega-align - Tensor autodiff

Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Operations record themselves on the active ``Tape`` (entered with
``with Tape() as tape:``) whenever one of their inputs requires a gradient.
``tape.backward(loss)`` replays the records in reverse and accumulates
dLoss/dLeaf into ``leaf.grad`` for every leaf marked ``requires_grad``.
Gradients accumulate across calls until ``zero_grad()``.

Usage:
    from vega_align.tensor import Tape, Tensor, matmul, sum_

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_(matmul(x, w))
    tape.backward(loss)
    w.grad  # dLoss/dw
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import erf

from .errors import ShapeError

LAYER_NORM_EPS = 1e-5
COSINE_GRAD_EPS = 1e-12

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_active_tape: ContextVar[Tape | None] = ContextVar("vega_align_tape", default=None)

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(
        self,
        values: Any,
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.values = np.array(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, values: np.ndarray, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        out.values = np.array(values, dtype=np.float64, order="C")
        out.values.setflags(write=False)
        out.grad = None
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.values)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Any) -> Tensor:
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass(frozen=True)
class Node:
    """One recorded operation."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of operations for one reverse sweep."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token: Any = None

    def __enter__(self) -> Tape:
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn
    ) -> None:
        self.nodes.append(Node(op, inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dLeaf into every requires_grad leaf on this tape."""
        if loss.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(node.output is loss for node in self.nodes):
            raise ValueError("loss was not produced through this tape")

        produced = {id(node.output) for node in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        leaves: dict[int, Tensor] = {}

        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
                if key not in produced:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, e.g. for frozen-teacher forwards inside a training step."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def _as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward: BackwardFn) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires)
    tape = _active_tape.get()
    if tape is not None and requires:
        tape.record(op, inputs, result, backward)
    return result


def _is_suffix(big: tuple[int, ...], small: tuple[int, ...]) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _check_combinable(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or _is_suffix(a.shape, b.shape) or _is_suffix(b.shape, a.shape):
        return
    raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    return grad


# ─── Elementwise ──────────────────────────────────────────


def add(a: Any, b: Any) -> Tensor:
    """a + b, where one operand may be a trailing-axes suffix of the other (bias rows)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_combinable("add", a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _emit("add", (a, b), a.values + b.values, backward)


def sub(a: Any, b: Any) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_combinable("sub", a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _reduce_to(g, a.shape), -_reduce_to(g, b.shape)

    return _emit("sub", (a, b), a.values - b.values, backward)


def mul(a: Any, b: Any) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_combinable("mul", a, b)
    av, bv = a.values, b.values

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _reduce_to(g * bv, a.shape), _reduce_to(g * av, b.shape)

    return _emit("mul", (a, b), av * bv, backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * c,)

    return _emit("scale", (a,), a.values * c, backward)


def square(a: Tensor) -> Tensor:
    av = a.values

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (2.0 * av * g,)

    return _emit("square", (a,), av * av, backward)


def abs_(a: Tensor) -> Tensor:
    """|a|; the subgradient at 0 is taken as 0."""
    sign = np.sign(a.values)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (sign * g,)

    return _emit("abs", (a,), np.abs(a.values), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    xv = x.values
    cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * (cdf + xv * pdf),)

    return _emit("gelu", (x,), xv * cdf, backward)


# ─── Shape ────────────────────────────────────────────────


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    in_shape = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {in_shape} as {shape}") from exc

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(in_shape),)

    return _emit("reshape", (a,), out, backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 axes, got shape {a.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.swapaxes(g, -1, -2),)

    return _emit("transpose", (a,), np.swapaxes(a.values, -1, -2), backward)


def swap_axes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.swapaxes(g, axis1, axis2),)

    return _emit("swap_axes", (a,), np.swapaxes(a.values, axis1, axis2), backward)


# ─── Reductions ───────────────────────────────────────────


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    in_shape = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _emit("sum", (a,), np.sum(a.values, axis=axis), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    in_shape = a.shape
    count = a.size if axis is None else in_shape[axis]

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, in_shape).copy(),)

    return _emit("mean", (a,), np.mean(a.values, axis=axis), backward)


# ─── Linear algebra ───────────────────────────────────────


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b. ``b`` is either a 2D weight shared over a's leading axes or has a's batch axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ between {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = g @ np.swapaxes(bv, -1, -2)
        if bv.ndim == 2:
            k, n = bv.shape
            gb = av.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return _emit("matmul", (a, b), av @ bv, backward)


# ─── Normalization and attention ──────────────────────────


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Standardize over the last axis, then apply gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: last axis {d} does not match gain {gain.shape} / bias {bias.shape}"
        )
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")

    xv = x.values
    centered = xv - xv.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.values

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_gain = _reduce_to(g * xhat, (d,))
        d_bias = _reduce_to(g, (d,))
        dxhat = g * gv
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, d_gain, d_bias

    return _emit("layer_norm", (x, gain, bias), xhat * gv + bias.values, backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis with max subtraction."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (x,), y, backward)


def row_cosine(a: Tensor, b: Any) -> Tensor:
    """Cosine similarity between matching last-axis rows of ``a`` and constant ``b``.

    No gradient flows into ``b``. Zero-norm rows must be rejected by the caller;
    the gradient clamps ``|a|`` at COSINE_GRAD_EPS.
    """
    bv = b.values if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if a.shape != bv.shape:
        raise ShapeError(f"row_cosine: shapes {a.shape} and {bv.shape} differ")
    av = a.values
    na = np.linalg.norm(av, axis=-1)
    nb = np.linalg.norm(bv, axis=-1)
    cos = (av * bv).sum(axis=-1) / (na * nb)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        na_c = np.maximum(na, COSINE_GRAD_EPS)[..., None]
        d = bv / (na_c * nb[..., None]) - cos[..., None] * av / (na_c * na_c)
        return (g[..., None] * d,)

    return _emit("row_cosine", (a,), cos, backward)


# ─── Gradient checking ────────────────────────────────────


def finite_difference_check(
    fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, floor: float = 1e-8
) -> float:
    """Worst relative error between tape gradient and central differences.

    ``fn`` maps ``x`` (possibly captured inside a larger model) to a scalar.
    The relative error per coordinate uses max(|analytic|, |numeric|, floor)
    as denominator. ``x`` is restored bit-exactly afterwards.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"finite-difference step must lie in [1e-7, 1e-3], got {h}")
    if floor <= 0:
        raise ValueError(f"denominator floor must be positive, got {floor}")

    saved_flag, saved_grad = x.requires_grad, x.grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            loss = fn(x)
        base = loss.item()
        if not math.isfinite(base):
            raise ValueError(f"function value is not finite: {base}")
        tape.backward(loss)
        analytic = np.zeros_like(x.values) if x.grad is None else x.grad.copy()

        flat = x.values.reshape(-1)
        numeric = np.empty(flat.size, dtype=np.float64)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = fn(x).item()
                flat[i] = orig - h
                f_minus = fn(x).item()
                flat[i] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise ValueError(f"function value is not finite near coordinate {i}")
                numeric[i] = (f_plus - f_minus) / (2.0 * h)
    finally:
        x.requires_grad = saved_flag
        x.grad = saved_grad

    analytic = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
