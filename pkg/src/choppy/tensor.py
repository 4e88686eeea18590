"""Dense float64 tensors with a small reverse-mode gradient tape.

Only the operations the cut transformer needs are provided. Matrix-style
operations act on the last two axes; any leading axes are treated as a batch
and a 2-D right operand is shared across that batch.

Recording is opt-in: operations executed inside ``with GradientTape() as tape``
are appended to ``tape`` and :func:`backward` replays them in reverse order.
Outside a tape the same functions run as plain numpy code.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "ShapeError",
    "tensor",
    "matmul",
    "transpose",
    "add",
    "add_bias",
    "mul",
    "relu",
    "row_softmax",
    "layer_norm_rows",
    "concat_per_row",
    "column_slice",
    "project",
    "squeeze_last",
    "repeat_batch",
    "total",
    "mean",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class Tensor:
    """An immutable-by-convention float64 array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(s < 1 for s in arr.shape):
            raise ShapeError(f"all extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_array(arr: np.ndarray) -> Tensor:
    # skips the defensive copy in Tensor.__init__ for freshly computed results
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.grad = None
    t.requires_grad = False
    t.name = None
    return t


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

class _Op:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor, vjp: Callable):
        self.inputs = tuple(inputs)
        self.output = output
        self.vjp = vjp


_active = threading.local()


def _current_tape() -> Optional["GradientTape"]:
    return getattr(_active, "tape", None)


class GradientTape:
    """Ordered record of executed operations for one backward pass.

    A tape belongs to the thread that opened it. Gradients are accumulated
    into ``Tensor.grad`` of every recorded input with ``requires_grad`` set
    and are also available through :meth:`gradient`.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}
        self._used = False

    def __enter__(self) -> "GradientTape":
        if _current_tape() is not None:
            raise RuntimeError("nested gradient tapes are not supported")
        _active.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _active.tape = None

    def record(self, inputs: Sequence[Tensor], output: Tensor, vjp: Callable) -> None:
        self.ops.append(_Op(inputs, output, vjp))

    def gradient(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._used:
            raise RuntimeError("tape has already been replayed")
        self._used = True
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.data)
        self._tensors[id(loss)] = loss
        for op in reversed(self.ops):
            g_out = grads.pop(id(op.output), None)
            if g_out is None:
                continue
            in_grads = op.vjp(g_out)
            for t, g in zip(op.inputs, in_grads):
                if g is None:
                    continue
                if g.shape != t.data.shape:
                    raise ShapeError(
                        f"internal gradient shape {g.shape} != tensor shape {t.shape}"
                    )
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    self._tensors[key] = t
        for key, g in grads.items():
            t = self._tensors[key]
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
        self.ops.clear()


def backward(tape: GradientTape, loss: Tensor) -> None:
    """Propagate d(loss)/d(.) to every leaf recorded on ``tape``."""
    tape.backward(loss)


def _record(inputs: Sequence[Tensor], output: Tensor, vjp: Callable) -> Tensor:
    tape = _current_tape()
    if tape is not None:
        tape.record(inputs, output, vjp)
    return output


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` over leading axes that were broadcast to reach its shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_batch(a: np.ndarray, b: np.ndarray, what: str) -> None:
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    if lead_b and lead_a != lead_b:
        raise ShapeError(f"{what}: batch axes differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared over ``a``'s batch axes) or carries exactly the
    same batch axes as ``a``.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})"
        )
    _check_batch(a.data, b.data, "matmul")
    shared = b.ndim == 2
    if shared:
        # one flat GEMM instead of a batched loop
        k, p = b.shape
        out = _from_array((a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (p,)))
    else:
        out = _from_array(np.matmul(a.data, b.data))

    def vjp(g):
        if shared:
            ga = (g.reshape(-1, p) @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, p)
        else:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record((a, b), out, vjp)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    x = _wrap(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")
    out = _from_array(np.swapaxes(x.data, -1, -2))
    return _record((x,), out, lambda g: (np.swapaxes(g, -1, -2),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two tensors of identical shape."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    out = _from_array(a.data + b.data)
    return _record((a, b), out, lambda g: (g, g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-``d`` vector to every row of ``x[..., d]``."""
    x, bias = _wrap(x), _wrap(bias)
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias of shape {bias.shape} does not fit rows of {x.shape}")
    out = _from_array(x.data + bias.data)

    def vjp(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _record((x, bias), out, vjp)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with an equal-shape tensor or a constant array.

    A plain ndarray (or scalar) second operand is treated as a constant and
    receives no gradient.
    """
    a = _wrap(a)
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
        out = _from_array(a.data * b.data)
        return _record((a, b), out, lambda g: (g * b.data, g * a.data))
    c = np.asarray(b, dtype=np.float64)
    try:
        prod = a.data * c
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} and constant {c.shape} do not broadcast") from exc
    if prod.shape != a.shape:
        raise ShapeError(f"mul: constant {c.shape} would reshape {a.shape}")
    out = _from_array(prod)
    return _record((a,), out, lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    pos = x.data > 0
    out = _from_array(np.where(pos, x.data, 0.0))
    return _record((x,), out, lambda g: (np.where(pos, g, 0.0),))


def row_softmax(x: Tensor, scale: float = 1.0, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis of ``scale * x``.

    ``mask`` (boolean, broadcastable to ``x``) marks allowed entries; masked
    entries come out as exactly 0. Every row must keep at least one entry.
    """
    x = _wrap(x)
    z = x.data * scale if scale != 1.0 else x.data.copy()
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("row_softmax: a row has every entry masked")
        z = np.where(mask, z, -np.inf)
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    s = z
    out = _from_array(s)

    def vjp(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        gx = s * (g - inner)
        if scale != 1.0:
            gx *= scale
        return (gx,)

    return _record((x,), out, vjp)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each row of ``x[..., d]`` then apply per-feature gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer norm over {d} features got gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _from_array(xhat * gain.data + bias.data)

    def vjp(g):
        flat_g = g.reshape(-1, d)
        g_gain = (flat_g * xhat.reshape(-1, d)).sum(axis=0)
        g_bias = flat_g.sum(axis=0)
        gh = g * gain.data
        gx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _record((x, gain, bias), out, vjp)


def concat_per_row(*parts: Tensor) -> Tensor:
    """Join blocks along the feature (last) axis, first block's columns first."""
    if not parts:
        raise ShapeError("concat_per_row needs at least one block")
    parts = tuple(_wrap(p) for p in parts)
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                "concat_per_row: row shapes differ, "
                + ", ".join(str(q.shape) for q in parts)
            )
    widths = [p.shape[-1] for p in parts]
    out = _from_array(np.concatenate([p.data for p in parts], axis=-1))
    bounds = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(parts, out, vjp)


def column_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    x = _wrap(x)
    width = x.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"column slice [{start}:{stop}) outside width {width}")
    out = _from_array(x.data[..., start:stop])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _record((x,), out, vjp)


def project(x: Tensor, w: Tensor) -> Tensor:
    """Map rows of ``x[..., d]`` to scalars with ``w[d, 1]``; result ``[..., 1]``."""
    x, w = _wrap(x), _wrap(w)
    if w.ndim != 2 or w.shape[1] != 1:
        raise ShapeError(f"project expects a d×1 weight, got {w.shape}")
    return matmul(x, w)


def squeeze_last(x: Tensor) -> Tensor:
    """Drop a trailing axis of extent 1."""
    x = _wrap(x)
    if x.ndim < 2 or x.shape[-1] != 1:
        raise ShapeError(f"squeeze_last needs a trailing unit axis, got {x.shape}")
    shape = x.shape
    out = _from_array(x.data[..., 0])
    return _record((x,), out, lambda g: (g.reshape(shape),))


def total(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    x = _wrap(x)
    out = _from_array(np.asarray(x.data.sum()))
    return _record((x,), out, lambda g: (np.full(x.shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    x = _wrap(x)
    k = x.data.size
    out = _from_array(np.asarray(x.data.mean()))
    return _record((x,), out, lambda g: (np.full(x.shape, float(g) / k),))


def repeat_batch(x: Tensor, batch: int) -> Tensor:
    """Stack ``batch`` read-only copies of ``x`` along a new leading axis."""
    x = _wrap(x)
    if batch < 1:
        raise ShapeError(f"batch must be >= 1, got {batch}")
    out = _from_array(np.broadcast_to(x.data, (batch,) + x.shape))
    return _record((x,), out, lambda g: (g.sum(axis=0),))
