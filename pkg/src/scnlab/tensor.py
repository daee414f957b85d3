"""Minimal reverse-mode differentiation on numpy arrays.

Operations are plain functions on :class:`Tensor` objects. While a
:class:`Tape` is active (``with Tape() as tape:``), every operation whose
inputs require gradients appends one record to it; :func:`backward` replays
those records in reverse order.

Spatial operations accept either a single image ``[C, H, W]`` or a batch
``[B, C, H, W]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

ArrayLike = Union[np.ndarray, float, Sequence]

_TAPES: list["Tape"] = []


class Tensor:
    """An n-dimensional value grid with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidInputError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """Ordered log of differentiable operations, one record per call."""

    records: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
        backward(self, loss, params)


def active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: tuple, out_data: np.ndarray, rule: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.records.append(Record(op, inputs, out, rule))
    return out


def backward(tape: Tape, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Propagate d(loss)/d(.) through ``tape`` and store it on parameters.

    ``params`` defaults to every leaf tensor on the tape with
    ``requires_grad``. Any listed parameter the loss does not depend on
    gets an all-zero gradient. Gradients are overwritten, not accumulated.
    """
    if loss.data.size != 1:
        raise InvalidInputError(f"loss must be a scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    produced = set()
    for rec in reversed(tape.records):
        produced.add(id(rec.output))
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi

    if params is None:
        seen, params = set(), []
        for rec in tape.records:
            for inp in rec.inputs:
                if inp.requires_grad and id(inp) not in produced and id(inp) not in seen:
                    seen.add(id(inp))
                    params.append(inp)
    for p in params:
        g = grads.get(id(p))
        p.grad = np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False)


def finite_diff_grad(f: Callable[[], object], params: Sequence[Tensor],
                     eps: float = 1e-6) -> list:
    """Central-difference gradient of the scalar ``f()`` w.r.t. each tensor.

    ``f`` takes no arguments and reads the parameters' current data; each
    coordinate is perturbed in place and restored afterwards.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")

    def value() -> float:
        out = f()
        return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)

    result = []
    for p in params:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        g = np.zeros(p.data.size, dtype=np.float64)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = value()
            flat[k] = orig - eps
            down = value()
            flat[k] = orig
            g[k] = (up - down) / (2 * eps)
        result.append(g.reshape(p.shape))
    return result


# ----------------------------------------------------------------------------
# spatial helpers

def _as_batch(x: np.ndarray, op: str):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidInputError(f"{op}: expected [C,H,W] or [B,C,H,W], got shape {x.shape}")


def _correlate_same(x: np.ndarray, k: np.ndarray):
    """Zero-padded 'same' cross-correlation, x [B,C,H,W], k [O,C,kh,kw]."""
    B, C, H, W = x.shape
    O, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B,C,H,W,kh,kw
    # channel-first columns [B, C*kh*kw, H*W]: the copy keeps W innermost
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, H * W)
    out = np.matmul(k.reshape(O, -1), cols)
    return out.reshape(B, O, H, W), cols


# ----------------------------------------------------------------------------
# operations

def conv2d(x, kernels, bias) -> Tensor:
    """Same-size 2-D convolution (cross-correlation) with zero padding."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    xb, squeeze = _as_batch(x.data, "conv2d")
    k = kernels.data
    if k.ndim != 4:
        raise InvalidInputError(f"conv2d: kernels must be [C_out,C_in,kH,kW], got {k.shape}")
    O, C, kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidInputError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if xb.shape[1] != C:
        raise InvalidInputError(f"conv2d: input has {xb.shape[1]} channels, kernels expect {C}")
    if bias.shape != (O,):
        raise InvalidInputError(f"conv2d: bias shape {bias.shape} != ({O},)")

    out, cols = _correlate_same(xb, k)
    out += bias.data[None, :, None, None]

    def rule(g):
        gb = g[None] if squeeze else g
        gk = None
        if kernels.requires_grad:
            G = gb.reshape(gb.shape[0], O, -1)
            gk = np.matmul(G, cols.transpose(0, 2, 1)).sum(axis=0).reshape(k.shape)
        gbias = gb.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx, _ = _correlate_same(gb, flipped)
            if squeeze:
                gx = gx[0]
        return gx, gk, gbias

    return _emit("conv2d", (x, kernels, bias), out[0] if squeeze else out, rule)


def avg_downsample(x, factor: int) -> Tensor:
    """Mean over non-overlapping ``factor x factor`` blocks."""
    x = as_tensor(x)
    f = int(factor)
    if f < 1:
        raise InvalidInputError(f"avg_downsample: factor must be >= 1, got {factor}")
    xb, squeeze = _as_batch(x.data, "avg_downsample")
    B, C, H, W = xb.shape
    if H % f or W % f:
        raise InvalidInputError(f"avg_downsample: {H}x{W} not divisible by {f}")
    blocks = xb.reshape(B, C, H // f, f, W // f, f)
    # shift by one block member so constant blocks come back exactly
    ref = blocks[:, :, :, :1, :, :1]
    out = ref[:, :, :, 0, :, 0] + (blocks - ref).mean(axis=(3, 5))
    out = out.astype(xb.dtype, copy=False)

    def rule(g):
        gb = g[None] if squeeze else g
        gx = np.repeat(np.repeat(gb, f, axis=2), f, axis=3) / (f * f)
        return (gx[0] if squeeze else gx,)

    return _emit("avg_downsample", (x,), out[0] if squeeze else out, rule)


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling: ``out[c, y, x] = in[c, y // f, x // f]``."""
    x = as_tensor(x)
    f = int(factor)
    if f < 1:
        raise InvalidInputError(f"upsample_nearest: factor must be >= 1, got {factor}")
    xb, squeeze = _as_batch(x.data, "upsample_nearest")
    out = np.repeat(np.repeat(xb, f, axis=2), f, axis=3)

    def rule(g):
        gb = g[None] if squeeze else g
        B, C, H, W = gb.shape
        gx = gb.reshape(B, C, H // f, f, W // f, f).sum(axis=(3, 5))
        return (gx[0] if squeeze else gx,)

    return _emit("upsample_nearest", (x,), out[0] if squeeze else out, rule)


def leaky_relu(x, alpha: float = 0.1) -> Tensor:
    x = as_tensor(x)
    if not 0 < alpha < 1:
        raise InvalidInputError(f"leaky_relu: alpha must lie in (0, 1), got {alpha}")
    pos = x.data > 0
    a = x.data.dtype.type(alpha)
    out = np.where(pos, x.data, a * x.data)
    return _emit("leaky_relu", (x,), out, lambda g: (np.where(pos, g, a * g),))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def mul(a, b) -> Tensor:
    """Element-wise product of two tensors of identical shape."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return _emit("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


elementwise_mul = mul


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def concat(tensors: Sequence, axis: int = -3) -> Tensor:
    """Concatenate along the channel axis (``-3`` for [C,H,W] and [B,C,H,W])."""
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise InvalidInputError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise InvalidInputError(f"concat: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", ts, out, rule)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over all elements, returned as a 0-d tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data.astype(pred.dtype, copy=False)
    n = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def rule(g):
        scaled = (2.0 / n) * g * diff
        return scaled, (-scaled if target.requires_grad else None)

    return _emit("mse_loss", (pred, target), out, rule)
