"""Dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays. Every differentiable operation records
its inputs and a backward closure on the output node; ``Tensor.backward()``
topologically orders the recorded graph (a :class:`GradTape`) and replays it
in reverse, accumulating gradients into every reachable leaf that has
``requires_grad`` set.

Two precisions are supported: float32 (training default) and float64
(gradient-check suites). The default is switchable via
:func:`set_default_dtype`.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense n-dimensional array node in a reverse-mode autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        t = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- graph machinery -----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self) -> "GradTape":
        """Backpropagate from this (scalar) tensor through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        tape = GradTape.trace(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(tape.entries):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return tape

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Topologically ordered record of the operations reaching one output.

    ``entries`` lists graph nodes such that every node's inputs appear before
    the node itself; the backward sweep visits each entry exactly once, in
    reverse. A tape must stay confined to one thread.
    """

    def __init__(self, entries: list[Tensor]):
        self.entries = entries

    @classmethod
    def trace(cls, root: Tensor) -> "GradTape":
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else _DEFAULT_DTYPE))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def _make(out_data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(out_data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad or p._parents for p in parents)
        out._op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, "mul", (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, "div", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(-g)

    return _make(-a.data, "neg", (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0), "relu", (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        a._accumulate(g * 0.5 / out_data)

    return _make(out_data, "sqrt", (a,), bw)


def sqrt_safe(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Exact sqrt forward; backward denominator floored at sqrt(eps) so zero
    inputs (coincident points in distance losses) yield a finite subgradient."""
    out_data = np.sqrt(a.data)

    def bw(g):
        a._accumulate(g * 0.5 / np.maximum(out_data, np.sqrt(eps)))

    return _make(out_data, "sqrt_safe", (a,), bw)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """Elementwise max(a, lo) against a constant; gradient passes where a > lo."""
    mask = a.data > lo

    def bw(g):
        a._accumulate(g * mask)

    return _make(np.maximum(a.data, lo), "clamp_min", (a,), bw)


# -- linear algebra / structure -------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bw(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes_t = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes_t)

    def bw(g):
        a._accumulate(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes_t), "transpose", (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def bw(g):
        a._accumulate(g.reshape(old))

    return _make(np.ascontiguousarray(a.data.reshape(shape)), "reshape", (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, bw)


def gather(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select slices along ``axis``; indices are constants (no index gradient)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise IndexError(f"gather index out of range for axis {axis} of size {a.shape[axis]}")

    def bw(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, tuple([slice(None)] * axis + [idx]), g)
        a._accumulate(acc)

    return _make(np.take(a.data, idx, axis=axis), "gather", (a,), bw)


# -- reductions ------------------------------------------------------------------


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(ge, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "reduce_sum", (a,), bw)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(ge / n, a.shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims), "reduce_mean", (a,), bw)


def _reduce_select(a: Tensor, axis: int, argfn, valfn, name: str):
    idx = argfn(a.data, axis=axis)  # numpy picks the first (lowest-index) extremum
    out_data = valfn(a.data, axis=axis)

    def bw(g):
        acc = np.zeros_like(a.data)
        grid = np.indices(idx.shape)
        sl = list(grid)
        sl.insert(axis, idx)
        np.add.at(acc, tuple(sl), g)
        a._accumulate(acc)

    return _make(out_data, name, (a,), bw), idx


def reduce_max(a: Tensor, axis: int):
    """Max along ``axis``; returns (values, argmax). Ties go to the lowest index;
    gradient flows only to the selected elements."""
    return _reduce_select(a, axis, np.argmax, np.max, "reduce_max")


def reduce_min(a: Tensor, axis: int):
    """Min along ``axis``; returns (values, argmin), same subgradient rule as max."""
    return _reduce_select(a, axis, np.argmin, np.min, "reduce_min")


# -- normalizers / softmax ---------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise FloatingPointError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return _make(out_data, "softmax", (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis with learnable affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    gain, bias = _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    n = x.shape[-1]

    def bw(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad or bias._parents:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad or x._parents:
            gx = g * gain.data
            t1 = gx.sum(axis=-1, keepdims=True)
            t2 = (gx * xhat).sum(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - t1 / n - xhat * t2 / n))

    return _make(out_data, "layer_norm", (x, gain, bias), bw)


def batch_norm_1d(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over axis 0 of an (n, c) tensor.

    In training mode normalizes by batch statistics and updates the running
    buffers in place; in eval mode uses the running buffers as constants.
    """
    gain, bias = _as_tensor(gain), _as_tensor(bias)
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        n = x.shape[0]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * (var * n / max(n - 1, 1))
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate((g * xhat).sum(axis=0))
        if bias.requires_grad or bias._parents:
            bias._accumulate(g.sum(axis=0))
        if x.requires_grad or x._parents:
            gx = g * gain.data
            if training:
                n = x.shape[0]
                t1 = gx.mean(axis=0)
                t2 = (gx * xhat).mean(axis=0)
                x._accumulate(inv * (gx - t1 - xhat * t2))
            else:
                x._accumulate(gx * inv)

    return _make(out_data, "batch_norm_1d", (x, gain, bias), bw)


# -- convolution -------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution on a single (H, W, Cin) image with (kh, kw, Cin, Cout) weights."""
    H, W, Cin = x.shape
    kh, kw, wcin, Cout = w.shape
    if wcin != Cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    cols = np.empty((Ho * Wo, kh * kw * Cin), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[i : i + Ho * stride : stride, j : j + Wo * stride : stride, :]
            cols[:, (i * kw + j) * Cin : (i * kw + j + 1) * Cin] = patch.reshape(Ho * Wo, Cin)
    wmat = w.data.reshape(kh * kw * Cin, Cout)
    out_data = cols @ wmat
    if b is not None:
        out_data = out_data + b.data
    out_data = out_data.reshape(Ho, Wo, Cout)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gmat = g.reshape(Ho * Wo, Cout)
        if b is not None and (b.requires_grad or b._parents):
            b._accumulate(gmat.sum(axis=0))
        if w.requires_grad or w._parents:
            w._accumulate((cols.T @ gmat).reshape(w.shape))
        if x.requires_grad or x._parents:
            dcols = gmat @ wmat.T
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[i : i + Ho * stride : stride, j : j + Wo * stride : stride, :] += dcols[
                        :, (i * kw + j) * Cin : (i * kw + j + 1) * Cin
                    ].reshape(Ho, Wo, Cin)
            if padding:
                dxp = dxp[padding:-padding, padding:-padding, :]
            x._accumulate(dxp)

    return _make(out_data, "conv2d", parents, bw)


# -- checkpoint archive --------------------------------------------------------------

_CKPT_MAGIC = b"DPCK\x01\n"


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    """Write a flat parameter archive.

    Byte layout (all integers little-endian):
      magic ``DPCK\\x01\\n`` | u32 entry count | entries.
      Each entry: u16 name length | name utf-8 | u8 ndim | u32 dims... |
      float32 little-endian values, C order.
    """
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            t = params[name]
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", t.ndim))
            for d in t.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a parameter archive back as name -> float32 array."""
    with open(path, "rb") as f:
        magic = f.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
        (count,) = struct.unpack("<I", f.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            out[name] = data.astype(np.float32)
    return out
