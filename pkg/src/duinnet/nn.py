"""Layers and optimizer built on the autodiff tensor engine.

Modules hold named parameters (dotted paths, e.g. ``dfi.pc_path.ca1.q_proj.weight``)
and can be serialized through the flat checkpoint archive in :mod:`duinnet.tensor`.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class: children and parameters are discovered from attributes."""

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        for name, attr in vars(self).items():
            full = f"{prefix}{name}" if prefix else name
            if isinstance(attr, Tensor) and attr.requires_grad:
                yield full, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(full + ".")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def modules(self):
        yield self
        for attr in vars(self).values():
            if isinstance(attr, Module):
                yield from attr.modules()
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            if hasattr(m, "training"):
                m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype):
        """Convert all parameters and buffers in place (for 64-bit grad checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for buf in ("running_mean", "running_var"):
                if hasattr(m, buf):
                    setattr(m, buf, getattr(m, buf).astype(dtype))
        return self

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        for name, p in own.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            arr = arrays[name]
            if tuple(arr.shape) != p.shape:
                raise ValueError(
                    f"shape mismatch for parameter '{name}': "
                    f"checkpoint {tuple(arr.shape)} vs model {p.shape}"
                )
            p.data = arr.astype(p.data.dtype).copy()


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(_uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (out_dim,), in_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        flat = x if x.ndim == 2 else T.reshape(x, (-1, x.shape[-1]))
        out = T.matmul(flat, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        if x.ndim != 2:
            out = T.reshape(out, x.shape[:-1] + (self.weight.shape[1],))
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=T.default_dtype()), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=T.default_dtype()), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm1d(Module):
    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=T.default_dtype()), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=T.default_dtype()), requires_grad=True)
        self.running_mean = np.zeros(dim, dtype=T.default_dtype())
        self.running_var = np.ones(dim, dtype=T.default_dtype())
        self.momentum = momentum
        self.eps = eps
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm_1d(
            x, self.gain, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        fan_in = kernel * kernel * in_ch
        self.weight = Tensor(_uniform_init(rng, (kernel, kernel, in_ch, out_ch), fan_in),
                             requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (out_ch,), fan_in), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LBR(Module):
    """Linear + batch norm + ReLU triple, the generator's building block."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.linear = Linear(in_dim, out_dim, rng)
        self.bn = BatchNorm1d(out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.linear(x)))


class Adam:
    """Adam with optional stepwise learning-rate decay schedule."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
