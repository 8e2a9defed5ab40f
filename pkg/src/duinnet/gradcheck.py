"""Central finite-difference gradient verification, shared by tests and the CLI.

All checks run at 64-bit precision with the default step 1e-5. Relative error
is |analytic - numeric| / max(|numeric|, 1), elementwise, reported as a max.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Module
from .tensor import Tensor


def finite_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x (same shape as x)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(numeric), 1.0)
    return float((np.abs(analytic - numeric) / denom).max())


def check_fn(build, inputs: list[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error over all inputs of scalar-valued ``build(*tensors)``.

    ``build`` must construct a fresh graph from leaf tensors on each call.
    The caller's arrays are copied to float64 leaves; only the copies are
    perturbed during differencing.
    """
    leaves = [Tensor(np.ascontiguousarray(x, dtype=np.float64), requires_grad=True)
              for x in inputs]
    out = build(*leaves)
    out.backward()
    worst = 0.0
    for leaf in leaves:
        numeric = finite_diff(lambda: float(build(*leaves).data), leaf.data, eps)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def check_module_params(module: Module, forward, eps: float = 1e-5,
                        max_entries_per_param: int | None = None,
                        rng: np.random.Generator | None = None) -> float:
    """Max relative error of d forward() / d params for every parameter.

    ``forward`` is a zero-argument callable returning a scalar Tensor built
    from the module's current parameters. With ``max_entries_per_param`` only
    a random subset of coordinates per parameter is differenced (for large
    models); the analytic gradient is still the full backward pass.
    """
    module.to_dtype(np.float64)
    out = forward()
    module.zero_grad()
    out.backward()
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in module.named_parameters()}
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in module.named_parameters():
        flat = p.data.reshape(-1)
        gflat = grads[name].reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            idxs = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(forward().data)
            flat[i] = orig - eps
            fm = float(forward().data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            err = abs(gflat[i] - numeric) / max(abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
