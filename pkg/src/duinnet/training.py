"""Single-process training loop with checkpoint/resume and loss-curve logging."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .model.network import DuInNet
from .nn import Adam


class TrainState:
    def __init__(self, model: DuInNet, lr: float = 1e-4, decay_steps: tuple[int, ...] = ()):
        self.model = model
        self.params = model.parameters()
        self.named = dict(model.named_parameters())
        self.opt = Adam(self.params, lr=lr)
        self.base_lr = lr
        self.decay_steps = tuple(sorted(decay_steps))
        self.step = 0

    def _current_lr(self) -> float:
        lr = self.base_lr
        for s in self.decay_steps:
            if self.step >= s:
                lr *= 0.1
        return lr

    def train_step(self, partial, image, gt, mode: str = "standard") -> float:
        self.model.train()
        self.opt.zero_grad()
        out = self.model(partial, image)
        loss = self.model.loss(out, gt, mode=mode)
        loss.backward()
        self.opt.lr = self._current_lr()
        self.opt.step()
        self.step += 1
        return float(loss.data)

    # -- checkpointing ---------------------------------------------------------

    def save(self, path) -> None:
        entries: dict[str, T.Tensor] = dict(self.named)
        for (name, _), m, v in zip(self.named.items(), self.opt.m, self.opt.v):
            entries[f"opt.m.{name}"] = T.tensor(m)
            entries[f"opt.v.{name}"] = T.tensor(v)
        entries["meta.step"] = T.tensor(np.array([float(self.step)]))
        entries["meta.opt_t"] = T.tensor(np.array([float(self.opt.t)]))
        T.save_checkpoint(path, entries)

    def load(self, path) -> None:
        arrays = T.load_checkpoint(path)
        self.model.load_state_dict({k: v for k, v in arrays.items()
                                    if not k.startswith(("opt.", "meta."))})
        for i, name in enumerate(self.named):
            if f"opt.m.{name}" in arrays:
                self.opt.m[i] = arrays[f"opt.m.{name}"].astype(self.params[i].data.dtype).copy()
                self.opt.v[i] = arrays[f"opt.v.{name}"].astype(self.params[i].data.dtype).copy()
        self.step = int(arrays.get("meta.step", np.zeros(1))[0])
        self.opt.t = int(arrays.get("meta.opt_t", np.zeros(1))[0])


def train_loop(state: TrainState, samples, steps: int, mode: str = "standard",
               curve_path=None, checkpoint_path=None, checkpoint_every: int = 100,
               log_every: int = 25, verbose: bool = False) -> list[tuple[int, float]]:
    """Cycle through ``samples`` (list of (partial, image, gt)) in order.

    Appends (step, loss) rows to the curve file as it goes; raises
    FloatingPointError on a non-finite loss.
    """
    curve: list[tuple[int, float]] = []
    f = open(curve_path, "a") if curve_path else None
    try:
        for _ in range(steps):
            step = state.step
            partial, image, gt = samples[step % len(samples)]
            loss = state.train_step(partial, image, gt, mode=mode)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {step}")
            curve.append((step, loss))
            if f:
                f.write(f"{step}\t{loss:.8g}\n")
            if verbose and step % log_every == 0:
                print(f"step {step}  loss {loss:.6f}")
            if checkpoint_path and state.step % checkpoint_every == 0:
                state.save(checkpoint_path)
    finally:
        if f:
            f.close()
    if checkpoint_path:
        state.save(checkpoint_path)
    return curve
