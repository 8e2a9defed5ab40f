"""Multi-head cross/self-attention blocks and the dual feature interactor."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..nn import LayerNorm, Linear, Module
from ..tensor import Tensor


class CrossAttentionBlock(Module):
    """Pre-projection multi-head attention with residual-on-query and FFN.

    q_src rows attend over kv_src rows; the first residual adds the projected
    query (not the raw source), then layer norm, then a position-wise
    feed-forward with a second residual + norm. Self-attention is the
    q_src == kv_src case.
    """

    def __init__(self, C: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.C = C
        self.heads = heads
        self.q_proj = Linear(C, C, rng)
        self.k_proj = Linear(C, C, rng)
        self.v_proj = Linear(C, C, rng)
        self.out_proj = Linear(C, C, rng)
        self.norm1 = LayerNorm(C)
        self.norm2 = LayerNorm(C)
        self.ffn1 = Linear(C, ffn_mult * C, rng)
        self.ffn2 = Linear(ffn_mult * C, C, rng)
        self.last_attn: list[np.ndarray] = []  # per-head (M, L) weights, diagnostics only

    def __call__(self, q_src: Tensor, kv_src: Tensor) -> Tensor:
        if q_src.shape[-1] != self.C or kv_src.shape[-1] != self.C:
            raise T.DimensionError(
                f"attention width mismatch: q {q_src.shape}, kv {kv_src.shape}, expected C={self.C}"
            )
        q = self.q_proj(q_src)
        k = self.k_proj(kv_src)
        v = self.v_proj(kv_src)
        dh = self.C // self.heads
        scale = 1.0 / np.sqrt(dh)
        head_outs = []
        self.last_attn = []
        for h in range(self.heads):
            cols = np.arange(h * dh, (h + 1) * dh)
            qh = T.gather(q, cols, axis=1)
            kh = T.gather(k, cols, axis=1)
            vh = T.gather(v, cols, axis=1)
            scores = T.mul(T.matmul(qh, T.transpose(kh)), T.tensor(scale, dtype=q.dtype))
            w = T.softmax(scores, axis=-1)
            self.last_attn.append(w.data.copy())
            head_outs.append(T.matmul(w, vh))
        attn = self.out_proj(T.concat(head_outs, axis=1))
        x = self.norm1(T.add(q, attn))
        ff = self.ffn2(T.relu(self.ffn1(x)))
        return self.norm2(T.add(x, ff))


class InteractorPath(Module):
    """CA1 (attend to the other modality) -> SA -> CA2 (attend to own input)."""

    def __init__(self, C: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.ca1 = CrossAttentionBlock(C, heads, rng, ffn_mult)
        self.sa = CrossAttentionBlock(C, heads, rng, ffn_mult)
        self.ca2 = CrossAttentionBlock(C, heads, rng, ffn_mult)

    def __call__(self, own: Tensor, other: Tensor) -> Tensor:
        x = self.ca1(own, other)
        x = self.sa(x, x)
        return self.ca2(x, own)


class DualFeatureInteractor(Module):
    """Two symmetric, independently parameterized interaction paths."""

    def __init__(self, C: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.pc_path = InteractorPath(C, heads, rng, ffn_mult)
        self.img_path = InteractorPath(C, heads, rng, ffn_mult)

    def __call__(self, f_pc: Tensor, f_img: Tensor) -> tuple[Tensor, Tensor]:
        return self.pc_path(f_pc, f_img), self.img_path(f_img, f_pc)

    def attention_blocks(self) -> list[CrossAttentionBlock]:
        return [self.pc_path.ca1, self.pc_path.sa, self.pc_path.ca2,
                self.img_path.ca1, self.img_path.sa, self.img_path.ca2]
