"""Pre-norm ViT encoder blocks: multi-head self-attention and the MLP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AttentionWeights:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    b_o: Tensor
    heads: int

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    def __post_init__(self):
        if self.dim % self.heads:
            raise DimensionError(f"embedding dim {self.dim} is not divisible by {self.heads} heads")


@dataclass
class BlockWeights:
    attn: AttentionWeights
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


@dataclass
class AttentionRecord:
    """CLS query row of every head's attention map, plus the full map on request.

    ``cls_row`` is [H, N]; ``full_map`` is [H, N, N] or ``None``.
    """

    cls_row: Tensor
    full_map: Tensor | None = None


def mhsa(x: Tensor, w: AttentionWeights, record_full_map: bool = False) -> tuple[Tensor, AttentionRecord]:
    if x.ndim != 2 or x.shape[1] != w.dim:
        raise DimensionError(f"mhsa input {tuple(x.shape)} does not match weight dim {w.dim}")
    n = x.shape[0]
    if n < 2:
        raise DimensionError("mhsa needs the CLS token plus at least one other token")
    d = w.dim // w.heads
    scale = np.float32(1.0 / np.sqrt(d))

    q = T.linear(x, w.w_q, w.b_q)
    k = T.linear(x, w.w_k, w.b_k)
    v = T.linear(x, w.w_v, w.b_v)

    heads_out = []
    cls_rows = np.empty((w.heads, n), dtype=T.DTYPE)
    full = np.empty((w.heads, n, n), dtype=T.DTYPE) if record_full_map else None
    for h in range(w.heads):
        cols = slice(h * d, (h + 1) * d)
        qh = np.ascontiguousarray(q[:, cols])
        kh = np.ascontiguousarray(k[:, cols])
        vh = np.ascontiguousarray(v[:, cols])
        attn = T.softmax_rows(T.matmul(qh, kh.T) * scale)
        cls_rows[h] = attn[0]
        if full is not None:
            full[h] = attn
        heads_out.append(T.matmul(attn, vh))

    out = T.linear(np.concatenate(heads_out, axis=1), w.w_o, w.b_o)
    return out, AttentionRecord(cls_row=cls_rows, full_map=full)


def ffn(x: Tensor, w: BlockWeights) -> Tensor:
    # Linear -> GELU -> Linear; no output squashing.
    return T.linear(T.gelu(T.linear(x, w.ffn_w1, w.ffn_b1)), w.ffn_w2, w.ffn_b2)


def attention_sublayer(x: Tensor, w: BlockWeights, record_full_map: bool = False) -> tuple[Tensor, AttentionRecord]:
    """``x + MHSA(LN(x))``."""
    out, rec = mhsa(T.layernorm(x, w.ln1_gamma, w.ln1_beta), w.attn, record_full_map)
    return T.add(x, out), rec


def ffn_sublayer(x: Tensor, w: BlockWeights) -> Tensor:
    """``x + FFN(LN(x))``."""
    return T.add(x, ffn(T.layernorm(x, w.ln2_gamma, w.ln2_beta), w))


def encoder_block(x: Tensor, w: BlockWeights, record_full_map: bool = False) -> tuple[Tensor, AttentionRecord]:
    x, rec = attention_sublayer(x, w, record_full_map)
    return ffn_sublayer(x, w), rec
