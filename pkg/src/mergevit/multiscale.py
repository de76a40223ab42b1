"""Dual-scale patch embedding, low-to-high fusion and pooled-attention blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor
from .transformer import BlockWeights, ffn_sublayer, mhsa


@dataclass
class EmbedWeights:
    """Stride-``patch`` conv as a matrix: ``proj`` is [3*p*p, D]."""

    proj: Tensor
    bias: Tensor
    cls: Tensor  # [D]
    pos: Tensor  # [1 + N, D]


@dataclass
class FusionWeights:
    up_pw: Tensor  # [D, D] pointwise conv right after nearest upsampling
    up_pw_b: Tensor
    lka_dw5: Tensor  # [D, 5, 5]
    lka_dw5_b: Tensor
    lka_dwd7: Tensor  # [D, 7, 7], dilation 3
    lka_dwd7_b: Tensor
    lka_pw: Tensor  # [D, D]
    lka_pw_b: Tensor
    peg: Tensor  # [D, 3, 3]
    peg_b: Tensor


@dataclass
class DualScaleState:
    high: Tensor  # [1 + Nh, D]
    low: Tensor  # [1 + Nl, D]
    grid_high: tuple[int, int]
    grid_low: tuple[int, int]

    def __post_init__(self):
        gh, gl = self.grid_high, self.grid_low
        if self.high.shape[0] != 1 + gh[0] * gh[1] or self.low.shape[0] != 1 + gl[0] * gl[1]:
            raise DimensionError(
                f"sequence lengths {self.high.shape[0]}/{self.low.shape[0]} do not match grids {gh}/{gl}"
            )
        if gh != (2 * gl[0], 2 * gl[1]):
            raise DimensionError(f"high grid {gh} must be twice the low grid {gl} per side")


def embed(image: Tensor, w: EmbedWeights, patch: int) -> Tensor:
    """Patch-project an image, prepend CLS and add position embeddings."""
    tokens = T.linear(T.patchify(image, patch), w.proj, w.bias)
    seq = np.concatenate([w.cls[None, :], tokens], axis=0)
    return T.add(seq, w.pos)


def embed_dual(image: Tensor, high: EmbedWeights, low: EmbedWeights,
               patch_high: int = 16, patch_low: int = 32) -> DualScaleState:
    _, h, w = image.shape
    if h % patch_low or w % patch_low:
        raise DimensionError(f"image {h}x{w} is not divisible by the coarse patch size {patch_low}")
    return DualScaleState(
        high=embed(image, high, patch_high),
        low=embed(image, low, patch_low),
        grid_high=(h // patch_high, w // patch_high),
        grid_low=(h // patch_low, w // patch_low),
    )


def lka(x: Tensor, w: FusionWeights) -> Tensor:
    """Large-kernel attention: depthwise 5x5 -> dilated depthwise 7x7 -> 1x1, used as a gate on ``x``."""
    a = T.conv2d_depthwise(x, w.lka_dw5, 1, w.lka_dw5_b)
    a = T.conv2d_depthwise(a, w.lka_dwd7, 3, w.lka_dwd7_b)
    a = T.conv2d_pointwise(a, w.lka_pw, w.lka_pw_b)
    return T.multiply(a, x)


def peg(x: Tensor, w: FusionWeights) -> Tensor:
    """Conditional position encoding: residual depthwise 3x3."""
    return T.add(x, T.conv2d_depthwise(x, w.peg, 1, w.peg_b))


def fuse_scales(state: DualScaleState, w: FusionWeights) -> Tensor:
    """Upsample the coarse branch onto the fine grid and add it in.

    Returns the fused [1 + Nh, D] sequence whose CLS is the sum of both CLS
    tokens.
    """
    low = T.tokens_to_grid(state.low[1:], state.grid_low)
    up = T.nearest_upsample(low, 2)
    up = T.conv2d_pointwise(up, w.up_pw, w.up_pw_b)
    high = T.tokens_to_grid(state.high[1:], state.grid_high)
    fused = peg(T.add(high, lka(up, w)), w)
    cls = T.add(state.high[:1], state.low[:1])
    return np.concatenate([cls, T.grid_to_tokens(fused)], axis=0)


def pooled_attention_sublayer(x: Tensor, w: BlockWeights, grid: tuple[int, int]) -> Tensor:
    """``x + UP(MHSA(DOWN(LN(x))))`` with CLS carried through unpooled."""
    gh, gw = grid
    if gh % 2 or gw % 2:
        raise DimensionError(f"pooled attention needs an even grid, got {gh}x{gw}")
    if x.shape[0] != 1 + gh * gw:
        raise DimensionError(f"{x.shape[0]} tokens do not match CLS + {gh}x{gw} grid")
    normed = T.layernorm(x, w.ln1_gamma, w.ln1_beta)
    pooled = T.avgpool2d(T.tokens_to_grid(normed[1:], grid), 2)
    short = np.concatenate([normed[:1], T.grid_to_tokens(pooled)], axis=0)
    out, _ = mhsa(short, w.attn)
    spatial = T.nearest_upsample(T.tokens_to_grid(out[1:], (gh // 2, gw // 2)), 2)
    update = np.concatenate([out[:1], T.grid_to_tokens(spatial)], axis=0)
    return T.add(x, update)


def downsampled_mhsa_block(x: Tensor, w: BlockWeights, grid: tuple[int, int]) -> Tensor:
    return ffn_sublayer(pooled_attention_sublayer(x, w, grid), w)
