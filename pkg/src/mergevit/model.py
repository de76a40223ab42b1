"""Full forward pass: embedding, dual-branch stem, fusion, pruned encoder, head.

Parameters live in a flat ``{name: float32 array}`` mapping so they can be
written to and read from a weight file without any nesting.  Both branches
of the dual-scale stem share the block weights of the layer they run in;
the coarse branch only adds its own patch embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .multiscale import (DualScaleState, EmbedWeights, FusionWeights, downsampled_mhsa_block, embed,
                         embed_dual, fuse_scales)
from .pruning import PruneOutcome, prune
from .tensor import Tensor
from .transformer import AttentionWeights, BlockWeights, attention_sublayer, encoder_block, ffn_sublayer

Params = dict[str, Tensor]

INIT_STD = 0.02


def _embed_shapes(prefix: str, cfg: ModelConfig, patch: int, n_patches: int) -> dict[str, tuple]:
    d = cfg.dim
    return {
        f"{prefix}.proj": (3 * patch * patch, d),
        f"{prefix}.bias": (d,),
        f"{prefix}.cls": (d,),
        f"{prefix}.pos": (1 + n_patches, d),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Every parameter name the config requires, with its shape, in canonical order."""
    d, hd = cfg.dim, cfg.hidden_dim
    shapes = _embed_shapes("embed", cfg, cfg.patch_size, cfg.num_patches)
    if cfg.multiscale:
        shapes.update(_embed_shapes("embed_low", cfg, cfg.low_patch_size, cfg.num_low_patches))
        shapes.update({
            "fusion.up_pw": (d, d), "fusion.up_pw_b": (d,),
            "fusion.lka_dw5": (d, 5, 5), "fusion.lka_dw5_b": (d,),
            "fusion.lka_dwd7": (d, 7, 7), "fusion.lka_dwd7_b": (d,),
            "fusion.lka_pw": (d, d), "fusion.lka_pw_b": (d,),
            "fusion.peg": (d, 3, 3), "fusion.peg_b": (d,),
        })
    for i in range(1, cfg.depth + 1):
        p = f"blocks.{i}"
        for name in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.w_{name}"] = (d, d)
            shapes[f"{p}.attn.b_{name}"] = (d,)
        shapes.update({
            f"{p}.ffn.w1": (d, hd), f"{p}.ffn.b1": (hd,),
            f"{p}.ffn.w2": (hd, d), f"{p}.ffn.b2": (d,),
            f"{p}.ln1.gamma": (d,), f"{p}.ln1.beta": (d,),
            f"{p}.ln2.gamma": (d,), f"{p}.ln2.beta": (d,),
        })
    shapes.update({
        "norm.gamma": (d,), "norm.beta": (d,),
        "head.w": (d, cfg.num_classes), "head.b": (cfg.num_classes,),
    })
    return shapes


def param_count(params: Params) -> int:
    return sum(int(v.size) for v in params.values())


def _trunc_normal(rng: np.random.Generator, shape: tuple, std: float) -> Tensor:
    """Normal(0, std) truncated to +-2 std by resampling."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(T.DTYPE)


def random_init(cfg: ModelConfig, seed: int) -> Params:
    """Deterministic seeded parameter set.

    Projections, kernels, CLS and position embeddings draw from a truncated
    normal (std 0.02); biases are zero; norm scales are one.
    """
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            params[name] = np.ones(shape, dtype=T.DTYPE)
        elif leaf == "beta" or leaf.startswith("b") or leaf.endswith("_b"):
            params[name] = np.zeros(shape, dtype=T.DTYPE)
        else:
            params[name] = _trunc_normal(rng, shape, INIT_STD)
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    for name, shape in param_shapes(cfg).items():
        if name not in params:
            raise ConfigError(f"parameter {name!r} required by config {cfg.name!r} is missing")
        got = tuple(params[name].shape)
        if got != shape:
            raise ConfigError(f"parameter {name!r} has shape {got}, config {cfg.name!r} expects {shape}")


def block_weights(params: Params, cfg: ModelConfig, layer: int) -> BlockWeights:
    p = f"blocks.{layer}"
    attn = AttentionWeights(
        w_q=params[f"{p}.attn.w_q"], w_k=params[f"{p}.attn.w_k"],
        w_v=params[f"{p}.attn.w_v"], w_o=params[f"{p}.attn.w_o"],
        b_q=params[f"{p}.attn.b_q"], b_k=params[f"{p}.attn.b_k"],
        b_v=params[f"{p}.attn.b_v"], b_o=params[f"{p}.attn.b_o"],
        heads=cfg.heads,
    )
    return BlockWeights(
        attn=attn,
        ffn_w1=params[f"{p}.ffn.w1"], ffn_b1=params[f"{p}.ffn.b1"],
        ffn_w2=params[f"{p}.ffn.w2"], ffn_b2=params[f"{p}.ffn.b2"],
        ln1_gamma=params[f"{p}.ln1.gamma"], ln1_beta=params[f"{p}.ln1.beta"],
        ln2_gamma=params[f"{p}.ln2.gamma"], ln2_beta=params[f"{p}.ln2.beta"],
    )


def embed_weights(params: Params, prefix: str = "embed") -> EmbedWeights:
    return EmbedWeights(params[f"{prefix}.proj"], params[f"{prefix}.bias"],
                        params[f"{prefix}.cls"], params[f"{prefix}.pos"])


def fusion_weights(params: Params) -> FusionWeights:
    return FusionWeights(**{k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("fusion.")})


@dataclass
class ForwardTrace:
    logits: Tensor
    outcomes: dict[int, PruneOutcome] = field(default_factory=dict)
    token_counts: list[int] = field(default_factory=list)  # sequence length after each layer
    provenance: list[frozenset] = field(default_factory=list)

    @property
    def prune_layers(self) -> list[int]:
        return list(self.outcomes)

    def frames(self) -> list[tuple[int, list[frozenset]]]:
        """(layer, non-empty patch groups) for every pruning event."""
        return [(layer, [g for g in o.group_provenance if g]) for layer, o in self.outcomes.items()]


def _stem(image: Tensor, params: Params, cfg: ModelConfig) -> Tensor:
    if not cfg.multiscale:
        with T.mac_scope("embed"):
            return embed(image, embed_weights(params), cfg.patch_size)
    with T.mac_scope("embed"):
        state = embed_dual(image, embed_weights(params), embed_weights(params, "embed_low"),
                           cfg.patch_size, cfg.low_patch_size)
    high, low = state.high, state.low
    for layer in range(1, cfg.n_downsampled_blocks + 1):
        w = block_weights(params, cfg, layer)
        with T.mac_scope(f"block/{layer}"):
            high = downsampled_mhsa_block(high, w, state.grid_high)
            low, _ = encoder_block(low, w)
    with T.mac_scope("fusion"):
        return fuse_scales(DualScaleState(high, low, state.grid_high, state.grid_low), fusion_weights(params))


def forward(image: Tensor, params: Params, cfg: ModelConfig) -> ForwardTrace:
    """Run one image through the model and record every pruning event."""
    check_params(params, cfg)
    size = cfg.image_size
    if image.shape != (3, size, size):
        raise DimensionError(f"image shape {tuple(image.shape)} does not match config ({3}, {size}, {size})")

    x = _stem(image, params, cfg)
    trace = ForwardTrace(logits=np.empty(0, dtype=T.DTYPE))
    trace.token_counts = [x.shape[0]] * (cfg.first_block - 1)
    provenance = [frozenset()] + [frozenset({i}) for i in range(cfg.num_patches)]
    prune_at = set(cfg.prune_layers)

    for layer in range(cfg.first_block, cfg.depth + 1):
        w = block_weights(params, cfg, layer)
        pruning = layer in prune_at
        with T.mac_scope(f"block/{layer}"):
            x, rec = attention_sublayer(x, w, record_full_map=pruning and cfg.metric.needs_full_map)
        if pruning:
            with T.mac_scope(f"prune/{layer}"):
                outcome = prune(x, rec, cfg.keep_rate, cfg.metric, provenance)
            trace.outcomes[layer] = outcome
            x, provenance = outcome.merged_tokens, outcome.group_provenance
        with T.mac_scope(f"block/{layer}"):
            x = ffn_sublayer(x, w)
        trace.token_counts.append(x.shape[0])

    with T.mac_scope("head"):
        cls = T.layernorm(x[:1], params["norm.gamma"], params["norm.beta"])
        trace.logits = T.linear(cls, params["head.w"], params["head.b"])[0]
    trace.provenance = provenance
    return trace
