"""Closed-form MAC model and an instrumented cross-check.

All counts are multiply-accumulates.  ``G`` figures reported for comparison
with published ViT tables use the MAC convention (DeiT-S ~ 4.6 G); the
2*MAC FLOP count is carried alongside so neither is implied silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .pruning import kept_count


def attention_macs(n: int, d: int) -> int:
    """QKV + output projections (4nd^2) plus QK^T and AV (2n^2 d)."""
    return 4 * n * d * d + 2 * n * n * d


def mlp_macs(n: int, d: int, mlp_ratio: int = 4) -> int:
    return 2 * mlp_ratio * n * d * d


def analytic_block_flops(n: int, d: int, mlp_ratio: int = 4) -> int:
    """MACs of one encoder block on ``n`` tokens of width ``d``.

    With the usual 4x MLP this is ``12*n*d^2 + 2*n^2*d``.
    """
    if n < 1 or d < 1:
        raise ValueError("token count and width must be positive")
    return attention_macs(n, d) + mlp_macs(n, d, mlp_ratio)


@dataclass
class BlockCost:
    layer: int
    tokens_in: int
    tokens_out: int
    macs: int
    note: str = ""


@dataclass
class FlopsReport:
    preset: str
    eta: float
    multiscale: bool
    metric: str
    per_block: list[BlockCost] = field(default_factory=list)
    embed_macs: int = 0
    fusion_macs: int = 0
    prune_macs: int = 0
    head_macs: int = 0
    baseline_block_macs: int = 0
    baseline_total_macs: int = 0

    @property
    def block_macs(self) -> int:
        return sum(b.macs for b in self.per_block)

    @property
    def analytic_total(self) -> int:
        return self.block_macs + self.embed_macs + self.fusion_macs + self.prune_macs + self.head_macs

    total_macs = analytic_total

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    @property
    def gmacs(self) -> float:
        return self.total_macs / 1e9

    @property
    def reduction_pct(self) -> float:
        """Block-only saving relative to the unpruned single-scale model."""
        return 100.0 * (1.0 - self.block_macs / self.baseline_block_macs)

    @property
    def total_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.total_macs / self.baseline_total_macs)

    def as_dict(self) -> dict[str, str]:
        out = {
            "preset": self.preset,
            "eta": f"{self.eta:g}",
            "multiscale": "on" if self.multiscale else "off",
            "metric": self.metric,
            "block_macs": str(self.block_macs),
            "embed_macs": str(self.embed_macs),
            "fusion_macs": str(self.fusion_macs),
            "prune_macs": str(self.prune_macs),
            "head_macs": str(self.head_macs),
            "total_macs": str(self.total_macs),
            "total_flops": str(self.total_flops),
            "gmacs": f"{self.gmacs:.4f}",
            "reduction_pct": f"{self.reduction_pct:.2f}",
            "total_reduction_pct": f"{self.total_reduction_pct:.2f}",
        }
        for b in self.per_block:
            out[f"block.{b.layer}"] = f"{b.tokens_in},{b.tokens_out},{b.macs}"
        return out

    def to_kv(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.as_dict().items())

    def to_text(self) -> str:
        lines = [
            f"preset      {self.preset}",
            f"keep rate   {self.eta:g}",
            f"multiscale  {'on' if self.multiscale else 'off'}",
            "",
            f"{'layer':>5} {'in':>5} {'out':>5} {'MACs':>14}",
        ]
        for b in self.per_block:
            lines.append(f"{b.layer:>5} {b.tokens_in:>5} {b.tokens_out:>5} {b.macs:>14,}" + (f"  {b.note}" if b.note else ""))
        lines += [
            "",
            f"blocks      {self.block_macs:>16,} MACs",
            f"embedding   {self.embed_macs:>16,} MACs",
            f"fusion      {self.fusion_macs:>16,} MACs",
            f"merging     {self.prune_macs:>16,} MACs",
            f"head        {self.head_macs:>16,} MACs",
            f"total       {self.total_macs:>16,} MACs = {self.total_flops:,} FLOPs",
            f"total       {self.gmacs:.3f} G (MAC convention, comparable to published GFLOPs)",
            f"reduction   {self.reduction_pct:.2f}% of block MACs vs unpruned single-scale",
            f"            {self.total_reduction_pct:.2f}% end to end",
        ]
        return "\n".join(lines) + "\n"


def _embed_macs(cfg: ModelConfig, multiscale: bool) -> int:
    d = cfg.dim
    macs = cfg.num_patches * 3 * cfg.patch_size ** 2 * d
    if multiscale:
        macs += cfg.num_low_patches * 3 * cfg.low_patch_size ** 2 * d
    return macs


def fusion_macs(cfg: ModelConfig) -> int:
    """Pointwise conv, LKA (5x5 dw, 7x7 dilated dw, 1x1) and 3x3 PEG on the fine grid."""
    hw, d = cfg.num_patches, cfg.dim
    return hw * d * d + hw * d * (25 + 49) + hw * d * d + hw * d * 9


def _merge_macs(n: int, kept: int, d: int, metric: str) -> int:
    """Similarity scoring plus the weighted sums, for one pruning event."""
    if kept == n:
        return 0
    non_crucial, targets = n - kept, kept - 1
    macs = n * d
    if metric in ("cosine", "l1", "l2"):
        macs += non_crucial * targets * d
    return macs


def model_flops(cfg: ModelConfig) -> FlopsReport:
    cfg.validate()
    d, r = cfg.dim, cfg.mlp_ratio
    n = 1 + cfg.num_patches
    report = FlopsReport(cfg.name, cfg.keep_rate, cfg.multiscale, cfg.metric.kind)

    if cfg.multiscale:
        pooled = 1 + cfg.num_patches // 4
        low = 1 + cfg.num_low_patches
        for layer in range(1, cfg.n_downsampled_blocks + 1):
            macs = attention_macs(pooled, d) + mlp_macs(n, d, r) + analytic_block_flops(low, d, r)
            report.per_block.append(BlockCost(layer, n, n, macs, note=f"pooled attn on {pooled}, coarse branch {low}"))
        report.fusion_macs = fusion_macs(cfg)

    prune_at = set(cfg.prune_layers)
    for layer in range(cfg.first_block, cfg.depth + 1):
        if layer in prune_at:
            kept = kept_count(n, cfg.keep_rate)
            macs = attention_macs(n, d) + mlp_macs(kept, d, r)
            report.prune_macs += _merge_macs(n, kept, d, cfg.metric.kind)
            report.per_block.append(BlockCost(layer, n, kept, macs, note="prune"))
            n = kept
        else:
            report.per_block.append(BlockCost(layer, n, n, analytic_block_flops(n, d, r)))

    report.embed_macs = _embed_macs(cfg, cfg.multiscale)
    report.head_macs = d * cfg.num_classes
    report.baseline_block_macs = cfg.depth * analytic_block_flops(1 + cfg.num_patches, d, r)
    report.baseline_total_macs = report.baseline_block_macs + _embed_macs(cfg, False) + report.head_macs
    return report


def instrumented_count(fn, *args, **kwargs) -> tuple[object, T.MacCounter]:
    """Run ``fn`` under a fresh MAC counter; return its result and the tally."""
    with T.count_macs() as counter:
        result = fn(*args, **kwargs)
    return result, counter


def instrumented_forward(cfg: ModelConfig, seed: int = 0, params=None, image=None) -> T.MacCounter:
    """Tally a real forward pass with seeded random weights and input."""
    from .model import forward, random_init

    if params is None:
        params = random_init(cfg, seed)
    if image is None:
        rng = np.random.default_rng(seed)
        image = rng.standard_normal((3, cfg.image_size, cfg.image_size)).astype(T.DTYPE)
    _, counter = instrumented_count(forward, image, params, cfg)
    return counter
