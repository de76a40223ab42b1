"""Vision Transformer inference with importance-guided token merging."""

from .config import PRESETS, ModelConfig, preset
from .flops import analytic_block_flops, model_flops
from .model import ForwardTrace, forward, random_init
from .pruning import SimilarityMetric, keep_rate_schedule, prune

__all__ = [
    "PRESETS", "ModelConfig", "preset", "analytic_block_flops", "model_flops",
    "ForwardTrace", "forward", "random_init", "SimilarityMetric", "keep_rate_schedule", "prune",
]
