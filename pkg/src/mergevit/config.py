"""Model configuration and named presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .pruning import SimilarityMetric, check_keep_rate


@dataclass(frozen=True)
class ModelConfig:
    name: str
    depth: int
    dim: int
    heads: int
    mlp_ratio: int = 4
    prune_layers: tuple[int, ...] = (4, 7, 10)
    keep_rate: float = 1.0
    n_downsampled_blocks: int = 3
    num_classes: int = 1000
    image_size: int = 224
    patch_size: int = 16
    low_patch_size: int = 32
    metric: SimilarityMetric = field(default_factory=SimilarityMetric)
    multiscale: bool = True

    def __post_init__(self):
        object.__setattr__(self, "prune_layers", tuple(int(p) for p in self.prune_layers))
        self.validate()

    def validate(self) -> None:
        if self.depth < 1 or self.dim < 1 or self.heads < 1:
            raise ConfigError("depth, dim and heads must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.heads} heads")
        try:
            check_keep_rate(self.keep_rate)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        p = self.prune_layers
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ConfigError(f"prune_layers must be strictly increasing, got {list(p)}")
        if p and (p[0] < 1 or p[-1] > self.depth):
            raise ConfigError(f"prune_layers {list(p)} fall outside 1..{self.depth}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image size {self.image_size} is not divisible by patch size {self.patch_size}")
        if self.multiscale:
            if self.low_patch_size != 2 * self.patch_size:
                raise ConfigError("the coarse patch size must be twice the fine patch size")
            if self.image_size % self.low_patch_size:
                raise ConfigError(f"image size {self.image_size} is not divisible by {self.low_patch_size}")
            if not 0 <= self.n_downsampled_blocks < self.depth:
                raise ConfigError(f"n_downsampled_blocks must lie in 0..{self.depth - 1}")
            if p and p[0] <= self.n_downsampled_blocks:
                raise ConfigError("prune layers must come after the dual-branch blocks")

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def low_grid(self) -> tuple[int, int]:
        g = self.image_size // self.low_patch_size
        return (g, g)

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def num_low_patches(self) -> int:
        return self.low_grid[0] * self.low_grid[1]

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.dim

    @property
    def first_block(self) -> int:
        """1-based index of the first single-sequence block."""
        return self.n_downsampled_blocks + 1 if self.multiscale else 1

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


PRESETS = {
    "deit-t": ModelConfig("deit-t", depth=12, dim=192, heads=3),
    "deit-s": ModelConfig("deit-s", depth=12, dim=384, heads=6),
    "deit-b": ModelConfig("deit-b", depth=12, dim=768, heads=12),
    # plain patch embedding; structural stand-in for FLOPs arithmetic
    "lvvit-s": ModelConfig("lvvit-s", depth=16, dim=384, heads=6, mlp_ratio=3,
                           prune_layers=(5, 9, 13), n_downsampled_blocks=4),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base
