"""Token selection by CLS attention and similarity-guided weighted merging.

At a pruning layer the head-averaged CLS attention row scores every token.
The top-k image tokens are kept ("crucial"); every other image token is
folded into the crucial token it most resembles, using the importance
scores as merge weights.  CLS always survives and never absorbs tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, ParameterError
from .tensor import Tensor
from .transformer import AttentionRecord

WEIGHT_FLOOR = 1e-12
NORM_FLOOR = 1e-12

METRIC_KINDS = ("cosine", "l1", "l2", "attention_cross", "random")
# CLI spelling -> canonical kind
METRIC_ALIASES = {"cosine": "cosine", "l1": "l1", "l2": "l2", "attn": "attention_cross",
                  "attention_cross": "attention_cross", "random": "random"}


@dataclass(frozen=True)
class SimilarityMetric:
    kind: str = "cosine"
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ConfigError(f"unknown similarity metric {self.kind!r}; expected one of {METRIC_KINDS}")

    @classmethod
    def from_name(cls, name: str, rng_seed: int = 0) -> SimilarityMetric:
        try:
            return cls(METRIC_ALIASES[name], rng_seed)
        except KeyError:
            raise ConfigError(f"unknown similarity metric {name!r}; expected one of {sorted(METRIC_ALIASES)}") from None

    @property
    def needs_full_map(self) -> bool:
        return self.kind == "attention_cross"


@dataclass
class ImportanceScores:
    scores: Tensor  # [N], index 0 is CLS


@dataclass
class PruneOutcome:
    crucial_indices: list[int]
    merge_assignment: dict[int, int]
    merged_tokens: Tensor
    group_provenance: list[frozenset] = field(default_factory=list)

    @property
    def merge_groups(self) -> dict[int, list[int]]:
        """Crucial index -> non-crucial indices folded into it."""
        groups: dict[int, list[int]] = {j: [] for j in self.crucial_indices}
        for k, j in sorted(self.merge_assignment.items()):
            groups[j].append(k)
        return groups


def kept_count(n_tokens: int, keep_rate: float) -> int:
    """Sequence length (CLS included) after one prune of ``n_tokens``."""
    return 1 + num_kept(n_tokens - 1, keep_rate)


def num_kept(n_image_tokens: int, keep_rate: float) -> int:
    # The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
    k = math.floor(keep_rate * n_image_tokens + 1e-9)
    return min(n_image_tokens, max(1, k))


def floor_chain(n_tokens: int, keep_rate: float, events: int) -> list[int]:
    """Sequence lengths before the first and after each of ``events`` prunes."""
    chain = [n_tokens]
    for _ in range(events):
        chain.append(kept_count(chain[-1], keep_rate))
    return chain


def check_keep_rate(keep_rate: float) -> float:
    if not (0.0 < keep_rate <= 1.0) or math.isnan(keep_rate):
        raise ParameterError(f"keep rate must lie in (0, 1], got {keep_rate}")
    return float(keep_rate)


def importance_scores(rec: AttentionRecord) -> ImportanceScores:
    rows = rec.cls_row
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise DimensionError(f"cls_row must be [H, N] with H >= 1, got {tuple(rows.shape)}")
    return ImportanceScores(rows.mean(axis=0, dtype=np.float64).astype(T.DTYPE))


def select_topk(scores: ImportanceScores, keep_rate: float) -> tuple[list[int], list[int]]:
    """Split token indices into (crucial, non_crucial).

    Ties on score go to the lower index.  Both lists come back in ascending
    index order and CLS (index 0) leads the crucial list.
    """
    check_keep_rate(keep_rate)
    s = np.asarray(scores.scores)
    n = s.shape[0]
    if n < 2:
        raise DimensionError("select_topk needs CLS plus at least one token")
    k = num_kept(n - 1, keep_rate)
    candidates = np.arange(1, n)
    # lexsort: last key is primary -> descending score, then ascending index
    order = candidates[np.lexsort((candidates, -s[1:].astype(np.float64)))]
    chosen = np.sort(order[:k])
    rest = np.sort(order[k:])
    return [0] + chosen.tolist(), rest.tolist()


def similarity_matrix(
    tokens: Tensor,
    crucial: list[int],
    non_crucial: list[int],
    metric: SimilarityMetric,
    attn: Tensor | None = None,
) -> Tensor:
    """Similarity of every non-crucial token to every non-CLS crucial token.

    Rows follow ``non_crucial``; columns follow ``crucial[1:]``.  Larger is
    more similar for every metric (distances are negated).
    """
    targets = [j for j in crucial if j != 0]
    if set(targets) & set(non_crucial):
        raise ParameterError("crucial and non-crucial index lists overlap")
    if 0 in non_crucial:
        raise ParameterError("CLS cannot be a non-crucial token")
    rows, cols = len(non_crucial), len(targets)
    kind = metric.kind

    if kind == "attention_cross":
        if attn is None:
            raise ConfigError("attention_cross similarity needs a recorded full attention map")
        avg = attn.mean(axis=0) if attn.ndim == 3 else attn
        return np.ascontiguousarray(avg[np.ix_(non_crucial, targets)], dtype=T.DTYPE)

    if kind == "random":
        rng = np.random.default_rng(metric.rng_seed)
        return rng.random((rows, cols)).astype(T.DTYPE)

    u = tokens[non_crucial]
    v = tokens[targets]
    if kind == "cosine":
        un = np.maximum(np.linalg.norm(u, axis=1), NORM_FLOOR)
        vn = np.maximum(np.linalg.norm(v, axis=1), NORM_FLOOR)
        dots = T.matmul(np.ascontiguousarray(u), np.ascontiguousarray(v.T))
        return (dots / un[:, None] / vn[None, :]).astype(T.DTYPE)

    diff = u[:, None, :].astype(np.float64) - v[None, :, :]
    T.tally(rows * cols * tokens.shape[1])
    if kind == "l1":
        dist = np.abs(diff).sum(axis=2)
    else:
        dist = np.sqrt((diff * diff).sum(axis=2))
    return (-dist).astype(T.DTYPE)


def merge_tokens(
    tokens: Tensor,
    scores: ImportanceScores,
    crucial: list[int],
    non_crucial: list[int],
    sim: Tensor,
    provenance: list[frozenset] | None = None,
) -> PruneOutcome:
    """Fold each non-crucial token into its most similar crucial token.

    Each kept token becomes the importance-weighted mean of itself and the
    tokens assigned to it; kept tokens with nothing assigned pass through.
    ``provenance`` gives the patch-id set each input token represents
    (defaults to ``{i - 1}`` for image token ``i``).
    """
    n, d = tokens.shape
    targets = [j for j in crucial if j != 0]
    if sim.shape != (len(non_crucial), len(targets)):
        raise DimensionError(
            f"similarity matrix {tuple(sim.shape)} does not match "
            f"{len(non_crucial)} non-crucial x {len(targets)} crucial tokens"
        )
    if provenance is None:
        provenance = [frozenset()] + [frozenset({i - 1}) for i in range(1, n)]

    w = np.maximum(np.asarray(scores.scores, dtype=np.float64), WEIGHT_FLOOR)
    # np.argmax returns the first maximum, i.e. the lower crucial index.
    assignment = {}
    if non_crucial:
        if not targets:
            raise ParameterError("no crucial image token available to merge into")
        best = np.argmax(sim, axis=1)
        assignment = {k: targets[b] for k, b in zip(non_crucial, best.tolist())}

    slot = {j: r for r, j in enumerate(crucial)}
    num = tokens[crucial].astype(np.float64) * w[crucial][:, None]
    den = w[crucial].copy()
    groups = [set(provenance[j]) for j in crucial]
    for k, j in assignment.items():
        r = slot[j]
        num[r] += w[k] * tokens[k]
        den[r] += w[k]
        groups[r] |= provenance[k]
    if assignment:
        T.tally(n * d)

    merged = (num / den[:, None]).astype(T.DTYPE)
    # Untouched tokens are copied bit-for-bit rather than round-tripped through w*x/w.
    touched = set(assignment.values())
    for r, j in enumerate(crucial):
        if j not in touched:
            merged[r] = tokens[j]

    return PruneOutcome(
        crucial_indices=list(crucial),
        merge_assignment=assignment,
        merged_tokens=merged,
        group_provenance=[frozenset(g) for g in groups],
    )


def prune(
    tokens: Tensor,
    rec: AttentionRecord,
    keep_rate: float,
    metric: SimilarityMetric,
    provenance: list[frozenset] | None = None,
) -> PruneOutcome:
    """Score, split, compare and merge in one step."""
    scores = importance_scores(rec)
    crucial, non_crucial = select_topk(scores, keep_rate)
    sim = similarity_matrix(tokens, crucial, non_crucial, metric, rec.full_map)
    return merge_tokens(tokens, scores, crucial, non_crucial, sim, provenance)


def keep_rate_schedule(target: float, epoch: int, total_warmup: int) -> float:
    """Cosine decay of the keep rate from 1 down to ``target`` over the warmup."""
    check_keep_rate(target)
    if total_warmup < 1:
        raise ParameterError(f"total_warmup must be >= 1, got {total_warmup}")
    t = min(max(epoch, 0), total_warmup)
    return target + (1.0 - target) * (1.0 + math.cos(math.pi * t / total_warmup)) / 2.0
