"""Fast invariant checks runnable without pytest (``mergevit selftest``)."""

from __future__ import annotations

import itertools
import os
import tempfile
import traceback

import numpy as np

from . import tensor as T
from .config import preset
from .flops import instrumented_forward, model_flops
from .model import forward, random_init
from .pruning import (ImportanceScores, SimilarityMetric, floor_chain, merge_tokens, select_topk,
                      similarity_matrix)
from .transformer import AttentionWeights, mhsa
from .weights import load_weights, save_weights


def _check_matmul(rng):
    a = rng.standard_normal((5, 7)).astype(np.float32)
    b = rng.standard_normal((7, 3)).astype(np.float32)
    ref = [[sum(float(a[i, t]) * float(b[t, j]) for t in range(7)) for j in range(3)] for i in range(5)]
    assert np.allclose(T.matmul(a, b), ref, atol=1e-5)


def _check_softmax(rng):
    s = T.softmax_rows(rng.standard_normal((6, 9)).astype(np.float32) * 10)
    assert np.allclose(s.sum(axis=1), 1, atol=1e-5) and (s >= 0).all() and (s <= 1).all()


def _check_cls_rows(rng):
    d = 12
    w = AttentionWeights(*(rng.standard_normal((d, d)).astype(np.float32) for _ in range(4)),
                         *(np.zeros(d, np.float32) for _ in range(4)), heads=3)
    _, rec = mhsa(rng.standard_normal((9, d)).astype(np.float32), w)
    assert np.allclose(rec.cls_row.sum(axis=1), 1, atol=1e-5)


def _check_topk(rng):
    for n in range(2, 7):
        for perm in itertools.permutations(range(n - 1)):
            scores = np.array([0.0, *perm], dtype=np.float32)
            for eta in (0.3, 0.5, 1.0):
                crucial, rest = select_topk(ImportanceScores(scores), eta)
                k = max(1, int(eta * (n - 1) + 1e-9))
                ranked = sorted(range(1, n), key=lambda i: (-scores[i], i))
                assert crucial == [0] + sorted(ranked[:k]) and rest == sorted(ranked[k:])


def _check_merge(rng):
    x = rng.standard_normal((12, 6)).astype(np.float32)
    scores = ImportanceScores(rng.random(12).astype(np.float32))
    crucial, rest = select_topk(scores, 0.4)
    sim = similarity_matrix(x, crucial, rest, SimilarityMetric("cosine"))
    out = merge_tokens(x, scores, crucial, rest, sim)
    for r, j in enumerate(crucial):
        members = [j] + [k for k, t in out.merge_assignment.items() if t == j]
        assert (out.merged_tokens[r] >= x[members].min(0)).all()
        assert (out.merged_tokens[r] <= x[members].max(0)).all()


def _check_forward(rng):
    cfg = preset("deit-t", keep_rate=0.5)
    trace = forward(rng.standard_normal((3, 224, 224)).astype(np.float32), random_init(cfg, 0), cfg)
    assert trace.token_counts[-1] == floor_chain(197, 0.5, 3)[-1]
    seen = sorted(i for g in trace.provenance for i in g)
    assert seen == list(range(196))
    assert np.isfinite(trace.logits).all()


def _check_flops(rng):
    cfg = preset("deit-t", keep_rate=0.7)
    counter = instrumented_forward(cfg, seed=1)
    assert counter.under("block") == model_flops(cfg).block_macs


def _check_roundtrip(rng):
    params = random_init(preset("deit-t"), 7)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "w.tm")
        save_weights(params, path)
        loaded = load_weights(path)
    assert list(loaded) == list(params)
    assert all(loaded[k].tobytes() == params[k].tobytes() for k in params)


CHECKS = [
    ("matmul matches loop reference", _check_matmul),
    ("softmax rows are distributions", _check_softmax),
    ("CLS attention rows sum to one", _check_cls_rows),
    ("top-k matches exhaustive sort", _check_topk),
    ("merged tokens are convex combinations", _check_merge),
    ("forward floor-chain and patch coverage", _check_forward),
    ("instrumented block MACs equal the closed form", _check_flops),
    ("weight file round trip is bitwise", _check_roundtrip),
]


def run(out=print) -> int:
    failures = 0
    for name, check in CHECKS:
        try:
            check(np.random.default_rng(0))
        except Exception:
            failures += 1
            out(f"FAIL  {name}")
            out(traceback.format_exc().rstrip())
        else:
            out(f"ok    {name}")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 1 if failures else 0
