import numpy as np
import pytest

from mergevit.config import PRESETS, ModelConfig, preset
from mergevit.errors import ConfigError, DimensionError
from mergevit.model import check_params, forward, param_count, param_shapes, random_init
from mergevit.pruning import SimilarityMetric, floor_chain


@pytest.fixture(scope="module")
def deit_s_params():
    return random_init(preset("deit-s"), 0)


def image(seed=0, size=224):
    return np.random.default_rng(seed).standard_normal((3, size, size)).astype(np.float32)


class TestConfig:
    def test_presets(self):
        assert {k: (c.depth, c.dim, c.heads, c.prune_layers) for k, c in PRESETS.items()} == {
            "deit-t": (12, 192, 3, (4, 7, 10)),
            "deit-s": (12, 384, 6, (4, 7, 10)),
            "deit-b": (12, 768, 12, (4, 7, 10)),
            "lvvit-s": (16, 384, 6, (5, 9, 13)),
        }

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("vit-h")

    @pytest.mark.parametrize("changes", [
        {"prune_layers": (7, 4)},
        {"prune_layers": (4, 13)},
        {"prune_layers": (3, 7)},
        {"keep_rate": 0.0},
        {"heads": 5},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            preset("deit-s", **changes)

    def test_prune_before_stem_allowed_single_scale(self):
        assert preset("deit-s", prune_layers=(2,), multiscale=False).prune_layers == (2,)


class TestRandomInit:
    def test_deterministic(self, tiny_cfg):
        a, b = random_init(tiny_cfg, 3), random_init(tiny_cfg, 3)
        assert list(a) == list(b)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_seed_sensitive(self, tiny_cfg):
        a, b = random_init(tiny_cfg, 3), random_init(tiny_cfg, 4)
        assert any(a[k].tobytes() != b[k].tobytes() for k in a)

    def test_init_statistics(self, tiny_cfg):
        p = random_init(tiny_cfg, 0)
        w = p["blocks.1.attn.w_q"]
        assert np.abs(w).max() <= 0.04 + 1e-7
        assert 0.01 < w.std() < 0.02
        assert not p["blocks.1.attn.b_q"].any() and not p["head.b"].any() and not p["fusion.peg_b"].any()
        assert (p["norm.gamma"] == 1).all() and not p["norm.beta"].any()

    def test_deit_s_parameter_count(self):
        n = param_count(random_init(preset("deit-s", multiscale=False), 0))
        assert abs(n - 22.1e6) <= 0.1 * 22.1e6

    def test_shapes_cover_params(self, tiny_cfg):
        assert {k: v.shape for k, v in random_init(tiny_cfg, 0).items()} == param_shapes(tiny_cfg)


class TestForward:
    def test_keep_all_constant_length(self, tiny_cfg):
        cfg = tiny_cfg.replace(keep_rate=1.0)
        trace = forward(image(), random_init(cfg, 0), cfg)
        assert trace.token_counts == [197] * 6
        assert all(not o.merge_assignment for o in trace.outcomes.values())

    def test_deit_s_token_counts(self, deit_s_params):
        cfg = preset("deit-s", keep_rate=0.7)
        trace = forward(image(), deit_s_params, cfg)
        counts = dict(enumerate(trace.token_counts, 1))
        assert (counts[4], counts[7], counts[10]) == (138, 96, 67)
        assert trace.token_counts == sorted(trace.token_counts, reverse=True)

    @pytest.mark.parametrize("eta", [0.5, 0.7, 0.9])
    @pytest.mark.parametrize("multiscale", [True, False])
    def test_floor_chain(self, tiny_cfg, eta, multiscale):
        cfg = tiny_cfg.replace(keep_rate=eta, multiscale=multiscale)
        trace = forward(image(1), random_init(cfg, 1), cfg)
        chain = floor_chain(197, eta, 3)
        assert [trace.token_counts[p - 1] for p in cfg.prune_layers] == chain[1:]

    def test_bitwise_deterministic(self, tiny_cfg):
        cfg = tiny_cfg.replace(keep_rate=0.5)
        a = forward(image(), random_init(cfg, 9), cfg)
        b = forward(image(), random_init(cfg, 9), cfg)
        assert a.logits.tobytes() == b.logits.tobytes()
        assert a.logits.shape == (10,) and np.isfinite(a.logits).all()

    def test_provenance_covers_patches(self, tiny_cfg):
        cfg = tiny_cfg.replace(keep_rate=0.5)
        trace = forward(image(), random_init(cfg, 0), cfg)
        patches = sorted(i for g in trace.provenance for i in g)
        assert patches == list(range(196))
        assert len([g for g in trace.provenance if g]) == floor_chain(197, 0.5, 3)[-1] - 1

    @pytest.mark.parametrize("metric", ["cosine", "l1", "l2", "attn", "random"])
    def test_every_metric_runs(self, tiny_cfg, metric):
        cfg = tiny_cfg.replace(keep_rate=0.6, metric=SimilarityMetric.from_name(metric, 4))
        trace = forward(image(), random_init(cfg, 0), cfg)
        assert np.isfinite(trace.logits).all()
        assert trace.token_counts[-1] == floor_chain(197, 0.6, 3)[-1]

    def test_metric_changes_assignment(self, tiny_cfg):
        params = random_init(tiny_cfg, 0)
        runs = {}
        for m in ("cosine", "random"):
            cfg = tiny_cfg.replace(keep_rate=0.5, metric=SimilarityMetric(m))
            runs[m] = forward(image(), params, cfg).outcomes[3].merge_assignment
        assert runs["cosine"] != runs["random"]

    def test_missing_parameter_named(self, tiny_cfg):
        params = random_init(tiny_cfg, 0)
        del params["blocks.2.ffn.w1"]
        with pytest.raises(ConfigError, match="blocks.2.ffn.w1"):
            forward(image(), params, tiny_cfg)

    def test_wrong_shape_named(self, tiny_cfg):
        params = random_init(tiny_cfg, 0)
        params["fusion.peg"] = np.zeros((24, 5, 5), np.float32)
        with pytest.raises(ConfigError, match="fusion.peg"):
            check_params(params, tiny_cfg)

    def test_wrong_image_size(self, tiny_cfg):
        with pytest.raises(DimensionError):
            forward(image(size=192), random_init(tiny_cfg, 0), tiny_cfg)

    def test_single_scale_ignores_extra_params(self, tiny_cfg):
        params = random_init(tiny_cfg, 0)
        cfg = tiny_cfg.replace(multiscale=False)
        assert forward(image(), params, cfg).token_counts[0] == 197

    def test_multiscale_changes_output(self, tiny_cfg):
        params = random_init(tiny_cfg, 0)
        on = forward(image(), params, tiny_cfg).logits
        off = forward(image(), params, tiny_cfg.replace(multiscale=False)).logits
        assert not np.allclose(on, off)
