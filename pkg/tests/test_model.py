import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refssm.errors import ConfigError, NumericHealthError, ShapeError
from refssm.model import (
    ModelConfig,
    block_forward,
    block_params,
    effective_rate,
    forward,
    init_params,
    model_forward,
    spike_statistics,
)


def tiny(variant="pssm", **kw):
    base = dict(n_layers=2, d_model=8, d_state=4, variant=variant, refractory=3, n_classes=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


class TestConfig:
    def test_table_defaults(self):
        cfg = ModelConfig()
        assert (cfg.n_layers, cfg.d_model, cfg.d_state, cfg.dropout, cfg.refractory) == (6, 512, 64, 0.1, 5)

    def test_theta_per_variant(self):
        assert ModelConfig(variant="frssm").theta == 0.5
        assert ModelConfig(variant="pssm").theta == 0.0

    @pytest.mark.parametrize("kw", [dict(variant="lif"), dict(d_state=3), dict(dropout=1.0),
                                    dict(n_layers=0), dict(fr_mode="ring")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)


class TestBlock:
    @pytest.mark.parametrize("variant", ["frssm", "pssm", "linear"])
    def test_zero_glu_is_identity(self, variant, rng):
        cfg = tiny(variant)
        blk = block_params(init_params(cfg, rng), 0)
        for k in ("glu.w1", "glu.b1", "glu.w2", "glu.b2"):
            blk[k] = np.zeros_like(blk[k])
        x = rng.normal(size=(2, 8, 20))
        out, _ = block_forward(x, blk, cfg)
        assert np.array_equal(out, x)

    def test_shape_mismatch(self, rng):
        cfg = tiny()
        blk = block_params(init_params(cfg, rng), 0)
        with pytest.raises(ShapeError):
            block_forward(rng.normal(size=(2, 5, 20)), blk, cfg)

    @pytest.mark.parametrize("variant", ["frssm", "pssm"])
    def test_glu_sees_binary_spikes(self, variant, rng):
        cfg = tiny(variant)
        _, cache = block_forward(rng.normal(size=(2, 8, 20)), block_params(init_params(cfg, rng), 0), cfg)
        s = cache["glu_c"][0]
        assert set(np.unique(s)) <= {0.0, 1.0}

    @given(st.integers(0, 2**31), st.sampled_from([1, 2, 3, 5]), st.integers(1, 60))
    @settings(max_examples=40)
    def test_block_shared_glu_bit_exact(self, seed, r, L):
        r_ = np.random.default_rng(seed)
        shared = tiny("pssm", refractory=r)
        naive = tiny("pssm", refractory=r, glu_block_sharing=False)
        params = init_params(shared, r_)
        x = r_.normal(size=(3, 1, L))
        a, ta = forward(params, x, shared)
        b, tb = forward(params, x, naive)
        assert ta.blocks[0]["shared"] and not tb.blocks[0]["shared"]
        assert np.array_equal(a, b)


class TestForward:
    @pytest.mark.parametrize("variant", ["frssm", "pssm", "linear"])
    def test_identical_rows_identical_logits(self, variant, rng):
        cfg = tiny(variant)
        params = init_params(cfg, rng)
        x = np.repeat(rng.random((1, 1, 30)), 4, axis=0)
        logits = model_forward(params, x, cfg)
        assert np.all(logits == logits[0])

    def test_permutation_equivariant(self, rng):
        cfg = tiny("frssm")
        params = init_params(cfg, rng)
        x = rng.random((5, 1, 30))
        perm = rng.permutation(5)
        np.testing.assert_allclose(model_forward(params, x[perm], cfg), model_forward(params, x, cfg)[perm],
                                   rtol=0, atol=1e-12)

    def test_deterministic_without_dropout(self, rng):
        cfg = tiny()
        params = init_params(cfg, rng)
        x = rng.random((3, 1, 30))
        assert np.array_equal(model_forward(params, x, cfg), model_forward(params, x, cfg))

    def test_bad_input_shape(self, rng):
        cfg = tiny()
        with pytest.raises(ShapeError):
            model_forward(init_params(cfg, rng), rng.random((3, 2, 30)), cfg)

    def test_nan_detected(self, rng):
        cfg = tiny("linear")
        params = init_params(cfg, rng)
        params["head.b"][0] = np.nan
        with pytest.raises(NumericHealthError):
            model_forward(params, rng.random((2, 1, 10)), cfg)

    @pytest.mark.slow
    def test_large_smoke(self, rng):
        cfg = ModelConfig(n_layers=6, d_model=128, d_state=64, variant="pssm", dropout=0.1)
        logits = model_forward(init_params(cfg, rng), rng.random((4, 1, 1024)), cfg)
        assert logits.shape == (4, 10) and np.all(np.isfinite(logits))

    @pytest.mark.parametrize("variant", ["frssm", "pssm"])
    def test_finite_over_seeds(self, variant):
        cfg = tiny(variant)
        for seed in range(100):
            r_ = np.random.default_rng(seed)
            assert np.all(np.isfinite(model_forward(init_params(cfg, r_), r_.normal(size=(2, 1, 16)), cfg)))

    def test_dropout_is_seeded(self, rng):
        cfg = tiny(dropout=0.3)
        params = init_params(cfg, rng)
        x = rng.random((2, 1, 20))
        a, _ = forward(params, x, cfg, train=True, rng=np.random.default_rng(5))
        b, _ = forward(params, x, cfg, train=True, rng=np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_float32_params(self, rng):
        cfg = tiny()
        params = init_params(cfg, rng, dtype=np.float32)
        assert model_forward(params, rng.random((2, 1, 20)), cfg).dtype == np.float32


class TestStatistics:
    def test_effective_rate_arithmetic(self):
        assert effective_rate(1.0, tiny("pssm", refractory=5)) == 0.2
        assert effective_rate(0.4, tiny("frssm", refractory=5)) == 0.4

    def test_effective_is_rate_over_r(self, rng):
        cfg = tiny("pssm", refractory=5)
        stats = spike_statistics(init_params(cfg, rng), rng.random((4, 1, 40)), cfg)
        assert len(stats) == cfg.n_layers
        for s in stats:
            assert s["effective_rate"] == s["firing_rate"] / 5

    def test_silent_model(self, rng):
        cfg = tiny("frssm", theta=1e9)
        stats = spike_statistics(init_params(cfg, rng), rng.random((2, 1, 20)), cfg)
        assert all(s["firing_rate"] == 0 and s["effective_rate"] == 0 for s in stats)

    def test_linear_has_none(self, rng):
        cfg = tiny("linear")
        assert spike_statistics(init_params(cfg, rng), rng.random((2, 1, 20)), cfg) == []
