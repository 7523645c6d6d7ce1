import math

import numpy as np
import pytest

from refssm.checks import tiny_grad_problem
from refssm.data import synth_task_gen
from refssm.errors import NumericHealthError
from refssm.model import ModelConfig, init_params
from refssm.ssm import fft_convolve, init_s4d_lin, kernel_backward, kernel_forward, to_arrays
from refssm.training import (
    AdamW,
    RunLog,
    TrainConfig,
    TrainState,
    _check_finite,
    backward_pass,
    evaluate,
    fit,
    grad_check_fd,
    train_epoch,
)


class TestBackward:
    def test_saturated_batch_has_tiny_gradient(self, rng):
        cfg = ModelConfig(n_layers=1, d_model=4, d_state=2, variant="linear", n_classes=3, dropout=0.0)
        params = init_params(cfg, rng)
        params["head.b"][:] = [100.0, 0.0, 0.0]
        _, grads, _ = backward_pass(params, rng.random((4, 1, 10)), np.zeros(4, dtype=int), cfg)
        assert math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())) < 1e-6

    def test_single_scalar_parameter(self, rng):
        # loss(log_dt) = <g, conv(kernel(log_dt), x)> for one channel, one mode
        arrs = to_arrays(init_s4d_lin(2, 1, rng))
        x = rng.normal(size=(1, 40))
        g = rng.normal(size=(1, 40))

        def loss(v):
            a = dict(arrs, log_dt=np.array([v]))
            return float(np.sum(g * fft_convolve(kernel_forward(a, 40)[0], x)))

        _, cache = kernel_forward(arrs, 40)
        # dL/dk[j] = sum_t g[t] x[t - j]
        g_k = np.array([[np.dot(g[0, j:], x[0, : 40 - j]) for j in range(40)]])
        analytic = kernel_backward(g_k, arrs, cache)["log_dt"][0]
        v, eps = arrs["log_dt"][0], 1e-5
        numeric = (loss(v + eps) - loss(v - eps)) / (2 * eps)
        assert abs(analytic - numeric) <= 1e-8 * max(1.0, abs(numeric))

    @pytest.mark.parametrize("variant,tol", [("linear", 1e-6), ("frssm", 1e-4), ("pssm", 1e-4)])
    def test_relaxed_network_matches_finite_differences(self, variant, tol):
        params, x, y, cfg = tiny_grad_problem(variant, np.random.default_rng(7))
        rep = grad_check_fd(params, x, y, cfg)
        assert set(rep.rel_err) == set(params)
        assert all(v >= 0 for v in rep.rel_err.values())
        assert rep.max <= tol, rep.rel_err

    def test_report_deterministic(self):
        params, x, y, cfg = tiny_grad_problem("pssm", np.random.default_rng(3))
        a = grad_check_fd(params, x, y, cfg)
        b = grad_check_fd(params, x, y, cfg)
        assert a.rel_err == b.rel_err

    def test_non_finite_gradient_named(self):
        with pytest.raises(NumericHealthError) as e:
            _check_finite({"layers.0.glu.w1": np.array([1.0, np.inf])})
        assert e.value.what == "layers.0.glu.w1"

    def test_gradient_shapes(self, rng):
        cfg = ModelConfig(n_layers=2, d_model=6, d_state=4, variant="pssm", refractory=3, n_classes=3)
        params = init_params(cfg, rng)
        _, grads, _ = backward_pass(params, rng.random((2, 1, 13)), np.array([0, 2]), cfg, train=True,
                                    rng=np.random.default_rng(0))
        assert {k: g.shape for k, g in grads.items()} == {k: p.shape for k, p in params.items()}


class TestAdamW:
    def quadratic_step(self, lr=1e-2, wd=0.1, eps=1e-8):
        r = np.random.default_rng(0)
        p0, target = r.normal(size=6), r.normal(size=6)
        state = TrainState.fresh({"w": p0.copy()})
        g = p0 - target
        AdamW(lr=lr, eps=eps, weight_decay=wd).step(state, {"w": g})
        return p0, g, state

    def test_first_step_closed_form(self):
        lr, wd, eps = 1e-2, 0.1, 1e-8
        p0, g, state = self.quadratic_step(lr, wd, eps)
        expect = p0 - lr * wd * p0 - lr * g / (np.abs(g) + eps)
        assert np.max(np.abs(state.params["w"] - expect)) <= 1e-12
        assert state.step == 1
        np.testing.assert_allclose(state.m["w"], (1 - 0.9) * g, rtol=1e-15)
        np.testing.assert_allclose(state.v["w"], (1 - 0.999) * g * g, rtol=1e-15)

    def test_decay_is_decoupled(self):
        lr, wd, eps = 1e-2, 0.1, 1e-8
        p0, g, state = self.quadratic_step(lr, wd, eps)
        g_l2 = g + wd * p0  # Adam with L2 folds decay into the moments
        coupled = p0 - lr * g_l2 / (np.abs(g_l2) + eps)
        assert np.max(np.abs(state.params["w"] - coupled)) > 1e-4

    def test_second_step_closed_form(self):
        lr, (b1, b2), eps = 1e-3, (0.9, 0.999), 1e-8
        state = TrainState.fresh({"w": np.array([1.0, -2.0])})
        opt = AdamW(lr=lr, weight_decay=0.0)
        g1, g2 = np.array([0.5, -1.0]), np.array([0.2, 0.3])
        opt.step(state, {"w": g1})
        opt.step(state, {"w": g2})
        m = (1 - b1) * (b1 * g1 + g2)
        v = (1 - b2) * (b2 * g1**2 + g2**2)
        p1 = np.array([1.0, -2.0]) - lr * g1 / (np.abs(g1) + eps)
        expect = p1 - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        assert np.max(np.abs(state.params["w"] - expect)) <= 1e-12

    def test_dynamics_exempt_from_decay(self, rng):
        cfg = ModelConfig(n_layers=1, d_model=4, d_state=4, variant="pssm", refractory=2, n_classes=2)
        params = init_params(cfg, rng)
        before = {k: v.copy() for k, v in params.items()}
        state = TrainState.fresh(params)
        AdamW(lr=0.1, weight_decay=0.5).step(state, {k: np.zeros_like(v) for k, v in params.items()})
        for k, v in state.params.items():
            if k.endswith(("log_neg_re", "lambda_im", "log_dt")):
                assert np.array_equal(v, before[k]), k
            else:
                np.testing.assert_allclose(v, before[k] * (1 - 0.05), rtol=1e-15, err_msg=k)


def small_task(n=64, L=32, seed=0, n_classes=2):
    return synth_task_gen("delayed_class", n, L, seed, n_classes)


def small_cfg(**kw):
    base = dict(n_layers=1, d_model=16, d_state=8, variant="pssm", refractory=2, n_classes=2, dropout=0.1)
    base.update(kw)
    return ModelConfig(**base)


class TestLoops:
    def test_zero_lr_and_decay_freezes_params(self):
        cfg = small_cfg()
        params = init_params(cfg, np.random.default_rng(0))
        before = {k: v.copy() for k, v in params.items()}
        state, _ = train_epoch(TrainState.fresh(params), small_task(), cfg,
                               TrainConfig(lr=0.0, weight_decay=0.0, batch_size=16))
        assert all(np.array_equal(state.params[k], before[k]) for k in before)
        assert state.step == 4

    def test_first_batch_loss_near_uniform(self):
        cfg = small_cfg(n_classes=10, dropout=0.0)
        data = synth_task_gen("delayed_class", 32, 32, 0, n_classes=10)
        loss, _, _ = backward_pass(init_params(cfg, np.random.default_rng(0)), data.sequences, data.labels, cfg)
        assert abs(loss - math.log(10)) <= 0.3

    def test_loss_curve_reproducible(self):
        cfg = small_cfg()
        curves = []
        for _ in range(2):
            state = TrainState.fresh(init_params(cfg, np.random.default_rng(0)), seed=3)
            log = RunLog()
            fit(state, small_task(), cfg, TrainConfig(epochs=3, batch_size=16, seed=3), run_log=log)
            curves.append([r["loss"] for r in log.records])
        assert curves[0] == curves[1] and len(curves[0]) == 3

    def test_epoch_metrics(self, tmp_path):
        cfg = small_cfg()
        log = RunLog(tmp_path / "m.jsonl")
        state = TrainState.fresh(init_params(cfg, np.random.default_rng(0)))
        fit(state, small_task(), cfg, TrainConfig(epochs=2, batch_size=16), run_log=log)
        lines = (tmp_path / "m.jsonl").read_text().splitlines()
        assert len(lines) == 2
        import json

        rec = json.loads(lines[-1])
        assert {"epoch", "loss", "acc", "firing_rates", "wall_time"} <= set(rec)
        assert len(rec["firing_rates"]) == cfg.n_layers

    def test_evaluate_deterministic(self):
        cfg = small_cfg()
        params = init_params(cfg, np.random.default_rng(0))
        data = small_task()
        assert evaluate(params, data, cfg) == evaluate(params, data, cfg)

    def test_random_labels_chance(self):
        cfg = small_cfg(n_classes=4, dropout=0.0)
        data = synth_task_gen("delayed_class", 600, 32, 0, n_classes=4)
        data.labels = np.random.default_rng(1).integers(0, 4, size=600)
        acc = evaluate(init_params(cfg, np.random.default_rng(0)), data, cfg)["accuracy"]
        sigma = math.sqrt(0.25 * 0.75 / 600)
        assert abs(acc - 0.25) <= 3 * sigma

    def test_nan_aborts(self):
        cfg = small_cfg()
        params = init_params(cfg, np.random.default_rng(0))
        params["head.w"][0, 0] = np.nan
        with pytest.raises(NumericHealthError):
            fit(TrainState.fresh(params), small_task(), cfg, TrainConfig(epochs=1, batch_size=16))

    @pytest.mark.slow
    def test_training_beats_untrained(self):
        cfg = ModelConfig(n_layers=2, d_model=32, d_state=16, variant="pssm", refractory=5, n_classes=2,
                          dropout=0.1)
        train = synth_task_gen("delayed_class", 300, 64, 0)
        test = synth_task_gen("delayed_class", 200, 64, 1)
        params = init_params(cfg, np.random.default_rng(0))
        untrained = evaluate(params, test, cfg)["accuracy"]
        state = fit(TrainState.fresh(params), train, cfg, TrainConfig(epochs=30, batch_size=32),
                    target_train_acc=0.99)
        trained = evaluate(state.params, test, cfg)["accuracy"]
        assert trained - untrained >= 0.30, (untrained, trained)
