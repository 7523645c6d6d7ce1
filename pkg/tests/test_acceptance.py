"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import csv
import time

import numpy as np
import pytest
from scipy.integrate import quad

from refssm.checks import gapped_input, random_ssm, tiny_grad_problem
from refssm.cli import write_stats_csv
from refssm.config import RunConfig
from refssm.data import load_mnist_seq, resolve_data_root, synth_task_gen
from refssm.errors import RefSsmError
from refssm.functional import glu_blockwise, glu_forward
from refssm.model import ModelConfig, init_params, spike_statistics
from refssm.spiking import (
    FrConfig,
    FrStream,
    Heaviside,
    fr_event_sequential,
    fr_mask_parallel,
    mode_divergence,
    psn_forward,
    threshold_spikes,
)
from refssm.ssm import fft_convolve, recurrent_scan, ssm_kernel
from refssm.theory import (
    LifParams,
    default_thetas,
    first_step_scale,
    lif_as_ssm,
    lif_reference,
    moment_projection_residual,
    theorem2_equivalence,
    ttfs_closed_form,
    ttfs_solve,
)
from refssm.training import TrainConfig, TrainState, evaluate, fit, grad_check_fd

R_VALUES = (1, 2, 3, 5, 8)


def report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def test_c1_ssm_scan_equals_fft():
    rng = np.random.default_rng(101)
    t0 = time.process_time()
    worst = 0.0
    for i in range(100):
        L = (1, 7, 64, 1024)[i % 4]
        N = (2, 64)[(i // 4) % 2]
        p = random_ssm(rng, N, H=4)
        x = rng.normal(size=(2, 4, L))
        y_fft = fft_convolve(ssm_kernel(p, L), x) + p.d_skip[:, None] * x
        worst = max(worst, float(np.max(np.abs(recurrent_scan(p, x) - y_fft))))
    cpu = time.process_time() - t0
    report("c1 scan vs fft", worst <= 1e-9 and cpu < 60, f"max abs {worst:.2e} (tol 1e-9), {cpu:.1f} s CPU (< 60)")


def test_c2_parallel_mask_equals_stream():
    rng = np.random.default_rng(102)
    thetas = (-0.5, 0.0, 0.3, 1.0)
    mismatches = 0
    n_inputs = 0
    for r in R_VALUES:
        for theta in thetas:
            n = 500
            lengths = rng.integers(1, 2049, size=n)
            xs = [rng.normal(0.5, 1.0, size=L) for L in lengths]
            # streams run batched over zero-padded rows; causality makes prefixes exact
            padded = np.full((n, 2048), -np.inf)
            for i, x in enumerate(xs):
                padded[i, : len(x)] = x
            stream = FrStream((n,), theta, r)
            seq = np.stack([stream.step(padded[:, t]) for t in range(2048)], axis=-1)
            for i, x in enumerate(xs):
                par = fr_mask_parallel(threshold_spikes(x, theta), r)
                mismatches += int(np.sum(par != seq[i, : len(x)]))
            n_inputs += n
    report("c2 parallel vs streaming", mismatches == 0 and n_inputs == 10_000,
           f"{mismatches} mismatches over {n_inputs} inputs (L <= 2048, r in {R_VALUES})")


def test_c3_mode_divergence_documented():
    rep = mode_divergence(np.ones(7), FrConfig(0.5, 3))
    # hand-derived: mask suppresses every raw crossing after the first,
    # events re-arm after r steps
    witness = (np.array_equal(rep["mask"], [1, 0, 0, 0, 0, 0, 0])
               and np.array_equal(rep["event"], [1, 0, 0, 1, 0, 0, 1]))
    rng = np.random.default_rng(103)
    bad = 0
    for _ in range(1000):
        r = int(rng.choice(R_VALUES))
        theta = float(rng.uniform(-0.5, 1.0))
        x = gapped_input(rng, int(rng.integers(1, 300)), r, theta)
        mask = fr_mask_parallel(threshold_spikes(x, theta), r)
        bad += int(np.sum(mask != fr_event_sequential(x, FrConfig(theta, r))))
    report("c3 mode divergence", witness and rep["n_diff"] == 2 and bad == 0,
           f"witness differs at {rep['positions']}; {bad} mismatches on 1000 gapped inputs")


def test_c4_first_step_equivalence():
    # closed-form scale vs the ratio of the two input integrals (quad accurate to ~1e-11)
    scale_err = 0.0
    for a in (-0.3, -1.0, -2.5):
        for r in (2, 3, 5):
            full = quad(lambda s: np.exp(a * (r - s)), 0, r, epsabs=1e-13, epsrel=1e-12)[0]
            first = quad(lambda s: np.exp(a * (r - s)), 0, 1, epsabs=1e-13, epsrel=1e-12)[0]
            scale_err = max(scale_err, abs(first_step_scale(np.array([a]), r)[0].real - full / first))
    e_plus_1 = abs(first_step_scale(np.array([-1.0]), 2)[0].real - 3.7182818284590452)

    rng = np.random.default_rng(104)
    worst = 0.0
    for r, count in ((2, 34), (3, 34), (5, 32)):
        # one batched oracle run per r; rows of N < 8 padded with copies of mode 0
        A = np.empty((count, 8), dtype=complex)
        B = np.empty_like(A)
        for row in range(count):
            N = int(rng.integers(1, 9))
            a = -rng.uniform(0.1, 3.0, N) + 1j * rng.uniform(-5.0, 5.0, N)
            b = rng.normal(size=N) + 1j * rng.normal(size=N)
            A[row] = np.concatenate([a, np.repeat(a[:1], 8 - N)])
            B[row] = np.concatenate([b, np.repeat(b[:1], 8 - N)])
        worst = max(worst, theorem2_equivalence(A, B, float(r), float(rng.normal())).error)
    report("c4 first-step equivalence", worst <= 1e-6 and scale_err <= 1e-10 and e_plus_1 <= 1e-15,
           f"max |y_a - y_b| {worst:.2e} (tol 1e-6) over 100 systems; scale vs integrals {scale_err:.1e}")


def test_c5_gradients():
    rng = np.random.default_rng(105)
    lines, ok = [], True
    for variant, tol in (("frssm", 1e-4), ("pssm", 1e-4), ("linear", 1e-6)):
        params, x, y, cfg = tiny_grad_problem(variant, rng)
        rep = grad_check_fd(params, x, y, cfg)
        assert set(rep.rel_err) == set(params)
        ok &= rep.max <= tol
        lines.append(f"{variant} {rep.max:.1e} (tol {tol:g})")
    report("c5 gradients", ok, "; ".join(lines))


def test_c6_block_sharing_and_effective_rate(tmp_path):
    rng = np.random.default_rng(106)
    mismatches = 0
    for _ in range(100):
        H = int(rng.choice([3, 16, 64]))
        L = int(rng.integers(1, 400))
        r = int(rng.choice(R_VALUES))
        y = rng.normal(size=(2, H, L))
        s, _ = psn_forward(y, rng.normal(size=(H, r)), np.ones(H), np.zeros(H), 0.0, Heaviside())
        w1, w2 = rng.normal(size=(2, H, H))
        b1, b2 = rng.normal(size=(2, H))
        mismatches += int(np.sum(glu_blockwise(s, r, w1, b1, w2, b2)[0] != glu_forward(s, w1, b1, w2, b2)[0]))

    cfg = ModelConfig(n_layers=3, d_model=8, d_state=4, variant="pssm", refractory=5, dropout=0.0)
    stats = spike_statistics(init_params(cfg, rng), rng.random((4, 1, 60)), cfg)
    path = tmp_path / "stats.csv"
    write_stats_csv(path, [s["firing_rate"] for s in stats], cfg)
    rows = list(csv.DictReader(path.open()))
    exact = all(float(row["effective_rate"]) == float(row["firing_rate"]) / 5 for row in rows)
    report("c6 block sharing", mismatches == 0 and exact and len(rows) == 4,
           f"{mismatches} GLU element mismatches; effective_rate == firing_rate / 5 in all {len(rows)} CSV rows: {exact}")


def test_c7a_delayed_class_learning():
    cfg = RunConfig(task="synth-delayed", seq_len=256, layers=2, model_dim=64, epochs=50,
                    n_train=500, n_test=200)
    train = synth_task_gen("delayed_class", cfg.n_train, cfg.seq_len, cfg.seed)
    test = synth_task_gen("delayed_class", cfg.n_test, cfg.seq_len, cfg.seed + 1, split="test")
    mcfg = cfg.model_config(train.d_input, train.n_classes)
    state = TrainState.fresh(init_params(mcfg, np.random.default_rng(cfg.seed)), cfg.seed)
    t0 = time.process_time()
    state = fit(state, train, mcfg, cfg.train_config(), target_train_acc=0.95)
    cpu = time.process_time() - t0
    acc = evaluate(state.params, train, mcfg)["accuracy"]
    report("c7a delayed-class learning", acc >= 0.95 and state.epoch <= 50 and cpu < 600,
           f"train acc {acc:.3f} (>= 0.95) after {state.epoch} epochs (<= 50), {cpu:.0f} s CPU (< 600)")


@pytest.mark.slow
def test_c7b_smnist256_learning():
    root = resolve_data_root(None)
    try:
        if root is None:
            raise RefSsmError("no dataset root: set REFSSM_DATA_ROOT to a directory with MNIST idx files")
        train, test = load_mnist_seq(root, crop=16)
    except RefSsmError as e:
        report("c7b sMNIST-256 learning", False, f"dataset unavailable: {e}")
    cfg = RunConfig(task="smnist256", layers=4, model_dim=64, kernel_dim=64, epochs=30, batch_size=64)
    mcfg = cfg.model_config(train.d_input, train.n_classes)
    state = TrainState.fresh(init_params(mcfg, np.random.default_rng(0)), 0)
    t0 = time.process_time()
    state = fit(state, train, mcfg, TrainConfig(lr=cfg.learning_rate, weight_decay=cfg.weight_decay,
                                                epochs=30, batch_size=64), test_set=test)
    cpu = time.process_time() - t0
    acc = evaluate(state.params, test, mcfg)["accuracy"]
    report("c7b sMNIST-256 learning", acc >= 0.85 and cpu < 7200,
           f"test acc {acc:.3f} (>= 0.85) after 30 epochs, {cpu / 60:.0f} min CPU (< 120)")


def test_c8_theory_suite():
    res = [moment_projection_residual(default_thetas(n), ks=[2]).residual[2] for n in (2, 4, 6)]
    decreasing = res[0] > res[1] > res[2]
    bad = 0
    for mode, a in (("relu_wx", 0.0), ("relu_ay_wx", 0.0), ("relu_ay_wx", 0.5)):
        for w in np.linspace(-2, 2, 50):
            for x in np.linspace(-1, 1, 50):
                bad += ttfs_solve(w, x, a, 10, mode).value != ttfs_closed_form(w, x, a, 10, mode)
    p = LifParams(tau_m=5.0, v_th=np.inf, reset_mode="none")
    current = np.random.default_rng(108).normal(size=1000)
    lif_err = float(np.max(np.abs(lif_reference(current, p)[0] - recurrent_scan(lif_as_ssm(p), current[None])[0])))
    report("c8 theory suite", decreasing and bad == 0 and lif_err <= 1e-12,
           f"k=2 residuals {', '.join(f'{v:.2e}' for v in res)}; {bad} TTFS mismatches; LIF vs scan {lif_err:.1e}")


@pytest.mark.skip(reason="reference trajectory is reported, not asserted: scripts/scifar_reference.py")
def test_c9_reference_trajectory():
    pass
