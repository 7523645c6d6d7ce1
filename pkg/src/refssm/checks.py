"""Verification suites: oracle and equivalence checks with a JSON report.

Each check measures one error quantity and compares it with a tolerance.
Suites: ssm, spiking, grads, theorems; ``all`` runs every check.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .functional import glu_blockwise, glu_forward
from .model import ModelConfig, init_params, spike_statistics
from .spiking import (
    FrConfig,
    Heaviside,
    SurrogateParams,
    fr_event_sequential,
    fr_mask_parallel,
    fr_stream_sequential,
    mode_divergence,
    psn_forward,
    surrogate_grad,
    threshold_spikes,
)
from .ssm import (
    SsmLayerParams,
    causal_convolve_direct,
    discretize_all,
    fft_convolve,
    recurrent_scan,
    ssm_kernel,
)
from .theory import (
    LifParams,
    default_thetas,
    encode_theorem1,
    lif_as_ssm,
    lif_reference,
    moment_projection_residual,
    theorem2_equivalence,
    ttfs_closed_form,
    ttfs_solve,
)
from .training import AdamW, TrainState, grad_check_fd

SUITES = ("ssm", "spiking", "grads", "theorems")


@dataclass
class CheckResult:
    check_name: str
    status: str  # "pass" | "fail" | "error"
    measured_error: float
    tolerance: float
    runtime_ms: float
    detail: str = ""


@dataclass(frozen=True)
class Check:
    name: str
    suite: str
    tolerance: float
    fn: Callable[[np.random.Generator], tuple[float, str]]
    strict: bool = False  # pass iff measured < tolerance instead of <=


def random_ssm(rng, N: int, H: int) -> SsmLayerParams:
    """Stable random diagonal SSM (conjugate-pair storage of N/2 modes)."""
    n = max(N // 2, 1)
    lam = -rng.uniform(0.05, 1.0, n) + 1j * rng.uniform(-np.pi * n, np.pi * n, n)
    return SsmLayerParams(
        lam=lam,
        b_in=rng.normal(size=n) + 1j * rng.normal(size=n),
        c_out=(rng.normal(size=(H, n)) + 1j * rng.normal(size=(H, n))) / np.sqrt(n),
        d_skip=rng.normal(size=H),
        log_dt=rng.uniform(np.log(1e-3), np.log(1e-1), H),
    )


# --- ssm ------------------------------------------------------------------------

def _ssm_equivalence(rng, n_instances=100, lengths=(1, 7, 64, 1024), states=(2, 64)):
    worst = 0.0
    for i in range(n_instances):
        L = lengths[i % len(lengths)]
        N = states[(i // len(lengths)) % len(states)]
        p = random_ssm(rng, N, H=2)
        x = rng.normal(size=(2, L))
        y_fft = fft_convolve(ssm_kernel(p, L), x) + p.d_skip[:, None] * x
        worst = max(worst, float(np.max(np.abs(recurrent_scan(p, x) - y_fft))))
    return worst, f"{n_instances} instances, L in {lengths}, N in {states}"


def _fft_vs_direct(rng):
    worst = 0.0
    for L in (1, 5, 33, 256):
        k = rng.normal(size=(3, L))
        x = rng.normal(size=(2, 3, L))
        worst = max(worst, float(np.max(np.abs(fft_convolve(k, x) - causal_convolve_direct(k, x)))))
    return worst, "FFT vs O(L^2) direct convolution"


def _zoh_closed_form(rng):
    p = random_ssm(rng, 16, 4)
    a_bar, b_bar = discretize_all(p)
    dt = np.exp(p.log_dt)[:, None]
    ref_a = np.exp(dt * p.lam)
    ref_b = (ref_a - 1.0) / p.lam * p.b_in
    err = max(float(np.max(np.abs(a_bar - ref_a))), float(np.max(np.abs(b_bar - ref_b))))
    return err, "a_bar = exp(dt lam), b_bar = lam^-1 (a_bar - 1) b"


# --- spiking ------------------------------------------------------------------------

def _fr_parallel_vs_stream(rng, n_inputs=1000, max_len=512):
    mismatches = 0
    for _ in range(n_inputs):
        r = int(rng.choice([1, 2, 3, 5, 8]))
        L = int(rng.integers(1, max_len + 1))
        theta = float(rng.uniform(-0.5, 1.0))
        x = rng.normal(0.5, 1.0, size=L)
        par = fr_mask_parallel(threshold_spikes(x, theta), r)
        seq = fr_stream_sequential(x, FrConfig(theta, r))
        mismatches += int(np.sum(par != seq))
    return float(mismatches), f"{n_inputs} inputs, r in (1, 2, 3, 5, 8)"


def gapped_input(rng, L: int, r: int, theta: float):
    """Input whose raw threshold crossings are at least r steps apart."""
    x = theta - rng.uniform(0.01, 1.0, L)
    t = int(rng.integers(0, r + 1))
    while t < L:
        x[t] = theta + rng.uniform(0.01, 1.0)
        t += r + int(rng.integers(0, 2 * r + 1))
    return x


def _mode_divergence_witness(rng):
    x = np.ones(7)
    rep = mode_divergence(x, FrConfig(0.5, 3))
    return (0.0 if rep["n_diff"] > 0 else 1.0), f"differs at {rep['positions']}"


def _mode_agreement_gapped(rng, n=1000):
    mismatches = 0
    for _ in range(n):
        r = int(rng.choice([1, 2, 3, 5, 8]))
        theta = float(rng.uniform(-0.5, 1.0))
        x = gapped_input(rng, int(rng.integers(1, 300)), r, theta)
        cfg = FrConfig(theta, r)
        mask = fr_mask_parallel(threshold_spikes(x, theta), r)
        mismatches += int(np.sum(mask != fr_event_sequential(x, cfg)))
    return float(mismatches), f"{n} inputs with crossing gaps >= r"


def _block_sharing(rng, n=50):
    mismatches = 0
    for _ in range(n):
        H = int(rng.choice([3, 16, 64]))
        L = int(rng.integers(1, 300))
        r = int(rng.choice([1, 2, 3, 5, 8]))
        y = rng.normal(size=(2, H, L))
        s, _ = psn_forward(y, rng.normal(size=(H, r)), np.ones(H), np.zeros(H), 0.0, Heaviside())
        w1, w2 = rng.normal(size=(2, H, H))
        b1, b2 = rng.normal(size=(2, H))
        blk = glu_blockwise(s, r, w1, b1, w2, b2)[0]
        naive = glu_forward(s, w1, b1, w2, b2)[0]
        mismatches += int(np.sum(blk != naive))
    return float(mismatches), "block-shared GLU vs per-step GLU, element mismatches"


def _effective_rate(rng):
    cfg = ModelConfig(n_layers=2, d_model=8, d_state=4, variant="pssm", refractory=5, dropout=0.0)
    params = init_params(cfg, rng)
    stats = spike_statistics(params, rng.random((4, 1, 40)), cfg)
    err = max(abs(s["effective_rate"] - s["firing_rate"] / 5) for s in stats)
    return float(err), "effective_rate == firing_rate / r"


def _surrogate_mass(rng):
    p = SurrogateParams()
    mass, _ = quad(lambda z: float(surrogate_grad(z, p)), -np.inf, np.inf)
    return abs(mass - p.gamma * (1.0 - p.h)), "integral of G equals gamma (1 - h)"


# --- grads ------------------------------------------------------------------------------

def tiny_grad_problem(variant: str, rng):
    """Tiny float64 network plus batch for finite-difference gradient checks.

    Step sizes are drawn from [0.1, 1] instead of the training default
    [1e-3, 1e-1]; with tiny steps the eigenvalue gradients shrink to ~1e-7 and
    the finite-difference roundoff floor, not the backward pass, sets the
    measured relative error.
    """
    cfg = ModelConfig(n_layers=2, d_model=4, d_state=4, variant=variant, refractory=3,
                      n_classes=3, dropout=0.0)
    params = init_params(cfg, rng)
    for i in range(cfg.n_layers):
        params[f"layers.{i}.ssm.log_dt"] = rng.uniform(np.log(0.1), 0.0, cfg.d_model)
    x = rng.normal(size=(3, 1, 11))
    y = rng.integers(0, cfg.n_classes, size=3)
    return params, x, y, cfg


def _grad(variant):
    def run(rng):
        params, x, y, cfg = tiny_grad_problem(variant, rng)
        rep = grad_check_fd(params, x, y, cfg)
        worst = max(rep.rel_err, key=rep.rel_err.get)
        return rep.max, f"worst tensor {worst}"
    return run


def _adamw_closed_form(rng):
    p0 = rng.normal(size=5)
    target = rng.normal(size=5)
    state = TrainState.fresh({"w": p0.copy()})
    lr, wd, eps = 1e-2, 0.1, 1e-8
    g = p0 - target  # gradient of 0.5 |p - target|^2
    AdamW(lr=lr, eps=eps, weight_decay=wd).step(state, {"w": g})
    # first step: m_hat = g, v_hat = g^2
    expected = p0 - lr * wd * p0 - lr * g / (np.abs(g) + eps)
    return float(np.max(np.abs(state.params["w"] - expected))), "one AdamW step vs closed form"


# --- theorems ------------------------------------------------------------------------------

def _theorem2(rng, n_systems=100):
    worst = 0.0
    per_r = {2: [], 3: [], 5: []}
    for i in range(n_systems):
        per_r[(2, 3, 5)[i % 3]].append(i)
    for r, idx in per_r.items():
        # systems of varying N, padded to 8 modes with inert copies of mode 0
        A = np.empty((len(idx), 8), dtype=complex)
        B = np.empty_like(A)
        for row in range(len(idx)):
            N = int(rng.integers(1, 9))
            a = -rng.uniform(0.1, 3.0, N) + 1j * rng.uniform(-5.0, 5.0, N)
            b = rng.normal(size=N) + 1j * rng.normal(size=N)
            A[row] = np.concatenate([a, np.repeat(a[:1], 8 - N)])
            B[row] = np.concatenate([b, np.repeat(b[:1], 8 - N)])
        rep = theorem2_equivalence(A, B, float(r), float(rng.normal()))
        worst = max(worst, rep.error)
    return worst, f"{n_systems} diagonal systems, N <= 8, r in (2, 3, 5), RK4 step 1e-4"


def _moment_decrease(rng):
    res = [moment_projection_residual(default_thetas(n), ks=[2]).residual[2] for n in (2, 4, 6)]
    ratio = max(res[1] / res[0], res[2] / res[1])
    return ratio, "k=2 residuals for n=2,4,6: " + ", ".join(f"{v:.3e}" for v in res)


def _ttfs_exhaustive(rng):
    ws = np.linspace(-2.0, 2.0, 50)
    xs = np.linspace(-1.0, 1.0, 50)
    bad = 0
    for mode, a in (("relu_wx", 0.0), ("relu_ay_wx", 0.0), ("relu_ay_wx", 0.5)):
        for w in ws:
            for x in xs:
                bad += ttfs_solve(w, x, a, 10, mode).value != ttfs_closed_form(w, x, a, 10, mode)
    return float(bad), "50x50 (w, x) grid, q_levels=10"


def _lif_vs_scan(rng):
    p = LifParams(tau_m=5.0, v_th=np.inf, reset_mode="none", dt=1.0)
    current = rng.normal(size=500)
    trace, _ = lif_reference(current, p)
    y = recurrent_scan(lif_as_ssm(p), current[None, :])[0]
    return float(np.max(np.abs(trace - y))), "LIF without reset vs single-mode SSM scan"


def _lif_superposition(rng):
    p = LifParams(tau_m=3.0, v_th=np.inf, reset_mode="none")
    a, b = rng.normal(size=(2, 300))
    ya, _ = lif_reference(a, p)
    yb, _ = lif_reference(b, p)
    yab, _ = lif_reference(a + b, p)
    return float(np.max(np.abs(yab - ya - yb))), "response(a + b) - response(a) - response(b)"


def _theorem1_vs_mask(rng, n=300):
    bad = 0
    for _ in range(n):
        r = int(rng.choice([1, 2, 3, 5, 8]))
        f = (rng.random(int(rng.integers(1, 200))) < 0.3).astype(float)
        enc = encode_theorem1(f, 0.5, r - 1)
        bad += int(np.sum(enc != fr_mask_parallel(threshold_spikes(f, 0.5), r)))
    return float(bad), "lookback encoder with m = r - 1 vs refractory mask on binary input"


CHECKS: tuple[Check, ...] = (
    Check("ssm_scan_vs_fft", "ssm", 1e-9, _ssm_equivalence),
    Check("ssm_fft_vs_direct", "ssm", 1e-10, _fft_vs_direct),
    Check("ssm_zoh_closed_form", "ssm", 1e-12, _zoh_closed_form),
    Check("fr_parallel_vs_stream", "spiking", 0.0, _fr_parallel_vs_stream),
    Check("fr_mode_divergence_witness", "spiking", 0.0, _mode_divergence_witness),
    Check("fr_mode_agreement_gapped", "spiking", 0.0, _mode_agreement_gapped),
    Check("psn_block_sharing_exact", "spiking", 0.0, _block_sharing),
    Check("psn_effective_rate", "spiking", 0.0, _effective_rate),
    Check("surrogate_mass", "spiking", 1e-8, _surrogate_mass),
    Check("grad_linear", "grads", 1e-6, _grad("linear")),
    Check("grad_frssm_relaxed", "grads", 1e-4, _grad("frssm")),
    Check("grad_pssm_relaxed", "grads", 1e-4, _grad("pssm")),
    Check("adamw_closed_form", "grads", 1e-12, _adamw_closed_form),
    Check("theorem2_equivalence", "theorems", 1e-6, _theorem2),
    Check("moment_projection_decreasing", "theorems", 1.0, _moment_decrease, strict=True),
    Check("ttfs_exhaustive", "theorems", 0.0, _ttfs_exhaustive),
    Check("lif_vs_ssm_scan", "theorems", 1e-12, _lif_vs_scan),
    Check("lif_superposition", "theorems", 1e-12, _lif_superposition),
    Check("theorem1_vs_mask", "theorems", 0.0, _theorem1_vs_mask),
)


def select(suite: str) -> list[Check]:
    if suite == "all":
        return list(CHECKS)
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {('all',) + SUITES}")
    return [c for c in CHECKS if c.suite == suite]


def run_check(check: Check, seed: int = 0, tolerance: float | None = None) -> CheckResult:
    tol = check.tolerance if tolerance is None else tolerance
    rng = np.random.default_rng([seed, sum(map(ord, check.name))])
    t0 = time.perf_counter()
    try:
        measured, detail = check.fn(rng)
        ok = measured < tol if check.strict else measured <= tol
        status = "pass" if ok and np.isfinite(measured) else "fail"
    except Exception as e:  # report, do not abort the suite
        measured, detail, status = float("nan"), f"{type(e).__name__}: {e}", "error"
    ms = (time.perf_counter() - t0) * 1e3
    return CheckResult(check.name, status, float(measured), float(tol), ms, detail)


def run_suite(suite: str = "all", seed: int = 0,
              tolerances: dict[str, float] | None = None) -> list[CheckResult]:
    tolerances = tolerances or {}
    unknown = set(tolerances) - {c.name for c in CHECKS}
    if unknown:
        raise ValueError(f"unknown check names in tolerance overrides: {sorted(unknown)}")
    return [run_check(c, seed, tolerances.get(c.name)) for c in select(suite)]


def report_json(results: list[CheckResult]) -> str:
    rows = []
    for r in results:
        d = asdict(r)
        if not np.isfinite(d["measured_error"]):
            d["measured_error"] = None
        rows.append(d)
    return json.dumps(rows, indent=2)


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.status == "pass" for r in results)
