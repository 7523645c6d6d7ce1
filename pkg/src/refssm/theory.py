"""Reference neurons and numerical checks of the model's theoretical claims.

Contents: a discrete LIF neuron, a lookback spike encoder, the constant-input
equivalence between full-window and first-step input (with an RK4 oracle),
monomial-by-exponential projection, and a two-phase time-to-first-spike solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, SingularityError, StabilityError

RESET_MODES = ("hard", "soft", "none")


# --- LIF reference ----------------------------------------------------------

@dataclass(frozen=True)
class LifParams:
    tau_m: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    reset_mode: str = "hard"
    dt: float = 1.0
    v0: float = 0.0

    def __post_init__(self):
        if not self.tau_m > 0 or not self.dt > 0:
            raise ConfigError(f"tau_m and dt must be positive, got {self.tau_m}, {self.dt}")
        if self.reset_mode not in RESET_MODES:
            raise ConfigError(f"reset_mode must be one of {RESET_MODES}, got {self.reset_mode!r}")


def lif_reference(current, p: LifParams):
    """Euler-stepped leaky integrate-and-fire neuron.

    ``trace[t]`` is the membrane after consuming ``current[t]`` and before any
    reset, so a threshold crossing stays visible. Returns (trace, spikes).
    """
    current = np.asarray(current, dtype=float)
    k = p.dt / p.tau_m
    v = p.v0
    trace = np.empty_like(current)
    spikes = np.zeros_like(current)
    for t, i_t in enumerate(current):
        v = v + k * (-v + i_t)
        trace[t] = v
        if v > p.v_th:
            spikes[t] = 1.0
            if p.reset_mode == "hard":
                v = p.v_reset
            elif p.reset_mode == "soft":
                v = v - p.v_th
    return trace, spikes


def lif_as_ssm(p: LifParams):
    """Single-mode SSM whose ZOH discretization reproduces the LIF leak.

    Needs 0 < dt/tau_m < 1 so the leak factor 1 - dt/tau_m has a real log.
    """
    from .ssm import SsmLayerParams

    a = 1.0 - p.dt / p.tau_m
    if not 0.0 < a < 1.0:
        raise ConfigError(f"leak factor {a} outside (0, 1); need dt < tau_m")
    lam = np.log(a) / p.dt
    # b_bar = (a - 1) / lam * b must equal dt / tau_m
    b = (p.dt / p.tau_m) * lam / (a - 1.0)
    return SsmLayerParams(
        lam=np.array([lam + 0j]), b_in=np.array([b + 0j]), c_out=np.ones((1, 1), dtype=complex),
        d_skip=np.zeros(1), log_dt=np.array([np.log(p.dt)]), conj_pairs=False,
    )


# --- lookback encoder ---------------------------------------------------------

def encode_theorem1(f, theta: float, m_schedule) -> np.ndarray:
    """Spike at t iff f(t) >= theta and f(t-k) <= theta for k = 1..m(t).

    The lookback window is truncated at the start of the sequence.
    ``m_schedule`` may be a scalar or one non-negative integer per step.
    """
    f = np.asarray(f, dtype=float)
    L = f.shape[-1]
    m = np.broadcast_to(np.asarray(m_schedule), (L,))
    if np.any(m < 0):
        raise ContractError("m_schedule must be non-negative")
    out = np.zeros_like(f)
    above = f >= theta
    quiet = f <= theta
    for t in range(L):
        lo = max(0, t - int(m[t]))
        out[..., t] = above[..., t] & np.all(quiet[..., lo:t], axis=-1)
    return out


# --- constant-input equivalence ---------------------------------------------------

@dataclass(frozen=True)
class OdeOracleConfig:
    step: float = 1e-4
    method: str = "rk4"

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"integrator step must be positive, got {self.step}")
        if self.method != "rk4":
            raise ConfigError(f"only fixed-step rk4 is available, got {self.method!r}")


@dataclass
class Theorem2Report:
    scale: np.ndarray  # per mode
    y_full: np.ndarray  # y_a(r): constant input over [0, r]
    y_first: np.ndarray  # y_b(r): scaled input on [0, 1], zero after
    error: float
    tolerance: float
    passed: bool


def _n_steps(span: float, h: float) -> int:
    n = int(round(span / h))
    if n < 0 or abs(n * h - span) > 1e-9 * max(1.0, span):
        raise ConfigError(f"span {span} is not a whole number of steps of {h}")
    return n


def rk4_linear_diag(A, B, y0, segments, h: float):
    """Integrate dy/dt = A y + B u with piecewise-constant u by classic RK4.

    ``segments`` is a list of (duration, u) with u broadcastable to y.
    Every duration must be a whole number of steps so that input jumps fall
    on grid points. All arrays broadcast elementwise (diagonal A).
    """
    y = np.array(y0, dtype=complex)
    for duration, u in segments:
        bu = B * u
        for _ in range(_n_steps(duration, h)):
            k1 = A * y + bu
            k2 = A * (y + 0.5 * h * k1) + bu
            k3 = A * (y + 0.5 * h * k2) + bu
            k4 = A * (y + h * k3) + bu
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _check_diag(A) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if np.any(A == 0):
        raise SingularityError("A has a zero eigenvalue")
    if np.any(A.real >= 0):
        raise StabilityError("A must have strictly negative real parts")
    return A


def first_step_scale(A, r: float) -> np.ndarray:
    """Ratio of the full-window input integral to the first-unit-step integral.

    Per mode: int_0^r e^{A(r-tau)} dtau / int_0^1 e^{A(r-tau)} dtau
    = (e^{Ar} - 1) / (e^{Ar} - e^{A(r-1)}); B cancels for diagonal A.
    """
    A = _check_diag(A)
    full = np.expm1(A * r) / A
    first = (np.exp(A * r) - np.exp(A * (r - 1.0))) / A
    return full / first


def theorem2_equivalence(A, B, r: float, x0: float, oracle: OdeOracleConfig = OdeOracleConfig(),
                         tolerance: float = 1e-6) -> Theorem2Report:
    """Compare y(r) under constant input x0 against scaled input on [0, 1] only.

    Both trajectories start at y(0) = 0 and are integrated by RK4; the scale
    comes from the closed-form integrals. ``A`` and ``B`` may carry leading
    batch axes, each row being an independent diagonal system.
    """
    A = _check_diag(A)
    B = np.asarray(B, dtype=complex)
    if r < 1:
        raise ConfigError(f"window r must be >= 1, got {r}")
    scale = first_step_scale(A, r)
    y0 = np.zeros(np.broadcast(A, B).shape, dtype=complex)
    y_a = rk4_linear_diag(A, B, y0, [(r, x0)], oracle.step)
    y_b = rk4_linear_diag(A, B, y0, [(1.0, scale * x0), (r - 1.0, 0.0)], oracle.step)
    err = float(np.max(np.abs(y_a - y_b))) if y_a.size else 0.0
    return Theorem2Report(scale, y_a, y_b, err, tolerance, err <= tolerance)


# --- moment projection ---------------------------------------------------------

class IllConditionedWarning(RuntimeWarning):
    pass


COND_WARN = 1e10


@dataclass
class MomentReport:
    residual: dict[int, float]  # max |fit - t^k| on the grid
    relative: dict[int, float]  # residual / max |t^k|
    coefficients: dict[int, np.ndarray]
    cond: float


def moment_projection_residual(thetas, degree: int | None = None, grid=None,
                               ks=None) -> MomentReport:
    """Least-squares fit of each monomial t^k by sum_j c_j exp(theta_j t).

    ``degree`` defaults to len(thetas) - 1; ``grid`` to 101 points on [0, 1].
    Warns with the condition number when the design matrix is ill-conditioned.
    """
    thetas = np.asarray(thetas, dtype=float)
    n = len(thetas) - 1 if degree is None else degree
    if len(thetas) != n + 1:
        raise ConfigError(f"need {n + 1} exponents for degree {n}, got {len(thetas)}")
    if len(np.unique(thetas)) != len(thetas):
        raise ConfigError("exponents must be distinct")
    t = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    E = np.exp(np.outer(t, thetas))
    cond = float(np.linalg.cond(E))
    if cond > COND_WARN:
        warnings.warn(f"exponential design matrix condition number {cond:.3e}",
                      IllConditionedWarning, stacklevel=2)
    ks = range(n + 1) if ks is None else ks
    residual, relative, coefs = {}, {}, {}
    for k in ks:
        target = t**k
        c, *_ = np.linalg.lstsq(E, target, rcond=None)
        res = float(np.max(np.abs(E @ c - target)))
        residual[k] = res
        relative[k] = res / float(np.max(np.abs(target)))
        coefs[k] = c
    return MomentReport(residual, relative, coefs, cond)


def default_thetas(n: int) -> np.ndarray:
    """theta_j = -0.5 (j + 1), j = 0..n."""
    return -0.5 * np.arange(1, n + 2)


# --- two-phase time-to-first-spike ------------------------------------------------

TTFS_MODES = ("relu_wx", "relu_ay_wx")


@dataclass
class TtfsResult:
    value: float
    level: int  # index of the grid point, 0..q_levels
    spike_step: int  # absolute timestep of the spike (phase 1 occupies step 0)
    saturated: bool


def ttfs_solve(w: float, x: float, a: float = 0.0, q_levels: int = 10,
               mode: str = "relu_wx", v_max: float = 1.0) -> TtfsResult:
    """Solve y = ReLU(w x) (or y = ReLU(a y + w x)) by a spike-time code.

    Phase 1 (one step) charges the membrane with w x. Phase 2 ramps a
    candidate output y_k = k v_max / q_levels upward; the neuron spikes at the
    first k where y_k - (a y_k + w x) >= 0, i.e. where the residual of the
    equation stops being negative. A later spike means a larger value. If the
    ramp ends without a spike the neuron fires at the last step (saturation).
    """
    if q_levels < 2:
        raise ConfigError(f"q_levels must be >= 2, got {q_levels}")
    if mode not in TTFS_MODES:
        raise ConfigError(f"mode must be one of {TTFS_MODES}, got {mode!r}")
    if mode == "relu_wx":
        a = 0.0
    elif a >= 1.0:
        raise StabilityError(f"self-term a = {a} >= 1 has no contracting fixed point")
    drive = w * x  # phase 1
    for k in range(q_levels + 1):  # phase 2
        y_k = k * v_max / q_levels
        if (1.0 - a) * y_k >= drive:
            return TtfsResult(y_k, k, 1 + k, False)
    return TtfsResult(v_max, q_levels, 1 + q_levels, True)


def quantize_up(v: float, q_levels: int, v_max: float = 1.0) -> float:
    """Smallest grid point k v_max / q_levels >= v, clipped to [0, v_max]."""
    if v <= 0:
        return 0.0
    k = min(int(np.ceil(v * q_levels / v_max)), q_levels)
    # repair rounding in the division so the grid comparison is exact
    while k > 0 and (k - 1) * v_max / q_levels >= v:
        k -= 1
    while k < q_levels and k * v_max / q_levels < v:
        k += 1
    return k * v_max / q_levels


def ttfs_closed_form(w: float, x: float, a: float = 0.0, q_levels: int = 10,
                     mode: str = "relu_wx", v_max: float = 1.0) -> float:
    """Quantized fixed point: ReLU(w x), or w x / (1 - a) clipped at 0."""
    if mode == "relu_wx":
        return quantize_up(max(w * x, 0.0), q_levels, v_max)
    if a >= 1.0:
        raise StabilityError(f"self-term a = {a} >= 1 has no contracting fixed point")
    return quantize_up(max(w * x / (1.0 - a), 0.0), q_levels, v_max)
