"""Diagonal state-space memory module.

A layer holds one shared diagonal continuous-time system (``lam``, ``b_in``)
with a per-channel readout ``c_out``, skip ``d_skip`` and step ``log_dt``.
Each channel is discretized with zero-order hold,

    a_bar = exp(dt * lam)
    b_bar = (exp(dt * lam) - 1) / lam * b_in

and the layer is applied either as a causal convolution with the
materialized kernel ``k[h, j] = Re(sum_n c[h, n] a_bar[h, n]**j b_bar[h, n])``
(FFT, O(L log L)) or as an explicit recurrence (O(L N)).

With ``conj_pairs=True`` only one eigenvalue of every conjugate pair is
stored and the real part of the mode sum is doubled, so kernels are real
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, SingularityError, StabilityError

__all__ = [
    "SsmLayerParams",
    "DiscreteSsm",
    "discretize_zoh",
    "discretize_all",
    "ssm_kernel",
    "kernel_from_modes",
    "fft_convolve",
    "causal_convolve_direct",
    "recurrent_scan",
    "init_s4d_lin",
    "to_arrays",
    "from_arrays",
    "kernel_forward",
    "kernel_backward",
    "fft_convolve_backward",
]


@dataclass
class SsmLayerParams:
    lam: np.ndarray  # complex (n,), continuous-time eigenvalues
    b_in: np.ndarray  # complex (n,)
    c_out: np.ndarray  # complex (H, n)
    d_skip: np.ndarray  # real (H,)
    log_dt: np.ndarray  # real (H,)
    conj_pairs: bool = True

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=complex))
        self.b_in = np.atleast_1d(np.asarray(self.b_in, dtype=complex))
        self.c_out = np.atleast_2d(np.asarray(self.c_out, dtype=complex))
        self.d_skip = np.atleast_1d(np.asarray(self.d_skip, dtype=float))
        self.log_dt = np.atleast_1d(np.asarray(self.log_dt, dtype=float))
        n = self.lam.shape[0]
        H = self.c_out.shape[0]
        if self.b_in.shape != (n,) or self.c_out.shape != (H, n):
            raise ShapeError(
                f"inconsistent SSM shapes: lam {self.lam.shape}, b_in {self.b_in.shape}, "
                f"c_out {self.c_out.shape}"
            )
        if self.d_skip.shape != (H,) or self.log_dt.shape != (H,):
            raise ShapeError(f"d_skip and log_dt must have shape ({H},)")

    @property
    def n_channels(self) -> int:
        return self.c_out.shape[0]

    @property
    def n_modes(self) -> int:
        return self.lam.shape[0]

    @property
    def state_dim(self) -> int:
        """N counted with implicit conjugates."""
        return 2 * self.n_modes if self.conj_pairs else self.n_modes

    @property
    def readout_scale(self) -> float:
        return 2.0 if self.conj_pairs else 1.0


@dataclass
class DiscreteSsm:
    a_bar: np.ndarray
    b_bar: np.ndarray


def _check_eigenvalues(lam: np.ndarray) -> None:
    if np.any(lam == 0):
        raise SingularityError("zero eigenvalue: ZOH input map lam^-1 (exp(dt lam) - 1) undefined")
    if np.any(lam.real >= 0):
        bad = lam[lam.real >= 0]
        raise StabilityError(f"eigenvalues must have negative real part, got {bad}")


def discretize_zoh(params: SsmLayerParams, channel: int) -> DiscreteSsm:
    """ZOH discretization of the diagonal system for one channel's step size."""
    _check_eigenvalues(params.lam)
    dt = np.exp(params.log_dt[channel])
    dtl = dt * params.lam
    a_bar = np.exp(dtl)
    # expm1 keeps b_bar accurate when dt * lam is tiny
    b_bar = np.expm1(dtl) / params.lam * params.b_in
    return DiscreteSsm(a_bar=a_bar, b_bar=b_bar)


def discretize_all(params: SsmLayerParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel ``(a_bar, b_bar)``, each complex (H, n)."""
    _check_eigenvalues(params.lam)
    dtl = np.exp(params.log_dt)[:, None] * params.lam[None, :]
    return np.exp(dtl), np.expm1(dtl) / params.lam * params.b_in


def kernel_from_modes(c, a_bar, b_bar, L: int) -> np.ndarray:
    """Re(sum_n c[n] a_bar[n]**j b_bar[n]) for j < L, modes taken literally.

    Arguments broadcast over leading channel axes; the mode axis is last.
    """
    if L < 1:
        raise ShapeError("kernel length must be >= 1")
    c, a_bar, b_bar = (np.asarray(v, dtype=complex) for v in (c, a_bar, b_bar))
    j = np.arange(L)
    pows = np.power(a_bar[..., None], j)
    return np.real(np.sum((c * b_bar)[..., None] * pows, axis=-2))


def ssm_kernel(params: SsmLayerParams, L: int) -> np.ndarray:
    """Materialize the real (H, L) convolution kernel.

    Powers are evaluated as exp(j * dt * lam) (log-magnitude / phase form),
    which cannot underflow into garbage for fast-decaying modes.
    """
    if L < 1:
        raise ShapeError("kernel length must be >= 1")
    _check_eigenvalues(params.lam)
    dtl = np.exp(params.log_dt)[:, None] * params.lam[None, :]
    b_bar = np.expm1(dtl) / params.lam * params.b_in
    w = params.c_out * b_bar
    pows = np.exp(dtl[:, :, None] * np.arange(L))
    return params.readout_scale * np.real(np.einsum("hn,hnl->hl", w, pows))


def _check_conv_shapes(kernel: np.ndarray, x: np.ndarray) -> None:
    if kernel.ndim != 2 or x.shape[-2:] != kernel.shape:
        raise ShapeError(f"kernel {kernel.shape} and input {x.shape} disagree on (H, L)")


def fft_convolve(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Causal per-channel convolution via a 2L zero-padded real FFT.

    ``kernel`` is (H, L); ``x`` is (..., H, L) with arbitrary leading batch axes.
    """
    kernel = np.asarray(kernel)
    x = np.asarray(x)
    _check_conv_shapes(kernel, x)
    L = x.shape[-1]
    n = 2 * L
    kf = np.fft.rfft(kernel, n=n)
    xf = np.fft.rfft(x, n=n)
    return np.fft.irfft(kf * xf, n=n)[..., :L]


def causal_convolve_direct(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """O(L^2) reference: y[k] = sum_{j<=k} kernel[j] x[k-j]."""
    kernel = np.asarray(kernel, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_conv_shapes(kernel, x)
    L = x.shape[-1]
    y = np.zeros(np.broadcast_shapes(x.shape, kernel.shape))
    for j in range(L):
        y[..., j:] += kernel[:, j : j + 1] * x[..., : L - j]
    return y


def recurrent_scan(params: SsmLayerParams, x: np.ndarray) -> np.ndarray:
    """Sequential evaluation h_t = a_bar h_{t-1} + b_bar x_t, y_t = C h_t + D x_t.

    Starts from h = 0. ``x`` is (..., H, L).
    """
    x = np.asarray(x, dtype=float)
    H = params.n_channels
    if x.shape[-2] != H:
        raise ShapeError(f"input has {x.shape[-2]} channels, params have {H}")
    a_bar, b_bar = discretize_all(params)
    scale = params.readout_scale
    h = np.zeros(x.shape[:-1] + (params.n_modes,), dtype=complex)
    y = np.empty_like(x)
    for t in range(x.shape[-1]):
        xt = x[..., t]
        h = a_bar * h + b_bar * xt[..., None]
        y[..., t] = scale * np.real(np.sum(params.c_out * h, axis=-1)) + params.d_skip * xt
    return y


def init_s4d_lin(N: int, H: int, rng: np.random.Generator | None = None,
                 dt_min: float = 1e-3, dt_max: float = 1e-1) -> SsmLayerParams:
    """S4D-Lin initialization: lam_n = -1/2 + i pi n, stored as N/2 conjugate pairs."""
    if N < 2 or N % 2:
        raise ConfigError(f"state dimension N must be a positive even number, got {N}")
    if H < 1:
        raise ConfigError(f"channel count H must be positive, got {H}")
    rng = np.random.default_rng() if rng is None else rng
    n = N // 2
    lam = -0.5 + 1j * np.pi * np.arange(n)
    b_in = np.ones(n, dtype=complex)
    c_out = (rng.standard_normal((H, n)) + 1j * rng.standard_normal((H, n))) / np.sqrt(2.0 * N)
    log_dt = rng.uniform(np.log(dt_min), np.log(dt_max), size=H)
    return SsmLayerParams(lam=lam, b_in=b_in, c_out=c_out, d_skip=np.ones(H), log_dt=log_dt)


# --- real-valued trainable representation ---------------------------------
#
# Re(lam) is stored as log(-Re lam) so that no gradient step can leave the
# stable half-plane.

ARRAY_KEYS = ("log_neg_re", "lambda_im", "b_re", "b_im", "c_re", "c_im", "d_skip", "log_dt")


def to_arrays(params: SsmLayerParams) -> dict[str, np.ndarray]:
    if not params.conj_pairs:
        raise ConfigError("trainable representation assumes conjugate-pair storage")
    _check_eigenvalues(params.lam)
    return {
        "log_neg_re": np.log(-params.lam.real),
        "lambda_im": params.lam.imag.copy(),
        "b_re": params.b_in.real.copy(),
        "b_im": params.b_in.imag.copy(),
        "c_re": params.c_out.real.copy(),
        "c_im": params.c_out.imag.copy(),
        "d_skip": params.d_skip.copy(),
        "log_dt": params.log_dt.copy(),
    }


def from_arrays(arrs: dict[str, np.ndarray]) -> SsmLayerParams:
    lam = -np.exp(arrs["log_neg_re"]) + 1j * arrs["lambda_im"]
    return SsmLayerParams(
        lam=lam,
        b_in=arrs["b_re"] + 1j * arrs["b_im"],
        c_out=arrs["c_re"] + 1j * arrs["c_im"],
        d_skip=arrs["d_skip"],
        log_dt=arrs["log_dt"],
    )


def kernel_forward(arrs: dict[str, np.ndarray], L: int):
    """Kernel (H, L) from the trainable arrays, plus a cache for ``kernel_backward``.

    Works in the arrays' own precision (float32 -> complex64).
    """
    dtype = arrs["c_re"].dtype
    lam = -np.exp(arrs["log_neg_re"]) + 1j * arrs["lambda_im"]
    dt = np.exp(arrs["log_dt"])
    b = arrs["b_re"] + 1j * arrs["b_im"]
    c = arrs["c_re"] + 1j * arrs["c_im"]
    z = dt[:, None] * lam[None, :]
    ez = np.exp(z)
    em1 = np.expm1(z)
    bbar = em1 / lam * b
    w = c * bbar
    j = np.arange(L, dtype=dtype)
    pows = np.exp(z[:, :, None] * j)
    k = (2.0 * np.real(np.einsum("hn,hnl->hl", w, pows))).astype(dtype, copy=False)
    cache = dict(lam=lam, dt=dt, b=b, c=c, z=z, ez=ez, em1=em1, bbar=bbar, w=w, pows=pows, j=j)
    return k, cache


def kernel_backward(g_k: np.ndarray, arrs: dict[str, np.ndarray], cache) -> dict[str, np.ndarray]:
    """Vector-Jacobian product of ``kernel_forward`` w.r.t. every trainable array.

    Complex intermediates carry gradients as dL/dRe + i dL/dIm; for a
    holomorphic map u = f(z) this gives grad_z = conj(f'(z)) grad_u.
    """
    lam, dt, b, c = cache["lam"], cache["dt"], cache["b"], cache["c"]
    ez, em1, bbar, w, pows, j = (cache[k] for k in ("ez", "em1", "bbar", "w", "pows", "j"))
    pc = np.conj(pows)
    g_w = 2.0 * np.einsum("hl,hnl->hn", g_k, pc)
    g_z = 2.0 * np.conj(w) * np.einsum("hl,hnl->hn", g_k * j, pc)
    g_c = g_w * np.conj(bbar)
    g_bbar = g_w * np.conj(c)
    g_b = np.sum(g_bbar * np.conj(em1 / lam), axis=0)
    g_z = g_z + g_bbar * np.conj(ez / lam * b)
    g_lam = np.sum(g_bbar * np.conj(-em1 * b / lam**2), axis=0)
    g_lam = g_lam + np.sum(g_z * dt[:, None], axis=0)
    g_dt = np.sum(np.real(np.conj(g_z) * lam[None, :]), axis=1)
    dtype = arrs["c_re"].dtype
    out = {
        "log_neg_re": -np.exp(arrs["log_neg_re"]) * np.real(g_lam),
        "lambda_im": np.imag(g_lam),
        "b_re": np.real(g_b),
        "b_im": np.imag(g_b),
        "c_re": np.real(g_c),
        "c_im": np.imag(g_c),
        "log_dt": g_dt * dt,
    }
    return {k: v.astype(dtype, copy=False) for k, v in out.items()}


def fft_convolve_backward(g_y: np.ndarray, kernel: np.ndarray, x: np.ndarray):
    """Gradients of ``fft_convolve`` w.r.t. kernel (summed over batch) and input."""
    L = x.shape[-1]
    n = 2 * L
    gf = np.fft.rfft(g_y, n=n)
    g_x = np.fft.irfft(gf * np.conj(np.fft.rfft(kernel, n=n)), n=n)[..., :L]
    cross = gf * np.conj(np.fft.rfft(x, n=n))
    if cross.ndim > 2:
        cross = cross.reshape((-1,) + cross.shape[-2:]).sum(axis=0)
    g_k = np.fft.irfft(cross, n=n)[..., :L]
    return g_k, g_x
