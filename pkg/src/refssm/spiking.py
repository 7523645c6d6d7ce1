"""Spike generation: fixed-refractory thresholding and block-shared PSN spikes.

Two mechanisms turn the memory module's real-valued output into spikes.

Fixed refractory (FRssm).  Raw spikes ``y' = H(y - theta)`` are thinned by
a fixed mask: a raw spike survives only if no raw spike occurred in the
previous ``r - 1`` steps.  In parallel form this is a depthwise convolution
with the fixed kernel ``[-2, ..., -2, 1]`` followed by ``y' * H(y'')``.
``FrStream`` produces the same output one step at a time.  ``FrEventStream``
instead applies the additive linear refractory ramp after every *emitted*
spike; the two semantics differ when raw crossings fall inside an active
refractory window (see ``mode_divergence``).

Block PSN (Pssm).  Non-overlapping length-r blocks are reduced by a learnable
depthwise kernel, normalized across channels, thresholded, and each block's
spike is repeated r times.

All thresholds are strict: a value exactly at ``theta`` does not spike.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .functional import LN_EPS, layer_norm_backward, layer_norm_forward, sigmoid

__all__ = [
    "SurrogateParams",
    "gaussian_pdf",
    "surrogate_grad",
    "Heaviside",
    "SteepSigmoid",
    "threshold_spikes",
    "refractory_kernel",
    "fr_mask_parallel",
    "FrConfig",
    "FrStream",
    "FrEventStream",
    "fr_stream_sequential",
    "fr_event_sequential",
    "mode_divergence",
    "PsnBlock",
    "psn_block_forward",
    "fr_forward",
    "fr_backward",
    "psn_forward",
    "psn_backward",
]


@dataclass(frozen=True)
class SurrogateParams:
    h: float = 0.15
    l: float = 0.5  # noqa: E741
    gamma: float = 0.5
    sigma: float | None = None  # defaults to l
    sigma_prime: float | None = None  # defaults to 6 l

    def __post_init__(self):
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.l)
        if self.sigma_prime is None:
            object.__setattr__(self, "sigma_prime", 6.0 * self.l)
        for name in ("h", "l", "gamma", "sigma", "sigma_prime"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"surrogate parameter {name} must be positive")


def gaussian_pdf(x, mu, sigma):
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))


def surrogate_grad(x, p: SurrogateParams = SurrogateParams()):
    """Gaussian-mixture stand-in for dH/dx: a central bump with two negative side lobes."""
    x = np.asarray(x)
    return p.gamma * (
        (1.0 + p.h) * gaussian_pdf(x, 0.0, p.sigma)
        - p.h * gaussian_pdf(x, p.l, p.sigma_prime)
        - p.h * gaussian_pdf(x, -p.l, p.sigma_prime)
    )


class Heaviside:
    """Strict step H(z) = [z > 0] whose backward uses the surrogate gradient."""

    def __init__(self, surrogate: SurrogateParams = SurrogateParams()):
        self.surrogate = surrogate

    def __call__(self, z):
        return (z > 0).astype(z.dtype if np.issubdtype(z.dtype, np.floating) else np.float64)

    def grad(self, z):
        return surrogate_grad(z, self.surrogate).astype(z.dtype, copy=False)


class SteepSigmoid:
    """Smooth relaxation sigmoid(beta z), with its exact derivative.

    Used to check the backward pass against finite differences.
    """

    def __init__(self, beta: float = 4.0):
        self.beta = beta

    def __call__(self, z):
        return sigmoid(self.beta * z)

    def grad(self, z):
        s = sigmoid(self.beta * z)
        return self.beta * s * (1.0 - s)


def threshold_spikes(x, theta: float):
    """s = 1 where x > theta, else 0."""
    x = np.asarray(x, dtype=float)
    return (x > theta).astype(np.float64)


def refractory_kernel(r: int) -> np.ndarray:
    """Fixed suppression kernel ``[-2, ..., -2, 1]`` (r - 1 entries of -2)."""
    if r < 1:
        raise ConfigError(f"refractory length must be >= 1, got {r}")
    return np.concatenate([np.full(r - 1, -2.0), [1.0]])


def _window_sum_prev(y, r):
    """sum_{k=1}^{r-1} y[..., t-k], truncated at the sequence start."""
    L = y.shape[-1]
    c = np.concatenate([np.zeros(y.shape[:-1] + (1,), dtype=y.dtype), np.cumsum(y, axis=-1)], axis=-1)
    t = np.arange(L)
    lo = np.maximum(t - (r - 1), 0)
    return c[..., t] - c[..., lo]


def _mask_conv(y1, r):
    """y''(t) = y'(t) - 2 * (sum of y' over the previous r-1 steps)."""
    if r == 1:
        return y1.copy()
    return y1 - 2.0 * _window_sum_prev(y1, r)


def _mask_conv_transpose(g, r):
    if r == 1:
        return g.copy()
    # adjoint of the causal window sum is the anti-causal one
    return g - 2.0 * _window_sum_prev(g[..., ::-1], r)[..., ::-1]


def fr_mask_parallel(y_raw, r: int):
    """Thin raw spikes with the fixed refractory mask (parallel over time)."""
    y_raw = np.asarray(y_raw, dtype=float)
    if not np.all((y_raw == 0) | (y_raw == 1)):
        raise ContractError("fr_mask_parallel expects a binary spike train")
    if r < 1:
        raise ConfigError(f"refractory length must be >= 1, got {r}")
    y2 = _mask_conv(y_raw, r)
    return y_raw * (y2 > 0)


@dataclass
class FrConfig:
    theta: float = 0.5
    r: int = 5
    mode: str = "mask"

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise ConfigError(f"refractory length must be a positive integer, got {self.r}")
        self.r = int(self.r)
        if self.mode not in ("mask", "event"):
            raise ConfigError(f"unknown FR mode {self.mode!r}")


class FrStream:
    """Streaming mask semantics: O(H) state per channel group.

    Keeps, per channel, the time of the most recent raw crossing; a raw
    crossing is emitted iff the previous one is at least ``r`` steps back.
    Not safe to share between concurrent callers.
    """

    def __init__(self, shape, theta: float, r: int):
        self.theta = theta
        self.r = r
        self.t = 0
        self.last_raw = np.full(shape, -r, dtype=np.int64)

    def step(self, x_t):
        raw = np.asarray(x_t) > self.theta
        out = raw & (self.t - self.last_raw >= self.r)
        self.last_raw = np.where(raw, self.t, self.last_raw)
        self.t += 1
        return out.astype(np.float64)


class FrEventStream:
    """Sequential inference with the additive linear refractory function.

    After a spike at time t the input is shifted by eta(t + t') = -m n + m t'
    for t' = 0..n, where m bounds the input from above.  Here m is the
    running maximum of the input seen so far, lifted to be non-negative and
    by a margin of 2|theta| for negative thresholds, so x + eta stays at or
    below theta for t' < n and the shift vanishes at t' = n.
    """

    def __init__(self, shape, theta: float, r: int):
        self.theta = theta
        self.n = r
        self.t = 0
        self.m = np.full(shape, -np.inf)
        self.last_spike = np.full(shape, -r - 1, dtype=np.int64)

    def step(self, x_t):
        x_t = np.asarray(x_t, dtype=float)
        self.m = np.maximum(self.m, x_t)
        m_eff = np.maximum(self.m, 0.0) + 2.0 * max(-self.theta, 0.0)
        tp = self.t - self.last_spike
        eta = np.where(tp <= self.n, -m_eff * self.n + m_eff * tp, 0.0)
        out = (x_t + eta) > self.theta
        self.last_spike = np.where(out, self.t, self.last_spike)
        self.t += 1
        return out.astype(np.float64)


def _run_stream(stream, x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for t in range(x.shape[-1]):
        out[..., t] = stream.step(x[..., t])
    return out


def fr_stream_sequential(x, cfg: FrConfig):
    """Mask-semantics spikes computed one time step at a time."""
    x = np.asarray(x, dtype=float)
    return _run_stream(FrStream(x.shape[:-1], cfg.theta, cfg.r), x)


def fr_event_sequential(x, cfg: FrConfig):
    """Event-semantics spikes: suppression keyed to emitted spikes only."""
    x = np.asarray(x, dtype=float)
    return _run_stream(FrEventStream(x.shape[:-1], cfg.theta, cfg.r), x)


def mode_divergence(x, cfg: FrConfig) -> dict:
    """Compare mask and event semantics on one input; report where they differ."""
    x = np.asarray(x, dtype=float)
    mask = fr_mask_parallel(threshold_spikes(x, cfg.theta), cfg.r)
    event = fr_event_sequential(x, cfg)
    diff = np.argwhere(mask != event)
    return {
        "n_diff": int(len(diff)),
        "positions": [tuple(int(i) for i in d) for d in diff],
        "mask": mask,
        "event": event,
    }


@dataclass
class PsnBlock:
    w: np.ndarray  # (H, r) depthwise block kernel
    theta: float = 0.0
    norm_gain: np.ndarray | None = None
    norm_bias: np.ndarray | None = None
    normalize: bool = True
    eps: float = LN_EPS
    spike_fn: object = field(default_factory=Heaviside, repr=False)

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        H = self.w.shape[0]
        if self.w.shape[1] < 1:
            raise ConfigError("PSN block length must be >= 1")
        if self.norm_gain is None:
            self.norm_gain = np.ones(H)
        if self.norm_bias is None:
            self.norm_bias = np.zeros(H)

    @property
    def r(self) -> int:
        return self.w.shape[1]


def psn_forward(y, w, gain, bias, theta, spike_fn, normalize=True, eps=LN_EPS):
    """Block PSN with cache. ``y`` is (..., H, L), ``w`` is (H, r)."""
    H, r = w.shape
    if y.shape[-2] != H:
        raise ShapeError(f"input has {y.shape[-2]} channels, kernel has {H}")
    L = y.shape[-1]
    K = -(-L // r)
    pad = K * r - L
    if pad:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (pad,), dtype=y.dtype)], axis=-1)
    yb = y.reshape(y.shape[:-1] + (K, r))
    u = np.einsum("...hkj,hj->...hk", yb, w)
    if normalize:
        un, ln_cache = layer_norm_forward(u, gain, bias, eps)
    else:
        un, ln_cache = u, None
    z = un - theta
    s_blk = spike_fn(z)
    s = np.repeat(s_blk, r, axis=-1)[..., :L]
    return s, (yb, w, z, ln_cache, L, spike_fn)


def psn_backward(g_s, cache):
    yb, w, z, ln_cache, L, spike_fn = cache
    r = w.shape[1]
    K = yb.shape[-2]
    pad = K * r - L
    if pad:
        g_s = np.concatenate([g_s, np.zeros(g_s.shape[:-1] + (pad,), dtype=g_s.dtype)], axis=-1)
    g_blk = g_s.reshape(g_s.shape[:-1] + (K, r)).sum(axis=-1)
    g_un = g_blk * spike_fn.grad(z)
    if ln_cache is not None:
        g_u, g_gain, g_bias = layer_norm_backward(g_un, ln_cache)
    else:
        g_u, g_gain, g_bias = g_un, None, None
    g_w = np.einsum("bhk,bhkj->hj", g_u.reshape((-1,) + g_u.shape[-2:]), yb.reshape((-1,) + yb.shape[-3:]))
    g_yb = g_u[..., None] * w[:, None, :]
    g_y = g_yb.reshape(g_yb.shape[:-2] + (K * r,))[..., :L]
    return g_y, g_w, g_gain, g_bias


def psn_block_forward(x, blk: PsnBlock):
    """Block-shared spikes: constant within each length-r block of every channel."""
    x = np.asarray(x, dtype=float)
    s, _ = psn_forward(x, blk.w, blk.norm_gain, blk.norm_bias, blk.theta,
                       blk.spike_fn, blk.normalize, blk.eps)
    return s


def fr_forward(y, theta, r, spike_fn):
    """Parallel FR spiking with cache; differentiable through ``spike_fn.grad``."""
    z = y - theta
    y1 = spike_fn(z)
    y2 = _mask_conv(y1, r)
    m = spike_fn(y2)
    return y1 * m, (z, y1, y2, m, r, spike_fn)


def fr_backward(g, cache):
    """Backward of ``fr_forward``.

    Both Heavisides, the threshold and the mask factor H(y''), take the
    surrogate at their own argument; the fixed kernel has no parameters.
    """
    z, y1, y2, m, r, spike_fn = cache
    g_y2 = g * y1 * spike_fn.grad(y2)
    g_y1 = g * m + _mask_conv_transpose(g_y2, r)
    return g_y1 * spike_fn.grad(z)
