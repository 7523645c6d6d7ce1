"""Residual spiking SSM classifier.

Each block computes

    u = LayerNorm(x)                      (prenorm over channels)
    y = SSM(u) + D u                      (FFT convolution with the S4D kernel)
    s = spiker(y)                         (FR mask, block PSN, or identity)
    s = dropout(s)                        (training only)
    out = x + GLU(s)

and the network is encoder -> blocks -> mean over time -> linear head.

Parameters live in one flat ``dict[str, ndarray]`` keyed like
``layers.0.ssm.log_dt``; gradients use the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericHealthError, ShapeError
from .functional import (
    dropout_mask,
    glu_backward,
    glu_blockwise,
    glu_blockwise_backward,
    glu_forward,
    layer_norm_backward,
    layer_norm_forward,
)
from .spiking import (
    FrConfig,
    Heaviside,
    fr_backward,
    fr_event_sequential,
    fr_forward,
    psn_backward,
    psn_forward,
)
from .ssm import fft_convolve, fft_convolve_backward, init_s4d_lin, kernel_backward, kernel_forward, to_arrays

VARIANTS = ("frssm", "pssm", "linear")
DEFAULT_THETA = {"frssm": 0.5, "pssm": 0.0, "linear": 0.0}


@dataclass
class ModelConfig:
    n_layers: int = 6
    d_model: int = 512
    d_state: int = 64
    dropout: float = 0.1
    variant: str = "pssm"
    refractory: int = 5
    theta: float | None = None
    n_classes: int = 10
    d_input: int = 1
    fr_mode: str = "mask"  # inference semantics for frssm; training always uses the mask
    psn_normalize: bool = True
    glu_block_sharing: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.theta is None:
            self.theta = DEFAULT_THETA[self.variant]
        if self.d_state % 2 or self.d_state < 2:
            raise ConfigError(f"kernel dim must be a positive even number, got {self.d_state}")
        for name in ("n_layers", "d_model", "refractory", "n_classes", "d_input"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.fr_mode not in ("mask", "event"):
            raise ConfigError(f"fr_mode must be 'mask' or 'event', got {self.fr_mode!r}")


SSM_KEYS = ("log_neg_re", "lambda_im", "b_re", "b_im", "c_re", "c_im", "d_skip", "log_dt")
# dynamics parameters excluded from weight decay
NO_DECAY_SUFFIXES = ("ssm.log_neg_re", "ssm.lambda_im", "ssm.log_dt")


def init_params(cfg: ModelConfig, rng: np.random.Generator | None = None,
                dtype=np.float64) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(0) if rng is None else rng
    H, C = cfg.d_model, cfg.n_classes
    p: dict[str, np.ndarray] = {}
    # nonzero bias keeps the first prenorm well-conditioned on all-zero pixels
    enc = 1.0 / np.sqrt(cfg.d_input)
    p["encoder.w"] = rng.uniform(-enc, enc, (H, cfg.d_input))
    p["encoder.b"] = rng.uniform(-enc, enc, H)
    bound = 1.0 / np.sqrt(H)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        p[pre + "norm.gain"] = np.ones(H)
        p[pre + "norm.bias"] = np.zeros(H)
        for k, v in to_arrays(init_s4d_lin(cfg.d_state, H, rng)).items():
            p[pre + "ssm." + k] = v
        if cfg.variant == "pssm":
            r = cfg.refractory
            p[pre + "psn.w"] = rng.uniform(-1.0, 1.0, (H, r)) / np.sqrt(r)
            p[pre + "psn.gain"] = np.ones(H)
            p[pre + "psn.bias"] = np.zeros(H)
        for k in ("w1", "w2"):
            p[pre + "glu." + k] = rng.uniform(-bound, bound, (H, H))
        for k in ("b1", "b2"):
            p[pre + "glu." + k] = rng.uniform(-bound, bound, H)
    p["head.w"] = rng.uniform(-bound, bound, (C, H))
    p["head.b"] = np.zeros(C)
    return {k: np.ascontiguousarray(v, dtype=dtype) for k, v in p.items()}


def block_params(params: dict[str, np.ndarray], i: int) -> dict[str, np.ndarray]:
    pre = f"layers.{i}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def param_count(params) -> int:
    return int(sum(v.size for v in params.values()))


@dataclass
class Tape:
    """Forward activations kept for the backward pass."""

    x_in: np.ndarray | None = None
    blocks: list = field(default_factory=list)
    pooled: np.ndarray | None = None
    spike_rates: list = field(default_factory=list)
    L: int = 0


def block_forward(x, blk: dict[str, np.ndarray], cfg: ModelConfig, train: bool = False,
                  rng: np.random.Generator | None = None, spike_fn=None):
    """One residual block on x of shape (..., H, L). Returns (out, cache)."""
    H, L = x.shape[-2:]
    if blk["norm.gain"].shape[0] != H:
        raise ShapeError(f"block expects {blk['norm.gain'].shape[0]} channels, got {H}")
    spike_fn = Heaviside() if spike_fn is None else spike_fn
    u, ln_c = layer_norm_forward(x, blk["norm.gain"], blk["norm.bias"])
    arrs = {k: blk["ssm." + k] for k in SSM_KEYS}
    kern, k_c = kernel_forward(arrs, L)
    y = fft_convolve(kern, u) + arrs["d_skip"][:, None] * u

    sp_c = None
    if cfg.variant == "frssm":
        if not train and cfg.fr_mode == "event":
            s = fr_event_sequential(y, FrConfig(cfg.theta, cfg.refractory, "event")).astype(y.dtype)
        else:
            s, sp_c = fr_forward(y, cfg.theta, cfg.refractory, spike_fn)
    elif cfg.variant == "pssm":
        s, sp_c = psn_forward(y, blk["psn.w"], blk["psn.gain"], blk["psn.bias"], cfg.theta,
                              spike_fn, cfg.psn_normalize)
    else:
        s = y

    mask = None
    if train and cfg.dropout > 0:
        rng = np.random.default_rng() if rng is None else rng
        mask = dropout_mask(s.shape, cfg.dropout, rng, s.dtype)
    sd = s * mask if mask is not None else s

    shared = cfg.variant == "pssm" and mask is None and cfg.glu_block_sharing
    w1, b1, w2, b2 = blk["glu.w1"], blk["glu.b1"], blk["glu.w2"], blk["glu.b2"]
    if shared:
        g, glu_c = glu_blockwise(sd, cfg.refractory, w1, b1, w2, b2)
    else:
        g, glu_c = glu_forward(sd, w1, b1, w2, b2)
    out = x + g
    cache = dict(u=u, ln_c=ln_c, arrs=arrs, kern=kern, k_c=k_c, sp_c=sp_c, mask=mask,
                 shared=shared, glu_c=glu_c, rate=float(np.mean(s)) if cfg.variant != "linear" else None)
    return out, cache


def block_backward(g_out, cache, cfg: ModelConfig):
    """Gradients of one block: returns (g_x, grads keyed like ``block_params``)."""
    grads = {}
    if cache["shared"]:
        g_sd, gw1, gb1, gw2, gb2 = glu_blockwise_backward(g_out, cfg.refractory, cache["glu_c"])
    else:
        g_sd, gw1, gb1, gw2, gb2 = glu_backward(g_out, cache["glu_c"])
    grads.update({"glu.w1": gw1, "glu.b1": gb1, "glu.w2": gw2, "glu.b2": gb2})
    g_s = g_sd * cache["mask"] if cache["mask"] is not None else g_sd

    if cfg.variant == "frssm":
        if cache["sp_c"] is None:
            raise RuntimeError("event-mode inference has no backward; train in mask mode")
        g_y = fr_backward(g_s, cache["sp_c"])
    elif cfg.variant == "pssm":
        g_y, g_pw, g_pg, g_pb = psn_backward(g_s, cache["sp_c"])
        grads["psn.w"] = g_pw
        if g_pg is not None:
            grads["psn.gain"], grads["psn.bias"] = g_pg, g_pb
        else:
            grads["psn.gain"] = np.zeros_like(g_pw[:, 0])
            grads["psn.bias"] = np.zeros_like(g_pw[:, 0])
    else:
        g_y = g_s

    u, arrs = cache["u"], cache["arrs"]
    g_u = arrs["d_skip"][:, None] * g_y
    red = tuple(i for i in range(g_y.ndim) if i != g_y.ndim - 2)
    grads["ssm.d_skip"] = np.sum(g_y * u, axis=red)
    g_k, g_u_conv = fft_convolve_backward(g_y, cache["kern"], u)
    g_u = g_u + g_u_conv
    for k, v in kernel_backward(g_k, arrs, cache["k_c"]).items():
        grads["ssm." + k] = v
    g_xn, grads["norm.gain"], grads["norm.bias"] = layer_norm_backward(g_u, cache["ln_c"])
    return g_out + g_xn, grads


def forward(params, x, cfg: ModelConfig, train: bool = False, rng=None, spike_fn=None):
    """Full network. ``x`` is (B, d_input, L). Returns (logits, tape)."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != cfg.d_input:
        raise ShapeError(f"expected input (B, {cfg.d_input}, L), got {x.shape}")
    dtype = params["encoder.w"].dtype
    x = x.astype(dtype, copy=False)
    tape = Tape(x_in=x, L=x.shape[-1])
    h = params["encoder.w"] @ x + params["encoder.b"][:, None]
    layer_rngs = rng.spawn(cfg.n_layers) if (train and rng is not None) else [None] * cfg.n_layers
    for i in range(cfg.n_layers):
        h, c = block_forward(h, block_params(params, i), cfg, train, layer_rngs[i], spike_fn)
        tape.blocks.append(c)
        if c["rate"] is not None:
            tape.spike_rates.append(c["rate"])
    pooled = h.mean(axis=-1)
    tape.pooled = pooled
    logits = pooled @ params["head.w"].T + params["head.b"]
    if not np.all(np.isfinite(logits)):
        raise NumericHealthError("logits")
    return logits, tape


def backward(g_logits, tape: Tape, params, cfg: ModelConfig) -> dict[str, np.ndarray]:
    grads = {
        "head.w": g_logits.T @ tape.pooled,
        "head.b": g_logits.sum(axis=0),
    }
    g_pooled = g_logits @ params["head.w"]
    g_h = np.repeat((g_pooled / tape.L)[:, :, None], tape.L, axis=-1)
    for i in reversed(range(cfg.n_layers)):
        g_h, bg = block_backward(g_h, tape.blocks[i], cfg)
        for k, v in bg.items():
            grads[f"layers.{i}.{k}"] = v
    grads["encoder.w"] = np.einsum("bhl,bdl->hd", g_h, tape.x_in)
    grads["encoder.b"] = g_h.sum(axis=(0, 2))
    return {k: np.asarray(grads[k], dtype=params[k].dtype) for k in params}


def model_forward(params, batch, cfg: ModelConfig) -> np.ndarray:
    """Logits (B, n_classes) in inference mode."""
    return forward(params, batch, cfg, train=False)[0]


def effective_rate(firing_rate: float, cfg: ModelConfig) -> float:
    """Fraction of time steps that need downstream computation.

    Block-shared Pssm spikes need one evaluation per block of r steps.
    """
    return firing_rate / cfg.refractory if cfg.variant == "pssm" else firing_rate


def spike_statistics(params, batch, cfg: ModelConfig) -> list[dict]:
    """Per-layer mean spike rate of the spiking module output (inference mode)."""
    if cfg.variant == "linear":
        return []
    _, tape = forward(params, batch, cfg, train=False)
    return [
        {"layer": i, "firing_rate": r, "effective_rate": effective_rate(r, cfg)}
        for i, r in enumerate(tape.spike_rates)
    ]
