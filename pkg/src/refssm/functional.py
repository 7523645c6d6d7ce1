"""Small differentiable building blocks with hand-written backward passes.

Arrays are laid out (..., H, L): channels on axis -2, time on axis -1.
Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

LN_EPS = 1e-5


sigmoid = expit


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    """Normalize over the channel axis (-2) at every time step."""
    mu = x.mean(axis=-2, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-2, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain[:, None] + bias[:, None]
    return out, (xhat, rstd, gain)


def layer_norm_backward(g, cache):
    xhat, rstd, gain = cache
    axes = tuple(i for i in range(g.ndim) if i != g.ndim - 2)
    g_gain = np.sum(g * xhat, axis=axes)
    g_bias = np.sum(g, axis=axes)
    gx_hat = g * gain[:, None]
    g_x = rstd * (
        gx_hat
        - gx_hat.mean(axis=-2, keepdims=True)
        - xhat * (gx_hat * xhat).mean(axis=-2, keepdims=True)
    )
    return g_x, g_gain, g_bias


def channel_mix(w, s):
    """w @ s as one matrix-vector product per time step.

    A single matmul over all columns lets BLAS pick kernels (and summation
    orders) by matrix width, so a column's result could depend on how many
    other columns ride along. Per-step products make it depend on that
    column alone, which block-shared evaluation relies on for bit-exactness.
    """
    st = np.ascontiguousarray(np.swapaxes(s, -1, -2))[..., None]
    return np.swapaxes((w @ st)[..., 0], -1, -2)


def glu_forward(s, w1, b1, w2, b2):
    """(W1 s + b1) * sigmoid(W2 s + b2), mixing channels at each time step."""
    a = channel_mix(w1, s) + b1[:, None]
    gate = sigmoid(channel_mix(w2, s) + b2[:, None])
    return a * gate, (s, a, gate, w1, w2)


def glu_backward(g, cache):
    s, a, gate, w1, w2 = cache
    g_a = g * gate
    g_pre = g * a * gate * (1.0 - gate)
    s2 = s.reshape(-1, *s.shape[-2:])
    ga2 = g_a.reshape(-1, *g_a.shape[-2:])
    gp2 = g_pre.reshape(-1, *g_pre.shape[-2:])
    g_w1 = np.einsum("bil,bjl->ij", ga2, s2)
    g_w2 = np.einsum("bil,bjl->ij", gp2, s2)
    g_b1 = ga2.sum(axis=(0, 2))
    g_b2 = gp2.sum(axis=(0, 2))
    g_s = w1.T @ g_a + w2.T @ g_pre
    return g_s, g_w1, g_b1, g_w2, g_b2


def glu_blockwise(s, r, w1, b1, w2, b2):
    """GLU on inputs that are constant over length-r time blocks.

    Evaluates the mixer once per block (at the block's first step) and
    repeats the result, which is what makes block-shared spikes cheap.
    """
    L = s.shape[-1]
    out, cache = glu_forward(s[..., ::r], w1, b1, w2, b2)
    return np.repeat(out, r, axis=-1)[..., :L], cache


def glu_blockwise_backward(g, r, cache):
    L = g.shape[-1]
    K = -(-L // r)
    pad = K * r - L
    if pad:
        g = np.concatenate([g, np.zeros(g.shape[:-1] + (pad,), dtype=g.dtype)], axis=-1)
    g_blocks = g.reshape(g.shape[:-1] + (K, r)).sum(axis=-1)
    g_sb, *rest = glu_backward(g_blocks, cache)
    # gradient reaches only the block-start inputs that were actually read
    g_s = np.zeros(g.shape[:-1] + (L,), dtype=g.dtype)
    g_s[..., ::r] = g_sb
    return (g_s, *rest)


def dropout_mask(shape, p, rng, dtype=np.float64):
    if p <= 0.0:
        return None
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return float(loss), g / n
