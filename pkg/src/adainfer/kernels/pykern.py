"""Numpy fallback for the forward kernels.

Same API and math as the compiled core. Results agree with the compiled
kernels to ~1e-12 (BLAS accumulation order differs, so not bit-for-bit).
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5


def _layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gain + bias


def layer_forward(x, wq, wk, wv, wo, w1, w2,
                  ln1_gain, ln1_bias, ln2_gain, ln2_bias, num_heads):
    """Advance ``x`` (shape (s, h), updated in place) through one pre-norm
    decoder block; returns (attn_last, mlp_last) for the final position."""
    s, h = x.shape
    hd = h // num_heads
    scale = 1.0 / np.sqrt(float(hd))

    a_in = _layernorm(x, ln1_gain, ln1_bias)
    q = (a_in @ wq).reshape(s, num_heads, hd).transpose(1, 0, 2)
    k = (a_in @ wk).reshape(s, num_heads, hd).transpose(1, 0, 2)
    v = (a_in @ wv).reshape(s, num_heads, hd).transpose(1, 0, 2)

    scores = (q @ k.transpose(0, 2, 1)) * scale
    mask = np.triu(np.ones((s, s), dtype=bool), k=1)
    scores[:, mask] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)

    ctx = (scores @ v).transpose(1, 0, 2).reshape(s, h)
    attn_out = ctx @ wo
    x += attn_out

    m_in = _layernorm(x, ln2_gain, ln2_bias)
    mlp_out = np.maximum(m_in @ w1, 0.0) @ w2
    x += mlp_out

    return attn_out[-1].copy(), mlp_out[-1].copy()


def probe_logits(hidden, lnf_gain, lnf_bias, head_w, head_b, apply_norm):
    """LM-head logits for one hidden vector: head_w @ norm(hidden) + head_b."""
    hn = _layernorm(hidden, lnf_gain, lnf_bias) if apply_norm else hidden
    return head_w @ hn + head_b


def confidence_probe(hidden, lnf_gain, lnf_bias, head_w, head_b, apply_norm):
    """Fused probe: (argmax id, top probability, second probability, logits),
    with argmax ties resolved to the lowest token id."""
    logits = probe_logits(hidden, lnf_gain, lnf_bias, head_w, head_b, apply_norm)
    am = int(np.argmax(logits))
    e = np.exp(logits - logits[am])
    z = float(e.sum())
    e[am] = -1.0
    return am, 1.0 / z, float(e.max()) / z, logits


def cos_sim(u, v):
    """Cosine similarity clamped to [-1, 1]; two zero vectors give 1.0 and
    a single zero vector gives 0.0."""
    dot = float(u @ v)
    nu = float(u @ u)
    nv = float(v @ v)
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return min(1.0, max(-1.0, dot / np.sqrt(nu * nv)))
