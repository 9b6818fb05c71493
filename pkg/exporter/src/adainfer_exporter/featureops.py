"""Feature math for captured probes.

These formulas and conventions intentionally match the trace consumer:
stabilized softmax, lowest-id argmax tie-break, gap as the top-2 probability
difference, cosine clamped to [-1, 1] with two-zero vectors comparing as
identical (1.0) and a single zero vector as orthogonal (0.0), and neutral
layer-1 cosines of 1.0. Keep them dependency-free so the exporter never
imports the consumer package.
"""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def top_two(probs: np.ndarray) -> tuple[int, float, float]:
    am = int(np.argmax(probs))
    p1 = float(probs[am])
    masked = probs.copy()
    masked[am] = -np.inf
    return am, p1, float(masked.max())


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(u @ u)
    nv = float(v @ v)
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(float(u @ v) / np.sqrt(nu * nv), -1.0, 1.0))


def layer_features(probs: np.ndarray, attn: np.ndarray, mlp: np.ndarray,
                   hidden: np.ndarray,
                   prev: tuple[np.ndarray, np.ndarray, np.ndarray] | None) -> dict:
    """One layer's feature dict; ``prev`` is the previous block's
    (attn, mlp, hidden) or None at layer 1."""
    am, p1, p2 = top_two(probs)
    if prev is None:
        cos_attn = cos_mlp = cos_hidden = 1.0
    else:
        cos_attn = cosine(attn, prev[0])
        cos_mlp = cosine(mlp, prev[1])
        cos_hidden = cosine(hidden, prev[2])
    return {
        "argmax": am,
        "gap": p1 - p2,
        "top_prob": p1,
        "cos_attn": cos_attn,
        "cos_mlp": cos_mlp,
        "cos_hidden": cos_hidden,
    }
