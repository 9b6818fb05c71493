"""Training for the toy model: float64 backprop plus Adam, batch size 1.

The forward here mirrors the inference kernels' math (same normalization
epsilon, masking, and head convention) but keeps the intermediates needed
for gradients. Training exists only to produce models whose layerwise
behavior is worth probing; inference always goes through the kernel path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TrainingFailureError
from .kernels import LN_EPS
from .model import ModelConfig, ModelWeights, init_weights, validate_tokens


@dataclass(frozen=True)
class TrainHyperparams:
    epochs: int = 40
    learning_rate: float = 3e-3
    seed: int = 0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")


def _ln_forward(x, gain, bias):
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def _ln_backward(dy, cache, gain):
    xhat, inv = cache
    dgain = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbias = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _forward_cached(tokens, weights: ModelWeights, config: ModelConfig, target: int):
    s = tokens.shape[0]
    h = config.hidden_size
    nh = config.num_heads
    hd = h // nh
    scale = 1.0 / np.sqrt(float(hd))
    mask = np.triu(np.ones((s, s), dtype=bool), k=1)

    x = weights.embed[tokens] + weights.pos[:s]
    caches = []
    for lw in weights.layers:
        x_in = x
        a, ln1_cache = _ln_forward(x_in, lw.ln1_gain, lw.ln1_bias)
        q = (a @ lw.wq).reshape(s, nh, hd).transpose(1, 0, 2)
        k = (a @ lw.wk).reshape(s, nh, hd).transpose(1, 0, 2)
        v = (a @ lw.wv).reshape(s, nh, hd).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores[:, mask] = -np.inf
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        ctx = (scores @ v).transpose(1, 0, 2).reshape(s, h)
        attn_out = ctx @ lw.wo
        x_mid = x_in + attn_out
        m, ln2_cache = _ln_forward(x_mid, lw.ln2_gain, lw.ln2_bias)
        h1 = m @ lw.w1
        r = np.maximum(h1, 0.0)
        mlp_out = r @ lw.w2
        x = x_mid + mlp_out
        caches.append((x_in, a, ln1_cache, q, k, v, scores, ctx, m, ln2_cache, h1, r))

    h_last = x[-1]
    if config.probe_final_norm:
        hn2, lnf_cache = _ln_forward(h_last[None, :], weights.lnf_gain, weights.lnf_bias)
        hn = hn2[0]
    else:
        hn, lnf_cache = h_last, None
    logits = weights.head_w @ hn + weights.head_b
    zmax = logits.max()
    logsumexp = zmax + np.log(np.exp(logits - zmax).sum())
    loss = logsumexp - logits[target]
    return loss, (x, caches, hn, lnf_cache, logits, logsumexp)


def _backward(tokens, weights: ModelWeights, config: ModelConfig, target: int,
              fwd, grads: dict[str, np.ndarray]) -> None:
    s = tokens.shape[0]
    h = config.hidden_size
    nh = config.num_heads
    hd = h // nh
    scale = 1.0 / np.sqrt(float(hd))
    x, caches, hn, lnf_cache, logits, logsumexp = fwd

    dlogits = np.exp(logits - logsumexp)
    dlogits[target] -= 1.0
    grads["head_w"] += np.outer(dlogits, hn)
    grads["head_b"] += dlogits
    dhn = weights.head_w.T @ dlogits
    if config.probe_final_norm:
        dh_last2, dgain, dbias = _ln_backward(dhn[None, :], lnf_cache, weights.lnf_gain)
        grads["lnf_gain"] += dgain
        grads["lnf_bias"] += dbias
        dh_last = dh_last2[0]
    else:
        dh_last = dhn

    dx = np.zeros((s, h))
    dx[-1] = dh_last

    for li in range(config.num_layers - 1, -1, -1):
        lw = weights.layers[li]
        x_in, a, ln1_cache, q, k, v, probs, ctx, m, ln2_cache, h1, r = caches[li]
        g = f"layer{li}."

        dmlp_out = dx
        grads[g + "w2"] += r.T @ dmlp_out
        dr = dmlp_out @ lw.w2.T
        dh1 = dr * (h1 > 0)
        grads[g + "w1"] += m.T @ dh1
        dm = dh1 @ lw.w1.T
        dx_mid_ln, dgain2, dbias2 = _ln_backward(dm, ln2_cache, lw.ln2_gain)
        grads[g + "ln2_gain"] += dgain2
        grads[g + "ln2_bias"] += dbias2
        dx_mid = dx + dx_mid_ln

        dattn_out = dx_mid
        grads[g + "wo"] += ctx.T @ dattn_out
        dctx = (dattn_out @ lw.wo.T).reshape(s, nh, hd).transpose(1, 0, 2)
        dP = dctx @ v.transpose(0, 2, 1)
        dv = probs.transpose(0, 2, 1) @ dctx
        dS = probs * (dP - (dP * probs).sum(axis=-1, keepdims=True))
        dq = (dS @ k) * scale
        dk = (dS.transpose(0, 2, 1) @ q) * scale

        dq = dq.transpose(1, 0, 2).reshape(s, h)
        dk = dk.transpose(1, 0, 2).reshape(s, h)
        dv = dv.transpose(1, 0, 2).reshape(s, h)
        grads[g + "wq"] += a.T @ dq
        grads[g + "wk"] += a.T @ dk
        grads[g + "wv"] += a.T @ dv
        da = dq @ lw.wq.T + dk @ lw.wk.T + dv @ lw.wv.T
        dx_in_ln, dgain1, dbias1 = _ln_backward(da, ln1_cache, lw.ln1_gain)
        grads[g + "ln1_gain"] += dgain1
        grads[g + "ln1_bias"] += dbias1
        dx = dx_mid + dx_in_ln

    np.add.at(grads["embed"], tokens, dx)
    grads["pos"][:s] += dx


def _param_items(weights: ModelWeights):
    yield "embed", weights.embed
    yield "pos", weights.pos
    for i, lw in enumerate(weights.layers):
        for name in ("wq", "wk", "wv", "wo", "w1", "w2",
                     "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            yield f"layer{i}.{name}", getattr(lw, name)
    yield "lnf_gain", weights.lnf_gain
    yield "lnf_bias", weights.lnf_bias
    yield "head_w", weights.head_w
    yield "head_b", weights.head_b


def _validate_dataset(dataset, config: ModelConfig):
    if not dataset:
        raise InvalidInputError("training dataset must be non-empty")
    checked = []
    for tokens, target in dataset:
        toks = validate_tokens(tokens, config)
        t = int(target)
        if not 0 <= t < config.vocab_size:
            raise InvalidInputError(f"target token {t} out of range")
        checked.append((toks, t))
    return checked


def dataset_loss(dataset, weights: ModelWeights, config: ModelConfig) -> float:
    """Mean cross-entropy of the dense output over (tokens, target) pairs."""
    data = _validate_dataset(dataset, config)
    total = 0.0
    for toks, target in data:
        loss, _ = _forward_cached(toks, weights, config, target)
        total += float(loss)
    return total / len(data)


def train_toy(dataset, config: ModelConfig,
              hyperparams: TrainHyperparams = TrainHyperparams(),
              initial_weights: ModelWeights | None = None) -> ModelWeights:
    """Fit the toy model with per-instance Adam steps.

    Initialization is seeded from ``hyperparams.seed`` unless
    ``initial_weights`` is given; with epochs=0 the initialization is
    returned unchanged. Raises TrainingFailureError if the loss goes
    non-finite.
    """
    data = _validate_dataset(dataset, config)
    hp = hyperparams
    weights = initial_weights if initial_weights is not None else init_weights(config, hp.seed)
    weights.validate(config)
    if hp.epochs == 0:
        return weights

    names = [name for name, _ in _param_items(weights)]
    params = dict(_param_items(weights))
    adam_m = {n: np.zeros_like(params[n]) for n in names}
    adam_v = {n: np.zeros_like(params[n]) for n in names}
    rng = np.random.default_rng(hp.seed)
    step = 0

    for _epoch in range(hp.epochs):
        order = rng.permutation(len(data))
        for idx in order:
            toks, target = data[idx]
            loss, fwd = _forward_cached(toks, weights, config, target)
            if not np.isfinite(loss):
                raise TrainingFailureError(f"non-finite training loss at step {step}")
            grads = {n: np.zeros_like(params[n]) for n in names}
            _backward(toks, weights, config, target, fwd, grads)

            gnorm = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
            if not np.isfinite(gnorm):
                raise TrainingFailureError(f"non-finite gradient at step {step}")
            clip = min(1.0, hp.clip_norm / gnorm) if gnorm > 0 else 1.0

            step += 1
            bc1 = 1.0 - hp.beta1 ** step
            bc2 = 1.0 - hp.beta2 ** step
            for n in names:
                g = grads[n] * clip
                adam_m[n] = hp.beta1 * adam_m[n] + (1.0 - hp.beta1) * g
                adam_v[n] = hp.beta2 * adam_v[n] + (1.0 - hp.beta2) * g * g
                params[n] -= hp.learning_rate * (adam_m[n] / bc1) / (
                    np.sqrt(adam_v[n] / bc2) + hp.adam_eps
                )
    weights.validate(config)
    return weights


def make_copy_corpus(n: int, config: ModelConfig, seed: int,
                     min_len: int = 2, max_len: int | None = None):
    """Copy-last-token task: the target equals the final input token.

    Returns a list of (tokens, target) pairs, deterministic in ``seed``.
    """
    if n < 1:
        raise InvalidInputError("need at least one instance")
    max_len = max_len or config.max_seq_len
    if not 1 <= min_len <= max_len <= config.max_seq_len:
        raise InvalidInputError("bad length range")
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        toks = rng.integers(0, config.vocab_size, size=length)
        corpus.append((toks, int(toks[-1])))
    return corpus
