"""Linear-chain CRF over per-layer binary exit labels.

Potentials are linear in the features: a 2 x d emission matrix, a 2 x 2
transition matrix, and a length-2 start vector. Training maximizes the mean
conditional log-likelihood by full-batch gradient ascent with step halving
(so the penalized objective never decreases), using forward-backward
marginals for the gradient. Online decisions during a forward pass use
max-sum decoding over the feature prefix seen so far; marginal-threshold
decoding is available as an alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, InvalidInputError, TrainingFailureError
from .features import DEFAULT_FEATURES


@dataclass(frozen=True)
class CrfHyperparams:
    epochs: int = 150
    lr0: float = 0.5
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.lr0 <= 0 or self.l2 < 0:
            raise InvalidInputError("epochs >= 1, lr0 > 0, l2 >= 0 required")


@dataclass
class CrfModel:
    emit: np.ndarray        # (2, d)
    trans: np.ndarray       # (2, 2), trans[a, b] scores a -> b
    start: np.ndarray       # (2,)
    feature_names: tuple[str, ...]
    emit_bias: np.ndarray = None   # (2,) per-label intercept
    hyperparams: CrfHyperparams | None = None
    loglik_history: tuple[float, ...] = ()
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.emit_bias is None:
            self.emit_bias = np.zeros(2)
        d = len(self.feature_names)
        if (self.emit.shape != (2, d) or self.trans.shape != (2, 2)
                or self.start.shape != (2,) or self.emit_bias.shape != (2,)):
            raise InvalidInputError("CRF parameter shapes inconsistent with feature mask")
        for arr in (self.emit, self.trans, self.start, self.emit_bias):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("CRF parameters must be finite")


def zero_crf(feature_names: tuple[str, ...] = DEFAULT_FEATURES) -> CrfModel:
    d = len(feature_names)
    return CrfModel(emit=np.zeros((2, d)), trans=np.zeros((2, 2)),
                    start=np.zeros(2), feature_names=tuple(feature_names))


def _feature_rows(model: CrfModel, seq) -> np.ndarray:
    return np.array([fv.as_array(model.feature_names) for fv in seq])


def emission_scores(model: CrfModel, seq) -> np.ndarray:
    """(n, 2) emission scores: E @ x_k plus the per-label intercept.

    The intercept is needed because every input feature is bounded and
    nonnegative; without it the per-position discriminant could never go
    negative and the chain would lean positive everywhere.
    """
    if len(seq) == 0:
        raise InvalidInputError("empty sequence")
    return _feature_rows(model, seq) @ model.emit.T + model.emit_bias


def _logsumexp(a, axis=None):
    if axis is None:
        m = float(np.max(a))
        return m + float(np.log(np.sum(np.exp(a - m))))
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)), axis=axis)


def log_forward(emis: np.ndarray, trans: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Forward log-messages alpha, shape (n, 2); logZ = logsumexp(alpha[-1])."""
    n = emis.shape[0]
    alpha = np.empty((n, 2))
    alpha[0] = start + emis[0]
    for t in range(1, n):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emis[t]
    return alpha


def log_backward(emis: np.ndarray, trans: np.ndarray) -> np.ndarray:
    n = emis.shape[0]
    beta = np.zeros((n, 2))
    for t in range(n - 2, -1, -1):
        beta[t] = _logsumexp(trans + (emis[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(model: CrfModel, seq) -> float:
    emis = emission_scores(model, seq)
    alpha = log_forward(emis, model.trans, model.start)
    return float(_logsumexp(alpha[-1]))


def sequence_score(model: CrfModel, seq, labels) -> float:
    """Unnormalized log-score of one labeling."""
    emis = emission_scores(model, seq)
    labels = list(labels)
    if len(labels) != emis.shape[0]:
        raise InvalidInputError("labels and sequence lengths differ")
    score = float(model.start[labels[0]] + emis[0, labels[0]])
    for t in range(1, len(labels)):
        score += float(model.trans[labels[t - 1], labels[t]] + emis[t, labels[t]])
    return score


def sequence_loglik(model: CrfModel, seq, labels) -> float:
    return sequence_score(model, seq, labels) - log_partition(model, seq)


def loglik_and_grad(model: CrfModel, sequences):
    """Mean log-likelihood over (sequence, labels) pairs and its gradient.

    Gradient entries follow the usual observed-minus-expected form, with
    expectations from forward-backward marginals.
    """
    if not sequences:
        raise DegenerateDataError("no training sequences")
    d = len(model.feature_names)
    g_emit = np.zeros((2, d))
    g_bias = np.zeros(2)
    g_trans = np.zeros((2, 2))
    g_start = np.zeros(2)
    total_ll = 0.0
    m = len(sequences)

    for seq, labels in sequences:
        labels = list(labels)
        n = len(seq)
        if n == 0 or len(labels) != n:
            raise InvalidInputError("sequence and labels must be non-empty, equal length")
        if any(lab not in (0, 1) for lab in labels):
            raise InvalidInputError("labels must be binary")
        X = _feature_rows(model, seq)
        emis = X @ model.emit.T + model.emit_bias
        alpha = log_forward(emis, model.trans, model.start)
        beta = log_backward(emis, model.trans)
        logz = float(_logsumexp(alpha[-1]))
        total_ll += sequence_score(model, seq, labels) - logz

        # unary marginals
        gamma = np.exp(alpha + beta - logz)          # (n, 2)
        obs = np.zeros((n, 2))
        obs[np.arange(n), labels] = 1.0
        g_emit += (obs - gamma).T @ X
        g_bias += (obs - gamma).sum(axis=0)
        g_start += obs[0] - gamma[0]

        # pairwise marginals
        for t in range(1, n):
            pair = (alpha[t - 1][:, None] + model.trans
                    + (emis[t] + beta[t])[None, :]) - logz
            xi = np.exp(pair)
            g_trans[labels[t - 1], labels[t]] += 1.0
            g_trans -= xi

    scale = 1.0 / m
    return total_ll * scale, (g_emit * scale, g_bias * scale,
                              g_trans * scale, g_start * scale)


def crf_train(sequences, hyperparams: CrfHyperparams = CrfHyperparams(),
              feature_names: tuple[str, ...] = DEFAULT_FEATURES) -> CrfModel:
    """Gradient ascent on the L2-penalized mean log-likelihood.

    The penalized objective is non-decreasing across epochs by construction
    (step halving); raises TrainingFailureError on non-finite gradients.
    """
    model = zero_crf(feature_names)
    hp = hyperparams

    def penalized(m_):
        ll, _ = loglik_and_grad(m_, sequences)
        pen = 0.5 * hp.l2 * (float((m_.emit ** 2).sum())
                             + float((m_.emit_bias ** 2).sum())
                             + float((m_.trans ** 2).sum())
                             + float((m_.start ** 2).sum()))
        return ll - pen

    emit, bias = model.emit.copy(), model.emit_bias.copy()
    trans, start = model.trans.copy(), model.start.copy()
    eta = hp.lr0
    cur = penalized(model)
    history = [cur]

    def make(e, b, t, s):
        return CrfModel(emit=e, emit_bias=b, trans=t, start=s,
                        feature_names=tuple(feature_names))

    for _ in range(hp.epochs):
        _, (ge, gb, gt, gs) = loglik_and_grad(make(emit, bias, trans, start), sequences)
        ge -= hp.l2 * emit
        gb -= hp.l2 * bias
        gt -= hp.l2 * trans
        gs -= hp.l2 * start
        if not all(np.all(np.isfinite(g)) for g in (ge, gb, gt, gs)):
            raise TrainingFailureError("non-finite CRF gradient")

        step = eta
        accepted = False
        for _try in range(40):
            cand = make(emit + step * ge, bias + step * gb,
                        trans + step * gt, start + step * gs)
            val = penalized(cand)
            if val >= cur:
                emit, bias, trans, start = cand.emit, cand.emit_bias, cand.trans, cand.start
                cur = val
                eta = min(step * 2.0, hp.lr0)
                accepted = True
                break
            step *= 0.5
        history.append(cur)
        if not accepted:
            break

    return CrfModel(
        emit=emit, emit_bias=bias, trans=trans, start=start,
        feature_names=tuple(feature_names),
        hyperparams=hp,
        loglik_history=tuple(history),
        training_meta={"n_sequences": len(sequences)},
    )


def viterbi(model: CrfModel, seq) -> tuple[list[int], float]:
    """Max-sum decode of a full sequence; returns (labels, best path score).

    Exact ties resolve toward the lower label, matching numpy argmax.
    """
    emis = emission_scores(model, seq)
    n = emis.shape[0]
    delta = np.empty((n, 2))
    back = np.zeros((n, 2), dtype=np.int64)
    delta[0] = model.start + emis[0]
    for t in range(1, n):
        cand = delta[t - 1][:, None] + model.trans      # cand[a, b]
        back[t] = np.argmax(cand, axis=0)
        delta[t] = cand[back[t], np.arange(2)] + emis[t]
    last = int(np.argmax(delta[-1]))
    labels = [last]
    for t in range(n - 1, 0, -1):
        last = int(back[t, last])
        labels.append(last)
    labels.reverse()
    return labels, float(delta[-1].max())


def crf_decode_prefix(model: CrfModel, prefix) -> int:
    """Best-path label of the final position, scored over the prefix only.

    With the full sequence as prefix this matches full Viterbi's last label.
    """
    if len(prefix) == 0:
        raise InvalidInputError("prefix must be non-empty")
    labels, _ = viterbi(model, prefix)
    return labels[-1]


def crf_marginal_last(model: CrfModel, prefix) -> float:
    """p(label = 1 at the last prefix position), prefix-conditional."""
    if len(prefix) == 0:
        raise InvalidInputError("prefix must be non-empty")
    emis = emission_scores(model, prefix)
    alpha = log_forward(emis, model.trans, model.start)
    logz = _logsumexp(alpha[-1])
    return float(np.exp(alpha[-1, 1] - logz))
