"""Classifier features from block probes, and labeled-example construction.

Per layer the features are: gap (top probability minus runner-up), top_prob,
and three cosine similarities against the previous block's attention output,
MLP output, and hidden state. Layer 1 has no previous block; its cosines
default to the neutral value 1.0, or compare against the embedding output
when an embedding reference is supplied.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .model import BlockSnapshot, ModelConfig, ModelWeights, forward_instrumented

FEATURE_NAMES = ("gap", "top_prob", "cos_attn", "cos_mlp", "cos_hidden")
DEFAULT_FEATURES = ("gap", "top_prob")

_COS_SLACK = 1e-9


@dataclass(frozen=True)
class FeatureVector:
    layer_index: int
    gap: float
    top_prob: float
    cos_attn: float
    cos_mlp: float
    cos_hidden: float

    def __post_init__(self):
        if self.layer_index < 1:
            raise InvalidInputError("layer_index is 1-based")
        if not 0.0 <= self.gap <= 1.0 or not 0.0 <= self.top_prob <= 1.0:
            raise InvalidInputError("gap and top_prob must lie in [0, 1]")
        if self.gap > self.top_prob + _COS_SLACK:
            raise InvalidInputError("gap cannot exceed top_prob")
        for name in ("cos_attn", "cos_mlp", "cos_hidden"):
            val = getattr(self, name)
            if not -1.0 - _COS_SLACK <= val <= 1.0 + _COS_SLACK:
                raise InvalidInputError(f"{name}={val} outside [-1, 1]")

    def value(self, name: str) -> float:
        if name not in FEATURE_NAMES:
            raise InvalidInputError(f"unknown feature {name!r}")
        return float(getattr(self, name))

    def as_array(self, names=DEFAULT_FEATURES) -> np.ndarray:
        return np.array([self.value(n) for n in names], dtype=np.float64)


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InvalidInputError("label must be 0 or 1")


class ReferenceMode(enum.Enum):
    """Which token defines a layer's positive label."""

    FINAL_LAYER_AGREEMENT = "final"
    GOLD_ANSWER = "gold"


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1].

    Degenerate conventions: two zero vectors compare as identical (1.0);
    one zero vector yields 0.0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise InvalidInputError("cosine needs two equal-length vectors")
    nu = float(u @ u)
    nv = float(v @ v)
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(float(u @ v) / np.sqrt(nu * nv), -1.0, 1.0))


def top_two(probs: np.ndarray) -> tuple[int, float, float]:
    """(argmax id with lowest-id tie-break, top prob, second prob)."""
    if probs.shape[0] < 2:
        raise InvalidInputError("top_two needs a vocabulary of at least 2")
    top_id = int(np.argmax(probs))
    p1 = float(probs[top_id])
    masked = probs.copy()
    masked[top_id] = -np.inf
    p2 = float(masked.max())
    return top_id, p1, p2


def features_from_arrays(layer_index: int, probs: np.ndarray,
                         attn: np.ndarray, mlp: np.ndarray, hidden: np.ndarray,
                         prev: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
                         ) -> FeatureVector:
    """Feature construction on raw vectors; ``prev`` is (attn, mlp, hidden)
    from the preceding block, or None for layer 1 (neutral cosines)."""
    _, p1, p2 = top_two(probs)
    if prev is None:
        cos_attn = cos_mlp = cos_hidden = 1.0
    else:
        cos_attn = cosine(attn, prev[0])
        cos_mlp = cosine(mlp, prev[1])
        cos_hidden = cosine(hidden, prev[2])
    return FeatureVector(
        layer_index=layer_index,
        gap=p1 - p2,
        top_prob=p1,
        cos_attn=cos_attn,
        cos_mlp=cos_mlp,
        cos_hidden=cos_hidden,
    )


def extract_features(current: BlockSnapshot,
                     previous: BlockSnapshot | None,
                     embedding_reference: np.ndarray | None = None) -> FeatureVector:
    """FeatureVector for one block probe.

    ``previous`` may be None only for layer 1. In that case cosines are the
    neutral 1.0, unless ``embedding_reference`` (the depth-0 last-token
    vector) is given: then cos_hidden compares against it and the sublayer
    cosines are 0.0, since depth 0 has no sublayer outputs.
    """
    if current.probs.shape[0] < 2:
        raise InvalidInputError("vocab must be >= 2 to define the gap feature")
    if previous is None and current.layer_index != 1:
        raise InvalidInputError("previous snapshot required beyond layer 1")
    if previous is not None and previous.layer_index != current.layer_index - 1:
        raise InvalidInputError("previous snapshot must be the preceding layer")
    if previous is None and embedding_reference is not None:
        _, p1, p2 = top_two(current.probs)
        return FeatureVector(
            layer_index=current.layer_index,
            gap=p1 - p2,
            top_prob=p1,
            cos_attn=0.0,
            cos_mlp=0.0,
            cos_hidden=cosine(current.hidden_last, embedding_reference),
        )
    prev = None
    if previous is not None:
        prev = (previous.attn_last, previous.mlp_last, previous.hidden_last)
    return features_from_arrays(
        current.layer_index, current.probs,
        current.attn_last, current.mlp_last, current.hidden_last, prev,
    )


def build_labels(snapshots: list[BlockSnapshot],
                 reference_mode: ReferenceMode = ReferenceMode.FINAL_LAYER_AGREEMENT,
                 gold: int | None = None) -> list[LabeledExample]:
    """One LabeledExample per layer: label 1 when the layer's argmax equals
    the reference token (the final layer's argmax, or the gold answer)."""
    if not snapshots:
        raise InvalidInputError("snapshots must be non-empty")
    if reference_mode is ReferenceMode.GOLD_ANSWER:
        if gold is None:
            raise InvalidInputError("gold token required in GOLD_ANSWER mode")
        reference = int(gold)
    else:
        reference = int(np.argmax(snapshots[-1].probs))
    out = []
    prev = None
    for snap in snapshots:
        fv = extract_features(snap, prev)
        label = 1 if int(np.argmax(snap.probs)) == reference else 0
        out.append(LabeledExample(features=fv, label=label))
        prev = snap
    return out


def build_dataset(corpus, weights: ModelWeights, config: ModelConfig,
                  reference_mode: ReferenceMode = ReferenceMode.FINAL_LAYER_AGREEMENT,
                  ) -> list[LabeledExample]:
    """Labeled examples for a whole corpus of (tokens, gold) pairs.

    Output is instance-major, layer-minor: len(corpus) * num_layers examples.
    """
    if not corpus:
        raise InvalidInputError("corpus must be non-empty")
    examples = []
    for tokens, gold in corpus:
        snaps = forward_instrumented(tokens, weights, config)
        g = None if gold is None else int(gold)
        examples.extend(build_labels(snaps, reference_mode, gold=g))
    return examples


def feature_trajectory_report(traces, quantiles=(0.1, 0.5, 0.9)) -> list[dict]:
    """Per-layer mean and quantiles of each feature over a set of traces.

    Returns plot-ready rows, one per layer:
    {"layer": k, "gap_mean": ..., "gap_q10": ..., ...}. Quantiles use
    numpy's default linear interpolation.
    """
    traces = list(traces)
    if not traces:
        raise InvalidInputError("need at least one trace")
    num_layers = traces[0].num_layers
    if any(t.num_layers != num_layers for t in traces):
        raise InvalidInputError("traces disagree on num_layers")
    rows = []
    for k in range(num_layers):
        row: dict[str, float | int] = {"layer": k + 1}
        for name in FEATURE_NAMES:
            vals = np.array([getattr(t, name)[k] for t in traces], dtype=np.float64)
            row[f"{name}_mean"] = float(vals.mean())
            for q in quantiles:
                row[f"{name}_q{int(round(q * 100))}"] = float(np.quantile(vals, q))
        rows.append(row)
    return rows
