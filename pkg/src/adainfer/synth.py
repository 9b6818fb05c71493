"""Synthetic evaluation tasks.

Model-free trace corpora with generator-defined difficulty: each instance
gets a first-agreement layer drawn from its difficulty band, the per-layer
argmax equals the final prediction from that layer on, and confidence
features (gap, top_prob) jump from a low pre-agreement regime to a high
post-agreement regime. Easy bands agree earlier than hard bands by
construction. A token-task variant emits copy-last corpora for the toy
model instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .traces import TraceHeader, TraceRecord


@dataclass(frozen=True)
class DifficultyBand:
    """Instances in a band agree with the final layer somewhere in
    [first_agreement_min, first_agreement_max] (1-based, inclusive)."""

    name: str
    first_agreement_min: int
    first_agreement_max: int
    weight: float = 1.0

    def __post_init__(self):
        if not 1 <= self.first_agreement_min <= self.first_agreement_max:
            raise InvalidInputError("bad agreement-layer range")
        if self.weight <= 0:
            raise InvalidInputError("band weight must be positive")


EASY_MIX = (
    DifficultyBand("easy", 2, 3, weight=0.5),
    DifficultyBand("hard", 6, 8, weight=0.5),
)


@dataclass(frozen=True)
class SynthTaskSpec:
    name: str
    instance_count: int
    vocab_size: int
    seed: int
    num_layers: int = 8
    bands: tuple[DifficultyBand, ...] = EASY_MIX
    gold_match_rate: float = 0.9
    kind: str = "traces"            # "traces" or "tokens"
    pre_gap: tuple[float, float] = (0.02, 0.35)
    post_gap: tuple[float, float] = (0.62, 0.97)
    token_len_range: tuple[int, int] = (2, 8)

    def __post_init__(self):
        if self.instance_count < 1:
            raise InvalidInputError("instance_count must be >= 1")
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        if self.kind not in ("traces", "tokens"):
            raise InvalidInputError("kind must be 'traces' or 'tokens'")
        if not 0.0 <= self.gold_match_rate <= 1.0:
            raise InvalidInputError("gold_match_rate must lie in [0, 1]")
        if self.kind == "traces":
            if self.num_layers < 1:
                raise InvalidInputError("num_layers must be >= 1")
            for band in self.bands:
                if band.first_agreement_max > self.num_layers:
                    raise InvalidInputError(
                        f"band {band.name!r} exceeds num_layers {self.num_layers}"
                    )


def _draw_gap_top(rng, lo_hi):
    gap = float(rng.uniform(*lo_hi))
    # keep top + runner-up probabilities a valid sub-distribution
    top = gap + (1.0 - gap) * float(rng.uniform(0.05, 0.45))
    return gap, top


def _other_token(rng, vocab, avoid):
    t = int(rng.integers(0, vocab - 1))
    return t + 1 if t >= avoid else t


def synth_traces(spec: SynthTaskSpec) -> tuple[TraceHeader, list[TraceRecord]]:
    """Generate the trace corpus; byte-identical output for a fixed seed."""
    rng = np.random.default_rng(spec.seed)
    weights = np.array([b.weight for b in spec.bands], dtype=np.float64)
    weights /= weights.sum()
    L = spec.num_layers
    records = []
    for i in range(spec.instance_count):
        band = spec.bands[int(rng.choice(len(spec.bands), p=weights))]
        agree_at = int(rng.integers(band.first_agreement_min, band.first_agreement_max + 1))
        final_tok = int(rng.integers(0, spec.vocab_size))
        gold = final_tok if rng.uniform() < spec.gold_match_rate else \
            _other_token(rng, spec.vocab_size, final_tok)

        gap, top, ca, cm, ch, argmaxes = [], [], [], [], [], []
        for k in range(1, L + 1):
            post = k >= agree_at
            g, t = _draw_gap_top(rng, spec.post_gap if post else spec.pre_gap)
            gap.append(g)
            top.append(t)
            # sublayer churn settles as depth grows
            settle = 1.0 - 0.8 * np.exp(-(k - 1) / max(1.0, L / 3.0))
            noise = rng.uniform(-0.05, 0.05, size=3)
            ca.append(float(np.clip(settle + noise[0], -1.0, 1.0)))
            cm.append(float(np.clip(settle + noise[1], -1.0, 1.0)))
            ch.append(float(np.clip(settle + noise[2], -1.0, 1.0)))
            argmaxes.append(final_tok if post else _other_token(rng, spec.vocab_size, final_tok))
        records.append(TraceRecord(
            instance_id=f"{spec.name}-{i:05d}",
            task_tag=f"{spec.name}/{band.name}",
            num_layers=L,
            gap=gap, top_prob=top,
            cos_attn=ca, cos_mlp=cm, cos_hidden=ch,
            argmax_tokens=argmaxes,
            final_prediction=argmaxes[-1],
            gold_target=gold,
        ))
    header = TraceHeader(num_layers=L, vocab_size=spec.vocab_size,
                         model_id=f"synthetic/{spec.name}")
    return header, records


def synth_token_corpus(spec: SynthTaskSpec):
    """Copy-last token task: list of (tokens, gold) with gold = last token."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.token_len_range
    if not 1 <= lo <= hi:
        raise InvalidInputError("bad token_len_range")
    corpus = []
    for _ in range(spec.instance_count):
        length = int(rng.integers(lo, hi + 1))
        toks = rng.integers(0, spec.vocab_size, size=length)
        corpus.append((toks, int(toks[-1])))
    return corpus


def synth_tasks(spec: SynthTaskSpec):
    """Dispatch on spec.kind: trace corpus or token-task corpus."""
    if spec.kind == "tokens":
        return synth_token_corpus(spec)
    return synth_traces(spec)


def first_agreement_layer(record: TraceRecord) -> int:
    """Earliest layer whose argmax matches the final prediction and stays
    matched afterward; equals num_layers if only the last layer agrees."""
    labels = record.labels()
    k = record.num_layers
    while k > 1 and labels[k - 2] == 1:
        k -= 1
    return k
