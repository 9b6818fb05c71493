"""Closed-form FLOPs accounting for decoder-only transformer inference.

All quantities are exact over integers up to 2**53: inputs are Python ints,
arithmetic happens in unbounded ints, and only the final value is returned
as a float. Notation: batch size B, sequence length s, hidden size h, layer
count l, vocabulary size V.

* one decoder block forward: 24*B*s*h^2 + 4*B*s^2*h
* LM head over t probed tokens: 2*B*t*h*V
* dense total: 4*B*s*h*l*(6h + s) + 2*B*s*h*V, identically
  l * block + head(t = s)
* cost ratio of stopping after l' layers (head applied once):
  (2*l'*(6h + s) + V) / (2*l*(6h + s) + V)
* per-layer single-token probing adds 2*B*h*V per layer, a fraction
  V*l / (s * (2*l*(6h + s) + V)) of the dense total
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidInputError


@dataclass(frozen=True)
class CostParams:
    batch: int
    seq_len: int
    hidden: int
    layers: int
    vocab: int

    def __post_init__(self):
        for name in ("batch", "seq_len", "hidden", "layers", "vocab"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise InvalidInputError(f"{name} must be a positive integer")


# Reference geometries for published decoder-only models.
PRESET_PARAMS = {
    "llama2-7b": CostParams(batch=1, seq_len=2048, hidden=4096, layers=32, vocab=32000),
    "llama2-13b": CostParams(batch=1, seq_len=2048, hidden=5120, layers=40, vocab=32000),
    "llama2-70b": CostParams(batch=1, seq_len=2048, hidden=8192, layers=80, vocab=32000),
    "opt-13b": CostParams(batch=1, seq_len=2048, hidden=5120, layers=40, vocab=50272),
}


def block_flops(p: CostParams) -> float:
    """FLOPs for one decoder block over the full sequence."""
    b, s, h = p.batch, p.seq_len, p.hidden
    return float(24 * b * s * h * h + 4 * b * s * s * h)


def lm_head_flops(p: CostParams, tokens_probed: int) -> float:
    """FLOPs for the vocabulary projection of ``tokens_probed`` positions."""
    if not isinstance(tokens_probed, int) or tokens_probed < 1:
        raise InvalidInputError("tokens_probed must be a positive integer")
    return float(2 * p.batch * tokens_probed * p.hidden * p.vocab)


def total_dense_flops(p: CostParams) -> float:
    """All-layers forward cost: 4*B*s*h*l*(6h+s) + 2*B*s*h*V."""
    b, s, h, l, v = p.batch, p.seq_len, p.hidden, p.layers, p.vocab
    return float(4 * b * s * h * l * (6 * h + s) + 2 * b * s * h * v)


def flops_ratio(l_prime: float, p: CostParams) -> float:
    """Cost of stopping after l_prime layers relative to the dense run.

    l_prime may be fractional (an average exit depth); must satisfy
    0 < l_prime <= layers. Strictly increasing in l_prime and exactly 1.0
    at l_prime = layers.
    """
    if not 0 < l_prime <= p.layers:
        raise InvalidInputError(
            f"l_prime must lie in (0, {p.layers}], got {l_prime}"
        )
    s, h, l, v = p.seq_len, p.hidden, p.layers, p.vocab
    num = 2.0 * l_prime * (6 * h + s) + v
    den = float(2 * l * (6 * h + s) + v)
    return num / den


def probe_overhead_fraction(p: CostParams) -> float:
    """Fraction of the dense total spent on per-layer single-token probes.

    Equals (2*B*h*V*l) / total_dense_flops, which simplifies to
    V*l / (s * (2*l*(6h+s) + V)).
    """
    s, h, l, v = p.seq_len, p.hidden, p.layers, p.vocab
    return (v * l) / float(s * (2 * l * (6 * h + s) + v))


def pruning_ratio(avg_layers: float, num_layers: int) -> float:
    """Fraction of layer compute skipped: (L - avg exit layer) / L."""
    if num_layers < 1:
        raise InvalidInputError("num_layers must be >= 1")
    if not 0 < avg_layers <= num_layers:
        raise InvalidInputError(
            f"avg_layers must lie in (0, {num_layers}], got {avg_layers}"
        )
    return (num_layers - avg_layers) / num_layers


@dataclass(frozen=True)
class CostReport:
    block_flops: float
    lm_head_flops: float
    total_dense_flops: float
    adaptive_flops: float
    flops_ratio: float
    probe_overhead_fraction: float
    pruning_ratio: float

    def __post_init__(self):
        for name in ("block_flops", "lm_head_flops", "total_dense_flops",
                      "adaptive_flops", "probe_overhead_fraction"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if not 0.0 < self.flops_ratio <= 1.0:
            raise InvalidInputError("flops_ratio must lie in (0, 1]")
        if not 0.0 <= self.pruning_ratio < 1.0:
            raise InvalidInputError("pruning_ratio must lie in [0, 1)")


def cost_report(p: CostParams, avg_exit_layer: float) -> CostReport:
    """Assemble the report for a run whose mean exit depth is avg_exit_layer.

    Adaptive FLOPs compose the pieces: one block plus one single-token probe
    per evaluated layer. Decider arithmetic is treated as zero here; its
    complexity profile is reported symbolically (see ClassifierCostProfile).
    """
    bf = block_flops(p)
    probe = lm_head_flops(p, tokens_probed=1)
    return CostReport(
        block_flops=bf,
        lm_head_flops=lm_head_flops(p, tokens_probed=p.seq_len),
        total_dense_flops=total_dense_flops(p),
        adaptive_flops=avg_exit_layer * (bf + probe),
        flops_ratio=flops_ratio(avg_exit_layer, p),
        probe_overhead_fraction=probe_overhead_fraction(p),
        pruning_ratio=pruning_ratio(avg_exit_layer, p.layers),
    )


@dataclass(frozen=True)
class ClassifierCostProfile:
    """Symbolic train/predict complexity of a gating classifier."""

    kind: str
    train_size: int
    feature_dim: int
    chain_length: int
    label_count: int
    train_complexity: str
    predict_complexity: str

    def __post_init__(self):
        for name in ("train_size", "feature_dim", "chain_length", "label_count"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be a positive integer")


def svm_cost_profile(train_size: int, feature_dim: int) -> ClassifierCostProfile:
    return ClassifierCostProfile(
        kind="svm",
        train_size=train_size,
        feature_dim=feature_dim,
        chain_length=1,
        label_count=2,
        train_complexity="O(N^2 * d) to O(N^3 * d)",
        predict_complexity="O(d)",
    )


def crf_cost_profile(train_size: int, feature_dim: int,
                     chain_length: int, label_count: int = 2) -> ClassifierCostProfile:
    return ClassifierCostProfile(
        kind="crf",
        train_size=train_size,
        feature_dim=feature_dim,
        chain_length=chain_length,
        label_count=label_count,
        train_complexity="O(N * S * M)",
        predict_complexity="O(S * M)",
    )
