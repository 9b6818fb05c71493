"""The adaptive loop: advance one block, probe, ask the decider, bypass the rest.

Bypassing changes cost, never probe semantics: the prediction at exit layer
k always equals the argmax of snapshot k from a full instrumented pass on
the same input. A layer-evaluation counter backs the no-hidden-compute
guarantee.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .costs import CostParams, block_flops, lm_head_flops
from .deciders import AlwaysDense, DecisionContext, ExitDecider
from .errors import DeciderError, InvalidInputError
from .features import FeatureVector
from .model import (ModelConfig, ModelWeights, _layer_args, argmax_token,
                    embed_tokens, probe_hidden, softmax, validate_tokens)


@dataclass(frozen=True)
class ExitPolicyConfig:
    decider: ExitDecider
    min_exit_layer: int = 1

    def __post_init__(self):
        if self.min_exit_layer < 1:
            raise InvalidInputError("min_exit_layer must be >= 1")


@dataclass
class InferenceOutcome:
    predicted_token: int
    exit_layer: int
    features_used: tuple[FeatureVector, ...]
    flops_estimate: float
    wall_time: float
    layers_evaluated: int = field(default=0)
    exit_logits: np.ndarray | None = None

    def __post_init__(self):
        if len(self.features_used) != self.exit_layer:
            raise InvalidInputError("features_used must cover layers 1..exit_layer")


def adainfer_forward(tokens, weights: ModelWeights, config: ModelConfig,
                     policy: ExitPolicyConfig) -> InferenceOutcome:
    """Single-instance adaptive forward pass.

    Layers run strictly in order. From min_exit_layer on, the decider is
    consulted with that layer's features (the CRF variant sees the whole
    prefix); when it fires, remaining layers are skipped and the prediction
    is the exiting layer's probe argmax.
    """
    if policy.min_exit_layer > config.num_layers:
        raise InvalidInputError("min_exit_layer exceeds num_layers")
    toks = validate_tokens(tokens, config)
    t0 = time.perf_counter()

    x = embed_tokens(toks, weights)
    feats: list[FeatureVector] = []
    prev: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    layers_evaluated = 0
    exit_layer = config.num_layers
    predicted = -1

    exit_logits = None
    for li, lw in enumerate(weights.layers, start=1):
        attn_last, mlp_last = kernels.layer_forward(x, *_layer_args(lw), config.num_heads)
        layers_evaluated += 1
        hidden_last = x[-1].copy()
        predicted, p_top, p_second, exit_logits = kernels.confidence_probe(
            hidden_last, weights.lnf_gain, weights.lnf_bias,
            weights.head_w, weights.head_b, config.probe_final_norm,
        )
        if prev is None:
            cos_attn = cos_mlp = cos_hidden = 1.0
        else:
            cos_attn = kernels.cos_sim(attn_last, prev[0])
            cos_mlp = kernels.cos_sim(mlp_last, prev[1])
            cos_hidden = kernels.cos_sim(hidden_last, prev[2])
        fv = FeatureVector(
            layer_index=li, gap=p_top - p_second, top_prob=p_top,
            cos_attn=cos_attn, cos_mlp=cos_mlp, cos_hidden=cos_hidden,
        )
        feats.append(fv)
        prev = (attn_last, mlp_last, hidden_last)

        if li >= policy.min_exit_layer:
            ctx = DecisionContext(
                layer_index=li,
                feature=fv,
                prefix=tuple(feats),
                argmax_token=predicted,
                num_layers=config.num_layers,
            )
            try:
                fired = policy.decider.decide(ctx)
            except Exception as e:  # noqa: BLE001 - re-raise with layer context
                raise DeciderError(
                    f"decider {policy.decider.name!r} failed at layer {li}: {e}"
                ) from e
            if fired:
                exit_layer = li
                break

    wall = time.perf_counter() - t0
    p = CostParams(batch=1, seq_len=len(toks), hidden=config.hidden_size,
                   layers=config.num_layers, vocab=config.vocab_size)
    flops = exit_layer * (block_flops(p) + lm_head_flops(p, tokens_probed=1))
    outcome = InferenceOutcome(
        predicted_token=predicted,
        exit_layer=exit_layer,
        features_used=tuple(feats),
        flops_estimate=flops,
        wall_time=wall,
        layers_evaluated=layers_evaluated,
        exit_logits=exit_logits,
    )
    assert outcome.layers_evaluated == outcome.exit_layer
    if isinstance(policy.decider, AlwaysDense):
        assert outcome.exit_layer == config.num_layers
    return outcome


def truncated_forward(tokens, weights: ModelWeights, config: ModelConfig,
                      keep_layers: int) -> tuple[int, int]:
    """Static last-k truncation baseline: evaluate exactly keep_layers blocks
    and predict from that layer's probe. Returns (predicted token, layers used)."""
    if not 1 <= keep_layers <= config.num_layers:
        raise InvalidInputError(
            f"keep_layers must lie in [1, {config.num_layers}], got {keep_layers}"
        )
    toks = validate_tokens(tokens, config)
    x = embed_tokens(toks, weights)
    for lw in weights.layers[:keep_layers]:
        kernels.layer_forward(x, *_layer_args(lw), config.num_heads)
    logits = probe_hidden(x[-1].copy(), weights, config)
    return argmax_token(softmax(logits)), keep_layers
