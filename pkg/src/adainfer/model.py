"""Toy decoder-only transformer with an instrumented, probe-per-layer forward pass.

The architecture is deliberately small and fixed: learned positional
embeddings, pre-norm residual blocks (causal multi-head attention + ReLU MLP),
a final layer normalization, and an affine LM head. Everything runs in
float64. What downstream code relies on is the probe contract: after every
block, the last token's hidden state, the two sublayer output vectors, and
the LM-head logits for that hidden state.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidInputError

CHECKPOINT_FORMAT = "adainfer-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the toy model.

    hidden_size must be divisible by num_heads, and vocab_size must be at
    least 2 (the gap feature needs a top-2). ``probe_final_norm`` controls
    whether per-layer probes apply the final layer normalization before the
    LM head; the layer-L probe defines the dense output either way.
    """

    num_layers: int
    hidden_size: int
    num_heads: int
    vocab_size: int
    max_seq_len: int
    mlp_expansion: int = 4
    probe_final_norm: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise InvalidInputError("num_layers must be >= 1")
        if self.hidden_size < 1 or self.num_heads < 1:
            raise InvalidInputError("hidden_size and num_heads must be positive")
        if self.hidden_size % self.num_heads != 0:
            raise InvalidInputError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2 (gap feature needs a top-2)")
        if self.max_seq_len < 1:
            raise InvalidInputError("max_seq_len must be >= 1")
        if self.mlp_expansion < 1:
            raise InvalidInputError("mlp_expansion must be >= 1")


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class ModelWeights:
    """All parameters, as float64 arrays.

    ``head_w`` is (V, h) applied as head_w @ hidden + head_b. Weights are
    treated as immutable after construction; forward passes never write to
    them, so they can be shared across concurrent per-instance evaluations.
    """

    embed: np.ndarray
    pos: np.ndarray
    layers: list[LayerWeights] = field(default_factory=list)
    lnf_gain: np.ndarray = None
    lnf_bias: np.ndarray = None
    head_w: np.ndarray = None
    head_b: np.ndarray = None

    def validate(self, config: ModelConfig) -> None:
        h, v, s = config.hidden_size, config.vocab_size, config.max_seq_len
        ff = config.mlp_expansion * h
        shapes = {
            "embed": (self.embed, (v, h)),
            "pos": (self.pos, (s, h)),
            "lnf_gain": (self.lnf_gain, (h,)),
            "lnf_bias": (self.lnf_bias, (h,)),
            "head_w": (self.head_w, (v, h)),
            "head_b": (self.head_b, (v,)),
        }
        if len(self.layers) != config.num_layers:
            raise InvalidInputError(
                f"expected {config.num_layers} layers, found {len(self.layers)}"
            )
        for i, lw in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo"):
                shapes[f"layer{i}.{name}"] = (getattr(lw, name), (h, h))
            shapes[f"layer{i}.w1"] = (lw.w1, (h, ff))
            shapes[f"layer{i}.w2"] = (lw.w2, (ff, h))
            for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
                shapes[f"layer{i}.{name}"] = (getattr(lw, name), (h,))
        for name, (arr, want) in shapes.items():
            if arr is None or arr.shape != want:
                raise InvalidInputError(f"{name}: expected shape {want}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name}: non-finite entries")


@dataclass
class BlockSnapshot:
    """Per-layer probe of the last sequence position.

    ``hidden_last`` is the residual stream after the block; ``attn_last`` and
    ``mlp_last`` are the sublayer outputs (post projection, before their
    residual adds). ``probs`` is softmax(logits).
    """

    layer_index: int
    hidden_last: np.ndarray
    attn_last: np.ndarray
    mlp_last: np.ndarray
    logits: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.layer_index < 1:
            raise InvalidInputError("layer_index is 1-based")
        if self.probs.min() < 0.0 or self.probs.max() > 1.0:
            raise InvalidInputError("probs entries must lie in [0, 1]")
        if abs(float(self.probs.sum()) - 1.0) > 1e-6:
            raise InvalidInputError("probs must sum to 1 within 1e-6")
        if not np.allclose(self.probs, softmax(self.logits), atol=1e-6):
            raise InvalidInputError("probs inconsistent with softmax(logits)")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax; preserves the argmax by construction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise InvalidInputError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def argmax_token(probs: np.ndarray) -> int:
    """Index of the largest entry; ties resolve to the lowest token id."""
    return int(np.argmax(probs))


def lm_head(hidden: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """The affine vocabulary map: head_w @ hidden + head_b (no normalization)."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 1 or hidden.shape[0] != weights.head_w.shape[1]:
        raise InvalidInputError(
            f"hidden has shape {hidden.shape}, head expects ({weights.head_w.shape[1]},)"
        )
    return weights.head_w @ hidden + weights.head_b


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Deterministic initialization from numpy's default_rng (PCG64).

    Gaussian(0, 0.02) for projections and embeddings, with the residual-add
    projections (wo, w2) scaled down by 1/sqrt(2 * num_layers).
    """
    rng = np.random.default_rng(seed)
    h, v, s = config.hidden_size, config.vocab_size, config.max_seq_len
    ff = config.mlp_expansion * h
    res_scale = 1.0 / np.sqrt(2.0 * config.num_layers)

    def g(shape, scale=0.02):
        return rng.normal(0.0, scale, size=shape)

    layers = []
    for _ in range(config.num_layers):
        layers.append(
            LayerWeights(
                wq=g((h, h)), wk=g((h, h)), wv=g((h, h)),
                wo=g((h, h), 0.02 * res_scale),
                w1=g((h, ff)), w2=g((ff, h), 0.02 * res_scale),
                ln1_gain=np.ones(h), ln1_bias=np.zeros(h),
                ln2_gain=np.ones(h), ln2_bias=np.zeros(h),
            )
        )
    w = ModelWeights(
        embed=g((v, h)),
        pos=g((s, h), 0.01),
        layers=layers,
        lnf_gain=np.ones(h),
        lnf_bias=np.zeros(h),
        head_w=g((v, h)),
        head_b=np.zeros(v),
    )
    w.validate(config)
    return w


def validate_tokens(tokens, config: ModelConfig) -> np.ndarray:
    arr = np.asarray(tokens)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("tokens must be a non-empty 1-d sequence")
    if arr.size > config.max_seq_len:
        raise InvalidInputError(
            f"sequence length {arr.size} exceeds max_seq_len {config.max_seq_len}"
        )
    if not np.issubdtype(arr.dtype, np.integer):
        raise InvalidInputError("token ids must be integers")
    if arr.min() < 0 or arr.max() >= config.vocab_size:
        raise InvalidInputError("token id out of range")
    return arr.astype(np.int64)


def embed_tokens(tokens: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Residual stream at depth 0: token embedding plus positional embedding."""
    s = tokens.shape[0]
    return np.ascontiguousarray(weights.embed[tokens] + weights.pos[:s])


def _layer_args(lw: LayerWeights):
    return (lw.wq, lw.wk, lw.wv, lw.wo, lw.w1, lw.w2,
            lw.ln1_gain, lw.ln1_bias, lw.ln2_gain, lw.ln2_bias)


def probe_hidden(hidden_last: np.ndarray, weights: ModelWeights,
                 config: ModelConfig) -> np.ndarray:
    """Logits for one last-token hidden state, honoring probe_final_norm."""
    return kernels.probe_logits(
        hidden_last, weights.lnf_gain, weights.lnf_bias,
        weights.head_w, weights.head_b, config.probe_final_norm,
    )


def forward_instrumented(tokens, weights: ModelWeights,
                         config: ModelConfig) -> list[BlockSnapshot]:
    """Full forward pass that probes every block.

    Returns exactly num_layers snapshots in layer order. Pure in (tokens,
    weights): repeated calls are bit-identical.
    """
    toks = validate_tokens(tokens, config)
    x = embed_tokens(toks, weights)
    snapshots = []
    for li, lw in enumerate(weights.layers, start=1):
        attn_last, mlp_last = kernels.layer_forward(x, *_layer_args(lw), config.num_heads)
        hidden_last = x[-1].copy()
        logits = probe_hidden(hidden_last, weights, config)
        snapshots.append(
            BlockSnapshot(
                layer_index=li,
                hidden_last=hidden_last,
                attn_last=attn_last,
                mlp_last=mlp_last,
                logits=logits,
                probs=softmax(logits),
            )
        )
    return snapshots


def forward_dense(tokens, weights: ModelWeights,
                  config: ModelConfig) -> tuple[int, np.ndarray]:
    """All-layers forward pass; returns (predicted token id, final logits).

    The prediction is the argmax of the layer-L probe with lowest-id
    tie-break, so it always equals the last snapshot of
    forward_instrumented.
    """
    toks = validate_tokens(tokens, config)
    x = embed_tokens(toks, weights)
    for lw in weights.layers:
        kernels.layer_forward(x, *_layer_args(lw), config.num_heads)
    logits = probe_hidden(x[-1].copy(), weights, config)
    return argmax_token(softmax(logits)), logits


def layerwise_accuracy_sweep(dataset, weights: ModelWeights,
                             config: ModelConfig) -> list[float]:
    """Accuracy of the layer-k probe argmax against gold, for every k.

    ``dataset`` is a list of (tokens, gold_token) pairs. The final entry is
    the dense accuracy by construction.
    """
    if not dataset:
        raise InvalidInputError("dataset must be non-empty")
    hits = np.zeros(config.num_layers, dtype=np.int64)
    for tokens, gold in dataset:
        if not 0 <= int(gold) < config.vocab_size:
            raise InvalidInputError(f"gold token {gold} out of range")
        for snap in forward_instrumented(tokens, weights, config):
            if argmax_token(snap.probs) == int(gold):
                hits[snap.layer_index - 1] += 1
    return [float(c) / len(dataset) for c in hits]


def dataset_accuracy(dataset, weights: ModelWeights, config: ModelConfig) -> float:
    """Dense (all-layers) accuracy on (tokens, gold) pairs."""
    if not dataset:
        raise InvalidInputError("dataset must be non-empty")
    hits = sum(
        1 for tokens, gold in dataset
        if forward_dense(tokens, weights, config)[0] == int(gold)
    )
    return hits / len(dataset)


# ---------------------------------------------------------------------------
# Checkpoint container: .npz with a JSON header entry
# ---------------------------------------------------------------------------

def save_checkpoint(path, weights: ModelWeights, config: ModelConfig,
                    init_seed: int | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(config),
        "init": {"prng": "numpy-default_rng-pcg64", "seed": init_seed},
    }
    arrays = {
        "embed": weights.embed, "pos": weights.pos,
        "lnf_gain": weights.lnf_gain, "lnf_bias": weights.lnf_bias,
        "head_w": weights.head_w, "head_b": weights.head_b,
    }
    for i, lw in enumerate(weights.layers):
        for name in ("wq", "wk", "wv", "wo", "w1", "w2",
                     "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            arrays[f"layer{i:03d}.{name}"] = getattr(lw, name)
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    ), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelWeights, ModelConfig, dict]:
    """Load a checkpoint; returns (weights, config, header)."""
    with np.load(path) as npz:
        try:
            header = json.loads(bytes(npz["__header__"]).decode("utf-8"))
        except KeyError:
            raise InvalidInputError("not a model checkpoint: missing header") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"unexpected checkpoint format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {header.get('version')!r}")
        config = ModelConfig(**header["config"])
        layers = []
        for i in range(config.num_layers):
            kw = {
                name: np.ascontiguousarray(npz[f"layer{i:03d}.{name}"], dtype=np.float64)
                for name in ("wq", "wk", "wv", "wo", "w1", "w2",
                             "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")
            }
            layers.append(LayerWeights(**kw))
        weights = ModelWeights(
            embed=np.ascontiguousarray(npz["embed"], dtype=np.float64),
            pos=np.ascontiguousarray(npz["pos"], dtype=np.float64),
            layers=layers,
            lnf_gain=np.ascontiguousarray(npz["lnf_gain"], dtype=np.float64),
            lnf_bias=np.ascontiguousarray(npz["lnf_bias"], dtype=np.float64),
            head_w=np.ascontiguousarray(npz["head_w"], dtype=np.float64),
            head_b=np.ascontiguousarray(npz["head_b"], dtype=np.float64),
        )
    weights.validate(config)
    return weights, config, header
