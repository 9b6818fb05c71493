"""Exit deciders: one binary stop/continue decision per decoder layer.

Decision conventions are fixed for reproducibility: the SVM fires on
margin >= 0, the GAP rule fires on gap strictly greater than its
threshold, and CRF ties resolve toward label 0. Deciders are pure and
stateless; the per-instance feature prefix arrives in the context, so a
trained decider can serve many concurrent instances.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .crf import CrfHyperparams, CrfModel, crf_decode_prefix, crf_marginal_last
from .errors import InvalidInputError
from .features import FeatureVector
from .svm import SvmHyperparams, SvmModel, svm_predict

DECIDER_FORMAT = "adainfer-decider"
DECIDER_VERSION = 1


@dataclass(frozen=True)
class GapRule:
    """Threshold rule: fire when gap exceeds the threshold strictly."""

    threshold: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidInputError("threshold must lie in [0, 1]")


def gap_rule_decide(rule: GapRule, fv: FeatureVector) -> int:
    return 1 if fv.gap > rule.threshold else 0


@dataclass(frozen=True)
class DecisionContext:
    """What a decider may look at when consulted at one layer."""

    layer_index: int
    feature: FeatureVector
    prefix: tuple[FeatureVector, ...]   # features for layers 1..layer_index
    argmax_token: int
    num_layers: int


class ExitDecider:
    name = "base"

    def decide(self, ctx: DecisionContext) -> bool:
        raise NotImplementedError


class AlwaysDense(ExitDecider):
    """Never fires; the run uses every layer."""

    name = "always-dense"

    def decide(self, ctx: DecisionContext) -> bool:
        return False


class ConstantExit(ExitDecider):
    """Fires at a fixed layer; diagnostic decider for cost experiments."""

    name = "constant-exit"

    def __init__(self, at_layer: int):
        if at_layer < 1:
            raise InvalidInputError("at_layer must be >= 1")
        self.at_layer = at_layer

    def decide(self, ctx: DecisionContext) -> bool:
        return ctx.layer_index >= self.at_layer


class OracleAgreement(ExitDecider):
    """Fires when the layer's argmax equals a known target token.

    Used with the dense prediction as target, this is the label oracle:
    exiting can then never change the prediction.
    """

    name = "oracle-agreement"

    def __init__(self, target_token: int):
        self.target_token = int(target_token)

    def decide(self, ctx: DecisionContext) -> bool:
        return ctx.argmax_token == self.target_token


class LabelOracle(ExitDecider):
    """Marker for the label-oracle policy: exit at the first layer whose
    argmax equals the dense prediction.

    The harness resolves this per instance (from the trace's final
    prediction, or a dense pass) into an OracleAgreement decider; it cannot
    decide on its own because the reference token is not part of the
    per-layer context.
    """

    name = "label-oracle"

    def decide(self, ctx: DecisionContext) -> bool:
        raise InvalidInputError(
            "LabelOracle must be resolved by the evaluation harness"
        )


class GapRuleDecider(ExitDecider):
    name = "gap-rule"

    def __init__(self, rule: GapRule):
        self.rule = rule

    def decide(self, ctx: DecisionContext) -> bool:
        return gap_rule_decide(self.rule, ctx.feature) == 1


class SvmDecider(ExitDecider):
    name = "svm"

    def __init__(self, model: SvmModel):
        self.model = model

    def decide(self, ctx: DecisionContext) -> bool:
        label, _ = svm_predict(self.model, ctx.feature)
        return label == 1


class CrfDecider(ExitDecider):
    """Prefix decoding: max-sum by default, marginal threshold behind a flag."""

    name = "crf"

    def __init__(self, model: CrfModel, mode: str = "viterbi",
                 marginal_threshold: float = 0.5):
        if mode not in ("viterbi", "marginal"):
            raise InvalidInputError("CRF decode mode must be viterbi or marginal")
        self.model = model
        self.mode = mode
        self.marginal_threshold = marginal_threshold

    def decide(self, ctx: DecisionContext) -> bool:
        if self.mode == "viterbi":
            return crf_decode_prefix(self.model, list(ctx.prefix)) == 1
        return crf_marginal_last(self.model, list(ctx.prefix)) >= self.marginal_threshold


def dataset_digest(examples_or_sequences) -> str:
    """Stable sha256 digest of training data, recorded in model files."""
    h = hashlib.sha256()
    h.update(repr(examples_or_sequences).encode("utf-8"))
    return h.hexdigest()[:16]


def save_decider(path, decider: ExitDecider, training_meta: dict | None = None) -> None:
    """Serialize a trained decider to versioned JSON."""
    payload: dict = {"format": DECIDER_FORMAT, "version": DECIDER_VERSION}
    if isinstance(decider, SvmDecider):
        m = decider.model
        payload.update({
            "kind": "svm",
            "feature_names": list(m.feature_names),
            "weights": [float(x) for x in m.weights],
            "bias": m.bias,
            "hyperparams": {
                "hinge_c": m.hyperparams.hinge_c, "epochs": m.hyperparams.epochs,
                "lr0": m.hyperparams.lr0, "seed": m.hyperparams.seed,
                "balance_classes": m.hyperparams.balance_classes,
                "schedule": m.hyperparams.schedule,
            },
            "training": dict(m.training_meta),
        })
    elif isinstance(decider, CrfDecider):
        m = decider.model
        payload.update({
            "kind": "crf",
            "feature_names": list(m.feature_names),
            "emit": [[float(x) for x in row] for row in m.emit],
            "emit_bias": [float(x) for x in m.emit_bias],
            "trans": [[float(x) for x in row] for row in m.trans],
            "start": [float(x) for x in m.start],
            "decode_mode": decider.mode,
            "marginal_threshold": decider.marginal_threshold,
            "hyperparams": None if m.hyperparams is None else {
                "epochs": m.hyperparams.epochs, "lr0": m.hyperparams.lr0,
                "l2": m.hyperparams.l2, "seed": m.hyperparams.seed,
            },
            "training": dict(m.training_meta),
        })
    elif isinstance(decider, GapRuleDecider):
        payload.update({"kind": "gap_rule", "threshold": decider.rule.threshold})
    elif isinstance(decider, AlwaysDense):
        payload.update({"kind": "always_dense"})
    else:
        raise InvalidInputError(f"cannot serialize decider {decider.name!r}")
    if training_meta:
        payload.setdefault("training", {}).update(training_meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_decider(path) -> ExitDecider:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != DECIDER_FORMAT:
        raise InvalidInputError(f"not a decider file: format {obj.get('format')!r}")
    if obj.get("version") != DECIDER_VERSION:
        raise InvalidInputError(f"unsupported decider version {obj.get('version')!r}")
    kind = obj.get("kind")
    if kind == "svm":
        hp = obj.get("hyperparams") or {}
        model = SvmModel(
            weights=np.array(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            feature_names=tuple(obj["feature_names"]),
            hyperparams=SvmHyperparams(**hp) if hp else SvmHyperparams(),
            training_meta=obj.get("training", {}),
        )
        return SvmDecider(model)
    if kind == "crf":
        hp = obj.get("hyperparams")
        model = CrfModel(
            emit=np.array(obj["emit"], dtype=np.float64),
            emit_bias=np.array(obj.get("emit_bias", [0.0, 0.0]), dtype=np.float64),
            trans=np.array(obj["trans"], dtype=np.float64),
            start=np.array(obj["start"], dtype=np.float64),
            feature_names=tuple(obj["feature_names"]),
            hyperparams=CrfHyperparams(**hp) if hp else None,
            training_meta=obj.get("training", {}),
        )
        return CrfDecider(model, mode=obj.get("decode_mode", "viterbi"),
                          marginal_threshold=float(obj.get("marginal_threshold", 0.5)))
    if kind == "gap_rule":
        return GapRuleDecider(GapRule(threshold=float(obj["threshold"])))
    if kind == "always_dense":
        return AlwaysDense()
    raise InvalidInputError(f"unknown decider kind {kind!r}")
