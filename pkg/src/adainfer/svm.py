"""Soft-margin linear SVM trained by deterministic subgradient descent.

Full-batch subgradient steps with halving on objective increase, so the
regularized objective is non-increasing by construction and runs are
reproducible without any seed sensitivity. Class imbalance (early layers
are mostly negative) is countered by inverse-frequency example weights,
on by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, InvalidInputError
from .features import DEFAULT_FEATURES, FeatureVector


@dataclass(frozen=True)
class SvmHyperparams:
    hinge_c: float = 10.0
    epochs: int = 200
    lr0: float = 0.5
    seed: int = 0
    balance_classes: bool = True
    schedule: str = "halving-on-increase"

    def __post_init__(self):
        if self.hinge_c <= 0 or self.lr0 <= 0 or self.epochs < 1:
            raise InvalidInputError("hinge_c, lr0 must be positive and epochs >= 1")


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    feature_names: tuple[str, ...]
    hyperparams: SvmHyperparams
    objective_history: tuple[float, ...] = ()
    hinge_history: tuple[float, ...] = ()
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights.shape != (len(self.feature_names),):
            raise InvalidInputError("weight length must match the feature mask")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise InvalidInputError("SVM parameters must be finite")


def _design_matrix(examples, feature_names):
    X = np.array([ex.features.as_array(feature_names) for ex in examples])
    y01 = np.array([ex.label for ex in examples], dtype=np.int64)
    return X, y01


def _objective(X, ysign, w, b, weights_per_example, hinge_c):
    margins = ysign * (X @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins)
    weighted_hinge = float((weights_per_example * hinge).sum() / weights_per_example.sum())
    return 0.5 * float(w @ w) + hinge_c * weighted_hinge, weighted_hinge


def svm_train(examples, hyperparams: SvmHyperparams = SvmHyperparams(),
              feature_names: tuple[str, ...] = DEFAULT_FEATURES) -> SvmModel:
    """Fit on LabeledExamples; raises DegenerateDataError unless both
    classes are present."""
    if not examples:
        raise DegenerateDataError("no training examples")
    X, y01 = _design_matrix(examples, feature_names)
    classes, counts = np.unique(y01, return_counts=True)
    if len(classes) < 2:
        raise DegenerateDataError(f"training data contains a single class ({classes[0]})")
    ysign = np.where(y01 == 1, 1.0, -1.0)

    n = len(examples)
    if hyperparams.balance_classes:
        per_class = {c: n / (2.0 * cnt) for c, cnt in zip(classes, counts)}
        ew = np.array([per_class[c] for c in y01])
    else:
        ew = np.ones(n)

    w = np.zeros(X.shape[1])
    b = 0.0
    eta = hyperparams.lr0
    obj, hinge = _objective(X, ysign, w, b, ew, hyperparams.hinge_c)
    obj_hist, hinge_hist = [obj], [hinge]
    wsum = ew.sum()

    for _ in range(hyperparams.epochs):
        margins = ysign * (X @ w + b)
        active = margins < 1.0
        coef = (ew * ysign * active) / wsum
        gw = w - hyperparams.hinge_c * (coef @ X)
        gb = -hyperparams.hinge_c * float(coef.sum())

        step = eta
        accepted = False
        for _try in range(40):
            w2 = w - step * gw
            b2 = b - step * gb
            obj2, hinge2 = _objective(X, ysign, w2, b2, ew, hyperparams.hinge_c)
            if obj2 <= obj:
                w, b, obj, hinge = w2, b2, obj2, hinge2
                eta = min(step * 2.0, hyperparams.lr0)
                accepted = True
                break
            step *= 0.5
        obj_hist.append(obj)
        hinge_hist.append(hinge)
        if not accepted:
            break

    return SvmModel(
        weights=w,
        bias=float(b),
        feature_names=tuple(feature_names),
        hyperparams=hyperparams,
        objective_history=tuple(obj_hist),
        hinge_history=tuple(hinge_hist),
        training_meta={
            "n_examples": n,
            "class_counts": {int(c): int(cnt) for c, cnt in zip(classes, counts)},
        },
    )


def svm_predict(model: SvmModel, fv: FeatureVector) -> tuple[int, float]:
    """(label, margin); fires (label 1) when the margin is >= 0."""
    x = fv.as_array(model.feature_names)
    margin = float(model.weights @ x + model.bias)
    return (1 if margin >= 0.0 else 0), margin


def svm_training_accuracy(model: SvmModel, examples) -> float:
    hits = sum(1 for ex in examples if svm_predict(model, ex.features)[0] == ex.label)
    return hits / len(examples)
