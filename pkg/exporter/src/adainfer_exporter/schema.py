"""Trace JSONL v1 writing and validation.

Wire format (shared contract with the evaluation harness):

    line 1: {"format": "adainfer-trace", "version": 1,
             "num_layers": L, "vocab_size": V, "model_id": "..."}
    lines:  {"instance_id", "task_tag", "num_layers", "gap", "top_prob",
             "cos_attn", "cos_mlp", "cos_hidden", "argmax_tokens",
             "final_prediction", "gold_target"}

Floats are serialized at float32 precision. The validator mirrors the
consumer's checks: array lengths, value ranges with 1e-6 slack,
gap <= top_prob, token ids within the vocabulary, and final_prediction
equal to the last argmax entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

TRACE_FORMAT = "adainfer-trace"
TRACE_VERSION = 1
_SLACK = 1e-6

_FLOAT_FIELDS = ("gap", "top_prob", "cos_attn", "cos_mlp", "cos_hidden")
_LOW = {"gap": 0.0, "top_prob": 0.0, "cos_attn": -1.0, "cos_mlp": -1.0,
        "cos_hidden": -1.0}


def f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class Violation:
    line: int
    field: str
    message: str

    def __str__(self):
        return f"line {self.line}: {self.field}: {self.message}"


def write_trace(path, model_id: str, num_layers: int, vocab_size: int,
                records: list[dict]) -> None:
    header = {"format": TRACE_FORMAT, "version": TRACE_VERSION,
              "num_layers": num_layers, "vocab_size": vocab_size,
              "model_id": model_id}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            out = dict(rec)
            for name in _FLOAT_FIELDS:
                out[name] = [f32(x) for x in out[name]]
            fh.write(json.dumps(out) + "\n")


def validate_trace(path) -> list[Violation]:
    """All schema violations in the file; an empty list means valid."""
    bad: list[Violation] = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        return [Violation(0, "file", str(e))]
    with fh:
        first = fh.readline()
        if not first.strip():
            return [Violation(1, "header", "empty trace file")]
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            return [Violation(1, "header", f"invalid JSON: {e}")]
        if header.get("format") != TRACE_FORMAT or header.get("version") != TRACE_VERSION:
            return [Violation(1, "header", "wrong format/version")]
        L = header.get("num_layers")
        vocab = header.get("vocab_size")
        if not isinstance(L, int) or L < 1 or not isinstance(vocab, int) or vocab < 1:
            return [Violation(1, "header", "num_layers/vocab_size must be positive ints")]

        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                bad.append(Violation(line_no, "json", str(e)))
                continue
            bad.extend(_check(obj, L, vocab, line_no))
    return bad


def _check(obj: dict, L: int, vocab: int, line_no: int) -> list[Violation]:
    bad = []

    def err(field, msg):
        bad.append(Violation(line_no, field, msg))

    for name, typ in (("instance_id", str), ("task_tag", str),
                      ("num_layers", int), ("final_prediction", int)):
        if not isinstance(obj.get(name), typ) or isinstance(obj.get(name), bool):
            err(name, f"missing or not {typ.__name__}")
    if bad:
        return bad
    if obj["num_layers"] != L:
        err("num_layers", f"{obj['num_layers']} != header {L}")
        return bad
    for name in _FLOAT_FIELDS + ("argmax_tokens",):
        if not isinstance(obj.get(name), list) or len(obj[name]) != L:
            err(name, f"must be a list of length {L}")
    if bad:
        return bad
    for name in _FLOAT_FIELDS:
        vals = obj[name]
        if any(not isinstance(x, (int, float)) or isinstance(x, bool) for x in vals):
            err(name, "non-numeric entry")
        elif min(vals) < _LOW[name] - _SLACK or max(vals) > 1.0 + _SLACK:
            err(name, f"value outside [{_LOW[name]}, 1]")
    for g, t in zip(obj["gap"], obj["top_prob"]):
        if g > t + _SLACK:
            err("gap", f"gap {g} exceeds top_prob {t}")
            break
    for t in obj["argmax_tokens"]:
        if not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < vocab:
            err("argmax_tokens", "token id out of range")
            break
    if not bad and obj["final_prediction"] != obj["argmax_tokens"][-1]:
        err("final_prediction", "does not equal last argmax entry")
    gold = obj.get("gold_target")
    if gold is not None and (not isinstance(gold, int) or isinstance(gold, bool)
                             or not 0 <= gold < vocab):
        err("gold_target", "token id out of range")
    return bad
