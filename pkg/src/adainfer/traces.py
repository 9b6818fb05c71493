"""Trace interchange format: JSON Lines, one record per instance.

The first line is a header object::

    {"format": "adainfer-trace", "version": 1,
     "num_layers": L, "vocab_size": V, "model_id": "..."}

Every following line is one record with exactly these fields:

    instance_id     string
    task_tag        string
    num_layers      int, equal to the header's
    gap             list[float], length L, each in [0, 1]
    top_prob        list[float], length L, each in [0, 1], >= gap
    cos_attn        list[float], length L, each in [-1, 1]
    cos_mlp         list[float], length L, each in [-1, 1]
    cos_hidden      list[float], length L, each in [-1, 1]
    argmax_tokens   list[int],   length L, each in [0, vocab_size)
    final_prediction  int, equal to argmax_tokens[-1]
    gold_target     int or null

This file layout is the contract with external trace producers. Floats may
be written at float32 precision; readers take them as-is (range checks
allow 1e-6 slack).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import InvalidInputError, TraceFormatError
from .features import FeatureVector, ReferenceMode, extract_features

TRACE_FORMAT = "adainfer-trace"
TRACE_VERSION = 1

_SLACK = 1e-6


@dataclass(frozen=True)
class TraceHeader:
    num_layers: int
    vocab_size: int
    model_id: str
    format: str = TRACE_FORMAT
    version: int = TRACE_VERSION


@dataclass
class TraceRecord:
    instance_id: str
    task_tag: str
    num_layers: int
    gap: list[float]
    top_prob: list[float]
    cos_attn: list[float]
    cos_mlp: list[float]
    cos_hidden: list[float]
    argmax_tokens: list[int]
    final_prediction: int
    gold_target: int | None = None

    def features(self) -> list[FeatureVector]:
        return [
            FeatureVector(
                layer_index=k + 1,
                gap=min(max(self.gap[k], 0.0), 1.0),
                top_prob=min(max(self.top_prob[k], self.gap[k]), 1.0),
                cos_attn=min(max(self.cos_attn[k], -1.0), 1.0),
                cos_mlp=min(max(self.cos_mlp[k], -1.0), 1.0),
                cos_hidden=min(max(self.cos_hidden[k], -1.0), 1.0),
            )
            for k in range(self.num_layers)
        ]

    def labels(self, mode: ReferenceMode = ReferenceMode.FINAL_LAYER_AGREEMENT) -> list[int]:
        if mode is ReferenceMode.GOLD_ANSWER:
            if self.gold_target is None:
                raise InvalidInputError("trace has no gold_target")
            ref = self.gold_target
        else:
            ref = self.final_prediction
        return [1 if t == ref else 0 for t in self.argmax_tokens]


@dataclass(frozen=True)
class Violation:
    line: int
    field: str
    message: str

    def __str__(self):
        return f"line {self.line}: {self.field}: {self.message}"


def record_from_snapshots(instance_id: str, task_tag: str, snapshots,
                          gold_target: int | None = None) -> TraceRecord:
    """Serialize one instrumented forward pass into a TraceRecord."""
    if not snapshots:
        raise InvalidInputError("snapshots must be non-empty")
    feats, argmaxes = [], []
    prev = None
    for snap in snapshots:
        feats.append(extract_features(snap, prev))
        argmaxes.append(int(snap.probs.argmax()))
        prev = snap
    return TraceRecord(
        instance_id=instance_id,
        task_tag=task_tag,
        num_layers=len(snapshots),
        gap=[f.gap for f in feats],
        top_prob=[f.top_prob for f in feats],
        cos_attn=[f.cos_attn for f in feats],
        cos_mlp=[f.cos_mlp for f in feats],
        cos_hidden=[f.cos_hidden for f in feats],
        argmax_tokens=argmaxes,
        final_prediction=argmaxes[-1],
        gold_target=None if gold_target is None else int(gold_target),
    )


def write_trace_file(path, header: TraceHeader, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(asdict(header), sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def _check_record(obj: dict, header: TraceHeader, line: int) -> list[Violation]:
    bad = []

    def err(field, msg):
        bad.append(Violation(line=line, field=field, message=msg))

    for name, typ in (("instance_id", str), ("task_tag", str), ("num_layers", int),
                      ("final_prediction", int)):
        if not isinstance(obj.get(name), typ) or isinstance(obj.get(name), bool):
            err(name, f"missing or not {typ.__name__}")
    if bad:
        return bad
    L = header.num_layers
    if obj["num_layers"] != L:
        err("num_layers", f"{obj['num_layers']} != header num_layers {L}")
        return bad

    float_fields = ("gap", "top_prob", "cos_attn", "cos_mlp", "cos_hidden")
    for name in float_fields + ("argmax_tokens",):
        arr = obj.get(name)
        if not isinstance(arr, list) or len(arr) != L:
            err(name, f"must be a list of length {L}")
    if bad:
        return bad

    for name in float_fields:
        for x in obj[name]:
            if not isinstance(x, (int, float)) or isinstance(x, bool):
                err(name, "non-numeric entry")
                break
    if bad:
        return bad

    lo = {"gap": 0.0, "top_prob": 0.0, "cos_attn": -1.0, "cos_mlp": -1.0, "cos_hidden": -1.0}
    for name in float_fields:
        vals = obj[name]
        if min(vals) < lo[name] - _SLACK or max(vals) > 1.0 + _SLACK:
            err(name, f"value outside [{lo[name]}, 1]")
    for g, t in zip(obj["gap"], obj["top_prob"]):
        if g > t + _SLACK:
            err("gap", f"gap {g} exceeds top_prob {t}")
            break
    for t in obj["argmax_tokens"]:
        if not isinstance(t, int) or isinstance(t, bool) or not 0 <= t < header.vocab_size:
            err("argmax_tokens", "token id out of range")
            break
    if obj["final_prediction"] != obj["argmax_tokens"][-1]:
        err("final_prediction", "does not equal last argmax_tokens entry")
    gold = obj.get("gold_target")
    if gold is not None and (not isinstance(gold, int) or isinstance(gold, bool)
                             or not 0 <= gold < header.vocab_size):
        err("gold_target", "token id out of range")
    return bad


def _parse_header(first_line: str) -> TraceHeader:
    try:
        obj = json.loads(first_line)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"header is not valid JSON: {e}") from e
    if not isinstance(obj, dict) or obj.get("format") != TRACE_FORMAT:
        raise TraceFormatError(f"expected header format {TRACE_FORMAT!r}")
    if obj.get("version") != TRACE_VERSION:
        raise TraceFormatError(f"unsupported trace version {obj.get('version')!r}")
    for name in ("num_layers", "vocab_size"):
        if not isinstance(obj.get(name), int) or obj[name] < 1:
            raise TraceFormatError(f"header {name} must be a positive integer")
    return TraceHeader(
        num_layers=obj["num_layers"],
        vocab_size=obj["vocab_size"],
        model_id=str(obj.get("model_id", "")),
    )


def read_trace_file(path) -> tuple[TraceHeader, list[TraceRecord]]:
    """Strict reader: raises TraceFormatError on the first violation."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise TraceFormatError("empty trace file")
        header = _parse_header(first)
        records = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"line {line_no}: invalid JSON: {e}") from e
            bad = _check_record(obj, header, line_no)
            if bad:
                raise TraceFormatError(str(bad[0]))
            records.append(TraceRecord(
                instance_id=obj["instance_id"],
                task_tag=obj["task_tag"],
                num_layers=obj["num_layers"],
                gap=[float(x) for x in obj["gap"]],
                top_prob=[float(x) for x in obj["top_prob"]],
                cos_attn=[float(x) for x in obj["cos_attn"]],
                cos_mlp=[float(x) for x in obj["cos_mlp"]],
                cos_hidden=[float(x) for x in obj["cos_hidden"]],
                argmax_tokens=[int(t) for t in obj["argmax_tokens"]],
                final_prediction=int(obj["final_prediction"]),
                gold_target=obj.get("gold_target"),
            ))
    return header, records


def validate_trace_file(path) -> list[Violation]:
    """Collect all schema violations instead of raising; [] means valid."""
    violations = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
            if not first.strip():
                return [Violation(1, "header", "empty trace file")]
            try:
                header = _parse_header(first)
            except TraceFormatError as e:
                return [Violation(1, "header", str(e))]
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    violations.append(Violation(line_no, "json", str(e)))
                    continue
                violations.extend(_check_record(obj, header, line_no))
    except OSError as e:
        return [Violation(0, "file", str(e))]
    return violations
