"""Exporter CLI: capture traces from a model, or validate a trace file.

Errors exit nonzero with {"error": {"category", "message"}} on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .capture import ExportConfig, capture
from .errors import ExporterError, SchemaError
from .schema import validate_trace

_EXIT_CODES = {"invalid-input": 2, "model-load": 3, "trace-format": 5}


def _cmd_capture(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if cfg.pop("version", 1) != 1:
        raise SchemaError("config version must be 1")
    config = ExportConfig(**cfg)
    path = capture(config)
    sys.stdout.write(json.dumps({"out": str(path)}) + "\n")
    return 0


def _cmd_validate(args) -> int:
    violations = validate_trace(args.path)
    sys.stdout.write(json.dumps(
        {"path": args.path, "violations": [str(v) for v in violations]}) + "\n")
    if violations:
        raise SchemaError(f"{len(violations)} violation(s) in {args.path}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="adainfer-export", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capture", help="hook a model and write trace JSONL")
    p.add_argument("--config", required=True, help="JSON ExportConfig")
    p.set_defaults(fn=_cmd_capture)

    p = sub.add_parser("validate", help="schema-check a trace file")
    p.add_argument("path")
    p.set_defaults(fn=_cmd_validate)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ExporterError as e:
        sys.stderr.write(json.dumps(
            {"error": {"category": e.category, "message": str(e)}}) + "\n")
        return _EXIT_CODES.get(e.category, 1)
    except OSError as e:
        sys.stderr.write(json.dumps(
            {"error": {"category": "io", "message": str(e)}}) + "\n")
        return 7


if __name__ == "__main__":
    sys.exit(main())
