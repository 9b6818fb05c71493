"""Command-line harness.

Subcommands: train-toy, sweep, synth, build-dataset, train-classifier,
eval, cost, export-report, validate-trace, bench-kernels. Commands take a
declarative JSON config file plus flag overrides; seeds live in the config
and are mandatory wherever randomness is involved. Errors exit nonzero
with a machine-readable category on stderr:

    {"error": {"category": "invalid-input", "message": "..."}}

Exit codes: 2 invalid-input, 3 degenerate-data, 4 training-failure,
5 trace-format, 6 decider, 7 io, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

import numpy as np

from . import kernels
from .costs import (CostParams, PRESET_PARAMS, block_flops, cost_report,
                    crf_cost_profile, lm_head_flops, probe_overhead_fraction,
                    svm_cost_profile, total_dense_flops)
from .crf import CrfHyperparams, crf_train
from .deciders import (AlwaysDense, ConstantExit, CrfDecider, ExitDecider,
                       GapRule, GapRuleDecider, LabelOracle, SvmDecider,
                       dataset_digest, load_decider, save_decider)
from .errors import (AdaInferError, DegenerateDataError, InvalidInputError,
                     TraceFormatError, TrainingFailureError)
from .features import (DEFAULT_FEATURES, FEATURE_NAMES, FeatureVector,
                       LabeledExample, ReferenceMode, feature_trajectory_report)
from .harness import (EvalReport, ExitPolicyConfig, ModelSource, TraceSource,
                      report_parse, report_render, run_eval,
                      wall_clock_compare, with_wall_clock)
from .model import (ModelConfig, init_weights, layerwise_accuracy_sweep,
                    load_checkpoint, save_checkpoint)
from .svm import SvmHyperparams, svm_train, svm_training_accuracy
from .synth import DifficultyBand, SynthTaskSpec, synth_tasks
from .train import TrainHyperparams, dataset_loss, make_copy_corpus, train_toy
from .traces import (TraceHeader, read_trace_file, validate_trace_file,
                     write_trace_file)

CORPUS_FORMAT = "adainfer-corpus"
LABELED_FORMAT = "adainfer-labeled"

_EXIT_CODES = {
    "invalid-input": 2,
    "degenerate-data": 3,
    "training-failure": 4,
    "trace-format": 5,
    "decider": 6,
    "io": 7,
}


def _load_config(path: str | None, require_seed: bool) -> dict:
    if path is None:
        if require_seed:
            raise InvalidInputError("--config is required (seeds are mandatory in config)")
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise InvalidInputError("config must be a JSON object")
    if obj.get("version") != 1:
        raise InvalidInputError("config must declare \"version\": 1")
    if require_seed and not isinstance(obj.get("seed"), int):
        raise InvalidInputError("config must declare an integer \"seed\"")
    return obj


def write_corpus(path, instances, vocab_size: int) -> None:
    payload = {
        "format": CORPUS_FORMAT,
        "version": 1,
        "vocab_size": vocab_size,
        "instances": [
            {"tokens": [int(t) for t in toks],
             "gold": None if gold is None else int(gold)}
            for toks, gold in instances
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_corpus(path):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != CORPUS_FORMAT or obj.get("version") != 1:
        raise InvalidInputError(f"{path}: not a v1 corpus file")
    return [(np.array(inst["tokens"], dtype=np.int64), inst.get("gold"))
            for inst in obj["instances"]]


def _resolve_decider(spec: str) -> ExitDecider:
    """Builtin names (dense, oracle, gap[:t], constant:k) or a model file."""
    if spec == "dense":
        return AlwaysDense()
    if spec == "oracle":
        return LabelOracle()
    if spec == "gap" or spec.startswith("gap:"):
        thr = float(spec.split(":", 1)[1]) if ":" in spec else 0.8
        return GapRuleDecider(GapRule(threshold=thr))
    if spec.startswith("constant:"):
        return ConstantExit(int(spec.split(":", 1)[1]))
    return load_decider(spec)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_train_toy(args) -> int:
    cfg = _load_config(args.config, require_seed=True)
    model_cfg = ModelConfig(**cfg["model"])
    task = cfg.get("task", {})
    if task.get("kind", "copy_last") != "copy_last":
        raise InvalidInputError(f"unknown task kind {task.get('kind')!r}")
    seed = args.seed if args.seed is not None else cfg["seed"]
    corpus = make_copy_corpus(
        n=task.get("instances", 256), config=model_cfg, seed=seed,
        min_len=task.get("min_len", 2), max_len=task.get("max_len"),
    )
    tr = cfg.get("train", {})
    hp = TrainHyperparams(
        epochs=args.epochs if args.epochs is not None else tr.get("epochs", 40),
        learning_rate=tr.get("learning_rate", 3e-3),
        seed=seed,
    )
    init = init_weights(model_cfg, seed)
    initial_loss = dataset_loss(corpus, init, model_cfg)
    weights = train_toy(corpus, model_cfg, hp, initial_weights=init)
    final_loss = dataset_loss(corpus, weights, model_cfg)
    save_checkpoint(args.out, weights, model_cfg, init_seed=seed)
    from .model import dataset_accuracy
    _emit({
        "checkpoint": args.out,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "train_accuracy": dataset_accuracy(corpus, weights, model_cfg),
        "epochs": hp.epochs,
        "seed": seed,
    })
    return 0


def _cmd_sweep(args) -> int:
    weights, config, _ = load_checkpoint(args.checkpoint)
    corpus = read_corpus(args.corpus)
    if any(gold is None for _, gold in corpus):
        raise InvalidInputError("sweep needs gold labels on every instance")
    accs = layerwise_accuracy_sweep(corpus, weights, config)
    if args.format == "csv":
        lines = ["layer,accuracy"] + [f"{i + 1},{a!r}" for i, a in enumerate(accs)]
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        _emit({"layer_accuracy": accs, "num_layers": config.num_layers})
    return 0


def _cmd_synth(args) -> int:
    cfg = _load_config(args.config, require_seed=True)
    bands = tuple(
        DifficultyBand(b["name"], b["min"], b["max"], b.get("weight", 1.0))
        for b in cfg.get("bands", [])
    )
    spec_kwargs = dict(
        name=cfg.get("name", "synth"),
        instance_count=cfg.get("instance_count", 100),
        vocab_size=cfg.get("vocab_size", 64),
        seed=cfg["seed"],
        kind=cfg.get("kind", "traces"),
        gold_match_rate=cfg.get("gold_match_rate", 0.9),
    )
    if cfg.get("num_layers") is not None:
        spec_kwargs["num_layers"] = cfg["num_layers"]
    if cfg.get("token_len_range") is not None:
        spec_kwargs["token_len_range"] = tuple(cfg["token_len_range"])
    if bands:
        spec_kwargs["bands"] = bands
    spec = SynthTaskSpec(**spec_kwargs)
    out = synth_tasks(spec)
    if spec.kind == "traces":
        header, records = out
        write_trace_file(args.out, header, records)
        _emit({"out": args.out, "records": len(records), "kind": "traces"})
    else:
        write_corpus(args.out, out, spec.vocab_size)
        _emit({"out": args.out, "records": len(out), "kind": "tokens"})
    return 0


def _reference_mode(name: str) -> ReferenceMode:
    if name in ("final", "final-layer-agreement"):
        return ReferenceMode.FINAL_LAYER_AGREEMENT
    if name in ("gold", "gold-answer"):
        return ReferenceMode.GOLD_ANSWER
    raise InvalidInputError(f"unknown reference mode {name!r}")


def _labeled_rows_from_traces(header, records, mode: ReferenceMode):
    for rec in records:
        feats = rec.features()
        labels = rec.labels(mode)
        for fv, lab in zip(feats, labels):
            yield rec.instance_id, fv, lab


def _cmd_build_dataset(args) -> int:
    mode = _reference_mode(args.reference_mode)
    if args.traces:
        header, records = read_trace_file(args.traces)
        rows = list(_labeled_rows_from_traces(header, records, mode))
    else:
        if not (args.checkpoint and args.corpus):
            raise InvalidInputError("need --traces, or --checkpoint with --corpus")
        weights, config, _ = load_checkpoint(args.checkpoint)
        corpus = read_corpus(args.corpus)
        from .features import build_labels
        from .model import forward_instrumented
        from .traces import record_from_snapshots
        rows, trace_records = [], []
        for i, (tokens, gold) in enumerate(corpus):
            snaps = forward_instrumented(tokens, weights, config)
            examples = build_labels(snaps, mode, gold=gold)
            for ex in examples:
                rows.append((f"inst-{i:05d}", ex.features, ex.label))
            if args.traces_out:
                trace_records.append(record_from_snapshots(
                    f"inst-{i:05d}", "model-corpus", snaps, gold_target=gold))
        if args.traces_out:
            th = TraceHeader(num_layers=config.num_layers,
                             vocab_size=config.vocab_size, model_id=args.checkpoint)
            write_trace_file(args.traces_out, th, trace_records)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format": LABELED_FORMAT, "version": 1,
            "feature_names": list(FEATURE_NAMES),
            "reference_mode": mode.value,
        }) + "\n")
        for instance_id, fv, lab in rows:
            fh.write(json.dumps({
                "instance_id": instance_id,
                "layer_index": fv.layer_index,
                **{n: fv.value(n) for n in FEATURE_NAMES},
                "label": lab,
            }) + "\n")
    _emit({"out": args.out, "examples": len(rows)})
    return 0


def read_labeled(path) -> list[LabeledExample]:
    with open(path, "r", encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        if head.get("format") != LABELED_FORMAT or head.get("version") != 1:
            raise InvalidInputError(f"{path}: not a v1 labeled dataset")
        out = []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            fv = FeatureVector(
                layer_index=obj["layer_index"],
                **{n: obj[n] for n in FEATURE_NAMES},
            )
            out.append(LabeledExample(features=fv, label=obj["label"]))
    return out


def _cmd_train_classifier(args) -> int:
    cfg = _load_config(args.config, require_seed=args.kind != "gap")
    feature_names = tuple(cfg.get("features", DEFAULT_FEATURES))
    for n in feature_names:
        if n not in FEATURE_NAMES:
            raise InvalidInputError(f"unknown feature {n!r}")
    mode = _reference_mode(cfg.get("reference_mode", "final"))

    if args.kind == "gap":
        dec: ExitDecider = GapRuleDecider(GapRule(threshold=cfg.get("threshold", 0.8)))
        save_decider(args.out, dec)
        _emit({"out": args.out, "kind": "gap"})
        return 0

    if args.traces:
        header, records = read_trace_file(args.traces)
    else:
        raise InvalidInputError("--traces is required for svm/crf training")

    if args.kind == "svm":
        if args.labeled:
            examples = read_labeled(args.labeled)
        else:
            examples = [
                LabeledExample(features=fv, label=lab)
                for _, fv, lab in _labeled_rows_from_traces(header, records, mode)
            ]
        hp = SvmHyperparams(
            hinge_c=cfg.get("hinge_c", 10.0),
            epochs=cfg.get("epochs", 200),
            lr0=cfg.get("lr0", 0.5),
            seed=cfg["seed"],
            balance_classes=cfg.get("balance_classes", True),
        )
        model = svm_train(examples, hp, feature_names)
        model.training_meta["dataset_digest"] = dataset_digest(
            [(e.features, e.label) for e in examples])
        model.training_meta["seed"] = cfg["seed"]
        save_decider(args.out, SvmDecider(model))
        _emit({
            "out": args.out, "kind": "svm",
            "train_accuracy": svm_training_accuracy(model, examples),
            "final_objective": model.objective_history[-1],
            "examples": len(examples),
        })
        return 0

    if args.kind == "crf":
        sequences = [(rec.features(), rec.labels(mode)) for rec in records]
        hp = CrfHyperparams(
            epochs=cfg.get("epochs", 150),
            lr0=cfg.get("lr0", 0.5),
            l2=cfg.get("l2", 1e-4),
            seed=cfg["seed"],
        )
        model = crf_train(sequences, hp, feature_names)
        model.training_meta["dataset_digest"] = dataset_digest(
            [(s, tuple(l)) for s, l in sequences])
        model.training_meta["seed"] = cfg["seed"]
        save_decider(args.out, CrfDecider(model, mode=cfg.get("decode_mode", "viterbi")))
        _emit({
            "out": args.out, "kind": "crf",
            "final_loglik": model.loglik_history[-1],
            "sequences": len(sequences),
        })
        return 0

    raise InvalidInputError(f"unknown classifier kind {args.kind!r}")


def _cost_params_from(args, default: CostParams | None = None) -> CostParams | None:
    if args.cost_preset:
        return PRESET_PARAMS[args.cost_preset]
    if args.cost:
        return CostParams(**json.loads(args.cost))
    return default


def _cmd_eval(args) -> int:
    decider = _resolve_decider(args.decider)
    policy = ExitPolicyConfig(decider=decider, min_exit_layer=args.min_exit_layer)
    cost_params = _cost_params_from(args)
    if args.traces:
        if args.wall_clock:
            raise InvalidInputError("--wall-clock needs a model; trace replay has no timing")
        header, records = read_trace_file(args.traces)
        report = run_eval(TraceSource(header, tuple(records)), policy,
                          cost_params, task_tag=args.task_tag)
    else:
        if not (args.checkpoint and args.corpus):
            raise InvalidInputError("need --traces, or --checkpoint with --corpus")
        weights, config, _ = load_checkpoint(args.checkpoint)
        corpus = read_corpus(args.corpus)
        report = run_eval(ModelSource(tuple(corpus), weights, config), policy,
                          cost_params, task_tag=args.task_tag)
        if args.wall_clock:
            wc = wall_clock_compare(corpus, weights, config, policy,
                                    warmup=args.warmup, repeats=args.repeats)
            report = with_wall_clock(report, wc)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report_render(report, "json") + "\n")
    sys.stdout.write(report_render(report, args.format))
    if args.format == "json":
        sys.stdout.write("\n")
    return 0


def _cmd_cost(args) -> int:
    p = _cost_params_from(args)
    if p is None:
        raise InvalidInputError("need --cost-preset or --cost")
    if args.avg_exit_layer is not None:
        rep = cost_report(p, args.avg_exit_layer)
        payload = dataclasses.asdict(rep)
    else:
        payload = {
            "block_flops": block_flops(p),
            "lm_head_flops_full_seq": lm_head_flops(p, tokens_probed=p.seq_len),
            "lm_head_flops_one_token": lm_head_flops(p, tokens_probed=1),
            "total_dense_flops": total_dense_flops(p),
            "probe_overhead_fraction": probe_overhead_fraction(p),
        }
    payload["params"] = dataclasses.asdict(p)
    if args.classifier_profile:
        payload["classifier_profiles"] = {
            "svm": dataclasses.asdict(svm_cost_profile(args.train_size, args.feature_dim)),
            "crf": dataclasses.asdict(crf_cost_profile(
                args.train_size, args.feature_dim, p.layers)),
        }
    if args.format == "table":
        width = max(len(k) for k in payload if k != "params")
        for key, val in payload.items():
            if key in ("params", "classifier_profiles"):
                continue
            sys.stdout.write(f"{key:<{width}}  {val}\n")
    else:
        _emit(payload)
    return 0


def _cmd_export_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = report_parse(fh.read())
    sys.stdout.write(report_render(report, args.format))
    if args.format == "json":
        sys.stdout.write("\n")
    return 0


def _cmd_validate_trace(args) -> int:
    violations = validate_trace_file(args.path)
    _emit({"path": args.path, "violations": [str(v) for v in violations]})
    if violations:
        raise TraceFormatError(f"{len(violations)} violation(s) in {args.path}")
    return 0


def _cmd_trajectory(args) -> int:
    _, records = read_trace_file(args.traces)
    rows = feature_trajectory_report(records)
    cols = list(rows[0].keys())
    sys.stdout.write(",".join(cols) + "\n")
    for row in rows:
        sys.stdout.write(",".join(repr(row[c]) if isinstance(row[c], float)
                                  else str(row[c]) for c in cols) + "\n")
    return 0


def _cmd_bench_kernels(args) -> int:
    config = ModelConfig(num_layers=args.layers, hidden_size=args.hidden,
                         num_heads=args.heads, vocab_size=args.vocab,
                         max_seq_len=args.seq_len)
    weights = init_weights(config, seed=0)
    rng = np.random.default_rng(1)
    tokens = [rng.integers(0, args.vocab, size=args.seq_len) for _ in range(args.instances)]
    block_times = {}
    probe_times = {}
    for name in kernels.available_backends():
        K = kernels.get_backend(name)
        from .model import _layer_args, embed_tokens, validate_tokens
        streams = [embed_tokens(validate_tokens(t, config), weights) for t in tokens]
        x = streams[0].copy()
        for lw in weights.layers:
            K.layer_forward(x, *_layer_args(lw), config.num_heads)
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            for base in streams:
                x = base.copy()
                for lw in weights.layers:
                    K.layer_forward(x, *_layer_args(lw), config.num_heads)
        block_times[name] = (time.perf_counter() - t0) / (
            args.repeats * args.instances * args.layers)

        # the probe path dominates adaptive-loop overhead, so time it apart
        hidden = x[-1].copy()
        probe_reps = max(200, args.repeats * 100)
        t0 = time.perf_counter()
        for _ in range(probe_reps):
            K.confidence_probe(hidden, weights.lnf_gain, weights.lnf_bias,
                               weights.head_w, weights.head_b, True)
        probe_times[name] = (time.perf_counter() - t0) / probe_reps

    payload = {
        "block_forward_seconds_per_layer": block_times,
        "confidence_probe_seconds": probe_times,
        "active_backend": kernels.BACKEND,
        "shape": {"hidden": args.hidden, "seq_len": args.seq_len,
                  "vocab": args.vocab, "layers": args.layers},
    }
    if len(block_times) == 2:
        payload["c_block_speedup_over_python"] = block_times["python"] / block_times["c"]
        payload["c_probe_speedup_over_python"] = probe_times["python"] / probe_times["c"]
    _emit(payload)
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adainfer", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the toy model on a synthetic token task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("sweep", help="layerwise accuracy sweep over a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("synth", help="generate synthetic traces or token tasks")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("build-dataset", help="labeled per-layer examples from traces or a model")
    p.add_argument("--traces")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--traces-out", dest="traces_out")
    p.add_argument("--reference-mode", dest="reference_mode", default="final")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_build_dataset)

    p = sub.add_parser("train-classifier", help="fit an exit decider from traces")
    p.add_argument("--kind", choices=("svm", "crf", "gap"), required=True)
    p.add_argument("--traces")
    p.add_argument("--labeled")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_classifier)

    p = sub.add_parser("eval", help="adaptive vs dense evaluation with metrics")
    p.add_argument("--traces")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--decider", required=True,
                   help="model file, or dense|oracle|gap[:t]|constant:k")
    p.add_argument("--min-exit-layer", dest="min_exit_layer", type=int, default=1)
    p.add_argument("--cost", help="inline JSON CostParams")
    p.add_argument("--cost-preset", dest="cost_preset", choices=sorted(PRESET_PARAMS))
    p.add_argument("--task-tag", dest="task_tag")
    p.add_argument("--wall-clock", dest="wall_clock", action="store_true")
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("cost", help="closed-form FLOPs quantities")
    p.add_argument("--cost", help="inline JSON CostParams")
    p.add_argument("--cost-preset", dest="cost_preset", choices=sorted(PRESET_PARAMS))
    p.add_argument("--avg-exit-layer", dest="avg_exit_layer", type=float)
    p.add_argument("--classifier-profile", dest="classifier_profile", action="store_true")
    p.add_argument("--train-size", dest="train_size", type=int, default=1000)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=2)
    p.add_argument("--format", choices=("table", "json"), default="json")
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("export-report", help="re-render a stored report")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=("table", "json", "csv"), required=True)
    p.set_defaults(fn=_cmd_export_report)

    p = sub.add_parser("validate-trace", help="schema-check a trace file")
    p.add_argument("path")
    p.set_defaults(fn=_cmd_validate_trace)

    p = sub.add_parser("trajectory", help="per-layer feature statistics as CSV")
    p.add_argument("--traces", required=True)
    p.set_defaults(fn=_cmd_trajectory)

    p = sub.add_parser("bench-kernels", help="compare compiled and numpy kernels")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=24)
    p.add_argument("--vocab", type=int, default=96)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--instances", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=_cmd_bench_kernels)

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AdaInferError as e:
        sys.stderr.write(json.dumps(
            {"error": {"category": e.category, "message": str(e)}}) + "\n")
        return _EXIT_CODES.get(e.category, 1)
    except OSError as e:
        sys.stderr.write(json.dumps(
            {"error": {"category": "io", "message": str(e)}}) + "\n")
        return _EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
