"""Acceptance gate: one test per release criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. Tolerances are fixed here, not tuned elsewhere.
"""

import itertools

import numpy as np
import pytest

from adainfer import (AlwaysDense, ConstantExit, CostParams, ExitPolicyConfig,
                      LabelOracle, SvmHyperparams, SynthTaskSpec, adainfer_forward,
                      block_flops, flops_ratio, forward_dense, kernels,
                      lm_head_flops, probe_overhead_fraction, pruning_ratio,
                      svm_train, total_dense_flops, truncated_forward)
from adainfer.costs import PRESET_PARAMS
from adainfer.crf import (CrfModel, crf_decode_prefix, log_partition,
                          loglik_and_grad, sequence_score, viterbi)
from adainfer.deciders import SvmDecider
from adainfer.features import DEFAULT_FEATURES, FeatureVector, LabeledExample, build_dataset
from adainfer.harness import (ModelSource, TraceSource, run_eval,
                              wall_clock_compare)
from adainfer.model import init_weights, layerwise_accuracy_sweep
from adainfer.synth import DifficultyBand, synth_traces
from adainfer import ModelConfig

from conftest import random_model, random_tokens


def _ok(tag, detail):
    print(f"ACCEPTANCE PASS [{tag}] {detail}")


def test_a01_probe_overhead_fractions_reproduced():
    """Per-layer single-token probing cost fractions for the four reference
    geometries, within 5e-6 absolute, by formula and by first principles."""
    expected = {"llama2-7b": 0.000288, "llama2-13b": 0.000236,
                "llama2-70b": 0.000152, "opt-13b": 0.000367}
    for name, want in expected.items():
        p = PRESET_PARAMS[name]
        got = probe_overhead_fraction(p)
        assert abs(got - want) <= 5e-6, (name, got, want)
        independent = p.layers * lm_head_flops(p, tokens_probed=1) / total_dense_flops(p)
        assert abs(got - independent) <= 1e-15
    _ok("A01", "probe overhead fractions: "
        + ", ".join(f"{n}={probe_overhead_fraction(PRESET_PARAMS[n]):.6f}"
                    for n in expected))


def test_a02_pruning_ratio_table_derivation():
    """Mean-exit-layer to pruning-ratio conversion matches the published
    9.66 and 35.71 percent endpoints within 0.01 percentage points."""
    hi = 100 * pruning_ratio(20.57, 32)
    lo = 100 * pruning_ratio(28.91, 32)
    assert abs(hi - 35.71) <= 0.01, hi
    assert abs(lo - 9.66) <= 0.01, lo
    _ok("A02", f"pruning ratios 20.57->{hi:.4f}%, 28.91->{lo:.4f}%")


def test_a03_flops_identity_suite():
    """flops_ratio(l, p) == 1 on 1000 random draws; dense total is exactly
    layers * block + full-sequence head."""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = CostParams(batch=int(rng.integers(1, 8)),
                       seq_len=int(rng.integers(1, 4096)),
                       hidden=int(rng.integers(1, 8192)),
                       layers=int(rng.integers(1, 128)),
                       vocab=int(rng.integers(2, 64000)))
        assert flops_ratio(p.layers, p) == 1.0
        assert total_dense_flops(p) == p.layers * block_flops(p) + lm_head_flops(
            p, tokens_probed=p.seq_len)
    _ok("A03", "1000 random parameter draws: ratio identity and dense "
               "decomposition exact")


def test_a04_oracle_safety(toy4_model, toy4_eval_corpus):
    """Label-oracle exit accuracy equals dense accuracy exactly, on synthetic
    traces and on the trained toy model, with pruning > 0 on mixed corpora."""
    policy = ExitPolicyConfig(LabelOracle())
    checked = []
    for seed in (31, 32, 33):
        header, records = synth_traces(SynthTaskSpec(
            name=f"safety{seed}", instance_count=400, vocab_size=48, seed=seed))
        rep = run_eval(TraceSource(header, tuple(records)), policy)
        assert rep.accuracy == rep.dense_accuracy
        assert rep.pruning_ratio > 0.0
        checked.append(rep.pruning_ratio)

    weights, config = toy4_model
    rep = run_eval(ModelSource(tuple(toy4_eval_corpus), weights, config), policy)
    assert rep.accuracy == rep.dense_accuracy
    assert rep.pruning_ratio > 0.0
    checked.append(rep.pruning_ratio)
    _ok("A04", "oracle accuracy == dense on 3 trace corpora + toy model; "
               f"pruning ratios {[round(c, 3) for c in checked]}")


def test_a05_trained_svm_end_to_end():
    """SVM-gated exits on a 1000-instance mixed synthetic corpus: accuracy
    within 1 point of dense, pruning at least 10 percent."""
    _, train_records = synth_traces(SynthTaskSpec(
        name="e2e-train", instance_count=1000, vocab_size=64, seed=101))
    examples = [
        LabeledExample(features=f, label=lab)
        for rec in train_records
        for f, lab in zip(rec.features(), rec.labels())
    ]
    model = svm_train(examples, SvmHyperparams())

    header, eval_records = synth_traces(SynthTaskSpec(
        name="e2e-eval", instance_count=1000, vocab_size=64, seed=202))
    rep = run_eval(TraceSource(header, tuple(eval_records)),
                   ExitPolicyConfig(SvmDecider(model)))
    assert rep.accuracy >= rep.dense_accuracy - 0.01, (rep.accuracy, rep.dense_accuracy)
    assert rep.pruning_ratio >= 0.10, rep.pruning_ratio
    _ok("A05", f"svm acc {rep.accuracy:.4f} vs dense {rep.dense_accuracy:.4f}, "
               f"pruning {100 * rep.pruning_ratio:.2f}%")


def test_a06_crf_oracle_equivalence():
    """Partition function and prefix/full max-sum decisions match exhaustive
    enumeration on chains of length <= 8 over 200 random models."""
    rng = np.random.default_rng(7)

    def rand_fv(k):
        g = float(rng.uniform(0, 0.9))
        return FeatureVector(layer_index=k + 1, gap=g,
                             top_prob=min(1.0, g + float(rng.uniform(0.01, 0.1))),
                             cos_attn=0.0, cos_mlp=0.0, cos_hidden=0.0)

    for _ in range(200):
        model = CrfModel(emit=rng.normal(size=(2, 2)),
                         emit_bias=rng.normal(size=2),
                         trans=rng.normal(size=(2, 2)),
                         start=rng.normal(size=2),
                         feature_names=DEFAULT_FEATURES)
        n = int(rng.integers(1, 9))
        seq = [rand_fv(k) for k in range(n)]

        scores = {labels: sequence_score(model, seq, list(labels))
                  for labels in itertools.product((0, 1), repeat=n)}
        mx = max(scores.values())
        brute_logz = mx + np.log(sum(np.exp(s - mx) for s in scores.values()))
        brute_best = max(scores, key=scores.get)

        lz = log_partition(model, seq)
        assert abs(lz - brute_logz) <= 1e-9 * max(1.0, abs(brute_logz))
        labels, score = viterbi(model, seq)
        assert tuple(labels) == brute_best
        assert abs(score - scores[brute_best]) <= 1e-9 * max(1.0, abs(scores[brute_best]))

        for plen in range(1, n + 1):
            prefix_scores = {labels: sequence_score(model, seq[:plen], list(labels))
                             for labels in itertools.product((0, 1), repeat=plen)}
            want = max(prefix_scores, key=prefix_scores.get)[-1]
            assert crf_decode_prefix(model, seq[:plen]) == want
    _ok("A06", "200 random chains <= 8: partition 1e-9 relative, "
               "full+prefix decodes exact")


def test_a07_crf_gradient_check():
    """Analytic log-likelihood gradient vs central finite differences,
    1e-5 relative, on 3-layer chains."""
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(5):
        sequences = []
        for _s in range(3):
            seq = []
            for k in range(3):
                g = float(rng.uniform(0, 0.9))
                seq.append(FeatureVector(
                    layer_index=k + 1, gap=g,
                    top_prob=min(1.0, g + float(rng.uniform(0.01, 0.1))),
                    cos_attn=0.0, cos_mlp=0.0, cos_hidden=0.0))
            sequences.append((seq, [int(rng.integers(0, 2)) for _ in range(3)]))
        model = CrfModel(emit=rng.normal(size=(2, 2)), emit_bias=rng.normal(size=2),
                         trans=rng.normal(size=(2, 2)), start=rng.normal(size=2),
                         feature_names=DEFAULT_FEATURES)
        _, (ge, gb, gt, gs) = loglik_and_grad(model, sequences)
        eps = 1e-6
        for arr, grad in ((model.emit, ge), (model.emit_bias, gb),
                          (model.trans, gt), (model.start, gs)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                up = loglik_and_grad(model, sequences)[0]
                flat[idx] = orig - eps
                down = loglik_and_grad(model, sequences)[0]
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                rel = abs(numeric - gflat[idx]) / max(1.0, abs(numeric))
                worst = max(worst, rel)
                assert rel <= 1e-5
    _ok("A07", f"gradient check worst relative error {worst:.2e}")


def test_a08_never_fire_and_truncation_identities():
    """Never-fire policy reproduces the dense pass bit for bit, and full-depth
    truncation equals dense, over 100 random toy models."""
    rng = np.random.default_rng(9)
    for _ in range(100):
        config, weights = random_model(rng)
        toks = random_tokens(rng, config)
        outcome = adainfer_forward(toks, weights, config,
                                   ExitPolicyConfig(AlwaysDense()))
        pred, logits = forward_dense(toks, weights, config)
        assert outcome.predicted_token == pred
        assert outcome.exit_layer == config.num_layers
        assert outcome.exit_logits.tobytes() == logits.tobytes()
        t_pred, used = truncated_forward(toks, weights, config, config.num_layers)
        assert (t_pred, used) == (pred, config.num_layers)
    _ok("A08", "100 random models: never-fire == dense (bit-identical logits), "
               "truncated(L) == dense")


def test_a09_toy_observation_one_analogue(toy4_model, toy4_corpus, toy4_eval_corpus):
    """Trained copy-task model: an intermediate layer sits within 1 point of
    the final layer, and SVM gating exits early on >= 30 percent of instances
    while losing at most 2 points of accuracy."""
    weights, config = toy4_model
    sweep = layerwise_accuracy_sweep(toy4_eval_corpus, weights, config)
    final = sweep[-1]
    early_ok = [k for k in range(config.num_layers - 1)
                if abs(sweep[k] - final) <= 0.01 + 1e-12]
    assert early_ok, f"no early layer within 1 point: {sweep}"

    examples = build_dataset(toy4_corpus, weights, config)
    svm = svm_train(examples, SvmHyperparams())
    policy = ExitPolicyConfig(SvmDecider(svm))

    exits, hits, dense_hits = [], 0, 0
    for toks, gold in toy4_eval_corpus:
        outcome = adainfer_forward(toks, weights, config, policy)
        exits.append(outcome.exit_layer)
        hits += int(outcome.predicted_token == gold)
        dense_hits += int(forward_dense(toks, weights, config)[0] == gold)
    n = len(toy4_eval_corpus)
    early_fraction = sum(1 for e in exits if e < config.num_layers) / n
    acc, dense_acc = hits / n, dense_hits / n
    assert early_fraction >= 0.30, early_fraction
    assert acc >= dense_acc - 0.02, (acc, dense_acc)
    _ok("A09", f"sweep {[round(a, 3) for a in sweep]}; early exits on "
               f"{100 * early_fraction:.1f}% of instances, acc {acc:.4f} "
               f"vs dense {dense_acc:.4f}")


def test_a10_wall_clock_sanity():
    """Measured speedup > 1 when exiting at half depth; never-fire overhead
    within 5 percent of dense. Model size adapts to the active kernel backend
    so per-layer compute dominates Python dispatch on both."""
    if kernels.BACKEND == "c":
        config = ModelConfig(num_layers=8, hidden_size=64, num_heads=4,
                             vocab_size=96, max_seq_len=32)
        n_instances, seq_len = 30, 24
    else:
        config = ModelConfig(num_layers=6, hidden_size=192, num_heads=4,
                             vocab_size=128, max_seq_len=96)
        n_instances, seq_len = 12, 96
    weights = init_weights(config, seed=0)
    rng = np.random.default_rng(1)
    corpus = [(rng.integers(0, config.vocab_size, size=seq_len), 0)
              for _ in range(n_instances)]

    half = wall_clock_compare(corpus, weights, config,
                              ExitPolicyConfig(ConstantExit(config.num_layers // 2)),
                              warmup=1, repeats=3)
    assert half.speedup > 1.0, half

    dense_band = wall_clock_compare(corpus, weights, config,
                                    ExitPolicyConfig(AlwaysDense()),
                                    warmup=1, repeats=3)
    assert 0.95 <= dense_band.speedup <= 1.05, dense_band
    _ok("A10", f"backend={kernels.BACKEND}: exit-at-L/2 speedup "
               f"{half.speedup:.2f}x, never-fire ratio {dense_band.speedup:.3f}")
