"""Feature extraction, labeling, and trajectory statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adainfer import (InvalidInputError, ReferenceMode, build_dataset,
                      build_labels, cosine, extract_features,
                      feature_trajectory_report)
from adainfer.features import FeatureVector, features_from_arrays, top_two
from adainfer.model import BlockSnapshot, softmax
from adainfer.synth import SynthTaskSpec, synth_traces
from adainfer.traces import TraceRecord


def snap(layer, probs, attn=None, mlp=None, hidden=None):
    probs = np.asarray(probs, dtype=np.float64)
    logits = np.log(np.maximum(probs, 1e-300))
    h = 4
    return BlockSnapshot(
        layer_index=layer,
        hidden_last=np.asarray(hidden if hidden is not None else np.ones(h), dtype=np.float64),
        attn_last=np.asarray(attn if attn is not None else np.ones(h), dtype=np.float64),
        mlp_last=np.asarray(mlp if mlp is not None else np.ones(h), dtype=np.float64),
        logits=logits,
        probs=softmax(logits),
    )


class TestCosine:
    def test_identical_vectors(self):
        u = np.array([1.0, 2.0, -3.0])
        assert abs(cosine(u, u) - 1.0) < 1e-12

    def test_antipodal(self):
        u = np.array([1.0, 2.0, -3.0])
        assert abs(cosine(u, -u) + 1.0) < 1e-12

    def test_hand_computed_45_degrees(self):
        # dot = 1, norms 1 and sqrt(2); cos = 1/sqrt(2)
        got = cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert abs(got - 0.7071067811865476) < 1e-12

    def test_zero_conventions(self):
        z = np.zeros(3)
        assert cosine(z, z) == 1.0
        assert cosine(z, np.ones(3)) == 0.0
        assert cosine(np.ones(3), z) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            cosine(np.zeros(3), np.zeros(4))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=16),
           st.integers(0, 2 ** 31))
    @settings(deadline=None, max_examples=80)
    def test_always_in_range(self, vals, seed):
        u = np.array(vals)
        v = np.random.default_rng(seed).normal(size=len(vals)) * 1e3
        assert -1.0 <= cosine(u, v) <= 1.0


class TestExtractFeatures:
    def test_one_hot_max_confidence(self):
        probs = np.zeros(6)
        probs[2] = 1.0
        fv = extract_features(snap(1, probs), None)
        assert fv.gap == pytest.approx(1.0, abs=1e-12)
        assert fv.top_prob == pytest.approx(1.0, abs=1e-12)

    def test_uniform_probs(self):
        fv = extract_features(snap(1, np.full(8, 1 / 8)), None)
        assert fv.gap == pytest.approx(0.0, abs=1e-12)
        assert fv.top_prob == pytest.approx(1 / 8, abs=1e-12)

    def test_direct_values(self):
        fv = extract_features(snap(1, [0.5, 0.3, 0.2]), None)
        assert fv.gap == pytest.approx(0.2, abs=1e-9)
        assert fv.top_prob == pytest.approx(0.5, abs=1e-9)

    def test_layer1_neutral_cosines(self):
        fv = extract_features(snap(1, [0.6, 0.4]), None)
        assert (fv.cos_attn, fv.cos_mlp, fv.cos_hidden) == (1.0, 1.0, 1.0)

    def test_layer1_embedding_reference_mode(self):
        hidden = np.array([1.0, 0.0, 0.0, 0.0])
        fv = extract_features(snap(1, [0.6, 0.4], hidden=hidden), None,
                              embedding_reference=np.array([1.0, 1.0, 0.0, 0.0]))
        assert fv.cos_attn == 0.0 and fv.cos_mlp == 0.0
        assert fv.cos_hidden == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_cosines_against_previous(self):
        prev = snap(1, [0.5, 0.5], attn=[1, 0, 0, 0], mlp=[0, 1, 0, 0], hidden=[1, 1, 0, 0])
        cur = snap(2, [0.9, 0.1], attn=[1, 0, 0, 0], mlp=[0, -1, 0, 0], hidden=[1, 0, 0, 0])
        fv = extract_features(cur, prev)
        assert fv.cos_attn == pytest.approx(1.0, abs=1e-12)
        assert fv.cos_mlp == pytest.approx(-1.0, abs=1e-12)
        assert fv.cos_hidden == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_missing_previous_beyond_layer1(self):
        with pytest.raises(InvalidInputError):
            extract_features(snap(2, [0.5, 0.5]), None)

    def test_top2_bookkeeping(self):
        # gap is exactly the stored top-2 difference; the runner-up
        # reconstructs from (top_prob, gap) to within one rounding step
        # ((a - b) + b == a is not an IEEE identity, so "exact" means
        # same-operation consistency, not algebraic round-tripping)
        rng = np.random.default_rng(0)
        for _ in range(200):
            probs = softmax(rng.normal(size=rng.integers(2, 30)))
            _, p1, p2 = top_two(probs)
            fv = features_from_arrays(1, probs, np.ones(2), np.ones(2), np.ones(2), None)
            assert fv.gap == p1 - p2
            assert fv.top_prob == p1
            assert abs((fv.top_prob - fv.gap) - p2) <= np.finfo(float).eps
            assert 0.0 <= fv.gap <= fv.top_prob

    def test_feature_vector_validation(self):
        with pytest.raises(InvalidInputError):
            FeatureVector(layer_index=1, gap=0.6, top_prob=0.5,
                          cos_attn=0.0, cos_mlp=0.0, cos_hidden=0.0)
        with pytest.raises(InvalidInputError):
            FeatureVector(layer_index=1, gap=0.1, top_prob=0.5,
                          cos_attn=1.5, cos_mlp=0.0, cos_hidden=0.0)


class TestBuildLabels:
    def _snaps(self, argmaxes, vocab=12):
        out = []
        for i, am in enumerate(argmaxes, start=1):
            probs = np.full(vocab, 0.3 / (vocab - 1))
            probs[am] = 0.7
            out.append(snap(i, probs))
        return out

    def test_final_layer_agreement_example(self):
        labels = [ex.label for ex in build_labels(self._snaps([5, 7, 7, 7]))]
        assert labels == [0, 1, 1, 1]

    def test_last_label_always_positive(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            argmaxes = list(rng.integers(0, 12, size=rng.integers(1, 6)))
            labels = build_labels(self._snaps(argmaxes))
            assert labels[-1].label == 1

    def test_non_monotone_labels_allowed(self):
        labels = [ex.label for ex in build_labels(self._snaps([3, 3, 9, 3]))]
        assert labels == [1, 1, 0, 1]

    def test_gold_mode(self):
        snaps = self._snaps([4, 2, 2])
        labels = [ex.label for ex in
                  build_labels(snaps, ReferenceMode.GOLD_ANSWER, gold=4)]
        assert labels == [1, 0, 0]

    def test_gold_mode_requires_gold(self):
        with pytest.raises(InvalidInputError):
            build_labels(self._snaps([1, 2]), ReferenceMode.GOLD_ANSWER)


class TestBuildDataset:
    def test_cardinality(self, tiny_config, tiny_weights):
        rng = np.random.default_rng(2)
        corpus = [(rng.integers(0, 16, size=3), None) for _ in range(3)]
        examples = build_dataset(corpus, tiny_weights, tiny_config)
        assert len(examples) == 3 * tiny_config.num_layers

    def test_empty_corpus_rejected(self, tiny_config, tiny_weights):
        with pytest.raises(InvalidInputError):
            build_dataset([], tiny_weights, tiny_config)

    def test_equals_concatenated_per_instance_labels(self, tiny_config, tiny_weights):
        from adainfer.model import forward_instrumented
        rng = np.random.default_rng(3)
        corpus = [(rng.integers(0, 16, size=4), None) for _ in range(4)]
        combined = build_dataset(corpus, tiny_weights, tiny_config)
        manual = []
        for toks, _ in corpus:
            manual.extend(build_labels(forward_instrumented(toks, tiny_weights, tiny_config)))
        assert combined == manual


class TestTrajectoryReport:
    def _trace(self, gaps, iid="t0"):
        L = len(gaps)
        return TraceRecord(
            instance_id=iid, task_tag="x", num_layers=L,
            gap=list(gaps), top_prob=[min(1.0, g + 0.1) for g in gaps],
            cos_attn=[0.5] * L, cos_mlp=[0.5] * L, cos_hidden=[0.5] * L,
            argmax_tokens=[0] * L, final_prediction=0, gold_target=0,
        )

    def test_single_trace_means_equal_values(self):
        rows = feature_trajectory_report([self._trace([0.1, 0.4, 0.8])])
        assert [r["gap_mean"] for r in rows] == pytest.approx([0.1, 0.4, 0.8])

    def test_two_trace_mean(self):
        rows = feature_trajectory_report(
            [self._trace([0.2, 0.4]), self._trace([0.4, 0.8], "t1")])
        assert [r["gap_mean"] for r in rows] == pytest.approx([0.3, 0.6])

    def test_linearly_increasing_gap_gives_monotone_means(self):
        rng = np.random.default_rng(4)
        traces = []
        for i in range(30):
            base = np.linspace(0.05, 0.9, 8) + rng.uniform(-0.03, 0.03, size=8)
            traces.append(self._trace(np.clip(base, 0.0, 0.9), f"t{i}"))
        rows = feature_trajectory_report(traces)
        means = [r["gap_mean"] for r in rows]
        assert all(b > a for a, b in zip(means, means[1:]))

    def test_mixed_layer_counts_rejected(self):
        with pytest.raises(InvalidInputError):
            feature_trajectory_report([self._trace([0.1, 0.2]), self._trace([0.1])])

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            feature_trajectory_report([])

    def test_generated_corpus_gap_rises_after_agreement(self):
        header, records = synth_traces(SynthTaskSpec(
            name="traj", instance_count=50, vocab_size=32, seed=9))
        rows = feature_trajectory_report(records)
        assert rows[-1]["gap_mean"] > rows[0]["gap_mean"]
