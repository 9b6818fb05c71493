"""Synthetic task generation: determinism and generator-defined structure."""

import numpy as np
import pytest

from adainfer import DifficultyBand, InvalidInputError, SynthTaskSpec, synth_tasks
from adainfer.synth import first_agreement_layer, synth_traces
from adainfer.traces import write_trace_file


def spec(**kw):
    base = dict(name="t", instance_count=50, vocab_size=32, seed=7)
    base.update(kw)
    return SynthTaskSpec(**base)


def test_seed_determinism_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (p1, p2):
        header, records = synth_traces(spec())
        write_trace_file(p, header, records)
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seeds_differ():
    _, r1 = synth_traces(spec())
    _, r2 = synth_traces(spec(seed=8))
    assert any(a.argmax_tokens != b.argmax_tokens for a, b in zip(r1, r2))


def test_fixed_agreement_layer_pins_labels():
    band = (DifficultyBand("pinned", 3, 3),)
    _, records = synth_traces(spec(bands=band, num_layers=8))
    for rec in records:
        assert rec.labels() == [0, 0, 1, 1, 1, 1, 1, 1]


def test_easy_band_agrees_earlier_than_hard():
    _, records = synth_traces(spec(instance_count=400))
    easy = [first_agreement_layer(r) for r in records if r.task_tag.endswith("easy")]
    hard = [first_agreement_layer(r) for r in records if r.task_tag.endswith("hard")]
    assert easy and hard
    assert max(easy) < min(hard)
    assert np.mean(easy) < np.mean(hard)


def test_gold_match_rate_sets_dense_accuracy():
    _, records = synth_traces(spec(instance_count=2000, gold_match_rate=0.75, seed=1))
    dense_acc = np.mean([r.final_prediction == r.gold_target for r in records])
    assert dense_acc == pytest.approx(0.75, abs=0.03)


def test_gap_regimes_respected():
    s = spec()
    _, records = synth_traces(s)
    for rec in records:
        agree = first_agreement_layer(rec)
        for k in range(rec.num_layers):
            lo, hi = (s.post_gap if k + 1 >= agree else s.pre_gap)
            assert lo <= rec.gap[k] <= hi
            assert rec.gap[k] <= rec.top_prob[k] <= 1.0


def test_token_corpus_kind():
    corpus = synth_tasks(spec(kind="tokens", instance_count=20))
    assert len(corpus) == 20
    for toks, gold in corpus:
        assert gold == int(toks[-1])


def test_band_validation():
    with pytest.raises(InvalidInputError):
        DifficultyBand("bad", 5, 3)
    with pytest.raises(InvalidInputError):
        spec(bands=(DifficultyBand("deep", 2, 20),), num_layers=8)
    with pytest.raises(InvalidInputError):
        spec(instance_count=0)
