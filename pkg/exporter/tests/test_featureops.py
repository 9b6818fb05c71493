"""Convention checks on the exporter-side feature math."""

import numpy as np

from adainfer_exporter.featureops import cosine, layer_features, softmax, top_two


def test_softmax_stable_and_normalized():
    out = softmax(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(out, [0.5, 0.5])
    assert abs(softmax(np.random.default_rng(0).normal(size=17)).sum() - 1.0) < 1e-12


def test_top_two_lowest_id_tie_break():
    am, p1, p2 = top_two(np.array([0.4, 0.4, 0.2]))
    assert am == 0
    assert p1 == p2 == 0.4


def test_cosine_conventions():
    z = np.zeros(3)
    assert cosine(z, z) == 1.0
    assert cosine(z, np.ones(3)) == 0.0
    u = np.array([1.0, 0.0])
    assert abs(cosine(u, np.array([1.0, 1.0])) - 1 / np.sqrt(2)) < 1e-12


def test_layer_one_neutral_cosines():
    probs = softmax(np.array([2.0, 1.0, 0.0]))
    feats = layer_features(probs, np.ones(4), np.ones(4), np.ones(4), prev=None)
    assert (feats["cos_attn"], feats["cos_mlp"], feats["cos_hidden"]) == (1.0, 1.0, 1.0)
    assert feats["gap"] <= feats["top_prob"]
