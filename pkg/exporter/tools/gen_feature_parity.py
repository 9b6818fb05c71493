"""Dev tool: regenerate tests/fixtures/feature_parity.json.

Builds random per-layer probe vectors (float32-rounded, like captured
data), computes the expected FeatureVectors with the consumer package, and
freezes both. Run from the repository root:

    PYTHONPATH=src python exporter/tools/gen_feature_parity.py
"""

import json
import pathlib

import numpy as np

from adainfer.features import extract_features
from adainfer.model import BlockSnapshot, softmax

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "feature_parity.json"

NUM_LAYERS = 4
HIDDEN = 8
VOCAB = 12


def f32_list(arr):
    return [float(np.float32(x)) for x in arr]


def main():
    rng = np.random.default_rng(1234)
    vectors = []
    snapshots = []
    for k in range(1, NUM_LAYERS + 1):
        attn = np.array(f32_list(rng.normal(size=HIDDEN)))
        mlp = np.array(f32_list(rng.normal(size=HIDDEN)))
        hidden = np.array(f32_list(rng.normal(size=HIDDEN)))
        logits = np.array(f32_list(rng.normal(size=VOCAB) * 3))
        vectors.append({"attn": list(attn), "mlp": list(mlp),
                        "hidden": list(hidden), "logits": list(logits)})
        snapshots.append(BlockSnapshot(
            layer_index=k, hidden_last=hidden, attn_last=attn, mlp_last=mlp,
            logits=logits, probs=softmax(logits)))

    expected = []
    prev = None
    for snap in snapshots:
        fv = extract_features(snap, prev)
        expected.append({
            "layer_index": fv.layer_index, "gap": fv.gap, "top_prob": fv.top_prob,
            "cos_attn": fv.cos_attn, "cos_mlp": fv.cos_mlp, "cos_hidden": fv.cos_hidden,
        })
        prev = snap

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(
        {"version": 1, "num_layers": NUM_LAYERS, "vectors": vectors,
         "expected": expected}, indent=1) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
