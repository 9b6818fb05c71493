"""Exporter acceptance: round-trip into the consumer harness, feature parity.

Consumer-side checks call the `adainfer` CLI in a subprocess; the exporter
itself never imports that package.
"""

import json
import os
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from adainfer_exporter import ExportConfig, capture

REPO_ROOT = pathlib.Path(__file__).resolve().parents[2]
CORE_SRC = REPO_ROOT / "src"
FIXTURES = pathlib.Path(__file__).resolve().parent / "fixtures"


def core_cli(*argv, cwd=None):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(CORE_SRC) + os.pathsep + env.get("PYTHONPATH", "")
    return subprocess.run([sys.executable, "-m", "adainfer.cli", *argv],
                          capture_output=True, text=True, env=env, cwd=cwd)


@pytest.fixture(scope="module")
def captured_trace(local_model_dir, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("roundtrip")
    prompts = tmp / "prompts.txt"
    prompts.write_text(
        "".join(f"prompt number {i} with some text\tx\n" for i in range(8)),
        encoding="utf-8",
    )
    out = tmp / "captured.jsonl"
    capture(ExportConfig(model_id=local_model_dir, prompts_path=str(prompts),
                         output_path=str(out), task_tag="roundtrip"))
    return out


def test_s1_round_trip_core_validation(captured_trace, tmp_path):
    """Captured traces pass consumer validation with zero violations and
    feed its dataset builder."""
    proc = core_cli("validate-trace", str(captured_trace))
    assert proc.returncode == 0, proc.stderr
    payload = json.loads(proc.stdout)
    assert payload["violations"] == []

    labeled = tmp_path / "labeled.jsonl"
    proc = core_cli("build-dataset", "--traces", str(captured_trace),
                    "--out", str(labeled))
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["examples"] == 8 * 4

    proc = core_cli("eval", "--traces", str(captured_trace),
                    "--decider", "oracle", "--format", "json")
    assert proc.returncode == 0, proc.stderr
    rep = json.loads(proc.stdout)
    assert rep["accuracy"] == rep["dense_accuracy"]
    print("ACCEPTANCE PASS [S1] captured traces: zero consumer violations, "
          f"{rep['instance_count']} instances replayed")


def test_s2_feature_parity_fixture():
    """Exporter-computed features match the consumer-computed fixture
    within 1e-5 on every layer and field."""
    from adainfer_exporter.featureops import layer_features, softmax

    fx = json.loads((FIXTURES / "feature_parity.json").read_text())
    prev = None
    worst = 0.0
    for vec, want in zip(fx["vectors"], fx["expected"]):
        attn = np.array(vec["attn"])
        mlp = np.array(vec["mlp"])
        hidden = np.array(vec["hidden"])
        got = layer_features(softmax(np.array(vec["logits"])),
                             attn, mlp, hidden, prev)
        for field in ("gap", "top_prob", "cos_attn", "cos_mlp", "cos_hidden"):
            diff = abs(got[field] - want[field])
            worst = max(worst, diff)
            assert diff <= 1e-5, (want["layer_index"], field, diff)
        prev = (attn, mlp, hidden)
    print(f"ACCEPTANCE PASS [S2] feature parity worst |diff| {worst:.2e}")
