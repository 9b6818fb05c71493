"""Capture per-layer probes from a pretrained model into trace JSONL."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import ConfigError, ModelLoadError
from .featureops import layer_features, softmax
from .hooks import BlockCapture, plan_for
from .schema import write_trace

QA_BLOCK = "Q: {x}\nA: {y}\n\n"
QA_QUERY = "Q: {x}\nA:"


@dataclass(frozen=True)
class ExportConfig:
    model_id: str
    prompts_path: str
    output_path: str
    shots: int = 0
    shots_path: str | None = None
    max_instances: int = 1000
    probe_final_norm: bool = True
    task_tag: str = "export"
    gold_leading_space: bool = False

    def __post_init__(self):
        if self.shots < 0:
            raise ConfigError("shots must be >= 0")
        if self.max_instances < 1:
            raise ConfigError("max_instances must be >= 1")
        if self.shots > 0 and not self.shots_path:
            raise ConfigError("shots > 0 requires shots_path")


def render_prompt(examples, query: str) -> str:
    """The in-context template: Q/A blocks followed by the open query."""
    return "".join(QA_BLOCK.format(x=x, y=y) for x, y in examples) \
        + QA_QUERY.format(x=query)


def read_prompt_lines(path):
    """One instance per line; an optional gold answer follows a tab."""
    lines = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.rstrip("\n")
            if not raw.strip():
                continue
            if "\t" in raw:
                text, gold = raw.split("\t", 1)
                lines.append((text, gold))
            else:
                lines.append((raw, None))
    if not lines:
        raise ConfigError(f"{path}: no prompts found")
    return lines


def load_model(model_id: str):
    try:
        from transformers import AutoModelForCausalLM, AutoTokenizer
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModelForCausalLM.from_pretrained(model_id, dtype=torch.float32)
    except Exception as e:  # noqa: BLE001 - loading failures get context
        raise ModelLoadError(f"cannot load model {model_id!r}: {e}") from e
    model.eval()
    return model, tokenizer


def _gold_token_id(tokenizer, answer: str, leading_space: bool) -> int | None:
    text = (" " + answer) if leading_space else answer
    ids = tokenizer.encode(text, add_special_tokens=False)
    return int(ids[0]) if ids else None


def capture(config: ExportConfig) -> Path:
    """Run the capture loop; returns the written trace path.

    Instances are processed sequentially; each gets one forward pass with
    hooks collecting last-token attention/MLP/block outputs per layer, and
    the LM head (optionally behind the final normalization) probes every
    block's hidden state.
    """
    model, tokenizer = load_model(config.model_id)
    plan = plan_for(model)
    cap = BlockCapture(plan)

    shots = []
    if config.shots > 0:
        pairs = read_prompt_lines(config.shots_path)
        bad = [x for x, y in pairs[:config.shots] if y is None]
        if bad or len(pairs) < config.shots:
            raise ConfigError(
                f"shots_path must provide at least {config.shots} tab-separated pairs")
        shots = [(x, y) for x, y in pairs[:config.shots]]

    prompts = read_prompt_lines(config.prompts_path)[:config.max_instances]
    records = []
    try:
        for i, (text, gold_text) in enumerate(prompts):
            prompt = render_prompt(shots, text)
            enc = tokenizer(prompt, return_tensors="pt")
            cap.reset()
            with torch.no_grad():
                model(**enc)
            probes = cap.layer_probes(config.probe_final_norm)

            prev = None
            gap, top_prob, cos_attn, cos_mlp, cos_hidden, argmaxes = [], [], [], [], [], []
            for attn, mlp, hidden, logits in probes:
                feats = layer_features(softmax(logits), attn, mlp, hidden, prev)
                gap.append(feats["gap"])
                top_prob.append(feats["top_prob"])
                cos_attn.append(feats["cos_attn"])
                cos_mlp.append(feats["cos_mlp"])
                cos_hidden.append(feats["cos_hidden"])
                argmaxes.append(feats["argmax"])
                prev = (attn, mlp, hidden)

            gold = None
            if gold_text is not None:
                gold = _gold_token_id(tokenizer, gold_text, config.gold_leading_space)
            records.append({
                "instance_id": f"{config.task_tag}-{i:05d}",
                "task_tag": config.task_tag,
                "num_layers": len(probes),
                "gap": gap, "top_prob": top_prob,
                "cos_attn": cos_attn, "cos_mlp": cos_mlp, "cos_hidden": cos_hidden,
                "argmax_tokens": argmaxes,
                "final_prediction": argmaxes[-1],
                "gold_target": gold,
            })
    finally:
        cap.remove()

    vocab_size = int(model.get_output_embeddings().weight.shape[0])
    write_trace(config.output_path, config.model_id, len(plan.blocks),
                vocab_size, records)
    return Path(config.output_path)
