"""Per-architecture hook points for decoder-only causal LMs.

For each supported family we capture, per decoder block and for the last
input position only:

* attn: the attention sublayer output (after the output projection,
  before its residual add)
* mlp:  the feed-forward sublayer output (after the down projection,
  before its residual add)
* hidden: the block output (the residual stream after the block)

Chosen hook modules per family:

* gpt2:  block.attn / block.mlp / block, final norm transformer.ln_f
* llama: layer.self_attn / layer.mlp / layer, final norm model.norm
* opt:   layer.self_attn / layer.fc2 / layer, final norm
         model.decoder.final_layer_norm
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ModelLoadError


@dataclass(frozen=True)
class HookPlan:
    blocks: list
    attn_of: callable
    mlp_of: callable
    final_norm: torch.nn.Module | None
    lm_head: torch.nn.Module


def plan_for(model) -> HookPlan:
    family = getattr(model.config, "model_type", None)
    if family == "gpt2":
        return HookPlan(
            blocks=list(model.transformer.h),
            attn_of=lambda b: b.attn,
            mlp_of=lambda b: b.mlp,
            final_norm=model.transformer.ln_f,
            lm_head=model.lm_head,
        )
    if family == "llama":
        return HookPlan(
            blocks=list(model.model.layers),
            attn_of=lambda b: b.self_attn,
            mlp_of=lambda b: b.mlp,
            final_norm=model.model.norm,
            lm_head=model.lm_head,
        )
    if family == "opt":
        decoder = model.model.decoder
        return HookPlan(
            blocks=list(decoder.layers),
            attn_of=lambda b: b.self_attn,
            mlp_of=lambda b: b.fc2,
            final_norm=getattr(decoder, "final_layer_norm", None),
            lm_head=model.lm_head,
        )
    raise ModelLoadError(
        f"unsupported architecture family {family!r}; supported: gpt2, llama, opt"
    )


def _tensor_of(out):
    return out[0] if isinstance(out, tuple) else out


class BlockCapture:
    """Forward hooks collecting last-token sublayer and block outputs."""

    def __init__(self, plan: HookPlan):
        self.plan = plan
        self.attn: list[torch.Tensor] = []
        self.mlp: list[torch.Tensor] = []
        self.hidden: list[torch.Tensor] = []
        self._handles = []
        for block in plan.blocks:
            self._handles.append(plan.attn_of(block).register_forward_hook(
                self._collector(self.attn)))
            self._handles.append(plan.mlp_of(block).register_forward_hook(
                self._collector(self.mlp)))
            self._handles.append(block.register_forward_hook(
                self._collector(self.hidden)))

    @staticmethod
    def _collector(bucket):
        def hook(_module, _inputs, output):
            bucket.append(_tensor_of(output)[0, -1, :].detach().to(torch.float32))
        return hook

    def reset(self):
        self.attn.clear()
        self.mlp.clear()
        self.hidden.clear()

    def remove(self):
        for h in self._handles:
            h.remove()

    def layer_probes(self, apply_final_norm: bool):
        """Per-layer (attn, mlp, hidden, logits) as float64 numpy arrays."""
        n = len(self.plan.blocks)
        if not (len(self.attn) == len(self.mlp) == len(self.hidden) == n):
            raise ModelLoadError(
                f"hook capture incomplete: got {len(self.hidden)} of {n} blocks"
            )
        out = []
        with torch.no_grad():
            for k in range(n):
                hidden = self.hidden[k]
                probe_in = hidden
                if apply_final_norm and self.plan.final_norm is not None:
                    probe_in = self.plan.final_norm(hidden.unsqueeze(0)).squeeze(0)
                logits = self.plan.lm_head(probe_in)
                out.append((
                    self.attn[k].numpy().astype("float64"),
                    self.mlp[k].numpy().astype("float64"),
                    hidden.numpy().astype("float64"),
                    logits.to(torch.float32).numpy().astype("float64"),
                ))
        return out
