"""adainfer-exporter: per-layer probe capture for decoder-only causal LMs.

Hooks a pretrained model (gpt2, llama, or opt families), records each
block's last-token attention/MLP/hidden vectors plus LM-head logits, and
writes adainfer trace JSONL for offline exit-policy evaluation.
"""

from .capture import ExportConfig, capture, render_prompt
from .errors import ConfigError, ExporterError, ModelLoadError, SchemaError
from .schema import validate_trace, write_trace

__version__ = "0.1.0"
