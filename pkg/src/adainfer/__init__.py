"""adainfer: adaptive early-exit inference for decoder-only transformers.

Per-layer probing of a toy transformer, confidence features (gap, top
probability, sublayer cosines), classifier-gated early exit (linear SVM,
linear-chain CRF, or a gap threshold rule), an analytic FLOPs cost model,
and an evaluation harness over live models or stored trace files.
"""

from .costs import (CostParams, CostReport, block_flops, cost_report,
                    flops_ratio, lm_head_flops, probe_overhead_fraction,
                    pruning_ratio, total_dense_flops)
from .crf import CrfHyperparams, CrfModel, crf_decode_prefix, crf_train
from .deciders import (AlwaysDense, ConstantExit, CrfDecider, ExitDecider,
                       GapRule, GapRuleDecider, LabelOracle, OracleAgreement,
                       SvmDecider, gap_rule_decide, load_decider, save_decider)
from .errors import (AdaInferError, DegenerateDataError, DeciderError,
                     InvalidInputError, TraceFormatError, TrainingFailureError)
from .features import (FeatureVector, LabeledExample, ReferenceMode,
                       build_dataset, build_labels, cosine, extract_features,
                       feature_trajectory_report)
from .harness import (EvalReport, ModelSource, TraceSource, few_shot_prompt,
                      report_parse, report_render, run_eval, wall_clock_compare)
from .model import (BlockSnapshot, ModelConfig, ModelWeights, forward_dense,
                    forward_instrumented, init_weights, layerwise_accuracy_sweep,
                    lm_head, load_checkpoint, save_checkpoint, softmax)
from .runtime import (ExitPolicyConfig, InferenceOutcome, adainfer_forward,
                      truncated_forward)
from .svm import SvmHyperparams, SvmModel, svm_predict, svm_train
from .synth import DifficultyBand, SynthTaskSpec, synth_tasks
from .train import TrainHyperparams, make_copy_corpus, train_toy
from .traces import (TraceHeader, TraceRecord, read_trace_file,
                     record_from_snapshots, validate_trace_file,
                     write_trace_file)

__version__ = "0.1.0"
