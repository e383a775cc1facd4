"""Pattern-based auto-pruning for small dense networks.

Pipeline: a model IR with masked forward and exact MAC accounting, a
pattern library over kernel-shaped binary masks, a graph view of the
network consumed by an attention-based encoder, and a clipped
policy-gradient agent that searches per-operator pattern assignments
under FLOPs and accuracy constraints.
"""

__version__ = "0.1.0"

from .tensor import Tensor, backward, no_grad
from .modelir import (FlopsReport, ModelIR, OperatorSpec, count_flops,
                      evaluate_accuracy, fine_tune, forward, load_model,
                      save_model)
from .patterns import (Pattern, PatternAssignment, PatternLibrary,
                       apply_pruning, default_library, load_library,
                       sample_assignment, save_library)
from .demo import demo_cnn, demo_transformer
from .graph import DnnGraph, build_graph
from .encoder import EncoderConfig, encode, init_encoder_params
from .agent import (ConstraintSet, SearchConfig, SearchResult,
                    make_actor_critic, run_search)
from .datasets import load_cifar10, synth_dataset
from .config import RunConfig, load_config
from .report import Report, emit_report

__all__ = [
    "Tensor", "backward", "no_grad",
    "ModelIR", "OperatorSpec", "FlopsReport", "forward", "count_flops",
    "evaluate_accuracy", "fine_tune", "save_model", "load_model",
    "Pattern", "PatternLibrary", "PatternAssignment", "default_library",
    "save_library", "load_library", "sample_assignment", "apply_pruning",
    "demo_cnn", "demo_transformer",
    "DnnGraph", "build_graph",
    "EncoderConfig", "encode", "init_encoder_params",
    "SearchConfig", "ConstraintSet", "SearchResult", "make_actor_critic",
    "run_search",
    "synth_dataset", "load_cifar10",
    "RunConfig", "load_config", "Report", "emit_report",
]
