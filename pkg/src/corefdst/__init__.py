"""Coreference-aware dialogue state tracking.

For every tracked domain-slot pair at every turn, a shared encoder with
per-slot heads classifies whether the slot is coreferred and extracts the
coreference value as a span over the dialogue context; qualifying values are
merged into a base tracker's belief states by rule.
"""

from .data import BeliefState, CorefLabel, Dialogue, Turn, normalize_text, normalize_value
from .encoding import EncodedExample, InputConfig, SamplingPolicy, batch_examples, build_input, decode_span_to_text
from .errors import CorefDstError
from .estimator import CorefStateTracker
from .evaluation import EvalReport, audit_dataset, evaluate_predictions, jga, per_slot_coref_accuracy, run_ablation
from .corpus import (
    attach_coref_annotations,
    char_span_to_token_span,
    coref_statistics,
    load_multiwoz,
)
from .model import (
    CorefPrediction,
    SlotHeads,
    TrackerModel,
    build_model,
    classify_slot_type,
    encode,
    joint_loss,
    load_checkpoint,
    predict_span,
    predict_turn,
    save_checkpoint,
)
from .ontology import DomainSlot, SlotInventory, load_inventory
from .tracker import MergeRule, apply_coref, track_dialogue
from .training import TrainConfig, TrainReport, evaluate_dev, train

__version__ = "0.1.0"

__all__ = [
    "BeliefState",
    "CorefDstError",
    "CorefLabel",
    "CorefPrediction",
    "CorefStateTracker",
    "Dialogue",
    "DomainSlot",
    "EncodedExample",
    "EvalReport",
    "InputConfig",
    "MergeRule",
    "SamplingPolicy",
    "SlotHeads",
    "SlotInventory",
    "TrackerModel",
    "TrainConfig",
    "TrainReport",
    "Turn",
    "apply_coref",
    "attach_coref_annotations",
    "audit_dataset",
    "batch_examples",
    "build_input",
    "build_model",
    "char_span_to_token_span",
    "classify_slot_type",
    "coref_statistics",
    "decode_span_to_text",
    "encode",
    "evaluate_dev",
    "evaluate_predictions",
    "jga",
    "joint_loss",
    "load_checkpoint",
    "load_inventory",
    "load_multiwoz",
    "normalize_text",
    "normalize_value",
    "per_slot_coref_accuracy",
    "predict_span",
    "predict_turn",
    "run_ablation",
    "save_checkpoint",
    "track_dialogue",
    "train",
]
