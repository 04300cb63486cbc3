"""Fine-tuning loop for the tracker: seeded shuffling, linear warmup/decay,
best-epoch checkpointing on the dev joint coreference metric."""

from __future__ import annotations

import copy
import hashlib
import json
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.optim.lr_scheduler import LambdaLR

from .errors import TrainingError
from .encoding import EncodedExample
from .model import (
    TYPE_COREF,
    TYPE_NONE,
    Batch,
    TrackerModel,
    build_model,
    collate,
    joint_loss,
    save_checkpoint,
)


@dataclass
class TrainConfig:
    """Training hyperparameters. Defaults follow the reference configuration
    for the medium-size pretrained encoder."""

    learning_rate: float = 1e-4
    max_seq_length: int = 512
    warmup_ratio: float = 0.1
    epochs: int = 10
    optimizer: str = "adam"
    batch_size: int = 2
    beta: float = 0.8
    seed: int = 13
    gradient_clip_norm: float | None = None
    encoder: str = "pretrained"  # {pretrained, tiny}
    pretrained_checkpoint: str = "google/bert_uncased_L-8_H-512_A-8"
    tiny_vocab_size: int = 8192
    tiny_hidden_size: int = 32
    tiny_num_layers: int = 2
    threshold: float = 0.5
    negative_ratio: float = 3.0
    mask_invalid_positions: bool = True
    decode_mode: str = "independent"  # {independent, joint}
    include_utterance: bool = True
    include_slot: bool = True
    context_order: str = "chronological"
    device: str = "cpu"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must be in [0, 1]")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.encoder not in ("pretrained", "tiny"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def input_config(self):
        from .encoding import InputConfig

        return InputConfig(
            max_seq_length=self.max_seq_length,
            include_utterance=self.include_utterance,
            include_slot=self.include_slot,
            context_order=self.context_order,
        )


def warmup_linear_factor(step: int, total_steps: int, warmup_ratio: float) -> float:
    """LR multiplier: linear 0 -> 1 over floor(warmup_ratio * total) steps,
    then linear decay to 0 at `total_steps`."""
    warmup_steps = int(warmup_ratio * total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return step / warmup_steps
    if step >= total_steps:
        return 0.0
    if total_steps == warmup_steps:
        return 1.0
    return (total_steps - step) / (total_steps - warmup_steps)


@dataclass
class CorefMetrics:
    """Dev/eval metrics over encoded examples."""

    slot_type_accuracy: float
    span_exact_match: float
    joint_accuracy: float
    example_count: int
    span_example_count: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    mean_total_loss: float
    mean_slot_type_loss: float
    mean_span_loss: float
    dev_metrics: dict | None
    wall_clock_s: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    config_hash: str
    total_steps: int
    first_step_loss: float
    final_step_loss: float
    epoch_records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "total_steps": self.total_steps,
            "first_step_loss": self.first_step_loss,
            "final_step_loss": self.final_step_loss,
            "epoch_records": [r.to_dict() for r in self.epoch_records],
            "best_epoch": self.best_epoch,
        }

    def comparable_dict(self) -> dict:
        """Representation with timing removed, for determinism checks."""
        d = self.to_dict()
        for record in d["epoch_records"]:
            record.pop("wall_clock_s")
        return d


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _make_optimizer(model: TrackerModel, config: TrainConfig):
    params = [p for p in model.parameters() if p.requires_grad]
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate)
    return torch.optim.AdamW(params, lr=config.learning_rate)


def evaluate_examples(
    model: TrackerModel,
    examples: list[EncodedExample],
    pad_id: int,
    threshold: float = 0.5,
    mask_invalid_positions: bool = True,
    batch_size: int = 32,
) -> CorefMetrics:
    """Slot-type accuracy, span exact match (among gold-coref examples with a
    surviving antecedent), and the joint metric used for model selection."""
    if not examples:
        raise ValueError("cannot evaluate an empty example stream")
    model.eval()
    type_correct = 0
    span_total = 0
    span_correct = 0
    joint_correct = 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i : i + batch_size]
            batch = collate(chunk, model.heads, pad_id, mask_invalid_positions)
            output = model(batch)
            probs = torch.softmax(output.type_logits, dim=-1)
            start_logits = output.start_logits.masked_fill(~output.valid_mask, float("-inf"))
            end_logits = output.end_logits.masked_fill(~output.valid_mask, float("-inf"))
            for j, example in enumerate(chunk):
                predicted_coref = float(probs[j, TYPE_COREF]) >= threshold
                gold_coref = example.gold_slot_type == "coref"
                type_ok = predicted_coref == gold_coref
                type_correct += type_ok
                span_ok = True
                if example.gold_span is not None:
                    span_total += 1
                    m = len(example)
                    pred_span = (
                        _argmax_first(start_logits[j, :m]),
                        _argmax_first(end_logits[j, :m]),
                    )
                    span_ok = pred_span == example.gold_span
                    span_correct += span_ok
                joint_correct += type_ok and span_ok
    n = len(examples)
    return CorefMetrics(
        slot_type_accuracy=type_correct / n,
        span_exact_match=span_correct / span_total if span_total else 0.0,
        joint_accuracy=joint_correct / n,
        example_count=n,
        span_example_count=span_total,
    )


def _argmax_first(values: torch.Tensor) -> int:
    return int((values == values.max()).nonzero(as_tuple=False)[0, 0])


def train(
    train_examples: list[EncodedExample],
    dev_examples: list[EncodedExample] | None,
    config: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[TrackerModel, "TrainReport"]:
    """Optimize the joint loss over the training stream.

    Linear warmup over `warmup_ratio` of total steps, then linear decay.
    Checkpoints the epoch with the best dev joint metric (falling back to the
    final epoch when no dev stream is given). Deterministic under a fixed seed
    with the tiny encoder in single-worker mode.
    """
    from .ontology import load_inventory

    if not train_examples:
        raise TrainingError("empty training stream")
    seed_everything(config.seed)
    inventory = load_inventory()
    model, tokenizer = build_model(
        config.encoder,
        inventory.names,
        seed=config.seed,
        tiny_args={
            "vocab_size": config.tiny_vocab_size,
            "hidden_size": config.tiny_hidden_size,
            "num_layers": config.tiny_num_layers,
            "max_positions": config.max_seq_length,
        },
        pretrained_checkpoint=config.pretrained_checkpoint,
    )
    device = torch.device(config.device)
    model.to(device)

    steps_per_epoch = (len(train_examples) + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs
    optimizer = _make_optimizer(model, config)
    scheduler = LambdaLR(
        optimizer,
        lambda step: warmup_linear_factor(step, total_steps, config.warmup_ratio),
    )

    report = TrainReport(
        config_hash=config.config_hash(),
        total_steps=total_steps,
        first_step_loss=float("nan"),
        final_step_loss=float("nan"),
    )
    rng = random.Random(config.seed)
    best_metric = float("-inf")
    best_state: dict | None = None
    best_epoch: int | None = None
    step = 0
    for epoch in range(config.epochs):
        epoch_start = time.perf_counter()
        model.train()
        order = list(range(len(train_examples)))
        rng.shuffle(order)
        epoch_losses: list[dict[str, float]] = []
        for batch_start in range(0, len(order), config.batch_size):
            batch_examples = [train_examples[k] for k in order[batch_start : batch_start + config.batch_size]]
            batch = collate(
                batch_examples, model.heads, tokenizer.pad_id,
                config.mask_invalid_positions, device,
            )
            output = model(batch)
            loss = joint_loss(output, config.beta, batch.type_labels, batch.gold_spans)
            if not torch.isfinite(loss.total):
                raise TrainingError(
                    "non-finite loss at step "
                    f"{step}: {loss.to_floats()}; batch="
                    + str([(e.dialogue_id, e.turn_index, e.slot) for e in batch_examples])
                )
            optimizer.zero_grad()
            loss.total.backward()
            if config.gradient_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.gradient_clip_norm)
            optimizer.step()
            scheduler.step()
            losses = loss.to_floats()
            epoch_losses.append(losses)
            if step == 0:
                report.first_step_loss = losses["total"]
            report.final_step_loss = losses["total"]
            step += 1

        dev_metrics = None
        if dev_examples:
            metrics = evaluate_examples(
                model, dev_examples, tokenizer.pad_id,
                threshold=config.threshold,
                mask_invalid_positions=config.mask_invalid_positions,
            )
            dev_metrics = metrics.to_dict()
            if metrics.joint_accuracy > best_metric:
                best_metric = metrics.joint_accuracy
                best_state = copy.deepcopy(model.state_dict())
                best_epoch = epoch
        report.epoch_records.append(
            EpochRecord(
                epoch=epoch,
                mean_total_loss=float(np.mean([l["total"] for l in epoch_losses])),
                mean_slot_type_loss=float(np.mean([l["slot_type_loss"] for l in epoch_losses])),
                mean_span_loss=float(np.mean([l["span_loss"] for l in epoch_losses])),
                dev_metrics=dev_metrics,
                wall_clock_s=time.perf_counter() - epoch_start,
            )
        )

    if best_state is not None:
        model.load_state_dict(best_state)
        report.best_epoch = best_epoch
    else:
        report.best_epoch = config.epochs - 1

    if out_dir is not None:
        metadata = {
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "beta": config.beta,
            "threshold": config.threshold,
            "input_config": config.input_config().to_dict(),
            "best_epoch": report.best_epoch,
        }
        save_checkpoint(out_dir, model, tokenizer, metadata)
        (Path(out_dir) / "train_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    return model, report


def evaluate_dev(
    model: TrackerModel,
    dev_examples: list[EncodedExample],
    pad_id: int,
    threshold: float = 0.5,
    mask_invalid_positions: bool = True,
) -> CorefMetrics:
    """Dev-set coreference metrics for model selection."""
    return evaluate_examples(
        model, dev_examples, pad_id,
        threshold=threshold, mask_invalid_positions=mask_invalid_positions,
    )
