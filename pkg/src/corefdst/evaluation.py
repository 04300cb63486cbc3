"""Scoring: joint goal accuracy, coreference metrics, ablations, corpus audit.

Joint goal accuracy counts a turn as correct only when the predicted belief
state matches gold on every slot after value normalization; "none" and absent
are treated as equal. Per-slot coreference accuracy is value exact-match over
the gold coreference instances of each slot.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .data import BeliefState, Dialogue, normalize_value
from .errors import EvaluationError
from .ontology import UNFILLED, SlotInventory
from .tracker import MergeRule, apply_coref_with_provenance

# Ablation matrix: configuration deltas applied on top of the base config.
ABLATIONS: list[tuple[str, dict]] = [
    ("full", {}),
    ("-uttr", {"include_utterance": False}),
    ("-uttr-slot", {"include_utterance": False, "include_slot": False}),
]


@dataclass
class EvalReport:
    jga: float
    slot_accuracy: float
    coref_slot_type_accuracy: float
    coref_span_exact_match: float
    per_slot_coref_accuracy: dict[str, float]
    turn_count: int
    config_hash: str = ""
    merge_policy: str = ""

    def to_dict(self) -> dict:
        return {
            "jga": self.jga,
            "slot_accuracy": self.slot_accuracy,
            "coref_slot_type_accuracy": self.coref_slot_type_accuracy,
            "coref_span_exact_match": self.coref_span_exact_match,
            "per_slot_coref_accuracy": dict(sorted(self.per_slot_coref_accuracy.items())),
            "turn_count": self.turn_count,
            "config_hash": self.config_hash,
            "merge_policy": self.merge_policy,
        }


def _normalized(state: BeliefState) -> dict[str, str]:
    return {name: normalize_value(name, value) for name, value in state.as_dict().items()}


def jga(predicted: list[BeliefState], gold: list[BeliefState]) -> float:
    """Fraction of turns whose predicted state matches gold on every slot."""
    if len(predicted) != len(gold):
        raise EvaluationError(
            f"prediction/gold length mismatch: {len(predicted)} vs {len(gold)}"
        )
    if not gold:
        raise EvaluationError("cannot score an empty turn sequence")
    correct = sum(_normalized(p) == _normalized(g) for p, g in zip(predicted, gold))
    return correct / len(gold)


def slot_accuracy(predicted: list[BeliefState], gold: list[BeliefState]) -> float:
    """Fraction of (turn, slot) pairs whose value matches gold."""
    if len(predicted) != len(gold):
        raise EvaluationError(
            f"prediction/gold length mismatch: {len(predicted)} vs {len(gold)}"
        )
    total = 0
    correct = 0
    for p, g in zip(predicted, gold):
        np_, ng = _normalized(p), _normalized(g)
        for name, gold_value in ng.items():
            total += 1
            correct += np_.get(name, UNFILLED) == gold_value
    if total == 0:
        raise EvaluationError("cannot score an empty turn sequence")
    return correct / total


def per_slot_coref_accuracy(
    predictions: Mapping[tuple[str, int], Mapping[str, Mapping]],
    dialogues: list[Dialogue],
) -> dict[str, float]:
    """Per-slot value exact-match over gold coreference instances.

    Slots with no gold instance are absent from the result.
    """
    totals: dict[str, int] = {}
    correct: dict[str, int] = {}
    for dialogue in dialogues:
        for turn in dialogue.turns:
            records = predictions.get((dialogue.dialogue_id, turn.turn_index), {})
            for label in turn.coref_labels:
                totals[label.slot] = totals.get(label.slot, 0) + 1
                record = records.get(label.slot)
                predicted_value = record["value"] if record else UNFILLED
                if normalize_value(label.slot, predicted_value) == normalize_value(label.slot, label.value):
                    correct[label.slot] = correct.get(label.slot, 0) + 1
    return {slot: correct.get(slot, 0) / n for slot, n in totals.items()}


def evaluate_predictions(
    dialogues: list[Dialogue],
    coref_predictions: Mapping[tuple[str, int], Mapping[str, Mapping]],
    inventory: SlotInventory,
    base_states: Mapping[tuple[str, int], BeliefState] | None = None,
    rule: MergeRule = MergeRule(),
    config_hash: str = "",
) -> tuple[EvalReport, dict[tuple[str, int], tuple[BeliefState, dict[str, str]]]]:
    """Merge coreference predictions over base states (empty base when none is
    given: the tracker evaluated standalone) and score against gold.

    Returns the report and the merged per-turn states with provenance.
    """
    merged: dict[tuple[str, int], tuple[BeliefState, dict[str, str]]] = {}
    predicted_states: list[BeliefState] = []
    gold_states: list[BeliefState] = []
    type_total = type_correct = 0
    span_total = span_correct = 0

    for dialogue in dialogues:
        for turn in dialogue.turns:
            key = (dialogue.dialogue_id, turn.turn_index)
            if base_states is None:
                base = BeliefState(inventory)
            elif key in base_states:
                base = base_states[key]
            else:
                raise EvaluationError(f"missing base prediction for {key}")
            records = coref_predictions.get(key, {})
            state, provenance = apply_coref_with_provenance(base, records, rule)
            merged[key] = (state, provenance)
            predicted_states.append(state)
            gold_states.append(turn.gold_state)

            labeled = {c.slot for c in turn.coref_labels}
            for slot in inventory:
                record = records.get(slot.name)
                predicted_positive = record is not None and record["p_coref"] >= rule.threshold
                type_total += 1
                type_correct += predicted_positive == (slot.name in labeled)
            for label in turn.coref_labels:
                record = records.get(label.slot)
                predicted_value = record["value"] if record else UNFILLED
                span_total += 1
                span_correct += (
                    normalize_value(label.slot, predicted_value)
                    == normalize_value(label.slot, label.value)
                )

    report = EvalReport(
        jga=jga(predicted_states, gold_states),
        slot_accuracy=slot_accuracy(predicted_states, gold_states),
        coref_slot_type_accuracy=type_correct / type_total if type_total else 0.0,
        coref_span_exact_match=span_correct / span_total if span_total else 0.0,
        per_slot_coref_accuracy=per_slot_coref_accuracy(coref_predictions, dialogues),
        turn_count=len(gold_states),
        config_hash=config_hash,
        merge_policy=rule.policy,
    )
    return report, merged


@dataclass
class AuditReport:
    split_sizes: dict[str, int]
    slot_count: int
    domain_count: int
    dialogue_count: int
    coref_dialogue_fraction: float
    coref_label_count: int
    distinct_coreferred_slots: int
    per_slot_coref_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split_sizes": dict(sorted(self.split_sizes.items())),
            "slot_count": self.slot_count,
            "domain_count": self.domain_count,
            "dialogue_count": self.dialogue_count,
            "coref_dialogue_fraction": self.coref_dialogue_fraction,
            "coref_label_count": self.coref_label_count,
            "distinct_coreferred_slots": self.distinct_coreferred_slots,
            "per_slot_coref_counts": dict(sorted(self.per_slot_coref_counts.items())),
        }


def audit_dataset(dialogues: list[Dialogue], inventory: SlotInventory) -> AuditReport:
    """Corpus statistics: split sizes, inventory size, coreference coverage."""
    from .corpus import coref_statistics

    split_sizes: dict[str, int] = {}
    for dialogue in dialogues:
        split_sizes[dialogue.split] = split_sizes.get(dialogue.split, 0) + 1
    stats = coref_statistics(dialogues)
    return AuditReport(
        split_sizes=split_sizes,
        slot_count=len(inventory),
        domain_count=len(inventory.domains),
        dialogue_count=stats.dialogue_count,
        coref_dialogue_fraction=stats.coref_dialogue_fraction,
        coref_label_count=stats.label_count,
        distinct_coreferred_slots=stats.distinct_coreferred_slots,
        per_slot_coref_counts=stats.per_slot_counts,
    )


def run_ablation(
    train_dialogues: list[Dialogue],
    dev_dialogues: list[Dialogue],
    eval_dialogues: list[Dialogue],
    base_config,
    inventory: SlotInventory,
    ablations: list[tuple[str, dict]] | None = None,
    out_dir: str | Path | None = None,
) -> list[tuple[str, EvalReport]]:
    """Train and evaluate one model per configuration delta.

    Each row trains from scratch with the delta applied to the base config and
    is scored standalone (coreference predictions merged into an empty base).
    """
    from .encoding import SamplingPolicy, batch_examples
    from .model import predict_corpus
    from .training import train

    if ablations is None:
        ablations = ABLATIONS
    elif not ablations:
        ablations = [("full", {})]

    rows = []
    for name, delta in ablations:
        config = replace(base_config, **delta)
        input_config = config.input_config()
        tokenizer = _tokenizer_for(config)
        sampling = SamplingPolicy(kind="balanced", negative_ratio=config.negative_ratio, seed=config.seed)
        train_stream = list(
            batch_examples(train_dialogues, inventory, input_config, tokenizer, sampling)
        )
        dev_stream = list(
            batch_examples(dev_dialogues, inventory, input_config, tokenizer)
        ) if dev_dialogues else None
        checkpoint_dir = Path(out_dir) / name if out_dir is not None else None
        model, _ = train(train_stream, dev_stream, config, checkpoint_dir)
        predictions = predict_corpus(
            eval_dialogues, model, tokenizer, input_config, inventory,
            threshold=config.threshold,
            mask_invalid_positions=config.mask_invalid_positions,
            decode_mode=config.decode_mode,
        )
        records = {
            key: {slot: p.to_record() for slot, p in preds.items()}
            for key, preds in predictions.items()
        }
        report, _ = evaluate_predictions(
            eval_dialogues, records, inventory,
            rule=MergeRule(threshold=config.threshold),
            config_hash=config.config_hash(),
        )
        rows.append((name, report))
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / f"eval_{name}.json").write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
            )
    return rows


def _tokenizer_for(config):
    from .tokenization import HashingWordTokenizer, PretrainedTokenizer

    if config.encoder == "tiny":
        return HashingWordTokenizer(vocab_size=config.tiny_vocab_size)
    return PretrainedTokenizer(config.pretrained_checkpoint)


def write_per_slot_csv(per_slot: dict[str, float], path: str | Path) -> None:
    """Per-slot coreference accuracy as CSV, one row per slot (bar-chart ready)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain_slot", "coref_accuracy"])
        for slot in sorted(per_slot):
            writer.writerow([slot, f"{per_slot[slot]:.4f}"])


def format_report_table(rows: list[tuple[str, EvalReport]]) -> str:
    """Human-readable comparison table for ablation rows."""
    header = f"{'config':<14} {'jga':>8} {'slot_acc':>9} {'type_acc':>9} {'span_em':>8} {'turns':>6}"
    lines = [header, "-" * len(header)]
    for name, report in rows:
        lines.append(
            f"{name:<14} {report.jga:>8.4f} {report.slot_accuracy:>9.4f} "
            f"{report.coref_slot_type_accuracy:>9.4f} {report.coref_span_exact_match:>8.4f} "
            f"{report.turn_count:>6d}"
        )
    return "\n".join(lines)
