"""Belief-state bookkeeping: merging coreference predictions into base-tracker
states.

The base tracker owns cross-turn carryover; coreference predictions only edit
the current turn's state. Two merge policies are provided because the right
behavior is situational: "coref-overrides-base" (default; the coreference
model is specialized and fires rarely) and "coref-fills-empty-only".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .data import BeliefState, Dialogue
from .errors import LoadError, MergeError
from .ontology import UNFILLED, SlotInventory

POLICIES = ("coref-overrides-base", "coref-fills-empty-only")


@dataclass(frozen=True)
class MergeRule:
    policy: str = "coref-overrides-base"
    threshold: float = 0.5

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown merge policy {self.policy!r}")


def _as_record(prediction) -> dict:
    if hasattr(prediction, "to_record"):
        return prediction.to_record()
    return prediction


def apply_coref_with_provenance(
    base_state: BeliefState,
    coref_predictions: Mapping[str, object],
    rule: MergeRule,
) -> tuple[BeliefState, dict[str, str]]:
    """Merge qualifying coreference predictions into a copy of `base_state`.

    Returns the merged state and a per-slot provenance map {base, coref}.
    Inputs are never mutated.
    """
    base_slots = set(base_state.slot_names)
    unknown = set(coref_predictions) - base_slots
    if unknown:
        raise MergeError(f"coreference predictions for slots outside the inventory: {sorted(unknown)}")

    merged = base_state.copy()
    provenance = {name: "base" for name in base_state.slot_names}
    for slot_name, prediction in coref_predictions.items():
        record = _as_record(prediction)
        p_coref = record["p_coref"]
        value = record["value"]
        if p_coref < rule.threshold or value == UNFILLED:
            continue
        if rule.policy == "coref-fills-empty-only" and base_state.get(slot_name) != UNFILLED:
            continue
        merged = merged.with_value(slot_name, value)
        provenance[slot_name] = "coref"
    return merged, provenance


def apply_coref(
    base_state: BeliefState,
    coref_predictions: Mapping[str, object],
    rule: MergeRule,
) -> BeliefState:
    """Merged state only; see `apply_coref_with_provenance`."""
    merged, _ = apply_coref_with_provenance(base_state, coref_predictions, rule)
    return merged


def track_dialogue(
    dialogue: Dialogue,
    base_states: Mapping[int, BeliefState],
    coref_by_turn: Mapping[int, Mapping[str, object]],
    rule: MergeRule,
) -> list[BeliefState]:
    """One merged state per turn. Merging is strictly per-turn."""
    states = []
    for turn in dialogue.turns:
        if turn.turn_index not in base_states:
            raise MergeError(
                f"missing base prediction for {dialogue.dialogue_id} turn {turn.turn_index}"
            )
        predictions = coref_by_turn.get(turn.turn_index, {})
        states.append(apply_coref(base_states[turn.turn_index], predictions, rule))
    return states


def read_base_predictions(
    path: str | Path, inventory: SlotInventory
) -> dict[tuple[str, int], BeliefState]:
    """Read a base-tracker prediction file: JSON-lines records
    {dialogue_id, turn_index, state: {domain-slot: value}}."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"base prediction file not found: {path}")
    states: dict[tuple[str, int], BeliefState] = {}
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("_kind") == "header":
                continue
            key = (record["dialogue_id"], record["turn_index"])
            states[key] = BeliefState(inventory, record.get("state", {}))
    return states


def write_base_predictions(
    states: Mapping[tuple[str, int], BeliefState], path: str | Path, manifest_hash: str = ""
) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"_kind": "header", "manifest_hash": manifest_hash}, sort_keys=True) + "\n")
        for (dialogue_id, turn_index) in sorted(states):
            record = {
                "dialogue_id": dialogue_id,
                "turn_index": turn_index,
                "state": states[(dialogue_id, turn_index)].filled(),
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_coref_predictions(path: str | Path) -> dict[tuple[str, int], dict[str, dict]]:
    """Read a coreference prediction file: JSON-lines records
    {dialogue_id, turn_index, slots: {domain-slot: {p_coref, span, value}}}."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"coreference prediction file not found: {path}")
    predictions: dict[tuple[str, int], dict[str, dict]] = {}
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("_kind") == "header":
                continue
            predictions[(record["dialogue_id"], record["turn_index"])] = record["slots"]
    return predictions


def write_coref_predictions(
    predictions: Mapping[tuple[str, int], Mapping[str, object]],
    path: str | Path,
    manifest_hash: str = "",
) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"_kind": "header", "manifest_hash": manifest_hash}, sort_keys=True) + "\n")
        for (dialogue_id, turn_index) in sorted(predictions):
            slots = {
                name: _as_record(p)
                for name, p in predictions[(dialogue_id, turn_index)].items()
            }
            record = {"dialogue_id": dialogue_id, "turn_index": turn_index, "slots": slots}
            f.write(json.dumps(record, sort_keys=True) + "\n")


def write_merged_states(
    merged: Mapping[tuple[str, int], tuple[BeliefState, dict[str, str]]],
    path: str | Path,
    manifest_hash: str = "",
) -> None:
    """Write merged per-turn states with per-slot provenance tags."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"_kind": "header", "manifest_hash": manifest_hash}, sort_keys=True) + "\n")
        for (dialogue_id, turn_index) in sorted(merged):
            state, provenance = merged[(dialogue_id, turn_index)]
            record = {
                "dialogue_id": dialogue_id,
                "turn_index": turn_index,
                "state": state.filled(),
                "provenance": provenance,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_merged_states(path: str | Path, inventory: SlotInventory) -> dict[tuple[str, int], BeliefState]:
    """Read merged states (provenance ignored)."""
    return read_base_predictions(path, inventory)
