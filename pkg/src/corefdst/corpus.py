"""Raw corpus ingestion and coreference annotation alignment.

Reads MultiWOZ 2.1 `data.json` plus the val/test list files, normalizes
dialogues into the internal model, and attaches coreference annotations with
resolved character offsets. Annotations whose antecedent cannot be aligned are
dropped and counted rather than approximated.
"""

from __future__ import annotations

import functools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .data import (
    BeliefState,
    CorefLabel,
    Dialogue,
    Turn,
    find_value_occurrences,
    normalize_text,
    normalize_value,
)
from .errors import LoadError, SpanError
from .ontology import SlotInventory, load_inventory


@functools.lru_cache(maxsize=1)
def default_inventory() -> SlotInventory:
    return load_inventory()

logger = logging.getLogger(__name__)

# The five domains tracked by the slot inventory; others (police, hospital,
# bus) appear in raw MultiWOZ but are not part of the 30-slot set.
TRACKED_DOMAINS = ("attraction", "hotel", "restaurant", "taxi", "train")


@dataclass
class LoadReport:
    """Counters emitted by `load_multiwoz`."""

    dialogues_loaded: int = 0
    dialogues_skipped: int = 0
    split_sizes: dict[str, int] = field(default_factory=dict)
    skipped_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dialogues_loaded": self.dialogues_loaded,
            "dialogues_skipped": self.dialogues_skipped,
            "split_sizes": dict(self.split_sizes),
            "skipped_ids": list(self.skipped_ids),
        }


@dataclass
class AttachReport:
    """Counters emitted by `attach_coref_annotations`."""

    labels_attached: int = 0
    alignment_failures: int = 0
    unknown_dialogues: int = 0
    unknown_slots: int = 0
    current_turn_antecedents: int = 0

    def to_dict(self) -> dict:
        return {
            "labels_attached": self.labels_attached,
            "alignment_failures": self.alignment_failures,
            "unknown_dialogues": self.unknown_dialogues,
            "unknown_slots": self.unknown_slots,
            "current_turn_antecedents": self.current_turn_antecedents,
        }


def _read_list_file(data_dir: Path, stem: str) -> set[str]:
    for suffix in (".txt", ".json"):
        path = data_dir / f"{stem}{suffix}"
        if path.exists():
            return {line.strip() for line in path.read_text().splitlines() if line.strip()}
    raise LoadError(f"split list file {stem}.txt/.json not found in {data_dir}")


def _metadata_to_state(metadata: dict, inventory: SlotInventory) -> BeliefState:
    state = BeliefState(inventory)
    for domain in TRACKED_DOMAINS:
        domain_meta = metadata.get(domain) or {}
        for group, prefix in (("semi", ""), ("book", "book_")):
            for key, value in (domain_meta.get(group) or {}).items():
                if key == "booked":
                    continue
                name = f"{domain}-{prefix}{key}"
                if name not in inventory:
                    continue
                if isinstance(value, list):
                    value = value[0] if value else ""
                if not isinstance(value, str):
                    continue
                normalized = normalize_value(name, value)
                state = state.with_value(name, normalized)
    return state


def _parse_dialogue(dialogue_id: str, raw: dict, split: str, inventory: SlotInventory) -> Dialogue:
    log = raw.get("log")
    if not isinstance(log, list) or not log:
        raise ValueError("empty or missing log")
    turns = []
    previous_state = BeliefState(inventory)
    for turn_index, i in enumerate(range(0, len(log), 2)):
        user_entry = log[i]
        system_entry = log[i + 1] if i + 1 < len(log) else None
        user_text = normalize_text(user_entry["text"])
        if system_entry is not None:
            system_text = normalize_text(system_entry.get("text", ""))
            state = _metadata_to_state(system_entry.get("metadata") or {}, inventory)
        else:
            # Trailing user turn with no system response: carry the state.
            system_text = ""
            state = previous_state.copy()
        turns.append(
            Turn(
                turn_index=turn_index,
                user_utterance=user_text,
                system_utterance=system_text,
                gold_state=state,
            )
        )
        previous_state = state
    return Dialogue(dialogue_id=dialogue_id, turns=turns, split=split)


def load_multiwoz(
    data_dir: str | Path,
    splits: dict[str, set[str]] | None = None,
    inventory: SlotInventory | None = None,
) -> tuple[list[Dialogue], LoadReport]:
    """Load MultiWOZ 2.1 dialogues partitioned into train/dev/test.

    `splits`, when given, maps "dev"/"test" to sets of dialogue file names and
    replaces the on-disk valListFile/testListFile split definition.
    """
    data_dir = Path(data_dir)
    data_path = data_dir / "data.json"
    if not data_path.exists():
        raise LoadError(f"data.json not found in {data_dir}")
    inventory = inventory or default_inventory()
    with data_path.open("r", encoding="utf-8") as f:
        raw = json.load(f)

    if splits is None:
        dev_ids = _read_list_file(data_dir, "valListFile")
        test_ids = _read_list_file(data_dir, "testListFile")
    else:
        dev_ids = set(splits.get("dev", ()))
        test_ids = set(splits.get("test", ()))

    report = LoadReport(split_sizes={"train": 0, "dev": 0, "test": 0})
    dialogues = []
    for file_name in sorted(raw):
        if file_name in test_ids:
            split = "test"
        elif file_name in dev_ids:
            split = "dev"
        else:
            split = "train"
        dialogue_id = file_name.removesuffix(".json")
        try:
            dialogue = _parse_dialogue(dialogue_id, raw[file_name], split, inventory)
        except (KeyError, TypeError, ValueError) as exc:
            logger.warning("skipping malformed dialogue %s: %s", file_name, exc)
            report.dialogues_skipped += 1
            report.skipped_ids.append(dialogue_id)
            continue
        dialogues.append(dialogue)
        report.split_sizes[split] += 1
        report.dialogues_loaded += 1
    return dialogues, report


def _candidate_sources(dialogue: Dialogue, turn_index: int) -> list[tuple[int, str]]:
    """Antecedent sources ordered most recent first, prior turns before the
    current user utterance."""
    sources = []
    for t in range(turn_index - 1, -1, -1):
        sources.append((t, "system"))
        sources.append((t, "user"))
    sources.append((turn_index, "user"))
    return sources


def _resolve_antecedent(
    dialogue: Dialogue,
    turn_index: int,
    value: str,
    source_turn: int | None,
    source_side: str | None,
) -> tuple[int, str, int, int] | None:
    """Locate `value` in the dialogue text, preferring the most recent prior
    occurrence. Returns (source_turn, source_side, char_start, char_end)."""
    if source_turn is not None:
        sides = [source_side] if source_side else ["system", "user"]
        if source_turn == turn_index:
            sides = [s for s in sides if s == "user"]
        for side in sides:
            text = dialogue.turns[source_turn].utterance(side)
            occurrences = find_value_occurrences(text, value)
            if occurrences:
                start, end = occurrences[-1]
                return source_turn, side, start, end
        return None
    for t, side in _candidate_sources(dialogue, turn_index):
        occurrences = find_value_occurrences(dialogue.turns[t].utterance(side), value)
        if occurrences:
            start, end = occurrences[-1]
            return t, side, start, end
    return None


def attach_coref_annotations(
    dialogues: list[Dialogue],
    annotation_file: str | Path,
    inventory: SlotInventory | None = None,
) -> tuple[list[Dialogue], AttachReport]:
    """Attach coreference labels from an annotation JSON file.

    The file maps dialogue_id -> turn_index (as string) -> list of entries
    {slot, value, source_turn?, source_side?, char_start?, char_end?}. Explicit
    offsets are verified against the value; absent offsets are resolved to the
    most recent prior occurrence of the value in the dialogue text.
    """
    annotation_file = Path(annotation_file)
    if not annotation_file.exists():
        raise LoadError(f"annotation file not found: {annotation_file}")
    with annotation_file.open("r", encoding="utf-8") as f:
        annotations = json.load(f)

    inventory = inventory or default_inventory()
    by_id = {d.dialogue_id: d for d in dialogues}
    report = AttachReport()

    for dialogue_id, turn_map in annotations.items():
        dialogue = by_id.get(dialogue_id.removesuffix(".json"))
        if dialogue is None:
            logger.warning("coref annotation for unknown dialogue %s", dialogue_id)
            report.unknown_dialogues += 1
            continue
        for turn_key, entries in turn_map.items():
            turn_index = int(turn_key)
            if not 0 <= turn_index < len(dialogue.turns):
                report.alignment_failures += len(entries)
                continue
            for entry in entries:
                slot_name = entry["slot"]
                if slot_name not in inventory:
                    logger.warning("coref annotation with unknown slot %s", slot_name)
                    report.unknown_slots += 1
                    continue
                value = normalize_value(slot_name, entry["value"])
                label = _build_label(dialogue, turn_index, slot_name, value, entry)
                if label is None:
                    report.alignment_failures += 1
                    continue
                dialogue.turns[turn_index].coref_labels.append(label)
                report.labels_attached += 1
                if label.source_turn == turn_index:
                    report.current_turn_antecedents += 1
    return dialogues, report


def _build_label(
    dialogue: Dialogue,
    turn_index: int,
    slot_name: str,
    value: str,
    entry: dict,
) -> CorefLabel | None:
    source_turn = entry.get("source_turn")
    source_side = entry.get("source_side")
    char_start = entry.get("char_start")
    char_end = entry.get("char_end")

    if source_turn is not None and char_start is not None and char_end is not None:
        if not 0 <= source_turn <= turn_index:
            return None
        side = source_side or "user"
        if source_turn == turn_index and side != "user":
            return None
        text = dialogue.turns[source_turn].utterance(side)
        if not (0 <= char_start < char_end <= len(text)):
            return None
        if normalize_value(slot_name, text[char_start:char_end]) != value:
            return None
        return CorefLabel(slot_name, value, source_turn, side, char_start, char_end)

    resolved = _resolve_antecedent(dialogue, turn_index, value, source_turn, source_side)
    if resolved is None:
        return None
    t, side, start, end = resolved
    return CorefLabel(slot_name, value, t, side, start, end)


@dataclass
class CorefStatistics:
    dialogue_count: int
    coref_dialogue_count: int
    coref_dialogue_fraction: float
    label_count: int
    per_slot_counts: dict[str, int]
    distinct_coreferred_slots: int

    def to_dict(self) -> dict:
        return {
            "dialogue_count": self.dialogue_count,
            "coref_dialogue_count": self.coref_dialogue_count,
            "coref_dialogue_fraction": self.coref_dialogue_fraction,
            "label_count": self.label_count,
            "per_slot_counts": dict(sorted(self.per_slot_counts.items())),
            "distinct_coreferred_slots": self.distinct_coreferred_slots,
        }


def coref_statistics(dialogues: list[Dialogue]) -> CorefStatistics:
    """Corpus-level coreference counts: fraction of dialogues with at least
    one label, per-slot label counts, distinct coreferred slots."""
    per_slot: dict[str, int] = {}
    coref_dialogues = 0
    label_count = 0
    for dialogue in dialogues:
        has_label = False
        for turn in dialogue.turns:
            for label in turn.coref_labels:
                per_slot[label.slot] = per_slot.get(label.slot, 0) + 1
                label_count += 1
                has_label = True
        if has_label:
            coref_dialogues += 1
    total = len(dialogues)
    return CorefStatistics(
        dialogue_count=total,
        coref_dialogue_count=coref_dialogues,
        coref_dialogue_fraction=coref_dialogues / total if total else 0.0,
        label_count=label_count,
        per_slot_counts=per_slot,
        distinct_coreferred_slots=len(per_slot),
    )


def char_span_to_token_span(
    text: str,
    char_start: int,
    char_end: int,
    token_offsets: list[tuple[int, int]],
) -> tuple[int, int]:
    """Minimal token range (inclusive end) covering [char_start, char_end).

    `token_offsets` are ascending, non-overlapping (start, end) character
    ranges over `text`.
    """
    if not 0 <= char_start < char_end <= len(text):
        raise SpanError(
            f"char span ({char_start}, {char_end}) out of bounds for text of length {len(text)}"
        )
    overlapping = [
        i
        for i, (start, end) in enumerate(token_offsets)
        if start < char_end and end > char_start
    ]
    if not overlapping:
        raise SpanError(f"char span ({char_start}, {char_end}) covers no tokens")
    return overlapping[0], overlapping[-1]


# Mapping from MultiWOZ 2.3 dialogue-act slot names to canonical slot names.
# Booking-style slots are domain dependent: "Day" is the travel day for train
# but the booking day for hotel/restaurant.
_ACT_SLOT_RENAMES = {
    "depart": "departure",
    "dest": "destination",
    "leave": "leaveAt",
    "leaveat": "leaveAt",
    "arrive": "arriveBy",
    "arriveby": "arriveBy",
    "price": "pricerange",
    "people": "book_people",
    "stay": "book_stay",
}
_BOOKING_SLOTS = {"day": {"hotel": "book_day", "restaurant": "book_day", "train": "day"},
                  "time": {"restaurant": "book_time"}}


def convert_multiwoz23_coreference(data_path: str | Path) -> dict:
    """Best-effort conversion of MultiWOZ 2.3 in-file coreference annotations
    to the flat annotation mapping consumed by `attach_coref_annotations`.

    Expects a data.json whose log entries may carry a "coreference" dict of
    {act: [[slot, value, mention, ...], ...]}. Entries that cannot be mapped
    to a tracked slot are dropped; offset resolution is left to the attach
    step (most recent prior occurrence of the value).
    """
    data_path = Path(data_path)
    if not data_path.exists():
        raise LoadError(f"annotation source not found: {data_path}")
    with data_path.open("r", encoding="utf-8") as f:
        raw = json.load(f)

    annotations: dict[str, dict[str, list[dict]]] = {}
    inventory = default_inventory()
    for file_name, record in raw.items():
        dialogue_id = file_name.removesuffix(".json")
        log = record.get("log") or []
        for i, entry in enumerate(log):
            if i % 2 != 0:
                continue  # coreference is annotated on user turns
            coref = entry.get("coreference")
            if not isinstance(coref, dict):
                continue
            turn_index = i // 2
            for act, items in coref.items():
                domain = act.split("-")[0].lower()
                for item in items:
                    if not isinstance(item, (list, tuple)) or len(item) < 2:
                        continue
                    raw_slot, raw_value = str(item[0]).lower(), str(item[1])
                    slot = _ACT_SLOT_RENAMES.get(raw_slot, raw_slot)
                    if raw_slot in _BOOKING_SLOTS:
                        slot = _BOOKING_SLOTS[raw_slot].get(domain, raw_slot)
                    name = f"{domain}-{slot}"
                    if name not in inventory:
                        logger.warning("unmapped coreference slot %s in %s", name, dialogue_id)
                        continue
                    annotations.setdefault(dialogue_id, {}).setdefault(str(turn_index), []).append(
                        {"slot": name, "value": raw_value}
                    )
    return annotations
