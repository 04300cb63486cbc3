"""Encoder input construction for (turn, domain-slot) pairs.

The input sequence is laid out as

    [CLS] slot-surface-tokens [SEP] current-user-tokens [SEP] context-tokens [SEP]

where the context renders all prior turns chronologically, each prefixed by a
turn-delimiter token, as "user-text system-text". Ablation flags drop the slot
or utterance segment together with that segment's separator; the context
segment (and its separator) is always present. When the sequence would exceed
the length budget, whole context turns are dropped oldest first; the slot and
current-utterance segments are never truncated.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .corpus import char_span_to_token_span, default_inventory
from .data import Dialogue, normalize_text
from .errors import DecodeError, EncodingError
from .ontology import DomainSlot, SlotInventory

# Per-token segment roles.
SEGMENT_SPECIAL = 0
SEGMENT_SLOT = 1
SEGMENT_UTTERANCE = 2
SEGMENT_CONTEXT = 3

COREF = "coref"
NONE = "none"


@dataclass(frozen=True)
class InputConfig:
    max_seq_length: int = 512
    include_utterance: bool = True
    include_slot: bool = True
    context_order: str = "chronological"  # or "most-recent-first"

    def __post_init__(self):
        if self.max_seq_length < 8:
            raise ValueError("max_seq_length must be at least 8")
        if self.context_order not in ("chronological", "most-recent-first"):
            raise ValueError(f"unknown context_order {self.context_order!r}")

    def to_dict(self) -> dict:
        return {
            "max_seq_length": self.max_seq_length,
            "include_utterance": self.include_utterance,
            "include_slot": self.include_slot,
            "context_order": self.context_order,
        }


@dataclass
class EncodedExample:
    """Token sequence for one (turn, domain-slot) pair with gold labels.

    `token_char_map` holds, per token, a (source_id, char_start, char_end)
    triple where source_id names the originating text field ("slot",
    "utterance", or "context:<turn>:<side>"); special tokens map to None.
    `sources` carries the referenced texts so spans decode without the
    dialogue at hand.
    """

    dialogue_id: str
    turn_index: int
    slot: str
    token_ids: list[int]
    segment_ids: list[int]
    type_ids: list[int]
    attention_mask: list[int]
    gold_slot_type: str
    gold_span: tuple[int, int] | None
    gold_value: str | None
    token_char_map: list[tuple[str, int, int] | None]
    sources: dict[str, str]

    def __len__(self) -> int:
        return len(self.token_ids)

    def valid_span_positions(self) -> list[bool]:
        """True where a span endpoint may legally fall (utterance/context)."""
        return [s in (SEGMENT_UTTERANCE, SEGMENT_CONTEXT) for s in self.segment_ids]

    def fingerprint(self) -> str:
        """Canonical serialization for determinism checks."""
        return json.dumps(
            {
                "dialogue_id": self.dialogue_id,
                "turn_index": self.turn_index,
                "slot": self.slot,
                "token_ids": self.token_ids,
                "segment_ids": self.segment_ids,
                "type_ids": self.type_ids,
                "gold_slot_type": self.gold_slot_type,
                "gold_span": self.gold_span,
                "gold_value": self.gold_value,
                "token_char_map": self.token_char_map,
            },
            sort_keys=True,
        )


class _SequenceBuilder:
    def __init__(self):
        self.token_ids: list[int] = []
        self.segment_ids: list[int] = []
        self.type_ids: list[int] = []
        self.char_map: list[tuple[str, int, int] | None] = []

    def add_special(self, token_id: int, type_id: int) -> None:
        self.token_ids.append(token_id)
        self.segment_ids.append(SEGMENT_SPECIAL)
        self.type_ids.append(type_id)
        self.char_map.append(None)

    def add_text_token(self, token: tuple[int, int, int], segment: int, type_id: int, source: str) -> None:
        token_id, start, end = token
        self.token_ids.append(token_id)
        self.segment_ids.append(segment)
        self.type_ids.append(type_id)
        self.char_map.append((source, start, end))


def _context_units(dialogue: Dialogue, turn_index: int, tokenizer) -> list[list[tuple]]:
    """One unit per prior turn: [TRN] + user tokens + system tokens, each
    entry a (kind, payload) pair ready for the builder."""
    units = []
    for r in range(turn_index):
        turn = dialogue.turns[r]
        unit: list[tuple] = [("special", tokenizer.turn_id)]
        for side in ("user", "system"):
            source = f"context:{r}:{side}"
            for token in tokenizer.encode_with_offsets(turn.utterance(side)):
                unit.append(("text", token, source))
        units.append(unit)
    return units


def build_input(
    dialogue: Dialogue,
    turn_index: int,
    slot: DomainSlot | str,
    config: InputConfig,
    tokenizer,
    inventory: SlotInventory | None = None,
) -> EncodedExample:
    """Build the encoder input for one (turn, domain-slot) pair."""
    inventory = inventory or default_inventory()
    if isinstance(slot, str):
        slot = inventory.get(slot)
    elif slot.name not in inventory:
        raise KeyError(f"unknown domain-slot {slot.name!r}")
    if not 0 <= turn_index < len(dialogue.turns):
        raise IndexError(f"turn_index {turn_index} out of range for dialogue {dialogue.dialogue_id}")

    turn = dialogue.turns[turn_index]
    builder = _SequenceBuilder()
    sources: dict[str, str] = {}

    builder.add_special(tokenizer.cls_id, 0)
    if config.include_slot:
        sources["slot"] = slot.surface_form
        for token in tokenizer.encode_with_offsets(slot.surface_form):
            builder.add_text_token(token, SEGMENT_SLOT, 0, "slot")
        builder.add_special(tokenizer.sep_id, 0)
    if config.include_utterance:
        sources["utterance"] = turn.user_utterance
        for token in tokenizer.encode_with_offsets(turn.user_utterance):
            builder.add_text_token(token, SEGMENT_UTTERANCE, 1, "utterance")
        builder.add_special(tokenizer.sep_id, 1)

    # Context segment: always present, truncated oldest-first to the budget.
    budget = config.max_seq_length - len(builder.token_ids) - 1  # final [SEP]
    if budget < 0:
        raise EncodingError(
            f"slot and utterance segments ({len(builder.token_ids) + 1} tokens) exceed "
            f"max_seq_length {config.max_seq_length}"
        )
    units = _context_units(dialogue, turn_index, tokenizer)
    while units and sum(len(u) for u in units) > budget:
        if len(units) == 1:
            units[0] = units[0][-budget:] if budget > 0 else []
            break
        units.pop(0)
    if config.context_order == "most-recent-first":
        units = list(reversed(units))
    for unit in units:
        for entry in unit:
            if entry[0] == "special":
                builder.add_special(entry[1], 2)
            else:
                _, token, source = entry
                if source not in sources:
                    r, side = source.split(":")[1:]
                    sources[source] = dialogue.turns[int(r)].utterance(side)
                builder.add_text_token(token, SEGMENT_CONTEXT, 2, source)
    builder.add_special(tokenizer.sep_id, 2)

    gold_slot_type, gold_span, gold_value = _project_gold(
        turn, slot.name, builder.segment_ids, builder.char_map, sources
    )
    return EncodedExample(
        dialogue_id=dialogue.dialogue_id,
        turn_index=turn_index,
        slot=slot.name,
        token_ids=builder.token_ids,
        segment_ids=builder.segment_ids,
        type_ids=builder.type_ids,
        attention_mask=[1] * len(builder.token_ids),
        gold_slot_type=gold_slot_type,
        gold_span=gold_span,
        gold_value=gold_value,
        token_char_map=builder.char_map,
        sources=sources,
    )


def _project_gold(
    turn,
    slot_name: str,
    segment_ids: list[int],
    char_map: list[tuple[str, int, int] | None],
    sources: dict[str, str],
) -> tuple[str, tuple[int, int] | None, str | None]:
    labels = [c for c in turn.coref_labels if c.slot == slot_name]
    if not labels:
        return NONE, None, None
    label = labels[0]
    if label.source_turn == turn.turn_index:
        source_id = "utterance" if label.source_side == "user" else None
    else:
        source_id = f"context:{label.source_turn}:{label.source_side}"
    if source_id is None or source_id not in sources:
        return COREF, None, label.value  # antecedent segment absent (ablation/truncation)

    positions = [i for i, m in enumerate(char_map) if m is not None and m[0] == source_id]
    offsets = [(char_map[i][1], char_map[i][2]) for i in positions]
    try:
        local_start, local_end = char_span_to_token_span(
            sources[source_id], label.char_start, label.char_end, offsets
        )
    except Exception:
        return COREF, None, label.value
    # Reject partial coverage left over from truncation.
    if offsets[local_start][0] > label.char_start or offsets[local_end][1] < label.char_end:
        return COREF, None, label.value
    return COREF, (positions[local_start], positions[local_end]), label.value


def decode_span_to_text(example: EncodedExample, token_start: int, token_end: int) -> str:
    """Decode a token span back to normalized source text.

    Text is reconstructed through the token→character map (never from token
    strings), so subword pieces decode to the original words. Interior special
    tokens (e.g. turn delimiters) are skipped; spans whose endpoints fall on
    special tokens or the slot segment are rejected.
    """
    if not 0 <= token_start <= token_end < len(example.token_ids):
        raise DecodeError(f"span ({token_start}, {token_end}) out of range")
    for endpoint in (token_start, token_end):
        if example.segment_ids[endpoint] not in (SEGMENT_UTTERANCE, SEGMENT_CONTEXT):
            raise DecodeError(f"span endpoint {endpoint} is not in the utterance or context segment")

    pieces: list[str] = []
    group_source: str | None = None
    group_start = group_end = 0
    for i in range(token_start, token_end + 1):
        mapped = example.token_char_map[i]
        if mapped is None:
            continue
        source, start, end = mapped
        if source == group_source:
            group_end = end
        else:
            if group_source is not None:
                pieces.append(example.sources[group_source][group_start:group_end])
            group_source, group_start, group_end = source, start, end
    if group_source is not None:
        pieces.append(example.sources[group_source][group_start:group_end])
    return normalize_text(" ".join(pieces))


@dataclass(frozen=True)
class SamplingPolicy:
    """Which (turn, slot) pairs become examples.

    "all" admits every pair; "balanced" keeps every coreferred pair and a
    seeded sample of `negative_ratio` non-coreferred pairs per coreferred one.
    """

    kind: str = "all"
    negative_ratio: float = 3.0
    seed: int = 13

    def __post_init__(self):
        if self.kind not in ("all", "balanced"):
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be nonnegative")


def batch_examples(
    dialogues: Iterable[Dialogue],
    inventory: SlotInventory,
    config: InputConfig,
    tokenizer,
    sampling: SamplingPolicy = SamplingPolicy(),
) -> Iterator[EncodedExample]:
    """Yield one example per admitted (turn, slot) pair, in corpus order."""
    dialogues = list(dialogues)
    keys = []  # (dialogue_pos, turn_index, slot_name, is_coref)
    for d_pos, dialogue in enumerate(dialogues):
        for turn in dialogue.turns:
            labeled = {c.slot for c in turn.coref_labels}
            for slot in inventory:
                keys.append((d_pos, turn.turn_index, slot.name, slot.name in labeled))

    if sampling.kind == "balanced":
        positives = [k for k in keys if k[3]]
        negatives = [k for k in keys if not k[3]]
        n_negatives = min(len(negatives), int(sampling.negative_ratio * len(positives)))
        rng = random.Random(sampling.seed)
        sampled = rng.sample(negatives, n_negatives)
        admitted = set(positives) | set(sampled)
        keys = [k for k in keys if k in admitted]

    for d_pos, turn_index, slot_name, _ in keys:
        yield build_input(dialogues[d_pos], turn_index, slot_name, config, tokenizer, inventory)
