"""Core dialogue data model and text/value normalization.

Utterance text is stored lowercased with collapsed whitespace; coreference
character offsets always refer to this normalized form. Slot values go through
the usual MultiWOZ normalization (time formats, spelling variants) so that
state comparisons match published tracker conventions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import LoadError
from .ontology import UNFILLED, DomainSlot, SlotInventory

SPLITS = ("train", "dev", "test")

# Spelling/phrasing variants folded into the canonical MultiWOZ value.
VALUE_MAP = {
    "": UNFILLED,
    "none": UNFILLED,
    "not mentioned": UNFILLED,
    "dont care": "dontcare",
    "don't care": "dontcare",
    "do nt care": "dontcare",
    "do n't care": "dontcare",
    "doesnt care": "dontcare",
    "does not care": "dontcare",
    "center": "centre",
    "centre of town": "centre",
    "city center": "centre",
    "city centre": "centre",
    "guesthouse": "guest house",
    "guesthouses": "guest house",
    "swimmingpool": "swimming pool",
    "concerthall": "concert hall",
    "nightclub": "night club",
    "mutliple sports": "multiple sports",
}

_TIME_SLOTS = ("leaveAt", "arriveBy", "book_time")


def normalize_text(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return " ".join(text.lower().split())


def normalize_time(text: str) -> str:
    """Map time expressions to zero-padded 24h hh:mm (MultiWOZ convention)."""
    text = re.sub(r"(\d{1})(a\.?m\.?|p\.?m\.?)", r"\1 \2", text)  # 10am -> 10 am
    text = re.sub(r"(^| )(\d{1,2}) (a\.?m\.?|p\.?m\.?)", r"\1\2:00 \3", text)  # 10 am -> 10:00 am
    text = re.sub(r"(^| )(at|from|by|until|after) ?(\d{1,2}) ?(\d{2})([^0-9]|$)", r"\1\2 \3:\4\5", text)
    text = re.sub(r"(^| )(\d{2})[;.,](\d{2})", r"\1\2:\3", text)  # wrong separator
    text = re.sub(r"(^| )(at|from|by|until|after) ?(\d{1,2})([;., ]|$)", r"\1\2 \3:00\4", text)
    text = re.sub(r"(^| )(\d{1}:\d{2})", r"\g<1>0\2", text)  # leading zero
    text = re.sub(
        r"(\d{2})(:\d{2}) ?p\.?m\.?",
        lambda m: str(int(m.group(1)) + 12 if int(m.group(1)) < 12 else int(m.group(1))) + m.group(2),
        text,
    )
    text = re.sub(r"(\d{2})(:\d{2}) ?a\.?m\.?", r"\1\2", text)
    text = re.sub(r"(^| )24:(\d{2})", r"\g<1>00:\2", text)
    return text.strip()


def normalize_value(slot_name: str, value: str) -> str:
    """Normalize a slot value for storage and comparison."""
    value = normalize_text(value)
    value = VALUE_MAP.get(value, value)
    if value == UNFILLED:
        return UNFILLED
    if any(slot_name.endswith(t) for t in _TIME_SLOTS):
        value = normalize_time(value)
    return value


def find_value_occurrences(text: str, value: str) -> list[tuple[int, int]]:
    """All word-boundary occurrences of `value` in `text` as char ranges."""
    if not value:
        return []
    spans = []
    for match in re.finditer(re.escape(value), text):
        start, end = match.start(), match.end()
        before_ok = start == 0 or not (text[start - 1].isalnum() and value[0].isalnum())
        after_ok = end == len(text) or not (text[end].isalnum() and value[-1].isalnum())
        if before_ok and after_ok:
            spans.append((start, end))
    return spans


@dataclass(frozen=True)
class CorefLabel:
    """One coreference annotation: `slot` takes `value`, whose antecedent text
    lives at [char_start, char_end) of the `source_side` utterance of turn
    `source_turn`."""

    slot: str
    value: str
    source_turn: int
    source_side: str  # {user, system}
    char_start: int
    char_end: int

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "value": self.value,
            "source_turn": self.source_turn,
            "source_side": self.source_side,
            "char_start": self.char_start,
            "char_end": self.char_end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorefLabel":
        return cls(
            slot=d["slot"],
            value=d["value"],
            source_turn=d["source_turn"],
            source_side=d["source_side"],
            char_start=d["char_start"],
            char_end=d["char_end"],
        )


class BeliefState:
    """Complete slot-to-value assignment over a fixed inventory.

    Every tracked slot maps to exactly one value; unfilled slots hold "none".
    """

    __slots__ = ("_values",)

    def __init__(self, inventory: SlotInventory | Iterable[str], values: dict[str, str] | None = None):
        names = inventory.names if isinstance(inventory, SlotInventory) else list(inventory)
        self._values = {name: UNFILLED for name in names}
        if values:
            for name, value in values.items():
                if name not in self._values:
                    raise KeyError(f"unknown domain-slot {name!r}")
                self._values[name] = value

    def get(self, slot: DomainSlot | str) -> str:
        name = slot.name if isinstance(slot, DomainSlot) else slot
        return self._values[name]

    def with_value(self, slot: DomainSlot | str, value: str) -> "BeliefState":
        """Return a copy with one slot reassigned; self is unchanged."""
        name = slot.name if isinstance(slot, DomainSlot) else slot
        if name not in self._values:
            raise KeyError(f"unknown domain-slot {name!r}")
        out = BeliefState(self._values.keys())
        out._values.update(self._values)
        out._values[name] = value
        return out

    def copy(self) -> "BeliefState":
        out = BeliefState(self._values.keys())
        out._values.update(self._values)
        return out

    @property
    def slot_names(self) -> list[str]:
        return list(self._values)

    def filled(self) -> dict[str, str]:
        """Only the non-"none" assignments."""
        return {k: v for k, v in self._values.items() if v != UNFILLED}

    def as_dict(self) -> dict[str, str]:
        return dict(self._values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BeliefState):
            return NotImplemented
        return self._values == other._values

    def __hash__(self):
        return hash(tuple(sorted(self._values.items())))

    def __repr__(self) -> str:
        return f"BeliefState({self.filled()})"


@dataclass
class Turn:
    """One user/system exchange. `system_utterance` is the response that
    follows the user utterance; `gold_state` is the belief state after the
    user utterance."""

    turn_index: int
    user_utterance: str
    system_utterance: str
    gold_state: BeliefState
    coref_labels: list[CorefLabel] = field(default_factory=list)

    def utterance(self, side: str) -> str:
        if side == "user":
            return self.user_utterance
        if side == "system":
            return self.system_utterance
        raise ValueError(f"unknown utterance side {side!r}")


@dataclass
class Dialogue:
    dialogue_id: str
    turns: list[Turn]
    split: str

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"dialogue {self.dialogue_id} has no turns")
        for i, turn in enumerate(self.turns):
            if turn.turn_index != i:
                raise ValueError(
                    f"dialogue {self.dialogue_id}: turn_index {turn.turn_index} at position {i}"
                )

    def __len__(self) -> int:
        return len(self.turns)


def dialogue_to_dict(dialogue: Dialogue) -> dict:
    return {
        "dialogue_id": dialogue.dialogue_id,
        "split": dialogue.split,
        "turns": [
            {
                "turn_index": t.turn_index,
                "user": t.user_utterance,
                "system": t.system_utterance,
                "state": t.gold_state.filled(),
                "coref": [c.to_dict() for c in t.coref_labels],
            }
            for t in dialogue.turns
        ],
    }


def dialogue_from_dict(d: dict, inventory: SlotInventory) -> Dialogue:
    turns = [
        Turn(
            turn_index=t["turn_index"],
            user_utterance=t["user"],
            system_utterance=t["system"],
            gold_state=BeliefState(inventory, t.get("state", {})),
            coref_labels=[CorefLabel.from_dict(c) for c in t.get("coref", [])],
        )
        for t in d["turns"]
    ]
    return Dialogue(dialogue_id=d["dialogue_id"], turns=turns, split=d["split"])


CORPUS_SCHEMA_VERSION = 1


def write_corpus(dialogues: Iterable[Dialogue], path: str | Path, manifest_hash: str = "") -> int:
    """Write one dialogue per line (JSON), preceded by a header record.

    Returns the number of dialogues written.
    """
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as f:
        header = {"_kind": "header", "schema_version": CORPUS_SCHEMA_VERSION, "manifest_hash": manifest_hash}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for dialogue in dialogues:
            f.write(json.dumps(dialogue_to_dict(dialogue), sort_keys=True) + "\n")
            count += 1
    return count


def read_corpus(path: str | Path, inventory: SlotInventory, splits: Iterable[str] | None = None) -> list[Dialogue]:
    """Read a corpus JSONL file; optionally keep only the given splits."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"corpus file not found: {path}")
    wanted = set(splits) if splits is not None else None
    dialogues = []
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("_kind") == "header":
                continue
            dialogue = dialogue_from_dict(record, inventory)
            if wanted is None or dialogue.split in wanted:
                dialogues.append(dialogue)
    return dialogues


def iter_turn_states(dialogues: Iterable[Dialogue]) -> Iterator[tuple[str, int, BeliefState]]:
    """Yield (dialogue_id, turn_index, gold_state) over a corpus."""
    for dialogue in dialogues:
        for turn in dialogue.turns:
            yield dialogue.dialogue_id, turn.turn_index, turn.gold_state
