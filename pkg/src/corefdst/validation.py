"""Input validation helpers for the estimator API."""

from __future__ import annotations

from .data import Dialogue
from .ontology import SlotInventory


def check_dialogues(X, inventory: SlotInventory | None = None) -> list[Dialogue]:
    """Validate that X is a non-empty sequence of well-formed dialogues.

    Checks turn indexing, utterance types, and (when an inventory is given)
    that every coreference label and state slot is tracked.
    """
    dialogues = list(X)
    if not dialogues:
        raise ValueError("expected a non-empty sequence of dialogues")
    for dialogue in dialogues:
        if not isinstance(dialogue, Dialogue):
            raise TypeError(f"expected Dialogue, got {type(dialogue).__name__}")
        for i, turn in enumerate(dialogue.turns):
            if turn.turn_index != i:
                raise ValueError(
                    f"dialogue {dialogue.dialogue_id}: non-consecutive turn_index at position {i}"
                )
            if not isinstance(turn.user_utterance, str) or not isinstance(turn.system_utterance, str):
                raise TypeError(f"dialogue {dialogue.dialogue_id} turn {i}: utterances must be strings")
            if inventory is not None:
                for label in turn.coref_labels:
                    if label.slot not in inventory:
                        raise ValueError(
                            f"dialogue {dialogue.dialogue_id} turn {i}: "
                            f"coreference label for untracked slot {label.slot!r}"
                        )
    return dialogues


def check_threshold(threshold: float) -> float:
    if not isinstance(threshold, (int, float)):
        raise TypeError("threshold must be a number")
    return float(threshold)
