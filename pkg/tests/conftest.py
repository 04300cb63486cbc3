"""Shared fixtures: the raw-file fixture corpus, synthetic learnable
dialogues, and a tiny model/tokenizer pair."""

from __future__ import annotations

from pathlib import Path

import pytest

from corefdst.corpus import attach_coref_annotations, load_multiwoz
from corefdst.data import BeliefState, CorefLabel, Dialogue, Turn
from corefdst.model import build_model
from corefdst.ontology import load_inventory
from corefdst.tokenization import HashingWordTokenizer

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "raw"


@pytest.fixture(scope="session")
def inventory():
    return load_inventory()


@pytest.fixture()
def fixture_corpus(inventory):
    """The five hand-written dialogues with coreference labels attached."""
    dialogues, _ = load_multiwoz(FIXTURE_DIR)
    dialogues, report = attach_coref_annotations(dialogues, FIXTURE_DIR / "coref_annotations.json")
    assert report.alignment_failures == 0
    return dialogues


def make_dialogue(dialogue_id, turns_spec, inventory, split="train"):
    """Build a Dialogue from (user, system, filled_state, labels) tuples."""
    turns = []
    for i, (user, system, filled, labels) in enumerate(turns_spec):
        turns.append(
            Turn(
                turn_index=i,
                user_utterance=user,
                system_utterance=system,
                gold_state=BeliefState(inventory, filled),
                coref_labels=[CorefLabel(**lab) for lab in labels],
            )
        )
    return Dialogue(dialogue_id=dialogue_id, turns=turns, split=split)


_NAMES = ["giraffe palace", "golden wok", "blue lagoon", "red lion", "city bistro"]
_AREAS = ["east", "west", "north", "south", "centre"]


def synthetic_overfit_dialogues(inventory, split="train"):
    """Five two-turn dialogues with deterministic coreference patterns.

    Turn 1 refers back to the restaurant's area and name, so each dialogue
    carries a hotel-area and a taxi-destination coreference whose antecedents
    sit in turn 0.
    """
    dialogues = []
    for i, (name, area) in enumerate(zip(_NAMES, _AREAS)):
        user0 = f"i want the restaurant {name} in the {area}"
        system0 = f"{name} is in the {area}"
        user1 = "book a hotel in the same area and a taxi to that restaurant"
        system1 = "both are booked for you"
        # Antecedents: most recent prior occurrence, i.e. in system0.
        area_start = system0.rindex(area)
        name_start = system0.rindex(name)
        labels1 = [
            {
                "slot": "hotel-area",
                "value": area,
                "source_turn": 0,
                "source_side": "system",
                "char_start": area_start,
                "char_end": area_start + len(area),
            },
            {
                "slot": "taxi-destination",
                "value": name,
                "source_turn": 0,
                "source_side": "system",
                "char_start": name_start,
                "char_end": name_start + len(name),
            },
        ]
        turns = [
            (user0, system0, {"restaurant-name": name, "restaurant-area": area}, []),
            (
                user1,
                system1,
                {
                    "restaurant-name": name,
                    "restaurant-area": area,
                    "hotel-area": area,
                    "taxi-destination": name,
                },
                labels1,
            ),
        ]
        dialogues.append(make_dialogue(f"SYN{i:04d}", turns, inventory, split=split))
    return dialogues


@pytest.fixture()
def synthetic_corpus(inventory):
    return synthetic_overfit_dialogues(inventory)


@pytest.fixture(scope="session")
def tiny_setup(inventory):
    """A small untrained model plus its tokenizer, shared across tests."""
    model, tokenizer = build_model(
        "tiny", inventory.names, seed=7,
        tiny_args={"vocab_size": 2048, "hidden_size": 32, "num_layers": 2, "max_positions": 256},
    )
    return model, tokenizer


@pytest.fixture()
def word_tokenizer():
    return HashingWordTokenizer(vocab_size=2048)
