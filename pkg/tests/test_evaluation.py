"""Joint goal accuracy, per-slot coreference accuracy, audit, ablations."""

from __future__ import annotations

import pytest

from corefdst.data import BeliefState
from corefdst.errors import EvaluationError
from corefdst.evaluation import (
    audit_dataset,
    evaluate_predictions,
    jga,
    per_slot_coref_accuracy,
    run_ablation,
    slot_accuracy,
)
from corefdst.tracker import MergeRule
from corefdst.training import TrainConfig


def record(p_coref: float, value: str) -> dict:
    return {"p_coref": p_coref, "value": value, "span": [0, 0]}


class TestJga:
    def test_perfect(self, inventory):
        states = [BeliefState(inventory, {"hotel-area": "east"}) for _ in range(3)]
        assert jga(states, [s.copy() for s in states]) == 1.0

    def test_four_turn_one_wrong_slot(self, inventory):
        gold = [BeliefState(inventory, {"hotel-area": "east"}) for _ in range(4)]
        predicted = [s.copy() for s in gold]
        predicted[2] = predicted[2].with_value("hotel-area", "west")
        assert jga(predicted, gold) == pytest.approx(0.75)

    def test_all_none_vs_filled_gold(self, inventory):
        gold = [BeliefState(inventory, {"hotel-area": "east"})]
        predicted = [BeliefState(inventory)]
        assert jga(predicted, gold) == 0.0

    def test_misaligned_lengths(self, inventory):
        with pytest.raises(EvaluationError):
            jga([BeliefState(inventory)], [])

    def test_jga_never_exceeds_slot_accuracy(self, inventory):
        import random

        rng = random.Random(5)
        values = ["none", "east", "west", "saturday"]
        for _ in range(30):
            gold = [
                BeliefState(inventory, {"hotel-area": rng.choice(values[1:])})
                for _ in range(rng.randint(1, 6))
            ]
            predicted = [
                s.copy().with_value("hotel-area", rng.choice(values)) for s in gold
            ]
            assert jga(predicted, gold) <= slot_accuracy(predicted, gold) + 1e-12

    def test_reordering_invariance(self, inventory):
        gold = [
            BeliefState(inventory, {"hotel-area": "east"}),
            BeliefState(inventory, {"train-day": "saturday"}),
            BeliefState(inventory, {"restaurant-food": "italian"}),
        ]
        predicted = [
            gold[0].copy(),
            gold[1].copy().with_value("train-day", "monday"),
            gold[2].copy(),
        ]
        forward = jga(predicted, gold)
        backward = jga(list(reversed(predicted)), list(reversed(gold)))
        assert forward == backward
        # slot-inventory ordering does not matter either
        reordered = list(reversed(inventory.names))
        predicted_r = [BeliefState(reordered, p.filled()) for p in predicted]
        gold_r = [BeliefState(reordered, g.filled()) for g in gold]
        assert jga(predicted_r, gold_r) == forward

    def test_value_normalization_applied(self, inventory):
        gold = [BeliefState(inventory, {"hotel-area": "centre"})]
        predicted = [BeliefState(inventory, {"hotel-area": "center"})]
        assert jga(predicted, gold) == 1.0


class TestPerSlotCorefAccuracy:
    def test_perfect(self, fixture_corpus):
        predictions = {}
        for dialogue in fixture_corpus:
            for turn in dialogue.turns:
                slots = {c.slot: record(0.9, c.value) for c in turn.coref_labels}
                if slots:
                    predictions[(dialogue.dialogue_id, turn.turn_index)] = slots
        per_slot = per_slot_coref_accuracy(predictions, fixture_corpus)
        assert per_slot == {"train-day": 1.0, "taxi-destination": 1.0, "hotel-book_day": 1.0}

    def test_mixed_counts(self, inventory):
        from conftest import make_dialogue

        label_a = {
            "slot": "train-day",
            "value": "monday",
            "source_turn": 0,
            "source_side": "user",
            "char_start": 0,
            "char_end": 6,
        }
        label_b = dict(label_a, slot="hotel-area", value="east", char_end=4)
        dialogues = []
        for i in range(4):
            dialogues.append(
                make_dialogue(f"M{i}", [("monday east trip", "ok", {}, [label_a])], inventory)
            )
        for i in range(3):
            dialogues.append(
                make_dialogue(f"B{i}", [("east monday trip", "ok", {}, [label_b])], inventory)
            )
        predictions = {}
        # slot A correct on 2 of 4; slot B correct on 3 of 3
        for i in range(4):
            predictions[(f"M{i}", 0)] = {"train-day": record(0.9, "monday" if i < 2 else "friday")}
        for i in range(3):
            predictions[(f"B{i}", 0)] = {"hotel-area": record(0.9, "east")}
        per_slot = per_slot_coref_accuracy(predictions, dialogues)
        assert per_slot == {"train-day": 0.5, "hotel-area": 1.0}

    def test_zero_instance_slot_absent(self, fixture_corpus):
        per_slot = per_slot_coref_accuracy({}, fixture_corpus)
        assert "restaurant-food" not in per_slot
        assert set(per_slot) == {"train-day", "taxi-destination", "hotel-book_day"}

    def test_aggregation_matches_overall(self, fixture_corpus, inventory):
        predictions = {}
        for i, dialogue in enumerate(fixture_corpus):
            for turn in dialogue.turns:
                slots = {
                    c.slot: record(0.9, c.value if i % 2 == 0 else "wrong")
                    for c in turn.coref_labels
                }
                if slots:
                    predictions[(dialogue.dialogue_id, turn.turn_index)] = slots
        report, _ = evaluate_predictions(fixture_corpus, predictions, inventory)
        per_slot = report.per_slot_coref_accuracy
        counts = {}
        for dialogue in fixture_corpus:
            for turn in dialogue.turns:
                for c in turn.coref_labels:
                    counts[c.slot] = counts.get(c.slot, 0) + 1
        weighted = sum(per_slot[s] * counts[s] for s in per_slot) / sum(counts.values())
        assert weighted == pytest.approx(report.coref_span_exact_match)


class TestEvaluatePredictions:
    def test_standalone_perfect_coref_metrics(self, fixture_corpus, inventory):
        predictions = {}
        for dialogue in fixture_corpus:
            for turn in dialogue.turns:
                slots = {c.slot: record(0.9, c.value) for c in turn.coref_labels}
                if slots:
                    predictions[(dialogue.dialogue_id, turn.turn_index)] = slots
        report, merged = evaluate_predictions(fixture_corpus, predictions, inventory)
        assert report.coref_slot_type_accuracy == 1.0
        assert report.coref_span_exact_match == 1.0
        assert report.merge_policy == "coref-overrides-base"
        assert report.turn_count == sum(len(d.turns) for d in fixture_corpus)
        # standalone states contain exactly the coreference edits
        state, provenance = merged[("FIX0001", 1)]
        assert state.get("train-day") == "saturday"
        assert provenance["train-day"] == "coref"

    def test_missing_base_state_raises(self, fixture_corpus, inventory):
        with pytest.raises(EvaluationError):
            evaluate_predictions(fixture_corpus, {}, inventory, base_states={})

    def test_correct_only_merge_never_lowers_jga(self, fixture_corpus, inventory):
        # base states: gold with some slots blanked out
        base_states = {}
        gold_states = []
        for dialogue in fixture_corpus:
            for turn in dialogue.turns:
                base = turn.gold_state.copy()
                for label in turn.coref_labels:
                    base = base.with_value(label.slot, "none")
                base_states[(dialogue.dialogue_id, turn.turn_index)] = base
                gold_states.append(turn.gold_state)
        base_jga = jga([base_states[k] for k in sorted(base_states)], gold_states and [
            t.gold_state for d in fixture_corpus for t in d.turns
        ])
        predictions = {}
        for dialogue in fixture_corpus:
            for turn in dialogue.turns:
                slots = {c.slot: record(0.95, c.value) for c in turn.coref_labels}
                if slots:
                    predictions[(dialogue.dialogue_id, turn.turn_index)] = slots
        rule = MergeRule(policy="coref-fills-empty-only")
        report, _ = evaluate_predictions(
            fixture_corpus, predictions, inventory, base_states=base_states, rule=rule
        )
        assert report.jga >= base_jga


class TestAudit:
    def test_fixture_audit(self, fixture_corpus, inventory):
        report = audit_dataset(fixture_corpus, inventory)
        assert report.split_sizes == {"train": 2, "dev": 1, "test": 2}
        assert report.slot_count == 30
        assert report.domain_count == 5
        assert report.coref_dialogue_fraction == pytest.approx(0.6)
        assert report.distinct_coreferred_slots == 3


class TestRunAblation:
    def test_empty_ablation_list_gives_base_row(self, synthetic_corpus, inventory, tmp_path):
        config = TrainConfig(
            encoder="tiny", learning_rate=2e-3, epochs=1, batch_size=8, seed=3,
            tiny_vocab_size=2048, max_seq_length=128,
        )
        rows = run_ablation(
            synthetic_corpus, [], synthetic_corpus, config, inventory, ablations=[],
        )
        assert len(rows) == 1
        assert rows[0][0] == "full"

    def test_three_row_matrix_consistent_with_direct_evaluation(
        self, synthetic_corpus, inventory, tmp_path
    ):
        import json

        config = TrainConfig(
            encoder="tiny", learning_rate=2e-3, epochs=2, batch_size=8, seed=3,
            tiny_vocab_size=2048, max_seq_length=128,
        )
        rows = run_ablation(
            synthetic_corpus, [], synthetic_corpus, config, inventory, out_dir=tmp_path,
        )
        assert [name for name, _ in rows] == ["full", "-uttr", "-uttr-slot"]
        for name, report in rows:
            on_disk = json.loads((tmp_path / f"eval_{name}.json").read_text())
            assert on_disk["jga"] == report.jga
            assert on_disk["coref_span_exact_match"] == report.coref_span_exact_match
        hashes = {report.config_hash for _, report in rows}
        assert len(hashes) == 3  # each row ran a distinct configuration
