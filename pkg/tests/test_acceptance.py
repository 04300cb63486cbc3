"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Criteria 1-6 are desk-scale and always run. Criterion 7 needs the real
dataset (set CDST_DATA_DIR, and CDST_COREF_FILE for the coreference
annotations) and skips otherwise. Criterion 8 is the documented full-scale
reproduction track: the runbook and configs must ship, the numbers cannot be
produced in CI.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.
"""

from __future__ import annotations

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from corefdst.corpus import attach_coref_annotations, convert_multiwoz23_coreference, load_multiwoz
from corefdst.data import BeliefState
from corefdst.encoding import InputConfig, SamplingPolicy, batch_examples
from corefdst.evaluation import audit_dataset, jga
from corefdst.model import (
    ModelOutput,
    SlotHeads,
    TinyEncoder,
    classify_slot_type,
    joint_loss,
    predict_span,
    predict_turn,
)
from corefdst.ontology import UNFILLED, load_inventory
from corefdst.tokenization import HashingWordTokenizer
from corefdst.tracker import MergeRule, apply_coref
from corefdst.training import TrainConfig, evaluate_examples, train

from conftest import synthetic_overfit_dialogues
from oracles import oracle_classify, oracle_joint_loss, oracle_span, run_gradient_check

REPO_ROOT = Path(__file__).parent.parent

SLOTS3 = ["hotel-area", "train-day", "taxi-destination"]


def report(criterion: int, detail: str) -> None:
    print(f"[criterion {criterion}] PASS — {detail}")


class TestCriterion1Gradients:
    def test_gradient_check(self):
        started = time.perf_counter()
        torch.manual_seed(404)
        encoder = TinyEncoder(vocab_size=512, hidden_size=16, num_layers=2, max_positions=64).double()
        failures = run_gradient_check(encoder, SLOTS3, n_fixtures=20, rel_tol=1e-3)
        elapsed = time.perf_counter() - started
        assert not failures, f"gradient mismatches: {failures[:5]}"
        assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
        report(1, f"analytic vs central differences on 20 fixtures, rel<1e-3, {elapsed:.1f}s")


class TestCriterion2OracleEquivalence:
    def test_scalar_loop_oracles(self):
        started = time.perf_counter()
        rng = np.random.default_rng(77)
        torch.manual_seed(77)
        heads = SlotHeads(SLOTS3, 16).double()
        checked = 0
        for _ in range(100):
            slot = SLOTS3[rng.integers(0, 3)]
            idx = heads.slot_index(slot)

            vec = rng.normal(size=16)
            p = classify_slot_type(torch.tensor(vec), slot, heads)
            expected = oracle_classify(
                vec, heads.cls_weight[idx].detach().numpy(), heads.cls_bias[idx].detach().numpy()
            )
            assert abs(p[0] - expected[0]) < 1e-6 and abs(p[1] - expected[1]) < 1e-6

            m = int(rng.integers(2, 16))
            vecs = rng.normal(size=(m, 16))
            valid = [bool(rng.random() > 0.3) for _ in range(m)]
            if not any(valid):
                valid[0] = True
            start, end, span = predict_span(
                torch.tensor(vecs), slot, heads, valid_mask=torch.tensor(valid)
            )
            o_start, o_end, o_span = oracle_span(
                vecs, heads.span_weight[idx].detach().numpy(),
                heads.span_bias[idx].detach().numpy(), valid,
            )
            assert span == o_span
            assert np.allclose(start.numpy(), o_start, atol=1e-6)
            assert np.allclose(end.numpy(), o_end, atol=1e-6)

            b = int(rng.integers(1, 5))
            type_logits = rng.normal(size=(b, 2))
            start_logits = rng.normal(size=(b, m))
            end_logits = rng.normal(size=(b, m))
            valid_mask = np.ones((b, m), dtype=bool)
            labels = rng.integers(0, 2, size=b)
            spans = [
                (int(rng.integers(0, m)), int(rng.integers(0, m))) if rng.random() < 0.5 else None
                for _ in range(b)
            ]
            beta = float(rng.random())
            loss = joint_loss(
                ModelOutput(
                    type_logits=torch.tensor(type_logits),
                    start_logits=torch.tensor(start_logits),
                    end_logits=torch.tensor(end_logits),
                    valid_mask=torch.tensor(valid_mask),
                ),
                beta,
                torch.tensor(labels),
                spans,
            )
            expected_total, _, _ = oracle_joint_loss(
                type_logits, labels, start_logits, end_logits, valid_mask, spans, beta
            )
            assert abs(float(loss.total) - expected_total) < 1e-6
            checked += 1
        elapsed = time.perf_counter() - started
        assert checked == 100
        assert elapsed < 60.0
        report(2, f"classify/span/loss match scalar-loop oracles on {checked} fixtures, {elapsed:.1f}s")


class TestCriterion3ClosedForms:
    def test_uniform_and_perfect_losses(self):
        output = ModelOutput(
            type_logits=torch.zeros(4, 2, dtype=torch.float64),
            start_logits=torch.zeros(4, 5, dtype=torch.float64),
            end_logits=torch.zeros(4, 5, dtype=torch.float64),
            valid_mask=torch.ones(4, 5, dtype=torch.bool),
        )
        uniform = joint_loss(output, 0.8, torch.tensor([0, 1, 0, 1]), [None] * 4)
        assert abs(float(uniform.total) - 0.8 * math.log(2.0)) < 1e-9

        big = 1000.0
        perfect = joint_loss(
            ModelOutput(
                type_logits=torch.tensor([[big, -big], [-big, big]], dtype=torch.float64),
                start_logits=torch.tensor(
                    [[-big, big, -big], [big, -big, -big]], dtype=torch.float64
                ),
                end_logits=torch.tensor(
                    [[-big, -big, big], [big, -big, -big]], dtype=torch.float64
                ),
                valid_mask=torch.ones(2, 3, dtype=torch.bool),
            ),
            0.8,
            torch.tensor([0, 1]),
            [(1, 2), (0, 0)],
        )
        assert abs(float(perfect.total)) < 1e-9
        report(3, "uniform 2-class loss = 0.8*ln2 and perfect-prediction loss = 0, both within 1e-9")


class TestCriterion4Overfit:
    def test_overfit_synthetic_fixture(self):
        started = time.perf_counter()
        inventory = load_inventory()
        dialogues = synthetic_overfit_dialogues(inventory)
        config = TrainConfig(
            encoder="tiny", learning_rate=2e-3, epochs=40, batch_size=8, seed=3,
            tiny_vocab_size=2048, tiny_hidden_size=32, tiny_num_layers=2, max_seq_length=128,
        )
        tokenizer = HashingWordTokenizer(vocab_size=config.tiny_vocab_size)
        stream = list(
            batch_examples(
                dialogues, inventory, config.input_config(), tokenizer,
                SamplingPolicy(kind="balanced", negative_ratio=3.0, seed=config.seed),
            )
        )
        model, train_report = train(stream, None, config)
        assert train_report.total_steps <= 500
        metrics = evaluate_examples(model, stream, tokenizer.pad_id)
        elapsed = time.perf_counter() - started
        assert metrics.slot_type_accuracy == 1.0, metrics.to_dict()
        assert metrics.span_exact_match == 1.0, metrics.to_dict()
        assert elapsed < 300.0
        report(
            4,
            f"tiny encoder overfits the 5-dialogue fixture in {train_report.total_steps} steps "
            f"(100% slot-type, 100% span EM, {elapsed:.1f}s)",
        )


class TestCriterion5MergeAndJga:
    def test_merge_and_jga_hand_cases(self, inventory, fixture_corpus):
        # context-antecedent day case: base leaves train-day empty, the
        # coreference prediction fills "saturday" resolved from a prior turn
        fig_dialogue = next(d for d in fixture_corpus if d.dialogue_id == "FIX0001")
        label = fig_dialogue.turns[1].coref_labels[0]
        assert (label.slot, label.value) == ("train-day", "saturday")
        base = BeliefState(
            inventory,
            {"hotel-area": "east", "hotel-book_day": "saturday", "train-destination": "cambridge"},
        )
        merged = apply_coref(
            base, {"train-day": {"p_coref": 0.96, "value": label.value, "span": [0, 0]}}, MergeRule()
        )
        assert merged.get("train-day") == "saturday"
        assert merged == fig_dialogue.turns[1].gold_state

        # four-turn JGA 0.75
        gold = [BeliefState(inventory, {"hotel-area": "east"}) for _ in range(4)]
        predicted = [s.copy() for s in gold]
        predicted[1] = predicted[1].with_value("hotel-area", "west")
        assert jga(predicted, gold) == 0.75

        # policy pair
        base2 = BeliefState(inventory, {"train-day": "monday"})
        pred2 = {"train-day": {"p_coref": 0.9, "value": "saturday", "span": [0, 0]}}
        keep = apply_coref(base2, pred2, MergeRule(policy="coref-fills-empty-only"))
        override = apply_coref(base2, pred2, MergeRule(policy="coref-overrides-base"))
        assert keep.get("train-day") == "monday"
        assert override.get("train-day") == "saturday"
        report(5, "day-from-context merge, 0.75 four-turn joint accuracy, both merge policies")


class TestCriterion6InvariantSuite:
    """Cross-module property battery; the per-module invariants also run in
    their own test files as part of the full suite."""

    def test_invariant_battery(self, fixture_corpus, inventory, tiny_setup):
        model, tokenizer = tiny_setup
        rng = np.random.default_rng(55)

        # normalization: every emitted distribution sums to 1
        predictions = predict_turn(fixture_corpus[0], 1, model, tokenizer, InputConfig(), inventory)
        for p in predictions.values():
            assert abs(float(p.start_dist.sum()) - 1.0) < 1e-5
            assert abs(float(p.end_dist.sum()) - 1.0) < 1e-5
            assert 0.0 <= p.p_coref <= 1.0

        # argmax equivalence against a brute-force scan
        heads = SlotHeads(SLOTS3, 16).double()
        for _ in range(25):
            m = int(rng.integers(2, 12))
            vecs = rng.normal(size=(m, 16))
            valid = [True] * m
            _, _, span = predict_span(torch.tensor(vecs), "train-day", heads)
            _, _, expected = oracle_span(
                vecs,
                heads.span_weight[heads.slot_index("train-day")].detach().numpy(),
                heads.span_bias[heads.slot_index("train-day")].detach().numpy(),
                valid,
            )
            assert span == expected

        # merge idempotence and locality
        base = BeliefState(inventory, {"hotel-area": "east"})
        records = {"train-day": {"p_coref": 0.9, "value": "saturday", "span": [0, 0]}}
        once = apply_coref(base, records, MergeRule())
        twice = apply_coref(once, records, MergeRule())
        assert once == twice
        assert all(
            once.get(name) == base.get(name) for name in inventory.names if name != "train-day"
        )

        # threshold monotonicity end to end
        filled = []
        for threshold in (0.0, 0.5, 1.01):
            preds = predict_turn(
                fixture_corpus[0], 1, model, tokenizer, InputConfig(), inventory, threshold=threshold
            )
            filled.append({s for s, p in preds.items() if p.value != UNFILLED})
        assert filled[2] <= filled[1] <= filled[0]

        # determinism: encoding streams and model forwards reproduce exactly
        config = InputConfig()
        stream_a = [
            e.fingerprint() for e in batch_examples(fixture_corpus, inventory, config, tokenizer)
        ]
        stream_b = [
            e.fingerprint() for e in batch_examples(fixture_corpus, inventory, config, tokenizer)
        ]
        assert stream_a == stream_b
        again = predict_turn(fixture_corpus[0], 1, model, tokenizer, InputConfig(), inventory)
        for name in predictions:
            assert torch.equal(predictions[name].start_dist, again[name].start_dist)
            assert predictions[name].p_coref == again[name].p_coref
        report(6, "normalization, argmax, idempotence, locality, monotonicity, determinism")


DATA_DIR = os.environ.get("CDST_DATA_DIR")
COREF_FILE = os.environ.get("CDST_COREF_FILE")


class TestCriterion7DatasetAudit:
    @pytest.mark.skipif(
        not (DATA_DIR and Path(DATA_DIR, "data.json").exists()),
        reason="criterion 7 SKIPPED: set CDST_DATA_DIR to a MultiWOZ 2.1 directory "
        "(and CDST_COREF_FILE to the coreference annotations) to run the dataset audit",
    )
    def test_full_dataset_audit(self):
        started = time.perf_counter()
        dialogues, load_report = load_multiwoz(DATA_DIR)
        assert load_report.split_sizes == {"train": 8348, "dev": 1000, "test": 1000}
        coref_file = COREF_FILE
        assert coref_file, "CDST_COREF_FILE must point to the coreference annotations"
        if os.environ.get("CDST_COREF_FORMAT", "multiwoz23") == "multiwoz23":
            annotations = convert_multiwoz23_coreference(coref_file)
            flat = Path(DATA_DIR) / "_flat_coref.json"
            flat.write_text(json.dumps(annotations))
            coref_file = flat
        dialogues, _ = attach_coref_annotations(dialogues, coref_file)
        inventory = load_inventory()
        audit = audit_dataset(dialogues, inventory)
        assert audit.slot_count == 30
        assert audit.domain_count == 5
        assert abs(audit.coref_dialogue_fraction - 0.2016) <= 0.005
        assert audit.distinct_coreferred_slots == 14
        elapsed = time.perf_counter() - started
        assert elapsed < 300.0
        report(7, f"splits 8348/1000/1000, 30 slots, 5 domains, "
                  f"coref fraction {audit.coref_dialogue_fraction:.2%}, 14 coreferred slots")


class TestCriterion8FullScaleTrack:
    def test_runbook_and_configs_ship(self):
        """The full-scale numbers (standalone JGA ~55.84, merged ~56.47,
        ablation ordering) are a documented reproduction track, not CI; this
        gate checks that the track ships complete and configured exactly."""
        runbook = REPO_ROOT / "RUNBOOK.md"
        assert runbook.exists(), "full-scale runbook missing"
        text = runbook.read_text()
        for target in ("55.8", "56.5", "-uttr", "ablate", "merge"):
            assert target in text, f"runbook does not document {target!r}"

        config_path = REPO_ROOT / "configs" / "full_bert_medium.json"
        assert config_path.exists(), "full-scale config missing"
        config = TrainConfig.from_dict(json.loads(config_path.read_text()))
        assert config.encoder == "pretrained"
        assert config.learning_rate == 1e-4
        assert config.max_seq_length == 512
        assert config.warmup_ratio == 0.1
        assert config.epochs == 10
        assert config.optimizer == "adam"
        assert config.batch_size == 2
        assert config.beta == 0.8
        report(
            8,
            "documented reproduction track ships (runbook + pinned config); "
            "numeric targets run outside CI",
        )
