"""Independent reimplementations used as test oracles.

Everything here is deliberately straight-line scalar code (plain Python and
loops), kept free of the tensor pathways it is used to check.
"""

from __future__ import annotations

import math
import random

import numpy as np
import torch

from corefdst.encoding import (
    SEGMENT_CONTEXT,
    SEGMENT_SLOT,
    SEGMENT_SPECIAL,
    SEGMENT_UTTERANCE,
    EncodedExample,
)
from corefdst.model import ModelOutput, SlotHeads, collate, joint_loss


def oracle_softmax(logits: list[float]) -> list[float]:
    finite = [x for x in logits if x != float("-inf")]
    m = max(finite)
    exps = [math.exp(x - m) if x != float("-inf") else 0.0 for x in logits]
    z = sum(exps)
    return [e / z for e in exps]


def oracle_classify(cls_vec: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[float, float]:
    logits = [0.0, 0.0]
    for k in range(2):
        acc = bias[k]
        for i in range(len(cls_vec)):
            acc += cls_vec[i] * weight[i, k]
        logits[k] = acc
    probs = oracle_softmax(logits)
    return probs[0], probs[1]


def oracle_span(
    token_vecs: np.ndarray, weight: np.ndarray, bias: np.ndarray, valid: list[bool]
) -> tuple[list[float], list[float], tuple[int, int]]:
    m = token_vecs.shape[0]
    start_logits, end_logits = [], []
    for pos in range(m):
        s = bias[0]
        e = bias[1]
        for i in range(token_vecs.shape[1]):
            s += token_vecs[pos, i] * weight[i, 0]
            e += token_vecs[pos, i] * weight[i, 1]
        start_logits.append(s if valid[pos] else float("-inf"))
        end_logits.append(e if valid[pos] else float("-inf"))
    start_dist = oracle_softmax(start_logits)
    end_dist = oracle_softmax(end_logits)

    def scan_max(values):
        best, best_i = -1.0, 0
        for i, v in enumerate(values):
            if v > best:
                best, best_i = v, i
        return best_i

    return start_dist, end_dist, (scan_max(start_dist), scan_max(end_dist))


def oracle_joint_loss(type_logits, type_labels, start_logits, end_logits, valid, spans, beta):
    n = len(type_labels)
    slot_terms = []
    for i in range(n):
        probs = oracle_softmax(list(type_logits[i]))
        slot_terms.append(-math.log(probs[type_labels[i]]))
    slot_loss = sum(slot_terms) / n
    span_terms = []
    for i, span in enumerate(spans):
        if span is None:
            continue
        row_start = [s if v else float("-inf") for s, v in zip(start_logits[i], valid[i])]
        row_end = [e if v else float("-inf") for e, v in zip(end_logits[i], valid[i])]
        p_start = oracle_softmax(row_start)[span[0]]
        p_end = oracle_softmax(row_end)[span[1]]
        span_terms.append((-math.log(p_start) - math.log(p_end)) / 2.0)
    span_loss = sum(span_terms) / len(span_terms) if span_terms else 0.0
    return beta * slot_loss + (1 - beta) * span_loss, slot_loss, span_loss


def make_random_example(rng: random.Random, slot: str, m: int) -> EncodedExample:
    """Structurally valid example with random content and labels."""
    segment_ids = [SEGMENT_SPECIAL, SEGMENT_SLOT]
    for i in range(m - 2):
        segment_ids.append(SEGMENT_UTTERANCE if i % 2 == 0 else SEGMENT_CONTEXT)
    token_ids = [rng.randrange(4, 512) for _ in range(m)]
    valid_positions = [i for i, s in enumerate(segment_ids) if s in (SEGMENT_UTTERANCE, SEGMENT_CONTEXT)]
    gold_coref = rng.random() < 0.6
    gold_span = None
    if gold_coref and valid_positions and rng.random() < 0.8:
        s = rng.choice(valid_positions)
        e = rng.choice([p for p in valid_positions if p >= s])
        gold_span = (s, e)
    return EncodedExample(
        dialogue_id="RND",
        turn_index=0,
        slot=slot,
        token_ids=token_ids,
        segment_ids=segment_ids,
        type_ids=[0] * m,
        attention_mask=[1] * m,
        gold_slot_type="coref" if gold_coref else "none",
        gold_span=gold_span,
        gold_value=None,
        token_char_map=[None] * m,
        sources={},
    )


def run_gradient_check(
    encoder,
    slot_names: list[str],
    n_fixtures: int,
    perturbation: float = 1e-4,
    rel_tol: float = 1e-3,
    seed: int = 404,
) -> list[tuple]:
    """Central finite differences against autograd over every head parameter.

    Returns the list of mismatches (empty when the check passes).
    """
    rng = random.Random(seed)
    failures = []
    hidden_size = encoder.hidden_size
    for fixture in range(n_fixtures):
        heads = SlotHeads(slot_names, hidden_size).double()
        examples = [
            make_random_example(rng, slot_names[rng.randrange(len(slot_names))], rng.randint(5, 12))
            for _ in range(rng.randint(2, 4))
        ]
        batch = collate(examples, heads, pad_id=0)
        with torch.no_grad():
            hidden = encoder(batch.token_ids, batch.type_ids, batch.attention_mask)
        beta = rng.choice([0.2, 0.5, 0.8])

        def loss_value() -> torch.Tensor:
            cls_vectors = hidden[:, 0, :]
            type_logits = heads.classify_logits(cls_vectors, batch.slot_indices)
            span = heads.span_logits(hidden, batch.slot_indices)
            output = ModelOutput(
                type_logits=type_logits,
                start_logits=span[..., 0],
                end_logits=span[..., 1],
                valid_mask=batch.valid_mask,
            )
            return joint_loss(output, beta, batch.type_labels, batch.gold_spans).total

        heads.zero_grad()
        loss_value().backward()
        for name, param in heads.named_parameters():
            grad = (
                param.grad.detach().clone()
                if param.grad is not None
                else torch.zeros_like(param)
            )
            flat = param.data.view(-1)
            flat_grad = grad.view(-1)
            for k in range(flat.numel()):
                original = float(flat[k])
                with torch.no_grad():
                    flat[k] = original + perturbation
                    up = float(loss_value())
                    flat[k] = original - perturbation
                    down = float(loss_value())
                    flat[k] = original
                numeric = (up - down) / (2 * perturbation)
                analytic = float(flat_grad[k])
                scale = max(abs(analytic), abs(numeric))
                if scale < 1e-7:
                    continue
                rel = abs(analytic - numeric) / scale
                if rel >= rel_tol:
                    failures.append((fixture, name, k, analytic, numeric, rel))
    return failures
