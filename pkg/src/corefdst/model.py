"""Tracker network: contextual encoder, per-slot classification and span heads.

Every tracked domain-slot pair owns an independent pair of linear heads over
the shared encoder output: a two-way {none, coref} classifier on the
aggregated first-position vector, and a span head producing per-token
start/end logits that are softmaxed across positions. Span candidates on
special tokens and the slot segment are masked by default
(`mask_invalid_positions`); turning the flag off scores every real token
position, which permits decoded spans over separators.

The encoder is abstract: a tiny randomly initialized transformer covers tests
and desk-scale runs, a pretrained BERT-class checkpoint covers full runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .encoding import EncodedExample, decode_span_to_text
from .errors import CorefDstError, DecodeError
from .ontology import UNFILLED

TYPE_NONE = 0
TYPE_COREF = 1

NEG_INF = float("-inf")

PRETRAINED_DEFAULT = "google/bert_uncased_L-8_H-512_A-8"


@dataclass
class EncoderOutput:
    """Aggregated and per-token representations for one example.

    `token_vectors` covers every input token (the aggregated vector is the
    first position's representation).
    """

    cls_vector: torch.Tensor  # (d,)
    token_vectors: torch.Tensor  # (M, d)


class TinyEncoder(nn.Module):
    """Small randomly initialized transformer encoder for desk-scale runs."""

    def __init__(
        self,
        vocab_size: int = 8192,
        hidden_size: int = 32,
        num_layers: int = 2,
        num_heads: int = 4,
        ffn_size: int = 64,
        max_positions: int = 512,
        num_token_types: int = 3,
    ):
        super().__init__()
        self.init_args = {
            "vocab_size": vocab_size,
            "hidden_size": hidden_size,
            "num_layers": num_layers,
            "num_heads": num_heads,
            "ffn_size": ffn_size,
            "max_positions": max_positions,
            "num_token_types": num_token_types,
        }
        self.hidden_size = hidden_size
        self.max_positions = max_positions
        self.num_token_types = num_token_types
        self.token_embedding = nn.Embedding(vocab_size, hidden_size)
        self.position_embedding = nn.Embedding(max_positions, hidden_size)
        self.type_embedding = nn.Embedding(num_token_types, hidden_size)
        self.norm = nn.LayerNorm(hidden_size)
        layer = nn.TransformerEncoderLayer(
            d_model=hidden_size,
            nhead=num_heads,
            dim_feedforward=ffn_size,
            dropout=0.0,
            batch_first=True,
        )
        # nested-tensor fast path disabled: identical numerics in train/eval
        self.layers = nn.TransformerEncoder(layer, num_layers=num_layers, enable_nested_tensor=False)

    def forward(
        self,
        input_ids: torch.Tensor,
        type_ids: torch.Tensor,
        attention_mask: torch.Tensor,
    ) -> torch.Tensor:
        _, seq_len = input_ids.shape
        if seq_len > self.max_positions:
            raise CorefDstError(f"sequence length {seq_len} exceeds encoder maximum {self.max_positions}")
        positions = torch.arange(seq_len, device=input_ids.device).unsqueeze(0)
        types = type_ids.clamp(max=self.num_token_types - 1)
        hidden = (
            self.token_embedding(input_ids)
            + self.position_embedding(positions)
            + self.type_embedding(types)
        )
        hidden = self.norm(hidden)
        padding_mask = attention_mask == 0
        return self.layers(hidden, src_key_padding_mask=padding_mask)


class PretrainedEncoder(nn.Module):
    """Wrapper over a Hugging Face encoder checkpoint (lazy import)."""

    def __init__(self, checkpoint: str = PRETRAINED_DEFAULT):
        super().__init__()
        from transformers import AutoModel

        self.checkpoint = checkpoint
        self.bert = AutoModel.from_pretrained(checkpoint)
        self.hidden_size = self.bert.config.hidden_size
        self.max_positions = self.bert.config.max_position_embeddings
        self.num_token_types = getattr(self.bert.config, "type_vocab_size", 2)

    def forward(self, input_ids, type_ids, attention_mask):
        types = type_ids.clamp(max=self.num_token_types - 1)
        out = self.bert(input_ids=input_ids, token_type_ids=types, attention_mask=attention_mask)
        return out.last_hidden_state


class SlotHeads(nn.Module):
    """Independent classification and span heads, one pair per domain-slot."""

    def __init__(self, slot_names: list[str], hidden_size: int):
        super().__init__()
        self.slot_names = list(slot_names)
        self._index = {name: i for i, name in enumerate(self.slot_names)}
        n = len(self.slot_names)
        self.cls_weight = nn.Parameter(torch.empty(n, hidden_size, 2))
        self.cls_bias = nn.Parameter(torch.zeros(n, 2))
        self.span_weight = nn.Parameter(torch.empty(n, hidden_size, 2))
        self.span_bias = nn.Parameter(torch.zeros(n, 2))
        nn.init.normal_(self.cls_weight, std=0.02)
        nn.init.normal_(self.span_weight, std=0.02)

    @property
    def hidden_size(self) -> int:
        return self.cls_weight.shape[1]

    def slot_index(self, slot: str | int) -> int:
        if isinstance(slot, int):
            return slot
        return self._index[slot]

    def classify_logits(self, cls_vectors: torch.Tensor, slot_indices: torch.Tensor) -> torch.Tensor:
        """(B, d) x per-example head -> (B, 2) logits."""
        w = self.cls_weight[slot_indices]  # (B, d, 2)
        b = self.cls_bias[slot_indices]  # (B, 2)
        return torch.einsum("bd,bdk->bk", cls_vectors, w) + b

    def span_logits(self, token_vectors: torch.Tensor, slot_indices: torch.Tensor) -> torch.Tensor:
        """(B, M, d) x per-example head -> (B, M, 2) start/end logits."""
        w = self.span_weight[slot_indices]  # (B, d, 2)
        b = self.span_bias[slot_indices]  # (B, 2)
        return torch.einsum("bmd,bdk->bmk", token_vectors, w) + b.unsqueeze(1)


class TrackerModel(nn.Module):
    """Encoder plus per-slot heads."""

    def __init__(self, encoder: nn.Module, heads: SlotHeads):
        super().__init__()
        self.encoder = encoder
        self.heads = heads

    @property
    def slot_names(self) -> list[str]:
        return self.heads.slot_names

    def forward(self, batch: "Batch") -> "ModelOutput":
        hidden = self.encoder(batch.token_ids, batch.type_ids, batch.attention_mask)
        cls_vectors = hidden[:, 0, :]
        type_logits = self.heads.classify_logits(cls_vectors, batch.slot_indices)
        span = self.heads.span_logits(hidden, batch.slot_indices)
        return ModelOutput(
            type_logits=type_logits,
            start_logits=span[..., 0],
            end_logits=span[..., 1],
            valid_mask=batch.valid_mask,
        )


@dataclass
class Batch:
    token_ids: torch.Tensor  # (B, M) long
    type_ids: torch.Tensor  # (B, M) long
    attention_mask: torch.Tensor  # (B, M) long, 0 = padding
    valid_mask: torch.Tensor  # (B, M) bool, span-candidate positions
    slot_indices: torch.Tensor  # (B,) long
    type_labels: torch.Tensor  # (B,) long, {TYPE_NONE, TYPE_COREF}
    gold_spans: list[tuple[int, int] | None]
    examples: list[EncodedExample]

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def collate(
    examples: list[EncodedExample],
    heads: SlotHeads,
    pad_id: int,
    mask_invalid_positions: bool = True,
    device: str | torch.device = "cpu",
) -> Batch:
    """Pad a list of examples into one batch."""
    if not examples:
        raise ValueError("cannot collate an empty example list")
    max_len = max(len(e) for e in examples)
    token_ids = torch.full((len(examples), max_len), pad_id, dtype=torch.long)
    type_ids = torch.zeros((len(examples), max_len), dtype=torch.long)
    attention = torch.zeros((len(examples), max_len), dtype=torch.long)
    valid = torch.zeros((len(examples), max_len), dtype=torch.bool)
    slot_indices = torch.zeros(len(examples), dtype=torch.long)
    type_labels = torch.zeros(len(examples), dtype=torch.long)
    gold_spans: list[tuple[int, int] | None] = []
    for i, example in enumerate(examples):
        m = len(example)
        token_ids[i, :m] = torch.tensor(example.token_ids, dtype=torch.long)
        type_ids[i, :m] = torch.tensor(example.type_ids, dtype=torch.long)
        attention[i, :m] = 1
        if mask_invalid_positions:
            valid[i, :m] = torch.tensor(example.valid_span_positions(), dtype=torch.bool)
        else:
            valid[i, :m] = True
        slot_indices[i] = heads.slot_index(example.slot)
        type_labels[i] = TYPE_COREF if example.gold_slot_type == "coref" else TYPE_NONE
        gold_spans.append(example.gold_span)
    return Batch(
        token_ids=token_ids.to(device),
        type_ids=type_ids.to(device),
        attention_mask=attention.to(device),
        valid_mask=valid.to(device),
        slot_indices=slot_indices.to(device),
        type_labels=type_labels.to(device),
        gold_spans=gold_spans,
        examples=list(examples),
    )


@dataclass
class ModelOutput:
    type_logits: torch.Tensor  # (B, 2)
    start_logits: torch.Tensor  # (B, M)
    end_logits: torch.Tensor  # (B, M)
    valid_mask: torch.Tensor  # (B, M) bool


@dataclass
class LossBreakdown:
    slot_type_loss: torch.Tensor
    span_loss: torch.Tensor
    total: torch.Tensor
    beta: float

    def to_floats(self) -> dict[str, float]:
        return {
            "slot_type_loss": float(self.slot_type_loss.detach()),
            "span_loss": float(self.span_loss.detach()),
            "total": float(self.total.detach()),
            "beta": self.beta,
        }


def encode(example: EncodedExample, encoder: nn.Module) -> EncoderOutput:
    """Run the encoder on a single example (inference only)."""
    device = next(encoder.parameters()).device
    token_ids = torch.tensor([example.token_ids], dtype=torch.long, device=device)
    type_ids = torch.tensor([example.type_ids], dtype=torch.long, device=device)
    attention = torch.ones_like(token_ids)
    with torch.no_grad():
        hidden = encoder(token_ids, type_ids, attention)[0]
    return EncoderOutput(cls_vector=hidden[0], token_vectors=hidden)


def classify_slot_type(
    cls_vector: torch.Tensor,
    slot: str | int,
    heads: SlotHeads,
) -> tuple[float, float]:
    """Two-way {none, coref} probabilities for one aggregated vector."""
    if cls_vector.shape != (heads.hidden_size,):
        raise ValueError(
            f"cls_vector shape {tuple(cls_vector.shape)} does not match head dimension {heads.hidden_size}"
        )
    idx = heads.slot_index(slot)
    with torch.no_grad():
        logits = cls_vector @ heads.cls_weight[idx] + heads.cls_bias[idx]
        probs = torch.softmax(logits, dim=-1)
    return float(probs[TYPE_NONE]), float(probs[TYPE_COREF])


def _first_argmax(values: torch.Tensor) -> int:
    """Index of the maximum, ties broken toward the lowest index."""
    return int((values == values.max()).nonzero(as_tuple=False)[0, 0])


def predict_span(
    token_vectors: torch.Tensor,
    slot: str | int,
    heads: SlotHeads,
    valid_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor, tuple[int, int]]:
    """Start/end distributions over positions and the independent-argmax span.

    `valid_mask` (bool, per position) removes candidates before the softmax;
    None scores every position.
    """
    if token_vectors.ndim != 2 or token_vectors.shape[1] != heads.hidden_size:
        raise ValueError(
            f"token_vectors shape {tuple(token_vectors.shape)} does not match head dimension"
        )
    if token_vectors.shape[0] == 0:
        raise ValueError("token_vectors is empty")
    idx = heads.slot_index(slot)
    with torch.no_grad():
        logits = token_vectors @ heads.span_weight[idx] + heads.span_bias[idx]  # (M, 2)
        start_logits, end_logits = logits[:, 0], logits[:, 1]
        if valid_mask is not None:
            if not bool(valid_mask.any()):
                raise CorefDstError("all span positions are masked")
            start_logits = start_logits.masked_fill(~valid_mask, NEG_INF)
            end_logits = end_logits.masked_fill(~valid_mask, NEG_INF)
        start_dist = torch.softmax(start_logits, dim=-1)
        end_dist = torch.softmax(end_logits, dim=-1)
    span = (_first_argmax(start_dist), _first_argmax(end_dist))
    return start_dist, end_dist, span


def joint_loss(output: ModelOutput, beta: float, type_labels: torch.Tensor,
               gold_spans: list[tuple[int, int] | None]) -> LossBreakdown:
    """Weighted sum of the classification loss and the averaged span loss.

    The classification cross-entropy is averaged over every example; the span
    loss — the mean of the start and end cross-entropies — is averaged over
    examples that carry a gold span, and defined as 0 when none do.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if len(gold_spans) != output.type_logits.shape[0]:
        raise ValueError("gold_spans length does not match batch size")

    slot_type_loss = F.cross_entropy(output.type_logits, type_labels)

    seq_len = output.start_logits.shape[1]
    span_terms = []
    start_logp = F.log_softmax(
        output.start_logits.masked_fill(~output.valid_mask, NEG_INF), dim=-1
    )
    end_logp = F.log_softmax(
        output.end_logits.masked_fill(~output.valid_mask, NEG_INF), dim=-1
    )
    for i, span in enumerate(gold_spans):
        if span is None:
            continue
        start, end = span
        if not (0 <= start < seq_len and 0 <= end < seq_len):
            raise ValueError(f"gold span {span} out of range for sequence length {seq_len}")
        span_terms.append(-(start_logp[i, start] + end_logp[i, end]) / 2.0)
    if span_terms:
        span_loss = torch.stack(span_terms).mean()
    else:
        span_loss = torch.zeros((), dtype=slot_type_loss.dtype, device=slot_type_loss.device)

    total = beta * slot_type_loss + (1.0 - beta) * span_loss
    return LossBreakdown(slot_type_loss=slot_type_loss, span_loss=span_loss, total=total, beta=beta)


@dataclass
class CorefPrediction:
    """Per-(turn, slot) output: coreference probability, position
    distributions, decoded span, and the extracted value ("none" when the slot
    is not classified as coreferred or the span fails to decode)."""

    slot: str
    p_coref: float
    start_dist: torch.Tensor  # (M,)
    end_dist: torch.Tensor  # (M,)
    span: tuple[int, int]
    value: str

    def to_record(self) -> dict:
        return {
            "slot": self.slot,
            "p_coref": self.p_coref,
            "span": list(self.span),
            "value": self.value,
        }


def _joint_argmax_span(
    start_dist: torch.Tensor, end_dist: torch.Tensor, max_span_length: int
) -> tuple[int, int]:
    """Best (start <= end, bounded length) pair by start*end probability."""
    m = start_dist.shape[0]
    best = (0, 0)
    best_score = -1.0
    for i in range(m):
        p_start = float(start_dist[i])
        if p_start == 0.0:
            continue
        for j in range(i, min(i + max_span_length, m)):
            score = p_start * float(end_dist[j])
            if score > best_score:
                best_score = score
                best = (i, j)
    return best


def _decode_value(
    example: EncodedExample,
    span: tuple[int, int],
    start_dist: torch.Tensor,
    end_dist: torch.Tensor,
    decode_mode: str,
    max_span_length: int,
) -> tuple[tuple[int, int], str | None]:
    """Resolve the final span and its text; None when decoding fails."""
    if decode_mode == "joint":
        span = _joint_argmax_span(start_dist, end_dist, max_span_length)
    start, end = span
    if end < start:
        return span, None
    try:
        text = decode_span_to_text(example, start, end)
    except DecodeError:
        return span, None
    return span, text or None


def predict_turn(
    dialogue,
    turn_index: int,
    model: TrackerModel,
    tokenizer,
    config,
    inventory,
    threshold: float = 0.5,
    mask_invalid_positions: bool = True,
    decode_mode: str = "independent",
    max_span_length: int = 10,
) -> dict[str, CorefPrediction]:
    """Run every slot head on one turn and extract coreference values.

    A value is filled only when the slot is classified as coreferred
    (p_coref >= threshold) and the predicted span decodes to usable text;
    otherwise the retrieved span is discarded and the value is "none".
    """
    from .encoding import build_input

    examples = [
        build_input(dialogue, turn_index, slot, config, tokenizer, inventory)
        for slot in inventory
    ]
    batch = collate(examples, model.heads, tokenizer.pad_id, mask_invalid_positions)
    model.eval()
    with torch.no_grad():
        output = model(batch)
        type_probs = torch.softmax(output.type_logits, dim=-1)
        # Rows with no legal span candidate (e.g. empty context under
        # ablation) fall back to scoring every real token; the decode step
        # then rejects special-token endpoints and the value stays "none".
        mask = output.valid_mask.clone()
        empty_rows = ~mask.any(dim=1)
        if bool(empty_rows.any()):
            mask[empty_rows] = batch.attention_mask[empty_rows] == 1
        start_logits = output.start_logits.masked_fill(~mask, NEG_INF)
        end_logits = output.end_logits.masked_fill(~mask, NEG_INF)
        start_dists = torch.softmax(start_logits, dim=-1)
        end_dists = torch.softmax(end_logits, dim=-1)

    predictions: dict[str, CorefPrediction] = {}
    for i, example in enumerate(examples):
        m = len(example)
        start_dist = start_dists[i, :m]
        end_dist = end_dists[i, :m]
        span = (_first_argmax(start_dist), _first_argmax(end_dist))
        p_coref = float(type_probs[i, TYPE_COREF])
        value = UNFILLED
        if p_coref >= threshold:
            span, text = _decode_value(
                example, span, start_dist, end_dist, decode_mode, max_span_length
            )
            if text is not None:
                value = text
        predictions[example.slot] = CorefPrediction(
            slot=example.slot,
            p_coref=p_coref,
            start_dist=start_dist,
            end_dist=end_dist,
            span=span,
            value=value,
        )
    return predictions


def predict_corpus(
    dialogues,
    model: TrackerModel,
    tokenizer,
    config,
    inventory,
    threshold: float = 0.5,
    mask_invalid_positions: bool = True,
    decode_mode: str = "independent",
) -> dict[tuple[str, int], dict[str, CorefPrediction]]:
    """Per-turn slot predictions over a corpus, keyed (dialogue_id, turn)."""
    predictions = {}
    for dialogue in dialogues:
        for turn in dialogue.turns:
            predictions[(dialogue.dialogue_id, turn.turn_index)] = predict_turn(
                dialogue,
                turn.turn_index,
                model,
                tokenizer,
                config,
                inventory,
                threshold=threshold,
                mask_invalid_positions=mask_invalid_positions,
                decode_mode=decode_mode,
            )
    return predictions


def build_model(
    encoder_choice: str,
    slot_names: list[str],
    seed: int = 13,
    tiny_args: dict | None = None,
    pretrained_checkpoint: str = PRETRAINED_DEFAULT,
):
    """Construct (model, tokenizer) for the requested encoder flavor.

    Seeds torch before parameter creation so initialization is reproducible.
    """
    from .tokenization import HashingWordTokenizer, PretrainedTokenizer

    torch.manual_seed(seed)
    if encoder_choice == "tiny":
        args = dict(tiny_args or {})
        encoder = TinyEncoder(**args)
        tokenizer = HashingWordTokenizer(vocab_size=encoder.init_args["vocab_size"])
    elif encoder_choice == "pretrained":
        encoder = PretrainedEncoder(pretrained_checkpoint)
        tokenizer = PretrainedTokenizer(pretrained_checkpoint)
    else:
        raise ValueError(f"unknown encoder choice {encoder_choice!r}")
    heads = SlotHeads(slot_names, encoder.hidden_size)
    return TrackerModel(encoder, heads), tokenizer


def save_checkpoint(directory: str | Path, model: TrackerModel, tokenizer, metadata: dict) -> Path:
    """Write a checkpoint directory: manifest plus encoder/head parameters."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    encoder = model.encoder
    if isinstance(encoder, TinyEncoder):
        encoder_spec = {"kind": "tiny", "args": encoder.init_args}
    elif isinstance(encoder, PretrainedEncoder):
        encoder_spec = {"kind": "pretrained", "checkpoint": encoder.checkpoint}
    else:
        raise ValueError(f"cannot serialize encoder of type {type(encoder).__name__}")
    manifest = {
        "encoder": encoder_spec,
        "tokenizer": tokenizer.identifier,
        "slot_names": model.slot_names,
        **metadata,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    torch.save(model.encoder.state_dict(), directory / "encoder.pt")
    torch.save(model.heads.state_dict(), directory / "heads.pt")
    return directory


def load_checkpoint(directory: str | Path, device: str = "cpu"):
    """Load (model, tokenizer, manifest) from a checkpoint directory."""
    from .tokenization import HashingWordTokenizer, PretrainedTokenizer

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    spec = manifest["encoder"]
    if spec["kind"] == "tiny":
        encoder = TinyEncoder(**spec["args"])
        tokenizer = HashingWordTokenizer(vocab_size=spec["args"]["vocab_size"])
    elif spec["kind"] == "pretrained":
        encoder = PretrainedEncoder(spec["checkpoint"])
        tokenizer = PretrainedTokenizer(spec["checkpoint"])
    else:
        raise ValueError(f"unknown encoder kind {spec['kind']!r}")
    encoder.load_state_dict(torch.load(directory / "encoder.pt", map_location=device))
    heads = SlotHeads(manifest["slot_names"], encoder.hidden_size)
    heads.load_state_dict(torch.load(directory / "heads.pt", map_location=device))
    model = TrackerModel(encoder, heads).to(device)
    return model, tokenizer, manifest
