"""Tokenizers producing token ids with character offsets.

Two implementations share one interface:

* `HashingWordTokenizer` — stateless word/punctuation tokenizer whose ids come
  from a stable hash. No vocabulary file, fully deterministic across runs;
  used with the tiny randomly initialized encoder.
* `PretrainedTokenizer` — wraps a Hugging Face fast tokenizer (subword ids and
  offset mapping); used with pretrained checkpoints. Imported lazily so the
  desk-scale path never needs the `transformers` package.

Both expose: `cls_id`, `sep_id`, `pad_id`, `turn_id` (the turn delimiter used
when rendering dialogue context), `vocab_size`, `identifier`, and
`encode_with_offsets(text) -> list[(token_id, char_start, char_end)]`.
"""

from __future__ import annotations

import hashlib
import re

TOKEN_PATTERN = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
TURN_ID = 3
NUM_RESERVED = 4


class HashingWordTokenizer:
    """Whitespace/punctuation tokenizer with hashed token ids.

    Ids are `blake2b(token) % (vocab_size - reserved) + reserved`, so the same
    token always maps to the same id without any stored vocabulary. Collisions
    are harmless at the scales this tokenizer is meant for.
    """

    def __init__(self, vocab_size: int = 8192):
        if vocab_size <= NUM_RESERVED:
            raise ValueError("vocab_size must exceed the reserved id range")
        self.vocab_size = vocab_size
        self.pad_id = PAD_ID
        self.cls_id = CLS_ID
        self.sep_id = SEP_ID
        self.turn_id = TURN_ID

    @property
    def identifier(self) -> str:
        return f"hashing-{self.vocab_size}"

    def token_id(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % (self.vocab_size - NUM_RESERVED) + NUM_RESERVED

    def encode_with_offsets(self, text: str) -> list[tuple[int, int, int]]:
        return [
            (self.token_id(m.group(0)), m.start(), m.end())
            for m in TOKEN_PATTERN.finditer(text)
        ]


class PretrainedTokenizer:
    """Adapter over a Hugging Face fast tokenizer."""

    def __init__(self, checkpoint: str):
        from transformers import AutoTokenizer

        self._tok = AutoTokenizer.from_pretrained(checkpoint, use_fast=True)
        self.checkpoint = checkpoint
        self.vocab_size = self._tok.vocab_size
        self.pad_id = self._tok.pad_token_id
        self.cls_id = self._tok.cls_token_id
        self.sep_id = self._tok.sep_token_id
        turn_id = self._tok.convert_tokens_to_ids("[unused0]")
        if turn_id is None or turn_id == self._tok.unk_token_id:
            raise ValueError(
                f"tokenizer for {checkpoint} has no [unused0] token to serve as turn delimiter"
            )
        self.turn_id = turn_id

    @property
    def identifier(self) -> str:
        return f"pretrained-{self.checkpoint}"

    def encode_with_offsets(self, text: str) -> list[tuple[int, int, int]]:
        enc = self._tok(text, add_special_tokens=False, return_offsets_mapping=True)
        return [
            (token_id, start, end)
            for token_id, (start, end) in zip(enc["input_ids"], enc["offset_mapping"])
            if end > start
        ]
