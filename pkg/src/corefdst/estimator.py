"""Scikit-learn style estimator wrapping the full train/predict pipeline.

`CorefStateTracker` follows the sklearn conventions (constructor stores
hyperparameters verbatim, `fit` returns self, fitted attributes carry a
trailing underscore, `get_params`/`set_params` inherited from BaseEstimator),
so the tracker composes with sklearn tooling such as `clone`. X is a sequence
of `Dialogue` objects with coreference labels attached.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .data import Dialogue
from .encoding import SamplingPolicy, batch_examples
from .model import predict_corpus
from .ontology import load_inventory
from .training import TrainConfig, evaluate_examples, train
from .validation import check_dialogues, check_threshold


class CorefStateTracker(BaseEstimator):
    """Joint coreference classification and span-extraction state tracker.

    Parameters mirror `TrainConfig`; see that class for semantics. `fit`
    fine-tunes the encoder and per-slot heads on the given dialogues;
    `predict` returns, per dialogue, one slot->value mapping per turn holding
    the extracted coreference values ("none" where no coreference fired).
    """

    def __init__(
        self,
        encoder: str = "tiny",
        learning_rate: float = 1e-4,
        epochs: int = 10,
        batch_size: int = 2,
        beta: float = 0.8,
        threshold: float = 0.5,
        max_seq_length: int = 512,
        warmup_ratio: float = 0.1,
        negative_ratio: float = 3.0,
        include_utterance: bool = True,
        include_slot: bool = True,
        mask_invalid_positions: bool = True,
        decode_mode: str = "independent",
        seed: int = 13,
        device: str = "cpu",
    ):
        self.encoder = encoder
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta = beta
        self.threshold = threshold
        self.max_seq_length = max_seq_length
        self.warmup_ratio = warmup_ratio
        self.negative_ratio = negative_ratio
        self.include_utterance = include_utterance
        self.include_slot = include_slot
        self.mask_invalid_positions = mask_invalid_positions
        self.decode_mode = decode_mode
        self.seed = seed
        self.device = device

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            encoder=self.encoder,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            beta=self.beta,
            threshold=check_threshold(self.threshold),
            max_seq_length=self.max_seq_length,
            warmup_ratio=self.warmup_ratio,
            negative_ratio=self.negative_ratio,
            include_utterance=self.include_utterance,
            include_slot=self.include_slot,
            mask_invalid_positions=self.mask_invalid_positions,
            decode_mode=self.decode_mode,
            seed=self.seed,
            device=self.device,
        )

    def fit(self, X, y=None, dev=None):
        """Fine-tune on dialogues with attached coreference labels.

        `dev`, when given, is a held-out dialogue list used for best-epoch
        selection.
        """
        dialogues = check_dialogues(X)
        self.inventory_ = load_inventory()
        config = self._train_config()
        input_config = config.input_config()
        from .evaluation import _tokenizer_for

        tokenizer = _tokenizer_for(config)
        sampling = SamplingPolicy(kind="balanced", negative_ratio=config.negative_ratio, seed=config.seed)
        train_stream = list(batch_examples(dialogues, self.inventory_, input_config, tokenizer, sampling))
        dev_stream = None
        if dev is not None:
            dev_stream = list(
                batch_examples(check_dialogues(dev), self.inventory_, input_config, tokenizer)
            )
        self.model_, self.report_ = train(train_stream, dev_stream, config)
        self.tokenizer_ = tokenizer
        self.config_ = config
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this CorefStateTracker instance is not fitted yet")

    def predict(self, X) -> list[list[dict[str, str]]]:
        """Per-dialogue lists of per-turn slot->value coreference extractions."""
        self._check_fitted()
        dialogues = check_dialogues(X)
        predictions = predict_corpus(
            dialogues, self.model_, self.tokenizer_, self.config_.input_config(), self.inventory_,
            threshold=self.threshold,
            mask_invalid_positions=self.mask_invalid_positions,
            decode_mode=self.decode_mode,
        )
        out = []
        for dialogue in dialogues:
            out.append(
                [
                    {slot: p.value for slot, p in predictions[(dialogue.dialogue_id, t.turn_index)].items()}
                    for t in dialogue.turns
                ]
            )
        return out

    def predict_proba(self, X) -> list[list[dict[str, float]]]:
        """Per-turn slot->p_coref maps (probability the slot is coreferred)."""
        self._check_fitted()
        dialogues = check_dialogues(X)
        predictions = predict_corpus(
            dialogues, self.model_, self.tokenizer_, self.config_.input_config(), self.inventory_,
            threshold=self.threshold,
            mask_invalid_positions=self.mask_invalid_positions,
            decode_mode=self.decode_mode,
        )
        out = []
        for dialogue in dialogues:
            out.append(
                [
                    {slot: p.p_coref for slot, p in predictions[(dialogue.dialogue_id, t.turn_index)].items()}
                    for t in dialogue.turns
                ]
            )
        return out

    def score(self, X, y=None) -> float:
        """Joint coreference accuracy (slot-type decision plus span match) on
        dialogues carrying gold coreference labels."""
        self._check_fitted()
        dialogues = check_dialogues(X, self.inventory_)
        examples = list(
            batch_examples(dialogues, self.inventory_, self.config_.input_config(), self.tokenizer_)
        )
        metrics = evaluate_examples(
            self.model_, examples, self.tokenizer_.pad_id,
            threshold=self.threshold,
            mask_invalid_positions=self.mask_invalid_positions,
        )
        return metrics.joint_accuracy
