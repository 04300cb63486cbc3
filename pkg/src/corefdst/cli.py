"""Command-line pipeline: ingest -> audit -> train -> predict -> merge ->
evaluate -> ablate.

Config precedence is CLI flag > config file > built-in defaults. Every
subcommand writes only inside its --out directory and records a run manifest
there; data artifacts embed the manifest hash.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .corpus import (
    attach_coref_annotations,
    convert_multiwoz23_coreference,
    default_inventory,
    load_multiwoz,
)
from .data import read_corpus, write_corpus
from .errors import CorefDstError
from .evaluation import (
    ABLATIONS,
    audit_dataset,
    evaluate_predictions,
    format_report_table,
    run_ablation,
    write_per_slot_csv,
)
from .manifest import RunManifest
from .encoding import SamplingPolicy, batch_examples
from .model import load_checkpoint, predict_corpus
from .tracker import (
    MergeRule,
    apply_coref_with_provenance,
    read_base_predictions,
    read_coref_predictions,
    write_coref_predictions,
    write_merged_states,
)
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

# TrainConfig fields exposed as CLI overrides (flag name = field with dashes).
_CONFIG_OVERRIDES = [
    ("learning-rate", "learning_rate", float),
    ("max-seq-length", "max_seq_length", int),
    ("warmup-ratio", "warmup_ratio", float),
    ("epochs", "epochs", int),
    ("batch-size", "batch_size", int),
    ("beta", "beta", float),
    ("seed", "seed", int),
    ("encoder", "encoder", str),
    ("threshold", "threshold", float),
    ("negative-ratio", "negative_ratio", float),
    ("optimizer", "optimizer", str),
    ("device", "device", str),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file mirroring TrainConfig")
    for flag, _, cast in _CONFIG_OVERRIDES:
        parser.add_argument(f"--{flag}", type=cast, default=None)
    parser.add_argument("--no-utterance", action="store_true", help="ablation: drop the current user utterance segment")
    parser.add_argument("--no-slot", action="store_true", help="ablation: drop the domain-slot segment")


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    if args.config is not None:
        values.update(json.loads(Path(args.config).read_text()))
    for flag, field_name, _ in _CONFIG_OVERRIDES:
        override = getattr(args, flag.replace("-", "_"))
        if override is not None:
            values[field_name] = override
    if getattr(args, "no_utterance", False):
        values["include_utterance"] = False
    if getattr(args, "no_slot", False):
        values["include_slot"] = False
    return TrainConfig.from_dict(values)


def _data_dir_default() -> str | None:
    return os.environ.get("CDST_DATA_DIR")


def _read_split(path: Path, splits: list[str] | None, workers: int = 1):
    inventory = default_inventory()
    dialogues = read_corpus(path, inventory, splits)
    return dialogues, inventory


def _cmd_ingest(args) -> int:
    out = Path(args.out)
    manifest = RunManifest(
        command="ingest",
        config={"coref_format": args.coref_format},
        inputs={"data_dir": str(args.data_dir), "coref_file": str(args.coref_file or "")},
        outputs={"corpus": "corpus.jsonl"},
    )
    mhash = manifest.hash()

    dialogues, load_report = load_multiwoz(args.data_dir)
    attach_report = None
    if args.coref_file is not None:
        if args.coref_format == "multiwoz23":
            annotations = convert_multiwoz23_coreference(args.coref_file)
            converted = out / "coref_annotations.flat.json"
            out.mkdir(parents=True, exist_ok=True)
            converted.write_text(json.dumps(annotations, indent=2, sort_keys=True) + "\n")
            annotation_file = converted
        else:
            annotation_file = args.coref_file
        dialogues, attach_report = attach_coref_annotations(dialogues, annotation_file)

    out.mkdir(parents=True, exist_ok=True)
    write_corpus(dialogues, out / "corpus.jsonl", mhash)
    report = {"load": load_report.to_dict(), "manifest_hash": mhash}
    if attach_report is not None:
        report["attach"] = attach_report.to_dict()
    (out / "load_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    manifest.write(out)

    print(f"ingested {load_report.dialogues_loaded} dialogues "
          f"(skipped {load_report.dialogues_skipped}); splits: {load_report.split_sizes}")
    if attach_report is not None:
        print(f"coreference labels attached: {attach_report.labels_attached} "
              f"(alignment failures: {attach_report.alignment_failures})")
    return 0


def _cmd_audit(args) -> int:
    if args.corpus is not None:
        dialogues, inventory = _read_split(args.corpus, None, args.workers)
    elif args.data_dir is not None:
        dialogues, _ = load_multiwoz(args.data_dir)
        if args.coref_file is not None:
            dialogues, _ = attach_coref_annotations(dialogues, args.coref_file)
        inventory = default_inventory()
    else:
        print("error: audit requires --corpus or --data-dir", file=sys.stderr)
        return 1
    report = audit_dataset(dialogues, inventory)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.out is not None:
        out = Path(args.out)
        manifest = RunManifest(
            command="audit",
            config={},
            inputs={"corpus": str(args.corpus or args.data_dir)},
            outputs={"report": "audit.json"},
        )
        out.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict() | {"manifest_hash": manifest.hash()}
        (out / "audit.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        manifest.write(out)
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    manifest = RunManifest(
        command="train",
        config=config.to_dict(),
        inputs={"corpus": str(args.data)},
        outputs={"checkpoint": ".", "report": "train_report.json"},
        seed=config.seed,
    )
    dialogues, inventory = _read_split(args.data, None, args.workers)
    train_dialogues = [d for d in dialogues if d.split == "train"]
    dev_dialogues = [d for d in dialogues if d.split == "dev"]
    if not train_dialogues:
        print("error: corpus has no train split", file=sys.stderr)
        return 1

    from .evaluation import _tokenizer_for

    tokenizer = _tokenizer_for(config)
    input_config = config.input_config()
    sampling = SamplingPolicy(kind="balanced", negative_ratio=config.negative_ratio, seed=config.seed)
    train_stream = list(batch_examples(train_dialogues, inventory, input_config, tokenizer, sampling))
    dev_stream = (
        list(batch_examples(dev_dialogues, inventory, input_config, tokenizer))
        if dev_dialogues else None
    )
    _, report = train(train_stream, dev_stream, config, out)
    manifest.write(out)
    best = report.best_epoch
    print(f"trained {report.total_steps} steps over {config.epochs} epochs; "
          f"best epoch {best}; final loss {report.final_step_loss:.4f}")
    return 0


def _cmd_predict(args) -> int:
    out = Path(args.out)
    model, tokenizer, checkpoint_manifest = load_checkpoint(args.checkpoint)
    config = TrainConfig.from_dict(checkpoint_manifest["config"])
    threshold = args.threshold if args.threshold is not None else config.threshold
    manifest = RunManifest(
        command="predict",
        config={"threshold": threshold, "split": args.split, "config_hash": checkpoint_manifest.get("config_hash", "")},
        inputs={"checkpoint": str(args.checkpoint), "corpus": str(args.corpus)},
        outputs={"predictions": "predictions.jsonl"},
        seed=config.seed,
    )
    dialogues, inventory = _read_split(args.corpus, [args.split] if args.split != "all" else None, args.workers)
    if not dialogues:
        print(f"error: no dialogues in split {args.split!r}", file=sys.stderr)
        return 1
    predictions = predict_corpus(
        dialogues, model, tokenizer, config.input_config(), inventory,
        threshold=threshold,
        mask_invalid_positions=config.mask_invalid_positions,
        decode_mode=config.decode_mode,
    )
    out.mkdir(parents=True, exist_ok=True)
    write_coref_predictions(predictions, out / "predictions.jsonl", manifest.hash())
    manifest.write(out)
    fired = sum(
        1 for slots in predictions.values() for p in slots.values() if p.value != "none"
    )
    print(f"predicted {len(predictions)} turns; coreference fired on {fired} slot instances")
    return 0


def _cmd_merge(args) -> int:
    out = Path(args.out)
    rule = MergeRule(policy=args.policy, threshold=args.threshold)
    manifest = RunManifest(
        command="merge",
        config={"policy": rule.policy, "threshold": rule.threshold},
        inputs={"pred": str(args.pred), "base": str(args.base)},
        outputs={"merged": "merged.jsonl"},
    )
    inventory = default_inventory()
    predictions = read_coref_predictions(args.pred)
    base_states = read_base_predictions(args.base, inventory)
    missing = set(predictions) - set(base_states)
    if missing:
        print(f"error: base predictions missing for {len(missing)} turns "
              f"(e.g. {sorted(missing)[:3]})", file=sys.stderr)
        return 1
    merged = {}
    for key, base in base_states.items():
        merged[key] = apply_coref_with_provenance(base, predictions.get(key, {}), rule)
    out.mkdir(parents=True, exist_ok=True)
    write_merged_states(merged, out / "merged.jsonl", manifest.hash())
    manifest.write(out)
    edited = sum(
        1 for _, prov in merged.values() for tag in prov.values() if tag == "coref"
    )
    print(f"merged {len(merged)} turns under policy {rule.policy}; coreference edits: {edited}")
    return 0


def _cmd_evaluate(args) -> int:
    inventory = default_inventory()
    dialogues, _ = _read_split(args.gold, [args.split] if args.split != "all" else None, args.workers)
    if not dialogues:
        print(f"error: no dialogues in split {args.split!r}", file=sys.stderr)
        return 1
    predictions = read_coref_predictions(args.pred)
    base_states = read_base_predictions(args.base, inventory) if args.base is not None else None
    rule = MergeRule(policy=args.policy, threshold=args.threshold)
    report, merged = evaluate_predictions(
        dialogues, predictions, inventory, base_states=base_states, rule=rule,
    )
    mode = "merged" if args.base is not None else "standalone"
    print(f"mode: {mode}; policy: {rule.policy}")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.out is not None:
        out = Path(args.out)
        manifest = RunManifest(
            command="evaluate",
            config={"policy": rule.policy, "threshold": rule.threshold, "mode": mode, "split": args.split},
            inputs={"pred": str(args.pred), "gold": str(args.gold), "base": str(args.base or "")},
            outputs={"report": "eval_report.json", "per_slot": "per_slot_coref_accuracy.csv"},
        )
        out.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict() | {"manifest_hash": manifest.hash(), "mode": mode}
        (out / "eval_report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        write_per_slot_csv(report.per_slot_coref_accuracy, out / "per_slot_coref_accuracy.csv")
        write_merged_states(merged, out / "merged.jsonl", manifest.hash())
        manifest.write(out)
    return 0


def _cmd_ablate(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    manifest = RunManifest(
        command="ablate",
        config=config.to_dict(),
        inputs={"corpus": str(args.data)},
        outputs={"table": "ablation_table.json"},
        seed=config.seed,
    )
    dialogues, inventory = _read_split(args.data, None, args.workers)
    train_dialogues = [d for d in dialogues if d.split == "train"]
    dev_dialogues = [d for d in dialogues if d.split == "dev"]
    eval_dialogues = [d for d in dialogues if d.split == args.split] or dialogues

    names = args.ablations.split(",") if args.ablations else [n for n, _ in ABLATIONS]
    known = dict(ABLATIONS)
    unknown = [n for n in names if n not in known]
    if unknown:
        print(f"error: unknown ablation names {unknown}; choose from {list(known)}", file=sys.stderr)
        return 1
    rows = run_ablation(
        train_dialogues, dev_dialogues, eval_dialogues, config, inventory,
        ablations=[(n, known[n]) for n in names],
        out_dir=out,
    )
    table = {name: report.to_dict() for name, report in rows}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation_table.json").write_text(
        json.dumps(table | {"manifest_hash": manifest.hash()}, indent=2, sort_keys=True) + "\n"
    )
    manifest.write(out)
    print(format_report_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corefdst",
        description="Coreference-aware dialogue state tracking pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load raw MultiWOZ files into the internal corpus format")
    p.add_argument("--data-dir", type=Path, default=_data_dir_default(), required=_data_dir_default() is None)
    p.add_argument("--coref-file", type=Path, default=None)
    p.add_argument("--coref-format", choices=("flat", "multiwoz23"), default="flat")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1, help="data-parallel loading only")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("audit", help="corpus statistics (splits, slots, coreference coverage)")
    p.add_argument("--corpus", type=Path, default=None, help="ingested corpus.jsonl")
    p.add_argument("--data-dir", type=Path, default=_data_dir_default(), help="raw MultiWOZ directory")
    p.add_argument("--coref-file", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("train", help="fine-tune the tracker")
    p.add_argument("--data", type=Path, required=True, help="ingested corpus.jsonl")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="run a checkpoint over a corpus split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test", "all"))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("merge", help="merge coreference predictions into base-tracker states")
    p.add_argument("--pred", type=Path, required=True, help="coreference predictions.jsonl")
    p.add_argument("--base", type=Path, required=True, help="base tracker states jsonl")
    p.add_argument("--policy", choices=("coref-overrides-base", "coref-fills-empty-only"),
                   default="coref-overrides-base")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("evaluate", help="score predictions against the gold corpus")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gold", type=Path, required=True, help="ingested corpus.jsonl")
    p.add_argument("--split", default="test", choices=("train", "dev", "test", "all"))
    p.add_argument("--base", type=Path, default=None, help="base tracker states (omit for standalone mode)")
    p.add_argument("--policy", choices=("coref-overrides-base", "coref-fills-empty-only"),
                   default="coref-overrides-base")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate the input-ablation matrix")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ablations", default=None, help="comma-separated subset of: full,-uttr,-uttr-slot")
    p.add_argument("--workers", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorefDstError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
