"""Command-line entry point: ``agdst <command> ...``.

Exit status: 0 success, 2 bad configuration or corpus, 3 numeric failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, kernels
from .core import ConfigError, StructuralError
from .corpus import (
    CorpusError,
    SyntheticSpec,
    corpus_hash,
    corpus_text,
    default_synthetic_spec,
    dump_corpus,
    generate_synthetic,
    load_corpus,
    ontology_text,
    predefined_split,
    split,
)
from .evaluate import (
    dumps_predictions,
    export_attention,
    load_predictions,
    metrics_report,
)
from .negsample import CorruptionPolicy
from .neural import NumericError, checkpoint
from .two_pass import RunConfig, Tracker, oracle_repair_run, predict, track_dialogue, train
from .vocab import Vocabulary, build_vocab

log = logging.getLogger("agdst")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

# Ablation matrix: name -> run-config overrides.
ABLATIONS = {
    "ag_dst": {},
    "no_negative_sampling": {"negative_sampling": "off"},
    "ns_plus": {"negative_sampling": "ns_plus"},
    "basic_only": {"amending_enabled": False},
    "current_turn_no_memory": {"state_memory": False},
    "full_history_memory": {"context_mode": "full_history"},
    "full_history_no_memory": {"context_mode": "full_history", "state_memory": False},
    "no_name_tokens": {"token_toggles": ["name"]},
    "no_utterance_tokens": {"token_toggles": ["utterance"]},
    "no_ds_tokens": {"token_toggles": ["ds"]},
    "token_position_embedding": {"embedding_mode": "token_position"},
}


# ---------------------------------------------------------------- helpers


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, data: bytes | str) -> bytes:
    raw = data.encode("utf-8") if isinstance(data, str) else data
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    return raw


def write_manifest(out_dir: Path, command: str, config_hash: str | None, corpus_path, outputs: dict,
                   extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config_hash": config_hash,
        "corpus_hash": corpus_hash(corpus_path) if corpus_path else None,
        "outputs": {name: _sha256(Path(p).read_bytes()) for name, p in sorted(outputs.items())},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        manifest.update(extra)
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from None


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    raw = _read_json(path) if path else {}
    raw.update(overrides or {})
    return RunConfig.from_json(raw)


SPLIT_SEED = 0  # fixed so model seeds never change which dialogues are held out


def splits_of(records):
    """Use the records' split tags when every record has one, otherwise a seeded 80/10/10 split."""
    if records and all(r.split for r in records):
        return predefined_split(records)
    return split(records, seed=SPLIT_SEED)


def _pick_split(records, name: str):
    train_r, valid_r, test_r = splits_of(records)
    parts = {"train": train_r, "valid": valid_r, "test": test_r, "all": list(records)}
    if name not in parts:
        raise ConfigError(f"unknown split {name!r}")
    return parts[name]


def _load_tracker(ckpt_path, schema, vocab_path=None) -> Tracker:
    ckpt_path = Path(ckpt_path)
    vocab = Vocabulary.load(vocab_path or ckpt_path.with_name("vocab.txt"))
    ckpt = checkpoint.load(ckpt_path, expected_vocab_hash=vocab.hash)
    return Tracker.from_checkpoint(ckpt, schema, vocab)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_json(_read_json(args.spec)) if args.spec else default_synthetic_spec()
    records = generate_synthetic(spec)
    tag = {}
    for name, part in zip(("train", "valid", "test"), split(records, seed=args.split_seed)):
        tag.update((r.id, name) for r in part)
    records = [replace(r, split=tag[r.id]) for r in records]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_corpus(out, spec.schema, records)
    write_manifest(out.parent, "gen-data", None, out, {"corpus": out},
                   {"spec": args.spec, "split_seed": args.split_seed})
    print(f"wrote {len(records)} dialogues to {out}")
    return 0


def _train_one(config: RunConfig, corpus_path, out_dir: Path) -> dict:
    schema, records = load_corpus(corpus_path)
    train_r, valid_r, test_r = splits_of(records)
    vocab = build_vocab(corpus_text(train_r), schema, extra=ontology_text(schema))
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_event(ev):
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
            fh.flush()
        result = train(train_r, valid_r, schema, vocab, config, on_event=on_event)
    checkpoint.save(out_dir / "model.ckpt", result.checkpoint)
    _write(out_dir / "run_config.json", json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    write_manifest(out_dir, "train", config.hash(), corpus_path,
                   {"checkpoint": out_dir / "model.ckpt", "vocab": out_dir / "vocab.txt", "log": log_path},
                   {"seed": config.seed, "best_epoch": result.best_epoch, "best_valid_jga": result.best_jga})
    if result.diverged:
        raise NumericError(f"training diverged; best checkpoint from epoch {result.best_epoch} kept in {out_dir}")
    return {"seed": config.seed, "best_epoch": result.best_epoch, "best_valid_jga": result.best_jga}


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.seeds:
        summary = []
        for seed in args.seeds:
            config = load_run_config(args.config, {"seed": seed})
            summary.append(_train_one(config, args.corpus, out / f"seed_{seed}"))
        scores = [s["best_valid_jga"] for s in summary]
        agg = {"runs": summary, "mean_valid_jga": statistics.fmean(scores),
               "stdev_valid_jga": statistics.stdev(scores) if len(scores) > 1 else 0.0}
        _write(out / "seed_sweep.json", json.dumps(agg, indent=2, sort_keys=True) + "\n")
        print(f"seed sweep: mean valid JGA {agg['mean_valid_jga']:.4f} over {len(scores)} seeds")
        return 0
    res = _train_one(load_run_config(args.config), args.corpus, out)
    print(f"best valid JGA {res['best_valid_jga']:.4f} at epoch {res['best_epoch']}; checkpoint in {out}")
    return 0


def cmd_predict(args) -> int:
    schema, records = load_corpus(args.corpus)
    tracker = _load_tracker(args.checkpoint, schema, args.vocab)
    part = _pick_split(records, args.split)
    out = Path(args.out)
    _write(out, dumps_predictions(predict(part, tracker)))
    outputs = {"predictions": out}
    if args.repair_out:
        policy = CorruptionPolicy(corrupt_prob=args.corrupt_prob, rng_seed=args.corrupt_seed)
        mode = "amend" if tracker.config.amending_enabled else "identity"
        rp = Path(args.repair_out)
        _write(rp, dumps_predictions(oracle_repair_run(part, tracker, policy, mode)))
        outputs["repair_predictions"] = rp
    write_manifest(out.parent, "predict", tracker.config.hash(), args.corpus, outputs,
                   {"split": args.split, "checkpoint_sha256": _sha256(Path(args.checkpoint).read_bytes())})
    print(f"wrote predictions for {len(part)} dialogues to {out}")
    return 0


def cmd_eval(args) -> int:
    schema, records = load_corpus(args.corpus)
    run = load_predictions(args.predictions, schema)
    gold = _pick_split(records, args.split)
    repair = load_predictions(args.repair, schema) if args.repair else None
    report = metrics_report(run, gold, repair, threshold=args.edit_threshold)
    out = Path(args.out)
    _write(out, report.dumps())
    write_manifest(out.parent, "eval", None, args.corpus, {"report": out},
                   {"predictions_sha256": _sha256(Path(args.predictions).read_bytes())})
    print(f"JGA {report.jga:.4f}  slot acc {report.slot_acc_overall:.4f}")
    return 0


def cmd_inspect_attention(args) -> int:
    schema, records = load_corpus(args.corpus)
    tracker = _load_tracker(args.checkpoint, schema, args.vocab)
    matches = [r for r in records if r.id == args.dialogue]
    if not matches:
        raise ConfigError(f"dialogue {args.dialogue!r} not in corpus")
    outputs = track_dialogue(matches[0], tracker, capture_attention=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_attention([(args.dialogue, i, o.attention) for i, o in enumerate(outputs)], out)
    write_manifest(out.parent, "inspect-attention", tracker.config.hash(), args.corpus, {"attention": out})
    print(f"wrote attention for {len(outputs)} turns to {out}")
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out)
    names = args.only or list(ABLATIONS)
    unknown = set(names) - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablations {sorted(unknown)}; have {sorted(ABLATIONS)}")
    base = _read_json(args.config) if args.config else {}
    if args.epochs:
        base["epochs"] = args.epochs
    schema, records = load_corpus(args.corpus)
    summary = {}
    for name in names:
        cfg = RunConfig.from_json({**base, **ABLATIONS[name]})
        run_dir = out / name
        _train_one(cfg, args.corpus, run_dir)
        tracker = _load_tracker(run_dir / "model.ckpt", schema)
        _, _, test_r = splits_of(records)
        run = predict(test_r, tracker)
        policy = CorruptionPolicy(corrupt_prob=0.5, rng_seed=args.corrupt_seed)
        mode = "amend" if cfg.amending_enabled else "identity"
        repair = oracle_repair_run(test_r, tracker, policy, mode)
        report = metrics_report(run, test_r, repair)
        _write(run_dir / "test_predictions.jsonl", dumps_predictions(run))
        _write(run_dir / "test_repair.jsonl", dumps_predictions(repair))
        _write(run_dir / "report.json", report.dumps())
        summary[name] = {"jga": report.jga, "slot_acc": report.slot_acc_overall, "repair_rate": report.repair_rate}
        log.info("%s: test JGA %.4f", name, report.jga)
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, s in summary.items():
        print(f"{name:28s} JGA {s['jga']:.4f}  slot {s['slot_acc']:.4f}  repair {s['repair_rate']:.4f}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agdst", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--backend", choices=kernels.available_backends(), help="kernel backend")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--spec", help="synthetic spec JSON (default spec when omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--split-seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a tracker")
    t.add_argument("--config", help="run config JSON (defaults when omitted)")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seeds", type=int, nargs="+", help="train once per seed and summarize")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="track dialogues with a trained checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--vocab", help="vocabulary file (default: vocab.txt beside the checkpoint)")
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--split", default="test", choices=("train", "valid", "test", "all"))
    pr.add_argument("--out", required=True)
    pr.add_argument("--repair-out", help="also write an oracle-corruption repair run here")
    pr.add_argument("--corrupt-prob", type=float, default=0.5)
    pr.add_argument("--corrupt-seed", type=int, default=1234)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score a predictions file")
    e.add_argument("--predictions", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="test", choices=("train", "valid", "test", "all"))
    e.add_argument("--repair", help="repair-run predictions file for repair_rate")
    e.add_argument("--edit-threshold", type=float, default=0.34)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("inspect-attention", help="dump attention maps for one dialogue")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--vocab")
    a.add_argument("--corpus", required=True)
    a.add_argument("--dialogue", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_inspect_attention)

    ab = sub.add_parser("ablate", help="train and score the ablation matrix")
    ab.add_argument("--config")
    ab.add_argument("--corpus", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--only", nargs="+", help=f"subset of: {', '.join(ABLATIONS)}")
    ab.add_argument("--epochs", type=int)
    ab.add_argument("--corrupt-seed", type=int, default=1234)
    ab.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        kernels.set_backend(args.backend)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"agdst: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CorpusError, StructuralError, checkpoint.CheckpointError, ValueError) as exc:
        print(f"agdst: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"agdst: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
