"""Command-line entry point.

Exit codes: 0 success, 1 validation or input error, 2 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .backend import BackendError, RecordingBackend, ReplayBackend, WireBackend
from .corpus import CorpusError, convert_spkatt, corpus_stats, dump_corpus, load_corpus, validate_corpus
from .metrics import ScoringError, Subtask, dump_report, render_report, score_corpus
from .pipeline import RunConfig, load_predictions, run_predict
from .prompt import (
    HeuristicCounter,
    TrainingConfig,
    TransformersCounter,
    build_training_set,
    emit_training_config,
    write_jsonl,
)

log = logging.getLogger("spkatt")

EXIT_OK, EXIT_INVALID, EXIT_BACKEND = 0, 1, 2
TOKENIZER_ENV = "SPKATT_TOKENIZER"


def make_counter(kind: str):
    if kind == "heuristic":
        return HeuristicCounter()
    name = os.environ.get(TOKENIZER_ENV)
    if not name:
        raise CorpusError(f"--tokenizer external needs ${TOKENIZER_ENV} set to a tokenizer name or path")
    return TransformersCounter.from_pretrained(name)


def cmd_ingest(args) -> int:
    if args.format == "spkatt":
        src = Path(args.corpus)
        files = sorted(src.glob("*.json")) if src.is_dir() else [src]
        corpus = convert_spkatt(files, args.split or src.stem)
        violations = validate_corpus(corpus)
        if violations:
            for v in violations[:20]:
                print(v, file=sys.stderr)
            return EXIT_INVALID
        if args.convert_to:
            dump_corpus(corpus, args.convert_to)
    else:
        corpus = load_corpus(args.corpus)
    stats = corpus_stats(corpus)
    print(json.dumps(stats.to_json(), indent=1, sort_keys=True) if args.json else stats.render())
    return EXIT_OK


def cmd_export_train(args) -> int:
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cues, roles, report = build_training_set(corpus, make_counter(args.tokenizer), TrainingConfig())
    write_jsonl(cues, out / "cue_train.jsonl")
    write_jsonl(roles, out / "role_train.jsonl")
    (out / "truncation.json").write_text(json.dumps(report.to_json(), indent=1) + "\n", encoding="utf-8")
    print(f"{len(cues)} cue pairs, {len(roles)} role pairs; truncated: {report.to_json()}")
    return EXIT_OK


def cmd_export_config(args) -> int:
    path = Path(args.out)
    if path.is_dir():
        path = path / "training.cfg"
    emit_training_config(TrainingConfig(), path)
    print(path)
    return EXIT_OK


def _run_config(args) -> RunConfig:
    return RunConfig(
        corpus=args.corpus,
        backend=args.backend,
        endpoint=args.endpoint,
        replay_store=args.replay_store,
        subtask=args.subtask,
        jobs=args.jobs,
        out=args.out,
        tokenizer=args.tokenizer,
    )


def cmd_predict(args) -> int:
    try:
        config = _run_config(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    corpus = load_corpus(config.corpus)
    if config.backend == "replay":
        backend = ReplayBackend.from_path(config.replay_store)
    else:
        backend = WireBackend(config.endpoint, model=args.model)
    run_predict(config, corpus, backend)
    return EXIT_OK


def cmd_record(args) -> int:
    if not args.endpoint or not args.replay_store:
        print("error: record needs --endpoint and --replay-store", file=sys.stderr)
        return EXIT_INVALID
    args.backend = "wire"
    config = _run_config(args)
    corpus = load_corpus(config.corpus)
    backend = RecordingBackend(WireBackend(config.endpoint, model=args.model), args.replay_store)
    run_predict(config, corpus, backend)
    return EXIT_OK


def cmd_score(args) -> int:
    gold = load_corpus(args.gold)
    preds = load_predictions(args.predictions)
    subtask = Subtask.parse(args.subtask)
    report = score_corpus(preds, {sp.id: list(sp.annotations) for sp in gold}, subtask)
    table = render_report(report)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.txt").write_text(table + "\n", encoding="utf-8")
        (out / "scores.json").write_text(dump_report(report) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkatt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and print statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["canonical", "spkatt"], default="canonical")
    p.add_argument("--split", help="split name for converted corpora")
    p.add_argument("--convert-to", help="write the converted corpus to this path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("export-train", help="write cue and role instruction pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tokenizer", choices=["heuristic", "external"], default="heuristic")
    p.set_defaults(func=cmd_export_train)

    p = sub.add_parser("export-config", help="write the fine-tuning hyperparameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_config)

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--corpus", required=True)
    run.add_argument("--endpoint", default=os.environ.get("SPKATT_ENDPOINT"))
    run.add_argument("--model", help="model name sent to the wire endpoint")
    run.add_argument("--replay-store")
    run.add_argument("--subtask", choices=["full", "roles"], default="full")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out", required=True)
    run.add_argument("--tokenizer", choices=["heuristic", "external"], default="heuristic")

    p = sub.add_parser("predict", parents=[run], help="run two-step prediction")
    p.add_argument("--backend", choices=["wire", "replay"], default="replay")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("record", parents=[run], help="predict against a wire backend, recording a replay store")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("score", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--subtask", choices=["full", "roles"], default="full")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, ScoringError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
