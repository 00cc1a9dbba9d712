"""Command line interface: train a model bundle, index books, run evaluations,
train/apply the text-quality gate, and serve the HTTP API."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
import urllib.request
from pathlib import Path

from .bundle import load_bundle
from .corpus import TrainingConfig, corpus_stats, load_corpus
from .evaluate import (convergence_study, evaluate_set, write_convergence_csv,
                       write_reports_csv, write_reports_json)
from .pipeline import (IndexingConfig, TrainOptions, index_book, load_book_source,
                       outcome_to_json_dict, to_marc21, train_and_save)
from .tagger import DEFAULT_DIM, HybridConfig, Hyper
from .textqc import load_char_model, save_char_model, score_text, train_char_model


def _cmd_train(args: argparse.Namespace) -> int:
    books = load_corpus(args.corpus)
    stats = corpus_stats(books)
    print(f"corpus: {stats.n_books} books, {stats.unique_labels} unique labels, "
          f"mean extent {stats.extent_mean:.1f} pages", file=sys.stderr)
    opts = TrainOptions(
        corpus=TrainingConfig(min_examples=args.min_examples),
        dim=args.dim,
        seed=args.seed,
        hybrid=HybridConfig(similar_docs=args.similar_docs,
                            candidate_cap=args.candidate_cap),
        hyper=Hyper(l2=args.l2, lr=args.lr, epochs=args.epochs),
        with_qc=not args.no_qc,
        analyzer_dir=args.analyzers,
    )
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    bundle = train_and_save(books, args.out, opts, log)
    print(f"bundle written to {args.out}: {len(bundle.vocabulary)} labels, "
          f"{bundle.index.doc_count} indexed pages", file=sys.stderr)
    return 0


def _fetch_url(url: str) -> str:
    suffix = Path(url.split("?")[0]).suffix or ".txt"
    with urllib.request.urlopen(url, timeout=60) as resp:
        data = resp.read()
    with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
        tmp.write(data)
        return tmp.name


def _cmd_index(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    cfg = IndexingConfig(pages_n=args.pages, buffer=args.buffer,
                         threshold=args.threshold, seed=args.seed,
                         hybrid=bundle.hybrid)
    source = args.book if args.book else _fetch_url(args.url)
    outcome = index_book(bundle, load_book_source(source), cfg)
    if args.format == "marc21":
        print(to_marc21(outcome.keywords))
    else:
        print(json.dumps(outcome_to_json_dict(outcome, include_timing=args.timing),
                         ensure_ascii=False, indent=2))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    books = load_corpus(args.test)
    thresholds = [t.strip() for t in args.thresholds.split(",") if t.strip()]
    cfg = IndexingConfig(pages_n=args.pages, seed=args.seed, hybrid=bundle.hybrid)
    reports = evaluate_set(bundle, books, cfg, thresholds,
                           exclude_unseen=not args.include_unseen)
    for report in reports:
        print(f"threshold {report.threshold:g}: "
              f"P {report.macro_precision:.3f} "
              f"R {report.macro_recall:.3f} "
              f"F1 {report.macro_f1:.3f} "
              f"({len(report.per_book)} books, {report.skipped_books} skipped)")
    if args.out_json:
        write_reports_json(reports, args.out_json)
    if args.out_csv:
        write_reports_csv(reports, args.out_csv)
    if args.convergence_csv:
        rows, _ = convergence_study(bundle, books, max_pages=args.pages * 5,
                                    seed=args.seed)
        write_convergence_csv(rows, args.convergence_csv)
    return 0


def _cmd_qc_train(args: argparse.Namespace) -> int:
    texts = [Path(p).read_text(encoding="utf-8") for p in args.text_file]
    model = train_char_model(texts, order=args.order, alpha=args.alpha)
    save_char_model(model, args.out)
    print(f"quality model written to {args.out} "
          f"({len(model.alphabet)} characters, order {model.order})", file=sys.stderr)
    return 0


def _cmd_qc_score(args: argparse.Namespace) -> int:
    model = load_char_model(args.model)
    text = Path(args.text_file).read_text(encoding="utf-8")
    print(f"{score_text(model, text):.6f}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    bundle = load_bundle(args.model)
    app = create_app(bundle, IndexingConfig(hybrid=bundle.hybrid),
                     workers=args.workers, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kratt",
        description="Automatic subject indexing: assign controlled-vocabulary "
                    "keywords to books from a sample of their pages.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model bundle from a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-examples", type=int, default=50, dest="min_examples")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--similar-docs", type=int, default=20, dest="similar_docs")
    p.add_argument("--candidate-cap", type=int, default=20, dest="candidate_cap")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--no-qc", action="store_true", dest="no_qc",
                   help="skip the extraction-quality gate")
    p.add_argument("--analyzers", default=None,
                   help="directory of per-language lemma/suffix/POS tables")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("index", help="assign keywords to one book")
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--book", help="path to .json/.jsonl/.txt/.pdf book")
    group.add_argument("--url", help="remote book resource")
    p.add_argument("--pages", type=int, default=10)
    p.add_argument("--buffer", type=int, default=5)
    p.add_argument("--threshold", default="0.4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "marc21"), default="json")
    p.add_argument("--timing", action="store_true",
                   help="include elapsed_ms in JSON output")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("eval", help="score the indexer against gold subjects")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="JSONL corpus with gold subjects")
    p.add_argument("--thresholds", default="0,0.2,0.4")
    p.add_argument("--pages", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-unseen", action="store_true", dest="include_unseen",
                   help="keep gold labels missing from the training vocabulary")
    p.add_argument("--out-json", default=None, dest="out_json")
    p.add_argument("--out-csv", default=None, dest="out_csv")
    p.add_argument("--convergence-csv", default=None, dest="convergence_csv")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("qc-train", help="train the text-quality model")
    p.add_argument("--text-file", action="append", required=True, dest="text_file")
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=_cmd_qc_train)

    p = sub.add_parser("qc-score", help="score a text file with a quality model")
    p.add_argument("--model", required=True)
    p.add_argument("--text-file", required=True, dest="text_file")
    p.set_defaults(func=_cmd_qc_score)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--ui", default=None, help="static directory for the web UI")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
