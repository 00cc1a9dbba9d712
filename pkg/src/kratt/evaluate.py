"""Evaluation harness: per-book precision/recall/F1 with macro averaging,
unseen-label exclusion, threshold sweeps, page-count convergence, and
keyword-count reports. Emits JSON and CSV; plotting stays out of the engine."""

from __future__ import annotations

import csv
import json
import statistics
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .bundle import ModelBundle
from .corpus import BookRecord
from .pipeline import (IndexingConfig, apply_threshold, exact_threshold,
                       index_book, sample_pages)
from .preprocess import analyze, detect_language
from .tagger import featurize, predict_page

EXTENT_CLASSES = (
    ("1-49", 1, 49),
    ("50-99", 50, 99),
    ("100-299", 100, 299),
    ("300-499", 300, 499),
    (">=500", 500, None),
)


@dataclass(frozen=True)
class BookEval:
    book_id: str
    precision: float
    recall: float
    f1: float
    gold_size: int
    pred_size: int
    excluded_unseen: int = 0


@dataclass
class EvalReport:
    threshold: float
    per_book: list[BookEval]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    skipped_books: int
    config: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConvergenceRow:
    extent_class: str
    books: int
    pages_to_90pct: float
    pages_to_max: float


def prf(gold: set[str], predicted: set[str], book_id: str = "",
        excluded_unseen: int = 0) -> BookEval:
    """Precision, recall and F1 of a predicted term set against gold.

    Empty predictions score zero (silence is penalized, not undefined).
    """
    if not gold:
        raise ValueError("gold set must be non-empty; skip such books upstream")
    overlap = len(gold & predicted)
    precision = overlap / len(predicted) if predicted else 0.0
    recall = overlap / len(gold)
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return BookEval(book_id=book_id, precision=precision, recall=recall, f1=f1,
                    gold_size=len(gold), pred_size=len(predicted),
                    excluded_unseen=excluded_unseen)


def _gold_terms(book: BookRecord) -> set[str]:
    return {t.term for t in book.subjects}


def evaluate_set(bundle: ModelBundle, books: list[BookRecord],
                 cfg: IndexingConfig | None = None,
                 thresholds: list[float | str | Fraction] = (0, 0.2, 0.4),
                 exclude_unseen: bool = True) -> list[EvalReport]:
    """Index every test book once at threshold 0, then score each threshold.

    With exclude_unseen, gold labels absent from the training vocabulary are
    removed before scoring; books whose gold set empties out are skipped and
    counted.
    """
    if not books:
        raise ValueError("empty test set")
    cfg = cfg or IndexingConfig()
    base_cfg = replace(cfg, threshold=0)

    indexed: list[tuple[BookRecord, set[str], int, list]] = []
    skipped = 0
    for book in books:
        gold = _gold_terms(book)
        excluded = 0
        if exclude_unseen:
            seen = gold & set(bundle.vocabulary)
            excluded = len(gold) - len(seen)
            gold = seen
        if not gold:
            warnings.warn(f"book {book.id!r}: no scorable gold labels; skipped")
            skipped += 1
            continue
        outcome = index_book(bundle, book, base_cfg)
        indexed.append((book, gold, excluded, outcome.keywords))

    if not indexed:
        raise ValueError("every test book was skipped; nothing to evaluate")

    reports = []
    for theta in thresholds:
        per_book = []
        for book, gold, excluded, keywords in indexed:
            predicted = {kw.term for kw in apply_threshold(keywords, theta)}
            per_book.append(prf(gold, predicted, book.id, excluded))
        reports.append(EvalReport(
            threshold=float(exact_threshold(theta)),
            per_book=per_book,
            macro_precision=sum(b.precision for b in per_book) / len(per_book),
            macro_recall=sum(b.recall for b in per_book) / len(per_book),
            macro_f1=sum(b.f1 for b in per_book) / len(per_book),
            skipped_books=skipped,
            config={
                "pages_n": cfg.pages_n, "buffer": cfg.buffer, "seed": cfg.seed,
                "similar_docs": cfg.hybrid.similar_docs,
                "candidate_cap": cfg.hybrid.candidate_cap,
                "exclude_unseen": exclude_unseen,
            },
        ))
    return reports


def _predict_terms(bundle: ModelBundle, text: str) -> set[str]:
    if bundle.char_model is not None and bundle.quality is not None:
        from .textqc import passes_quality
        if not passes_quality(bundle.char_model, bundle.quality, text):
            return set()
    if bundle.profiles:
        lang, confidence = detect_language(bundle.profiles, text)
    else:
        lang, confidence = "und", 0.0
    page = analyze(text, lang, bundle.analyzer_for(lang), confidence)
    fv = featurize(page, bundle.dim, bundle.sublinear_tf)
    return set(predict_page(bundle.label_models, bundle.index, bundle.hybrid, fv))


def extent_class(pages: int) -> str:
    for name, low, high in EXTENT_CLASSES:
        if pages >= low and (high is None or pages <= high):
            return name
    raise ValueError(f"extent {pages} outside all classes")


def convergence_study(bundle: ModelBundle, books: list[BookRecord],
                      max_pages: int = 50, seed: int = 0,
                      ) -> tuple[list[ConvergenceRow], dict[str, list[float]]]:
    """Recall-vs-pages curves under nested sampling at threshold 0.

    Maximum recall is the recall after using every page of the book. Returns
    per-extent-class averages of the pages needed to reach 90% of maximum and
    to reach the maximum, plus the per-book recall curves.
    """
    per_book_curves: dict[str, list[float]] = {}
    per_book_stats: dict[str, tuple[str, int, int]] = {}

    for book in books:
        gold = _gold_terms(book) & set(bundle.vocabulary)
        if not gold:
            warnings.warn(f"book {book.id!r}: no scorable gold labels; skipped")
            continue
        extent = len(book.pages)
        ordered = sample_pages(book, extent, 0, seed)  # full nested permutation
        union: set[str] = set()
        curve: list[float] = []
        sweep = min(max_pages, extent)
        for page_no, text in ordered:
            union |= _predict_terms(bundle, text)
            if len(curve) < sweep:
                curve.append(len(gold & union) / len(gold))
        max_recall = len(gold & union) / len(gold)

        def first_k(target: float) -> int:
            for k, r in enumerate(curve, start=1):
                if r >= target - 1e-12:
                    return k
            return extent
        to_max = first_k(max_recall)
        to_90 = first_k(0.9 * max_recall)
        per_book_curves[book.id] = curve
        per_book_stats[book.id] = (extent_class(extent), to_90, to_max)

    if not per_book_stats:
        raise ValueError("no book had scorable gold labels")

    rows = []
    for name, _, _ in EXTENT_CLASSES:
        members = [(to_90, to_max) for cls, to_90, to_max in per_book_stats.values()
                   if cls == name]
        if not members:
            continue
        rows.append(ConvergenceRow(
            extent_class=name,
            books=len(members),
            pages_to_90pct=sum(m[0] for m in members) / len(members),
            pages_to_max=sum(m[1] for m in members) / len(members),
        ))
    return rows, per_book_curves


def keyword_count_report(bundle: ModelBundle, books: list[BookRecord],
                         cfg: IndexingConfig | None = None,
                         thresholds: list[float | str | Fraction] = (0, 0.2, 0.4),
                         ) -> dict:
    """Distributions of predicted keyword counts per threshold, next to gold."""
    if not books:
        raise ValueError("empty book set")
    cfg = cfg or IndexingConfig()
    base_cfg = replace(cfg, threshold=0)
    all_keywords = [index_book(bundle, book, base_cfg).keywords for book in books]
    gold_counts = [len(_gold_terms(book)) for book in books]

    def describe(counts: list[int]) -> dict:
        qs = statistics.quantiles(counts, n=4, method="inclusive") \
            if len(counts) > 1 else [float(counts[0])] * 3
        return {
            "mean": sum(counts) / len(counts),
            "median": float(statistics.median(counts)),
            "q1": qs[0], "q3": qs[2],
            "min": min(counts), "max": max(counts),
        }

    return {
        "gold": describe(gold_counts),
        "per_threshold": {
            str(theta): describe(
                [len(apply_threshold(kws, theta)) for kws in all_keywords])
            for theta in thresholds
        },
    }


def report_to_json_dict(report: EvalReport) -> dict:
    return {
        "threshold": report.threshold,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "skipped_books": report.skipped_books,
        "config": report.config,
        "per_book": [
            {
                "book_id": b.book_id, "precision": b.precision, "recall": b.recall,
                "f1": b.f1, "gold_size": b.gold_size, "pred_size": b.pred_size,
                "excluded_unseen": b.excluded_unseen,
            }
            for b in report.per_book
        ],
    }


def write_reports_json(reports: list[EvalReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([report_to_json_dict(r) for r in reports], fh,
                  ensure_ascii=False, indent=2)


def write_reports_csv(reports: list[EvalReport], path: str | Path) -> None:
    """One row per book per threshold plus one summary row per threshold."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "book_id", "precision", "recall", "f1",
                         "gold_size", "pred_size", "excluded_unseen"])
        for report in reports:
            for b in report.per_book:
                writer.writerow([report.threshold, b.book_id, b.precision,
                                 b.recall, b.f1, b.gold_size, b.pred_size,
                                 b.excluded_unseen])
            writer.writerow([report.threshold, "MACRO", report.macro_precision,
                             report.macro_recall, report.macro_f1, "", "", ""])


def write_convergence_csv(rows: list[ConvergenceRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["extent_class", "books", "avg_pages_to_90pct_recall",
                         "avg_pages_to_max_recall"])
        for row in rows:
            writer.writerow([row.extent_class, row.books,
                             row.pages_to_90pct, row.pages_to_max])
        if rows:
            writer.writerow([
                "Average", sum(r.books for r in rows),
                sum(r.pages_to_90pct * r.books for r in rows) / sum(r.books for r in rows),
                sum(r.pages_to_max * r.books for r in rows) / sum(r.books for r in rows),
            ])
