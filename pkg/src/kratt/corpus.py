"""Corpus ingestion: annotated books, page explosion, label filtering, statistics."""

from __future__ import annotations

import json
import statistics
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

CATEGORIES = frozenset({
    "topic", "location", "time", "genre_form", "person", "collective", "event",
})

DEFAULT_EXCLUDED_CATEGORIES = frozenset({"person", "collective", "event"})

MAX_EXPECTED_SUBJECTS = 35


class CorpusFormatError(ValueError):
    """A corpus file violates the one-book-per-line JSON schema."""


def _nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


@dataclass(frozen=True)
class ThesaurusTerm:
    """A controlled-vocabulary label: normalized term key plus its category."""

    term: str
    category: str

    def __post_init__(self) -> None:
        if not self.term:
            raise ValueError("term must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")


@dataclass
class BookRecord:
    """A book with per-page texts and its assigned subject terms."""

    id: str
    title: str
    language: str
    author_birth_year: int | None
    pages: list[str]
    subjects: set[ThesaurusTerm]


@dataclass(frozen=True)
class PageInstance:
    """One page of a book, carrying the book's propagated label set."""

    book_id: str
    page_no: int  # 1-based
    text: str
    labels: frozenset[str]


@dataclass(frozen=True)
class TrainingConfig:
    min_examples: int = 50
    excluded_categories: frozenset[str] = DEFAULT_EXCLUDED_CATEGORIES

    def __post_init__(self) -> None:
        if self.min_examples < 1:
            raise ValueError("min_examples must be >= 1")
        unknown = self.excluded_categories - CATEGORIES
        if unknown:
            raise ValueError(f"unknown categories in exclusion set: {sorted(unknown)}")


@dataclass
class TrainingSet:
    """Exploded page instances with per-term counts and the retained vocabulary."""

    pages: list[PageInstance]
    label_counts: dict[str, int]
    vocabulary: frozenset[str]
    categories: dict[str, str] = field(default_factory=dict)


def _parse_record(raw: object, lineno: int) -> BookRecord:
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"line {lineno}: record is not a JSON object")

    def need(name: str, types: tuple) -> object:
        if name not in raw:
            raise CorpusFormatError(f"line {lineno}: missing field {name!r}")
        value = raw[name]
        if not isinstance(value, types):
            raise CorpusFormatError(f"line {lineno}: field {name!r} has wrong type")
        return value

    book_id = need("id", (str,))
    title = need("title", (str,))
    language = need("language", (str,))
    birth = raw.get("author_birth_year")
    if birth is not None and not isinstance(birth, int):
        raise CorpusFormatError(f"line {lineno}: field 'author_birth_year' must be int or null")
    pages = need("pages", (list,))
    if not all(isinstance(p, str) for p in pages):
        raise CorpusFormatError(f"line {lineno}: 'pages' must be a list of strings")
    subjects_raw = need("subjects", (list,))

    subjects: set[ThesaurusTerm] = set()
    for entry in subjects_raw:
        if not isinstance(entry, dict) or "term" not in entry or "category" not in entry:
            raise CorpusFormatError(
                f"line {lineno}: each subject needs 'term' and 'category'")
        try:
            subjects.add(ThesaurusTerm(_nfc(str(entry["term"])).strip(), str(entry["category"])))
        except ValueError as exc:
            raise CorpusFormatError(f"line {lineno}: {exc}") from exc

    if not pages:
        warnings.warn(f"line {lineno}: book {book_id!r} has no pages")
    if not subjects:
        warnings.warn(f"line {lineno}: book {book_id!r} has no subjects")
    elif len(subjects) > MAX_EXPECTED_SUBJECTS:
        warnings.warn(
            f"line {lineno}: book {book_id!r} carries {len(subjects)} subjects "
            f"(expected at most {MAX_EXPECTED_SUBJECTS})")

    return BookRecord(
        id=_nfc(book_id),
        title=_nfc(title),
        language=language,
        author_birth_year=birth,
        pages=[_nfc(p) for p in pages],
        subjects=subjects,
    )


def load_corpus(path: str | Path) -> list[BookRecord]:
    """Load a JSONL corpus (one book object per line), preserving order.

    Raises CorpusFormatError naming the offending line for malformed records
    and both line numbers for duplicate book ids.
    """
    books: list[BookRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            book = _parse_record(raw, lineno)
            if book.id in seen:
                raise CorpusFormatError(
                    f"duplicate book id {book.id!r} on lines {seen[book.id]} and {lineno}")
            seen[book.id] = lineno
            books.append(book)
    return books


def save_corpus(books: list[BookRecord], path: str | Path) -> None:
    """Write books in the JSONL corpus format (inverse of load_corpus)."""
    with open(path, "w", encoding="utf-8") as fh:
        for book in books:
            record = {
                "id": book.id,
                "title": book.title,
                "language": book.language,
                "author_birth_year": book.author_birth_year,
                "pages": list(book.pages),
                "subjects": [
                    {"term": t.term, "category": t.category}
                    for t in sorted(book.subjects, key=lambda t: (t.term, t.category))
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def explode_to_pages(books: list[BookRecord], cfg: TrainingConfig | None = None) -> TrainingSet:
    """Split every book into page instances, propagating its subject set to each page.

    Subjects in excluded categories are dropped before counting. Books whose
    labels are all excluded keep their pages (with empty label sets) so they can
    still serve as classifier negatives and similarity-index content.
    """
    cfg = cfg or TrainingConfig()
    pages: list[PageInstance] = []
    counts: Counter[str] = Counter()
    categories: dict[str, str] = {}

    for book in books:
        if not book.pages:
            warnings.warn(f"book {book.id!r} has no pages; skipped")
            continue
        kept = sorted(
            (t for t in book.subjects if t.category not in cfg.excluded_categories),
            key=lambda t: t.term,
        )
        if book.subjects and not kept:
            warnings.warn(
                f"book {book.id!r} has only excluded-category subjects; "
                "its pages carry empty label sets")
        labels = frozenset(t.term for t in kept)
        for t in kept:
            prev = categories.setdefault(t.term, t.category)
            if prev != t.category:
                warnings.warn(
                    f"term {t.term!r} seen with categories {prev!r} and {t.category!r}; "
                    f"keeping {prev!r}")
        for page_no, text in enumerate(book.pages, start=1):
            pages.append(PageInstance(book.id, page_no, text, labels))
        for term in labels:
            counts[term] += len(book.pages)

    return TrainingSet(
        pages=pages,
        label_counts=dict(counts),
        vocabulary=frozenset(counts),
        categories=categories,
    )


def filter_labels(ts: TrainingSet, min_examples: int) -> TrainingSet:
    """Drop terms with fewer than min_examples page instances (inclusive floor).

    Pages losing all their labels are retained as negative-only material.
    Idempotent for a fixed min_examples.
    """
    vocabulary = frozenset(t for t, c in ts.label_counts.items() if c >= min_examples)
    if not vocabulary:
        raise ValueError(
            f"no label reaches {min_examples} page instances; vocabulary would be empty")
    pages = [
        PageInstance(p.book_id, p.page_no, p.text, p.labels & vocabulary)
        for p in ts.pages
    ]
    counts = {t: c for t, c in ts.label_counts.items() if t in vocabulary}
    categories = {t: c for t, c in ts.categories.items() if t in vocabulary}
    return TrainingSet(pages=pages, label_counts=counts,
                       vocabulary=vocabulary, categories=categories)


@dataclass(frozen=True)
class FiveNumber:
    min: float
    q1: float
    median: float
    q3: float
    max: float


def _five_number(values: list[int]) -> FiveNumber:
    if len(values) == 1:
        v = float(values[0])
        return FiveNumber(v, v, v, v, v)
    q1, med, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return FiveNumber(float(min(values)), q1, med, q3, float(max(values)))


@dataclass(frozen=True)
class CorpusStats:
    n_books: int
    language_fractions: dict[str, float]
    unique_labels: int
    median_label_frequency: float
    label_freq_by_category: dict[str, FiveNumber]
    labels_per_book_mean: float
    labels_per_book_min: int
    labels_per_book_max: int
    extent_mean: float
    extent_median: float
    birth_years_known: int
    birth_year_min: int | None
    birth_year_max: int | None
    born_1900s_fraction: float | None


def corpus_stats(books: list[BookRecord]) -> CorpusStats:
    """Describe a corpus: language mix, label frequencies, labels per book, extents.

    Label frequency counts the number of books a unique term occurs in.
    """
    if not books:
        raise ValueError("corpus_stats requires a non-empty corpus")

    lang_counts = Counter(b.language for b in books)
    n = len(books)
    language_fractions = {lang: lang_counts[lang] / n for lang in sorted(lang_counts)}

    term_freq: Counter[str] = Counter()
    term_category: dict[str, str] = {}
    for b in books:
        for t in b.subjects:
            term_freq[t.term] += 1
            term_category.setdefault(t.term, t.category)

    by_category: dict[str, list[int]] = {}
    for term in sorted(term_freq):
        by_category.setdefault(term_category[term], []).append(term_freq[term])
    label_freq_by_category = {
        cat: _five_number(vals) for cat, vals in sorted(by_category.items())
    }

    per_book = [len(b.subjects) for b in books]
    extents = [len(b.pages) for b in books]
    births = [b.author_birth_year for b in books if b.author_birth_year is not None]

    return CorpusStats(
        n_books=n,
        language_fractions=language_fractions,
        unique_labels=len(term_freq),
        median_label_frequency=float(statistics.median(term_freq.values())) if term_freq else 0.0,
        label_freq_by_category=label_freq_by_category,
        labels_per_book_mean=sum(per_book) / n,
        labels_per_book_min=min(per_book),
        labels_per_book_max=max(per_book),
        extent_mean=sum(extents) / n,
        extent_median=float(statistics.median(extents)),
        birth_years_known=len(births),
        birth_year_min=min(births) if births else None,
        birth_year_max=max(births) if births else None,
        born_1900s_fraction=(sum(1 for y in births if y >= 1900) / len(births)) if births else None,
    )
