"""End-to-end indexing workflow: sample pages with a buffer, quality-gate,
preprocess, predict per page, aggregate keyword frequencies f = t/n, threshold,
and export MARC21. Also hosts bundle training orchestration."""

from __future__ import annotations

import json
import time
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import pdftext
from .bundle import ModelBundle, copy_analyzer_resources, save_bundle
from .corpus import (BookRecord, CorpusFormatError, PageInstance, TrainingConfig,
                     TrainingSet, _parse_record, explode_to_pages, filter_labels)
from .preprocess import (Analyzer, IdentityAnalyzer, analyze,
                         build_language_profiles, detect_language, load_analyzers,
                         MIN_PROFILE_CHARS)
from .tagger import (DEFAULT_DIM, FeatureVector, HybridConfig, Hyper, featurize,
                     build_similarity_index, predict_page, stable_hash64,
                     train_label_model)
from .textqc import (MIN_TRAINING_CHARS, QualityConfig, calibrate_threshold,
                     passes_quality, train_char_model)

WORKFLOW_STEPS = (
    "converting", "sampling", "extracting", "quality_control",
    "detecting_languages", "preprocessing", "predicting", "aggregating",
    "finished",
)

MARC_FIELD_BY_CATEGORY = {
    "topic": "650",
    "location": "651",
    "time": "648",
    "genre_form": "655",
}

MARC_SOURCE = "ems"


class NoUsableTextError(RuntimeError):
    """Every sampled page failed quality control."""


def exact_threshold(theta: float | int | str | Fraction) -> Fraction:
    """Thresholds compare exactly: a float is read as its shortest decimal.

    This makes f = 4/10 pass a 0.4 threshold, as the arithmetic intends, instead
    of depending on binary rounding.
    """
    if isinstance(theta, Fraction):
        return theta
    if isinstance(theta, int):
        return Fraction(theta)
    if isinstance(theta, str):
        return Fraction(theta)
    return Fraction(str(theta))


@dataclass(frozen=True)
class IndexingConfig:
    pages_n: int = 10
    buffer: int = 5
    threshold: float | str | Fraction = 0.4
    seed: int = 0
    hybrid: HybridConfig = field(default_factory=HybridConfig)

    def __post_init__(self) -> None:
        if self.pages_n < 1:
            raise ValueError("pages_n must be >= 1")
        if self.buffer < 0:
            raise ValueError("buffer must be >= 0")
        theta = exact_threshold(self.threshold)
        if not 0 <= theta <= 1:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass(frozen=True)
class KeywordResult:
    term: str
    category: str
    t: int           # pages the keyword occurred in
    n_used: int      # pages used
    f: Fraction      # exactly t / n_used
    mean_prob: float

    def __post_init__(self) -> None:
        if not 0 < self.t <= self.n_used:
            raise ValueError("keyword hit count must satisfy 0 < t <= n_used")
        if self.f != Fraction(self.t, self.n_used):
            raise ValueError("f must equal t / n_used exactly")


@dataclass
class IndexingOutcome:
    keywords: list[KeywordResult]           # sorted by f desc, mean_prob desc, term
    language_distribution: dict[str, float]  # over used pages, sums to 1
    pages_sampled: list[int]                 # drawn page numbers, draw order
    pages_used: int
    pages_failed_qc: int
    elapsed_ms: int


def sample_pages(book: BookRecord, pages_n: int, buffer: int,
                 seed: int) -> list[tuple[int, str]]:
    """Sample min(pages_n + buffer, extent) distinct pages uniformly, seeded.

    Sampling is nested: for a fixed seed, the k-page sample is a prefix of the
    (k+1)-page sample, which makes recall-vs-pages curves monotone.
    """
    if not book.pages:
        raise ValueError(f"book {book.id!r} has no pages")
    total = len(book.pages)
    rng = np.random.default_rng(seed)
    permutation = rng.permutation(total)
    take = min(pages_n + buffer, total)
    return [(int(i) + 1, book.pages[int(i)]) for i in permutation[:take]]


def aggregate(page_predictions: list[dict[str, float]], n_used: int,
              categories: dict[str, str] | None = None) -> list[KeywordResult]:
    """Merge per-page predictions into keyword frequencies f = t/n_used."""
    if n_used < 1 or n_used != len(page_predictions):
        raise ValueError("n_used must equal the number of per-page prediction sets")
    categories = categories or {}
    hits: Counter[str] = Counter()
    prob_sum: dict[str, float] = defaultdict(float)
    for predictions in page_predictions:
        for term, prob in predictions.items():
            hits[term] += 1
            prob_sum[term] += prob
    results = [
        KeywordResult(
            term=term,
            category=categories.get(term, "topic"),
            t=t,
            n_used=n_used,
            f=Fraction(t, n_used),
            mean_prob=prob_sum[term] / t,
        )
        for term, t in hits.items()
    ]
    results.sort(key=lambda kw: (-kw.f, -kw.mean_prob, kw.term))
    return results


def apply_threshold(keywords: list[KeywordResult],
                    theta: float | str | Fraction) -> list[KeywordResult]:
    """Keep keywords with f >= theta (inclusive boundary); order preserved."""
    cutoff = exact_threshold(theta)
    return [kw for kw in keywords if kw.f >= cutoff]


def to_marc21(selected: list[KeywordResult]) -> str:
    """Render keywords as MARC21 mnemonic subject fields, one line each.

    topic -> 650, location -> 651, time -> 648, genre_form -> 655; indicator2=7
    with the thesaurus source code in $2. Empty selection gives empty text.
    """
    lines = []
    for kw in selected:
        tag = MARC_FIELD_BY_CATEGORY.get(kw.category)
        if tag is None:
            raise ValueError(f"no MARC mapping for category {kw.category!r}")
        lines.append(f"{tag} _7 $a {kw.term} $2 {MARC_SOURCE}")
    return "\n".join(lines)


def load_book_source(path: str | Path) -> BookRecord:
    """Load a single book from .json/.jsonl (corpus record), .txt (form-feed
    page breaks), or .pdf (text layer)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix in {".json", ".jsonl"}:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.strip():
                    with warnings.catch_warnings():
                        # books submitted for indexing carry no gold subjects
                        warnings.filterwarnings("ignore", message=".*no subjects")
                        return _parse_record(json.loads(line), lineno)
        raise CorpusFormatError(f"{path}: no book record found")
    if suffix == ".txt":
        text = path.read_text(encoding="utf-8")
        pages = [p for p in (p.strip() for p in text.split("\f")) if p]
        if not pages:
            raise ValueError(f"{path}: no page text found")
        return BookRecord(id=path.stem, title=path.stem, language="und",
                          author_birth_year=None, pages=pages, subjects=set())
    if suffix == ".pdf":
        pages = pdftext.extract_pages(path)
        return BookRecord(id=path.stem, title=path.stem, language="und",
                          author_birth_year=None, pages=pages, subjects=set())
    raise ValueError(f"{path}: unsupported book format {suffix!r} "
                     "(expected .json, .jsonl, .txt or .pdf)")


def index_book(bundle: ModelBundle, source: BookRecord | str | Path,
               cfg: IndexingConfig | None = None,
               progress: Callable[[str], None] | None = None) -> IndexingOutcome:
    """Run the full indexing workflow on one book.

    Samples pages_n + buffer pages, keeps the first pages_n that pass quality
    control (all passing ones if fewer), preprocesses and predicts each page,
    and aggregates into thresholded keywords. Deterministic for a fixed seed.
    """
    cfg = cfg or IndexingConfig()
    step = progress or (lambda name: None)
    started = time.perf_counter()

    step("converting")
    book = source if isinstance(source, BookRecord) else load_book_source(source)
    if not book.pages:
        raise NoUsableTextError(f"book {book.id!r} has no pages")

    step("sampling")
    sampled = sample_pages(book, cfg.pages_n, cfg.buffer, cfg.seed)

    step("extracting")
    # Page text already plain; the step exists so progress mirrors the workflow.

    step("quality_control")
    used: list[tuple[int, str]] = []
    failed = 0
    gated = bundle.char_model is not None and bundle.quality is not None
    for page_no, text in sampled:
        if len(used) == cfg.pages_n:
            break
        if not gated or passes_quality(bundle.char_model, bundle.quality, text):
            used.append((page_no, text))
        else:
            failed += 1
    if not used:
        raise NoUsableTextError(
            f"no usable text: all {len(sampled)} sampled pages failed quality control")

    step("detecting_languages")
    langs: list[tuple[str, float]] = []
    for _, text in used:
        if bundle.profiles:
            langs.append(detect_language(bundle.profiles, text))
        else:
            langs.append(("und", 0.0))

    step("preprocessing")
    tokenized = [
        analyze(text, lang, bundle.analyzer_for(lang), confidence)
        for (_, text), (lang, confidence) in zip(used, langs)
    ]

    step("predicting")
    predictions = [
        predict_page(bundle.label_models, bundle.index, cfg.hybrid,
                     featurize(page, bundle.dim, bundle.sublinear_tf))
        for page in tokenized
    ]

    step("aggregating")
    results = aggregate(predictions, len(used), bundle.vocabulary)
    kept = apply_threshold(results, cfg.threshold)
    lang_counts = Counter(lang for lang, _ in langs)
    language_distribution = {
        lang: lang_counts[lang] / len(used) for lang in sorted(lang_counts)
    }
    elapsed_ms = int((time.perf_counter() - started) * 1000)

    step("finished")
    return IndexingOutcome(
        keywords=kept,
        language_distribution=language_distribution,
        pages_sampled=[page_no for page_no, _ in sampled],
        pages_used=len(used),
        pages_failed_qc=failed,
        elapsed_ms=elapsed_ms,
    )


def outcome_to_json_dict(outcome: IndexingOutcome,
                         include_timing: bool = True) -> dict:
    """JSON form of an outcome. Timing is optional so that seeded runs can be
    compared byte for byte."""
    payload = {
        "keywords": [
            {
                "term": kw.term,
                "category": kw.category,
                "t": kw.t,
                "n": kw.n_used,
                "f": float(kw.f),
                "mean_prob": kw.mean_prob,
            }
            for kw in outcome.keywords
        ],
        "language_distribution": outcome.language_distribution,
        "pages_used": outcome.pages_used,
        "pages_failed_qc": outcome.pages_failed_qc,
    }
    if include_timing:
        payload["elapsed_ms"] = outcome.elapsed_ms
    return payload


@dataclass(frozen=True)
class TrainOptions:
    """Bundle-training knobs beyond the corpus-level TrainingConfig."""

    corpus: TrainingConfig = field(default_factory=TrainingConfig)
    dim: int = DEFAULT_DIM
    seed: int = 0
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    hyper: Hyper = field(default_factory=Hyper)
    neg_ratio: float = 3.0
    neg_cap: int = 10_000
    with_qc: bool = True
    qc_min_chars: int = 40
    qc_order: int = 2
    qc_alpha: float = 0.1
    analyzer_dir: str | Path | None = None
    sublinear_tf: bool = False


QC_TRAIN_CHAR_CAP = 600_000
PROFILE_CHAR_CAP = 200_000


def _cap_chars(texts: list[str], cap: int) -> list[str]:
    out, total = [], 0
    for text in texts:
        out.append(text)
        total += len(text)
        if total >= cap:
            break
    return out


def _train_quality_gate(texts: list[str], opts: TrainOptions, rng: np.random.Generator):
    """Char model on held-in pages, threshold calibrated against synthetic garbage."""
    total_chars = sum(len(t) for t in texts)
    if total_chars < MIN_TRAINING_CHARS:
        warnings.warn(
            f"corpus has only {total_chars} characters of page text; "
            "quality gate disabled")
        return None, None
    split = max(1, len(texts) // 10)
    held_out = texts[:split]
    model = train_char_model(_cap_chars(texts[split:] or texts, QC_TRAIN_CHAR_CAP),
                             opts.qc_order, opts.qc_alpha)

    alphabet = sorted(model.alphabet | set("0123456789"))
    garbage = []
    for text in held_out[:200]:
        length = max(opts.qc_min_chars, min(len(text), 400))
        garbage.append("".join(rng.choice(alphabet, size=length)))
    good = [t for t in held_out[:200] if t.strip()]
    threshold = calibrate_threshold(model, good, garbage)
    return model, QualityConfig(threshold=threshold, min_chars=opts.qc_min_chars)


def train_bundle(books: list[BookRecord], opts: TrainOptions | None = None,
                 log: Callable[[str], None] | None = None) -> ModelBundle:
    """Train a complete model bundle from an annotated corpus.

    Explodes books to labeled pages, filters rare labels, fits the quality gate
    and language profiles, featurizes every page, builds the similarity index,
    and trains one classifier per retained label with seeded negative sampling.
    Fully deterministic for a fixed seed.
    """
    opts = opts or TrainOptions()
    say = log or (lambda msg: None)
    rng = np.random.default_rng(opts.seed)

    say("exploding books to pages")
    training = filter_labels(explode_to_pages(books, opts.corpus),
                             opts.corpus.min_examples)
    say(f"{len(training.pages)} pages, {len(training.vocabulary)} labels retained")

    page_texts = [p.text for p in training.pages]

    char_model = None
    quality = None
    if opts.with_qc:
        say("training quality gate")
        char_model, quality = _train_quality_gate(page_texts, opts, rng)

    say("building language profiles")
    samples: dict[str, list[str]] = defaultdict(list)
    lengths: Counter[str] = Counter()
    for book in books:
        for text in book.pages:
            if lengths[book.language] >= PROFILE_CHAR_CAP:
                break
            samples[book.language].append(text)
            lengths[book.language] += len(text)
    usable = {lang: texts for lang, texts in samples.items()
              if lang != "und" and lengths[lang] >= MIN_PROFILE_CHARS}
    profiles = build_language_profiles(usable) if usable else []
    if not profiles:
        warnings.warn("no language has enough sample text; pages will be 'und'")

    analyzers: dict[str, Analyzer] = {}
    if opts.analyzer_dir is not None:
        analyzers = dict(load_analyzers(opts.analyzer_dir))

    say("featurizing pages")
    identity = IdentityAnalyzer()
    book_lang = {b.id: b.language for b in books}
    featurized: list[tuple[PageInstance, FeatureVector]] = []
    for inst in training.pages:
        if char_model is not None and not passes_quality(char_model, quality, inst.text):
            continue
        lang = book_lang.get(inst.book_id, "und")
        page = analyze(inst.text, lang, analyzers.get(lang, identity))
        featurized.append((inst, featurize(page, opts.dim, opts.sublinear_tf)))
    if not featurized:
        raise ValueError("no training page passed quality control")

    by_label: dict[str, list[int]] = defaultdict(list)
    for ref, (inst, _) in enumerate(featurized):
        for term in inst.labels:
            by_label[term].append(ref)
    vocabulary = {t: c for t, c in training.categories.items() if by_label.get(t)}
    dropped = training.vocabulary - set(vocabulary)
    if dropped:
        warnings.warn(f"{len(dropped)} labels lost every positive page to the "
                      f"quality gate and were dropped: {sorted(dropped)[:5]}")
        featurized = [
            (PageInstance(inst.book_id, inst.page_no, inst.text,
                          inst.labels & set(vocabulary)), fv)
            for inst, fv in featurized
        ]
    if not vocabulary:
        raise ValueError("no label retains positive pages after quality control")

    say("building similarity index")
    index = build_similarity_index(featurized)

    say(f"training {len(vocabulary)} classifiers")
    label_models = {}
    n_pages = len(featurized)
    for term in sorted(vocabulary):
        positive_refs = by_label[term]
        positives = [featurized[r][1] for r in positive_refs]
        positive_set = set(positive_refs)
        pool = np.array([r for r in range(n_pages) if r not in positive_set],
                        dtype=np.int64)
        n_neg = min(int(opts.neg_ratio * len(positives)), opts.neg_cap, len(pool))
        label_rng = np.random.default_rng([opts.seed, stable_hash64(term)])
        chosen = sorted(label_rng.choice(pool, size=n_neg, replace=False).tolist()) \
            if n_neg else []
        negatives = [featurized[r][1] for r in chosen]
        hyper = replace(opts.hyper,
                        seed=int((stable_hash64(term) ^ opts.seed) % (2**31)))
        label_models[term] = train_label_model(
            term, positives, negatives, hyper, min_examples=1)
        say(f"  {term}: {len(positives)} pos / {len(negatives)} neg, "
            f"loss {label_models[term].meta.final_loss:.4f}")

    return ModelBundle(
        dim=opts.dim, seed=opts.seed, min_examples=opts.corpus.min_examples,
        hybrid=opts.hybrid, vocabulary=vocabulary,
        label_models=label_models, index=index, char_model=char_model,
        quality=quality, profiles=profiles, analyzers=analyzers,
        sublinear_tf=opts.sublinear_tf)


def train_and_save(books: list[BookRecord], out_dir: str | Path,
                   opts: TrainOptions | None = None,
                   log: Callable[[str], None] | None = None) -> ModelBundle:
    opts = opts or TrainOptions()
    bundle = train_bundle(books, opts, log)
    save_bundle(bundle, out_dir)
    if opts.analyzer_dir is not None:
        copy_analyzer_resources(opts.analyzer_dir, out_dir)
    return bundle
