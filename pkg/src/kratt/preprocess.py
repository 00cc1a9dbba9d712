"""Page preprocessing: trigram-profile language identification and conversion of
page text into lemma/POS feature tokens via pluggable analyzers.

The default analyzer is deliberately naive (lemma dictionary plus longest-suffix
strip rules, optional POS lexicon); a production-grade morphological analyzer can
be plugged in without touching the rest of the pipeline.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from math import sqrt
from pathlib import Path
from typing import Protocol

POS_TAGS = frozenset({"NOUN", "VERB", "ADJ", "ADV", "PRON", "NUM", "PROPN", "OTHER"})

DEFAULT_TOP_K = 3000
MIN_PROFILE_CHARS = 5000
MIN_DETECT_CHARS = 20

_WORD = re.compile(r"\w+", re.UNICODE)
_WS = re.compile(r"\s+")
_DIGITS = re.compile(r"\d+")

NUMERAL_LEMMA = "<num>"


def _nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    pos: str | None = None


@dataclass
class TokenizedPage:
    lang: str
    lang_confidence: float
    tokens: list[Token]


@dataclass
class LanguageProfile:
    lang: str
    trigram_freqs: dict[str, float]  # top-K trigrams, relative to all trigrams


def _lang_normalize(text: str) -> str:
    return _WS.sub(" ", _nfc(text).lower()).strip()


def _trigram_counts(text: str) -> Counter[str]:
    return Counter(text[i:i + 3] for i in range(len(text) - 2))


def build_language_profiles(samples: dict[str, list[str]],
                            top_k: int = DEFAULT_TOP_K) -> list[LanguageProfile]:
    """Build one trigram-frequency profile per language from sample texts.

    Requires at least 5,000 characters per language.
    """
    profiles = []
    for lang in sorted(samples):
        text = " ".join(_lang_normalize(t) for t in samples[lang])
        if len(text) < MIN_PROFILE_CHARS:
            raise ValueError(
                f"language {lang!r}: need {MIN_PROFILE_CHARS} sample characters, "
                f"got {len(text)}")
        counts = _trigram_counts(text)
        total = sum(counts.values())
        top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        profiles.append(LanguageProfile(lang, {g: c / total for g, c in top}))
    return profiles


def _cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if not a or not b:
        return 0.0
    if len(b) < len(a):
        a, b = b, a
    dot = sum(w * b.get(g, 0.0) for g, w in a.items())
    na = sqrt(sum(w * w for w in a.values()))
    nb = sqrt(sum(w * w for w in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def detect_language(profiles: list[LanguageProfile], text: str) -> tuple[str, float]:
    """Identify the page language by trigram cosine similarity.

    Returns (lang, confidence) where confidence is the winning margin over the
    runner-up, clamped to [0, 1]. Texts under 20 characters give ("und", 0.0).
    Ties break by language code.
    """
    if not profiles:
        raise ValueError("no language profiles")
    normalized = _lang_normalize(text)
    if len(normalized) < MIN_DETECT_CHARS:
        return ("und", 0.0)
    counts = _trigram_counts(normalized)
    total = sum(counts.values())
    freqs = {g: c / total for g, c in counts.items()}
    scored = sorted(
        ((_cosine(freqs, p.trigram_freqs), p.lang) for p in profiles),
        key=lambda sv: (-sv[0], sv[1]),
    )
    top_score, top_lang = scored[0]
    runner = scored[1][0] if len(scored) > 1 else 0.0
    return (top_lang, min(1.0, max(0.0, top_score - runner)))


class Analyzer(Protocol):
    """Lemma and POS provider for one language."""

    def lemmatize(self, surface: str) -> str: ...

    def pos_tag(self, surface: str, lemma: str) -> str | None: ...


class IdentityAnalyzer:
    """Fallback analyzer: the surface form is its own lemma, no POS."""

    def lemmatize(self, surface: str) -> str:
        return surface

    def pos_tag(self, surface: str, lemma: str) -> str | None:
        return None


class RuleAnalyzer:
    """Dictionary lookup with longest-suffix-strip fallback and a POS lexicon.

    Suffix rules only apply when the remaining stem keeps at least min_stem
    characters; otherwise the surface passes through unchanged.
    """

    def __init__(self,
                 lemmas: dict[str, str] | None = None,
                 suffix_rules: dict[str, str] | None = None,
                 pos_lexicon: dict[str, str] | None = None,
                 min_stem: int = 2):
        self.lemmas = dict(lemmas or {})
        self.suffix_rules = sorted(
            (suffix_rules or {}).items(), key=lambda kv: (-len(kv[0]), kv[0]))
        self.pos_lexicon = dict(pos_lexicon or {})
        self.min_stem = min_stem

    def lemmatize(self, surface: str) -> str:
        hit = self.lemmas.get(surface)
        if hit:
            return hit
        for suffix, replacement in self.suffix_rules:
            if surface.endswith(suffix) and len(surface) - len(suffix) >= self.min_stem:
                return surface[:len(surface) - len(suffix)] + replacement
        return surface

    def pos_tag(self, surface: str, lemma: str) -> str | None:
        if _DIGITS.fullmatch(surface):
            return "NUM"
        return self.pos_lexicon.get(lemma) or self.pos_lexicon.get(surface)


def analyze(text: str, lang: str = "und", analyzer: Analyzer | None = None,
            lang_confidence: float = 0.0) -> TokenizedPage:
    """Segment, lowercase and lemmatize page text into an ordered token list.

    Tokens come from Unicode word segmentation; numerals map to the lemma
    "<num>". Worst case (no analyzer) degrades to identity lemmas and no POS.
    """
    analyzer = analyzer or IdentityAnalyzer()
    tokens: list[Token] = []
    for match in _WORD.finditer(_nfc(text)):
        surface = _nfc(match.group().lower())
        if _DIGITS.fullmatch(surface):
            lemma = NUMERAL_LEMMA
        else:
            lemma = _nfc(analyzer.lemmatize(surface).lower()) or surface
        pos = analyzer.pos_tag(surface, lemma)
        if pos is not None and pos not in POS_TAGS:
            pos = "OTHER"
        tokens.append(Token(surface=surface, lemma=lemma, pos=pos))
    return TokenizedPage(lang=lang, lang_confidence=lang_confidence, tokens=tokens)


def _read_tsv(path: Path) -> dict[str, str]:
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            left, _, right = line.partition("\t")
            table[_nfc(left.strip().lower())] = _nfc(right.strip().lower())
    return table


def load_analyzers(directory: str | Path) -> dict[str, RuleAnalyzer]:
    """Load per-language analyzers from {lang}_lemmas.tsv / {lang}_suffixes.tsv /
    {lang}_pos.tsv files in a directory."""
    directory = Path(directory)
    langs: set[str] = set()
    for path in directory.glob("*_*.tsv"):
        lang, _, kind = path.stem.partition("_")
        if kind in {"lemmas", "suffixes", "pos"}:
            langs.add(lang)
    analyzers: dict[str, RuleAnalyzer] = {}
    for lang in sorted(langs):
        def table(kind: str) -> dict[str, str]:
            path = directory / f"{lang}_{kind}.tsv"
            return _read_tsv(path) if path.exists() else {}
        pos = {k: v.upper() for k, v in table("pos").items()}
        analyzers[lang] = RuleAnalyzer(
            lemmas=table("lemmas"), suffix_rules=table("suffixes"), pos_lexicon=pos)
    return analyzers


def profiles_to_json(profiles: list[LanguageProfile]) -> list[dict]:
    return [
        {"lang": p.lang,
         "trigram_freqs": {g: p.trigram_freqs[g] for g in sorted(p.trigram_freqs)}}
        for p in sorted(profiles, key=lambda p: p.lang)
    ]


def profiles_from_json(data: list[dict]) -> list[LanguageProfile]:
    return [LanguageProfile(d["lang"], dict(d["trigram_freqs"])) for d in data]
