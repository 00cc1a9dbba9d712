"""Extraction-quality gate: a character-sequence likelihood model scores page text
and a calibrated threshold separates real language from extraction garbage."""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

# Sentinels never emitted by real text: out-of-alphabet fold and start-of-text pad.
OTHER = "\x00"
BOS = "\x02"

MIN_TRAINING_CHARS = 10_000

QC_MODEL_FORMAT = 1

_WS = re.compile(r"\s+")


def _normalize(text: str) -> str:
    # Applied identically at train and score time; part of the model's contract.
    return _WS.sub(" ", text).strip()


@dataclass
class CharModel:
    """Order-k character chain with add-alpha smoothing over alphabet + OTHER."""

    order: int
    alpha: float
    alphabet: frozenset[str]
    log_probs: dict[str, dict[str, float]]  # context -> next char -> log prob
    context_totals: dict[str, int]
    _context_default: dict[str, float] = field(default_factory=dict, repr=False)
    _unseen_context_lp: float = field(default=0.0, repr=False)

    def __post_init__(self) -> None:
        v = self.vocab_size
        self._context_default = {
            ctx: math.log(self.alpha) - math.log(total + self.alpha * v)
            for ctx, total in self.context_totals.items()
        }
        self._unseen_context_lp = -math.log(v)

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 1  # alphabet plus OTHER

    def to_json_dict(self) -> dict:
        entries = []
        for ctx in sorted(self.log_probs):
            for ch in sorted(self.log_probs[ctx]):
                entries.append([ctx, ch, self.log_probs[ctx][ch]])
        return {
            "format": QC_MODEL_FORMAT,
            "order": self.order,
            "alpha": self.alpha,
            "alphabet": "".join(sorted(self.alphabet)),
            "entries": entries,
            "context_totals": [[ctx, self.context_totals[ctx]]
                               for ctx in sorted(self.context_totals)],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CharModel":
        if data.get("format") != QC_MODEL_FORMAT:
            raise ValueError(f"unsupported quality-model format {data.get('format')!r}")
        log_probs: dict[str, dict[str, float]] = defaultdict(dict)
        for ctx, ch, lp in data["entries"]:
            log_probs[ctx][ch] = lp
        return cls(
            order=data["order"],
            alpha=data["alpha"],
            alphabet=frozenset(data["alphabet"]),
            log_probs=dict(log_probs),
            context_totals={ctx: total for ctx, total in data["context_totals"]},
        )


@dataclass(frozen=True)
class QualityConfig:
    threshold: float
    min_chars: int = 40

    def __post_init__(self) -> None:
        if self.min_chars < 1:
            raise ValueError("min_chars must be >= 1")


def train_char_model(texts: list[str], order: int = 2, alpha: float = 0.1) -> CharModel:
    """Fit conditional character distributions on known-good text.

    Requires at least 10,000 characters combined. Characters later seen outside
    the training alphabet are folded onto a single OTHER symbol.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    normalized = [_normalize(t) for t in texts]
    normalized = [t for t in normalized if t]
    total_chars = sum(len(t) for t in normalized)
    if total_chars < MIN_TRAINING_CHARS:
        raise ValueError(
            f"need at least {MIN_TRAINING_CHARS} characters of training text, "
            f"got {total_chars}")

    alphabet = {ch for t in normalized for ch in t}
    alphabet -= {OTHER, BOS}

    counts: dict[str, Counter[str]] = defaultdict(Counter)
    for t in normalized:
        ctx = deque([BOS] * order, maxlen=order)
        for ch in t:
            ch = ch if ch in alphabet else OTHER
            counts["".join(ctx)][ch] += 1
            ctx.append(ch)

    v = len(alphabet) + 1
    log_probs: dict[str, dict[str, float]] = {}
    context_totals: dict[str, int] = {}
    for ctx, ctr in counts.items():
        total = sum(ctr.values())
        context_totals[ctx] = total
        denom = math.log(total + alpha * v)
        log_probs[ctx] = {ch: math.log(c + alpha) - denom for ch, c in ctr.items()}

    return CharModel(order=order, alpha=alpha, alphabet=frozenset(alphabet),
                     log_probs=log_probs, context_totals=context_totals)


def score_text(model: CharModel, text: str) -> float:
    """Average per-character log-likelihood of text under the model.

    Length-independent by construction, so one threshold serves all page sizes.
    """
    normalized = _normalize(text)
    if not normalized:
        raise ValueError("cannot score empty text")
    total = 0.0
    ctx = deque([BOS] * model.order, maxlen=model.order)
    for ch in normalized:
        ch = ch if (ch in model.alphabet) else OTHER
        key = "".join(ctx)
        row = model.log_probs.get(key)
        if row is None:
            total += model._unseen_context_lp
        else:
            lp = row.get(ch)
            total += lp if lp is not None else model._context_default[key]
        ctx.append(ch)
    return total / len(normalized)


def passes_quality(model: CharModel, cfg: QualityConfig, text: str) -> bool:
    """True iff the page is long enough and scores at or above the threshold."""
    normalized = _normalize(text)
    if len(normalized) < cfg.min_chars:
        return False
    return score_text(model, normalized) >= cfg.threshold


def calibrate_threshold(model: CharModel, good: list[str], bad: list[str]) -> float:
    """Pick the score threshold maximizing balanced accuracy on labeled pages.

    Candidates are every observed score plus midpoints of adjacent scores; ties
    resolve to the lowest candidate, favoring recall of good pages.
    """
    if not good or not bad:
        raise ValueError("calibration needs non-empty good and bad sets")
    good_scores = [score_text(model, t) for t in good]
    bad_scores = [score_text(model, t) for t in bad]

    values = sorted(set(good_scores) | set(bad_scores))
    candidates = list(values)
    candidates.extend((a + b) / 2 for a, b in zip(values, values[1:]))
    candidates.sort()

    n_good, n_bad = len(good_scores), len(bad_scores)

    def balanced(th: float) -> float:
        tpr = sum(1 for s in good_scores if s >= th) / n_good
        tnr = sum(1 for s in bad_scores if s < th) / n_bad
        return (tpr + tnr) / 2

    return max(candidates, key=lambda th: (balanced(th), -th))


def save_char_model(model: CharModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json_dict(), fh, ensure_ascii=False, sort_keys=True,
                  separators=(",", ":"))


def load_char_model(path: str | Path) -> CharModel:
    with open(path, encoding="utf-8") as fh:
        return CharModel.from_json_dict(json.load(fh))
