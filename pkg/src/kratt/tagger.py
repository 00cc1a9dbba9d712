"""Hybrid tagging core: hashed sparse features, one binary logistic-regression
classifier per label, an inverted index over training pages, and candidate-set
reduction so prediction cost does not grow with the size of the label space."""

from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.special import expit

from .corpus import PageInstance
from .preprocess import TokenizedPage

DEFAULT_DIM = 1 << 18

_hash_cache: dict[str, int] = {}


def stable_hash64(token: str) -> int:
    """Process-independent 64-bit hash (unlike builtin hash, which is salted)."""
    cached = _hash_cache.get(token)
    if cached is None:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        cached = int.from_bytes(digest, "little")
        if len(_hash_cache) < (1 << 20):
            _hash_cache[token] = cached
    return cached


@dataclass
class FeatureVector:
    entries: dict[int, float]  # hashed index -> positive weight
    dim: int


def feature_tokens(page: TokenizedPage) -> list[str]:
    """Feature stream for a page: lemmas plus one "pos:<tag>" token per tagged word."""
    tokens = [t.lemma for t in page.tokens]
    tokens.extend(f"pos:{t.pos}" for t in page.tokens if t.pos)
    return tokens


def featurize(page: TokenizedPage, dim: int = DEFAULT_DIM,
              sublinear: bool = False) -> FeatureVector:
    """Hash lemma and POS tokens into term-frequency weights (mod dim).

    dim must be a power of two. An empty token list gives an empty (valid) vector.
    """
    if dim < 2 or dim & (dim - 1):
        raise ValueError("dim must be a power of two >= 2")
    counts: Counter[int] = Counter()
    for token in feature_tokens(page):
        counts[stable_hash64(token) % dim] += 1
    if sublinear:
        return FeatureVector({i: 1.0 + math.log(c) for i, c in counts.items()}, dim)
    return FeatureVector({i: float(c) for i, c in counts.items()}, dim)


@dataclass(frozen=True)
class TrainMeta:
    positives: int
    negatives: int
    epochs: int
    final_loss: float


@dataclass
class LabelModel:
    term: str
    dim: int
    bias: float
    weights: dict[int, float]  # sparse: indices never touched in training stay 0
    l2: float
    meta: TrainMeta


@dataclass(frozen=True)
class Hyper:
    l2: float = 1e-4
    lr: float = 0.1
    epochs: int = 12
    seed: int = 0
    batch_size: int = 64


@dataclass(frozen=True)
class HybridConfig:
    similar_docs: int = 20
    candidate_cap: int = 20
    decision_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.similar_docs < 1 or self.candidate_cap < 1:
            raise ValueError("similar_docs and candidate_cap must be >= 1")
        if not 0.0 < self.decision_prob < 1.0:
            raise ValueError("decision_prob must be in (0, 1)")


def vectors_to_csr(fvs: Iterable[FeatureVector], dim: int) -> sparse.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for fv in fvs:
        if fv.dim != dim:
            raise ValueError(f"feature dim {fv.dim} != expected {dim}")
        for i, v in sorted(fv.entries.items()):
            indices.append(i)
            data.append(v)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, dim))


def loss_and_grad(w: np.ndarray, bias: float, x: sparse.csr_matrix,
                  y: np.ndarray, l2: float) -> tuple[float, np.ndarray, float]:
    """L2-regularized mean log loss and its analytic gradient.

    loss = mean(log(1 + exp(-z)) * y + log(1 + exp(z)) * (1 - y)) + l2/2 * ||w||^2
    with z = x @ w + bias; the bias is not regularized.
    """
    z = x @ w + bias
    p = expit(z)
    loss = float(np.mean(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z))
                 + 0.5 * l2 * float(w @ w))
    residual = p - y
    grad_w = x.T @ residual / x.shape[0] + l2 * w
    grad_b = float(np.mean(residual))
    return loss, np.asarray(grad_w).ravel(), grad_b


def train_label_model(term: str, positives: list[FeatureVector],
                      negatives: list[FeatureVector], hyper: Hyper | None = None,
                      min_examples: int = 1) -> LabelModel:
    """Train one binary classifier by seeded mini-batch gradient descent.

    Deterministic for a fixed seed. Raises on too few positives, on fewer
    negatives than positives, and on non-finite (diverged) loss.
    """
    hyper = hyper or Hyper()
    if len(positives) < min_examples:
        raise ValueError(
            f"label {term!r}: {len(positives)} positive examples, need {min_examples}")
    if len(negatives) < len(positives):
        raise ValueError(f"label {term!r}: need at least as many negatives as positives")

    dim = positives[0].dim
    x = vectors_to_csr(list(positives) + list(negatives), dim)
    y = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
    n = x.shape[0]

    rng = np.random.default_rng(hyper.seed)
    w = np.zeros(dim, dtype=np.float64)
    bias = 0.0
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            sel = order[start:start + hyper.batch_size]
            _, grad_w, grad_b = loss_and_grad(w, bias, x[sel], y[sel], hyper.l2)
            w -= hyper.lr * grad_w
            bias -= hyper.lr * grad_b

    final_loss, _, _ = loss_and_grad(w, bias, x, y, hyper.l2)
    if not math.isfinite(final_loss) or not math.isfinite(bias) or not np.all(np.isfinite(w)):
        raise RuntimeError(f"label {term!r}: training diverged (non-finite loss)")

    nz = np.nonzero(w)[0]
    return LabelModel(
        term=term, dim=dim, bias=float(bias),
        weights={int(i): float(w[i]) for i in nz},
        l2=hyper.l2,
        meta=TrainMeta(len(positives), len(negatives), hyper.epochs, final_loss),
    )


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def predict_prob(model: LabelModel, fv: FeatureVector) -> float:
    """sigmoid(w . x + bias); pure."""
    if model.dim != fv.dim:
        raise ValueError(f"dim mismatch: model {model.dim}, vector {fv.dim}")
    z = model.bias
    weights = model.weights
    for i, v in fv.entries.items():
        wi = weights.get(i)
        if wi is not None:
            z += wi * v
    return _sigmoid(z)


@dataclass
class SimilarityIndex:
    """Inverted index over training pages with BM25 scoring."""

    postings: dict[int, list[tuple[int, int]]]  # hashed index -> [(page ref, tf)]
    page_keys: list[tuple[str, int]]            # ref -> (book_id, page_no)
    page_lengths: list[int]                     # ref -> token count
    page_labels: list[frozenset[str]]           # ref -> label set
    avg_length: float
    doc_count: int
    bm25_k1: float = 1.2
    bm25_b: float = 0.75


def build_similarity_index(pages: list[tuple[PageInstance, FeatureVector]],
                           k1: float = 1.2, b: float = 0.75) -> SimilarityIndex:
    """Index featurized training pages; the result is immutable thereafter."""
    if not pages:
        raise ValueError("cannot index an empty training set")
    postings: dict[int, list[tuple[int, int]]] = defaultdict(list)
    page_keys: list[tuple[str, int]] = []
    page_lengths: list[int] = []
    page_labels: list[frozenset[str]] = []
    for ref, (inst, fv) in enumerate(pages):
        page_keys.append((inst.book_id, inst.page_no))
        page_lengths.append(int(round(sum(fv.entries.values()))))
        page_labels.append(frozenset(inst.labels))
        for idx in sorted(fv.entries):
            postings[idx].append((ref, int(round(fv.entries[idx]))))
    doc_count = len(page_keys)
    avg_length = sum(page_lengths) / doc_count
    return SimilarityIndex(
        postings=dict(postings), page_keys=page_keys, page_lengths=page_lengths,
        page_labels=page_labels, avg_length=avg_length, doc_count=doc_count,
        bm25_k1=k1, bm25_b=b)


def bm25_idf(index: SimilarityIndex, df: int) -> float:
    return math.log(1.0 + (index.doc_count - df + 0.5) / (df + 0.5))


def most_similar(index: SimilarityIndex, query: FeatureVector,
                 m: int) -> list[tuple[int, float]]:
    """Top-m pages by BM25 score, descending; ties break by page ref.

    Query terms count by presence (BM25 without a query-frequency component).
    Zero-overlap pages rank after all matches, so exactly min(m, doc_count)
    pages are always returned for a non-empty query.
    """
    if not query.entries:
        return []
    k1, b = index.bm25_k1, index.bm25_b
    avg = index.avg_length
    lengths = index.page_lengths
    scores: dict[int, float] = {}
    for idx in query.entries:
        plist = index.postings.get(idx)
        if not plist:
            continue
        idf = bm25_idf(index, len(plist))
        for ref, tf in plist:
            norm = tf + k1 * (1.0 - b + b * lengths[ref] / avg)
            scores[ref] = scores.get(ref, 0.0) + idf * tf * (k1 + 1.0) / norm
    want = min(m, index.doc_count)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:want]
    if len(ranked) < want:
        have = {ref for ref, _ in ranked}
        for ref in range(index.doc_count):
            if len(ranked) >= want:
                break
            if ref not in have:
                ranked.append((ref, 0.0))
    return ranked


def candidate_tags(similar: list[tuple[int, float]], index: SimilarityIndex,
                   cap: int) -> list[str]:
    """Rank terms by how many similar pages carry them, truncated to cap.

    Count ties break by summed similarity score, then lexicographically.
    """
    counts: Counter[str] = Counter()
    sim_sum: dict[str, float] = defaultdict(float)
    for ref, score in similar:
        for term in index.page_labels[ref]:
            counts[term] += 1
            sim_sum[term] += score
    ranked = sorted(counts, key=lambda t: (-counts[t], -sim_sum[t], t))
    return ranked[:cap]


def predict_page(models: dict[str, LabelModel], index: SimilarityIndex,
                 cfg: HybridConfig, fv: FeatureVector) -> dict[str, float]:
    """Two-stage prediction: reduce to candidate terms via similar pages, then
    run only those terms' classifiers. Returns {term: prob} where prob clears
    the decision threshold; at most candidate_cap entries."""
    similar = most_similar(index, fv, cfg.similar_docs)
    predictions: dict[str, float] = {}
    for term in candidate_tags(similar, index, cfg.candidate_cap):
        model = models.get(term)
        if model is None:
            raise RuntimeError(f"no classifier for candidate term {term!r}")
        prob = predict_prob(model, fv)
        if prob >= cfg.decision_prob:
            predictions[term] = prob
    return predictions


def predict_all(models: dict[str, LabelModel], decision_prob: float,
                fv: FeatureVector) -> dict[str, float]:
    """Reduction-free reference path: apply every classifier to the page."""
    out: dict[str, float] = {}
    for term in sorted(models):
        prob = predict_prob(models[term], fv)
        if prob >= decision_prob:
            out[term] = prob
    return out
