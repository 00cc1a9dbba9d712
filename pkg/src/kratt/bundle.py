"""Persisted model bundle: everything indexing needs, saved as one directory.

Layout:
    manifest.json            versions, dim, hybrid config, vocabulary, counts
    label_models.jsonl       one classifier per line, sparse weight encoding
    similarity_index.json    postings, page keys/lengths/labels, BM25 params
    char_model.json          optional quality-gate model + threshold
    language_profiles.json   optional trigram profiles
    analyzers/*.tsv          optional lemma/suffix/POS tables per language

All files are written deterministically: training twice with the same seed on
the same corpus produces byte-identical bundles.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .preprocess import (Analyzer, IdentityAnalyzer, LanguageProfile,
                         load_analyzers, profiles_from_json, profiles_to_json)
from .tagger import HybridConfig, LabelModel, SimilarityIndex, TrainMeta
from .textqc import CharModel, QualityConfig

BUNDLE_FORMAT = 1


class BundleFormatError(ValueError):
    """The bundle on disk has an unsupported or inconsistent format."""


def _dumps(obj: object) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


@dataclass
class ModelBundle:
    dim: int
    seed: int
    min_examples: int
    hybrid: HybridConfig
    vocabulary: dict[str, str]  # term -> category
    label_models: dict[str, LabelModel]
    index: SimilarityIndex
    char_model: CharModel | None = None
    quality: QualityConfig | None = None
    profiles: list[LanguageProfile] = field(default_factory=list)
    analyzers: dict[str, Analyzer] = field(default_factory=dict)
    sublinear_tf: bool = False

    _identity: Analyzer = field(default_factory=IdentityAnalyzer, repr=False)

    def analyzer_for(self, lang: str) -> Analyzer:
        return self.analyzers.get(lang, self._identity)

    @property
    def model_version(self) -> str:
        return f"{__version__}/bundle-{BUNDLE_FORMAT}"


def save_bundle(bundle: ModelBundle, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format": BUNDLE_FORMAT,
        "package_version": __version__,
        "dim": bundle.dim,
        "seed": bundle.seed,
        "min_examples": bundle.min_examples,
        "sublinear_tf": bundle.sublinear_tf,
        "hybrid": {
            "similar_docs": bundle.hybrid.similar_docs,
            "candidate_cap": bundle.hybrid.candidate_cap,
            "decision_prob": bundle.hybrid.decision_prob,
        },
        "vocabulary": [
            {"term": t, "category": bundle.vocabulary[t]}
            for t in sorted(bundle.vocabulary)
        ],
        "counts": {
            "labels": len(bundle.vocabulary),
            "indexed_pages": bundle.index.doc_count,
        },
        "has_quality_gate": bundle.char_model is not None,
        "quality": (
            {"threshold": bundle.quality.threshold, "min_chars": bundle.quality.min_chars}
            if bundle.quality else None
        ),
    }
    (out / "manifest.json").write_text(_dumps(manifest), encoding="utf-8")

    with open(out / "label_models.jsonl", "w", encoding="utf-8") as fh:
        for term in sorted(bundle.label_models):
            model = bundle.label_models[term]
            idx = sorted(model.weights)
            fh.write(_dumps({
                "term": model.term,
                "bias": model.bias,
                "l2": model.l2,
                "idx": idx,
                "val": [model.weights[i] for i in idx],
                "meta": {
                    "positives": model.meta.positives,
                    "negatives": model.meta.negatives,
                    "epochs": model.meta.epochs,
                    "final_loss": model.meta.final_loss,
                },
            }) + "\n")

    index = bundle.index
    (out / "similarity_index.json").write_text(_dumps({
        "postings": [[idx, [list(p) for p in index.postings[idx]]]
                     for idx in sorted(index.postings)],
        "page_keys": [list(k) for k in index.page_keys],
        "page_lengths": index.page_lengths,
        "page_labels": [sorted(labels) for labels in index.page_labels],
        "avg_length": index.avg_length,
        "doc_count": index.doc_count,
        "bm25_k1": index.bm25_k1,
        "bm25_b": index.bm25_b,
    }), encoding="utf-8")

    if bundle.char_model is not None:
        (out / "char_model.json").write_text(
            _dumps(bundle.char_model.to_json_dict()), encoding="utf-8")
    if bundle.profiles:
        (out / "language_profiles.json").write_text(
            _dumps(profiles_to_json(bundle.profiles)), encoding="utf-8")


def copy_analyzer_resources(source_dir: str | Path, out_dir: str | Path) -> None:
    """Copy analyzer TSV tables into a bundle directory so it stays portable."""
    target = Path(out_dir) / "analyzers"
    target.mkdir(parents=True, exist_ok=True)
    for path in sorted(Path(source_dir).glob("*.tsv")):
        shutil.copyfile(path, target / path.name)


def load_bundle(bundle_dir: str | Path) -> ModelBundle:
    """Load a bundle directory; rejects unknown format versions."""
    root = Path(bundle_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise BundleFormatError(f"{root}: not a model bundle (no manifest.json)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != BUNDLE_FORMAT:
        raise BundleFormatError(
            f"unsupported bundle format {manifest.get('format')!r}, "
            f"expected {BUNDLE_FORMAT}")

    vocabulary = {e["term"]: e["category"] for e in manifest["vocabulary"]}
    hybrid = HybridConfig(**manifest["hybrid"])

    label_models: dict[str, LabelModel] = {}
    with open(root / "label_models.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            label_models[rec["term"]] = LabelModel(
                term=rec["term"], dim=manifest["dim"], bias=rec["bias"],
                weights=dict(zip(rec["idx"], rec["val"])), l2=rec["l2"],
                meta=TrainMeta(**rec["meta"]))
    missing = set(vocabulary) - set(label_models)
    if missing:
        raise BundleFormatError(f"bundle lacks classifiers for {sorted(missing)[:5]}...")

    raw = json.loads((root / "similarity_index.json").read_text(encoding="utf-8"))
    index = SimilarityIndex(
        postings={int(idx): [tuple(p) for p in plist] for idx, plist in raw["postings"]},
        page_keys=[tuple(k) for k in raw["page_keys"]],
        page_lengths=list(raw["page_lengths"]),
        page_labels=[frozenset(ls) for ls in raw["page_labels"]],
        avg_length=raw["avg_length"],
        doc_count=raw["doc_count"],
        bm25_k1=raw["bm25_k1"],
        bm25_b=raw["bm25_b"],
    )

    char_model = None
    quality = None
    char_path = root / "char_model.json"
    if char_path.exists():
        char_model = CharModel.from_json_dict(
            json.loads(char_path.read_text(encoding="utf-8")))
        q = manifest.get("quality")
        if q:
            quality = QualityConfig(threshold=q["threshold"], min_chars=q["min_chars"])

    profiles: list[LanguageProfile] = []
    profiles_path = root / "language_profiles.json"
    if profiles_path.exists():
        profiles = profiles_from_json(
            json.loads(profiles_path.read_text(encoding="utf-8")))

    analyzers: dict[str, Analyzer] = {}
    analyzers_dir = root / "analyzers"
    if analyzers_dir.is_dir():
        analyzers = dict(load_analyzers(analyzers_dir))

    return ModelBundle(
        dim=manifest["dim"], seed=manifest["seed"],
        min_examples=manifest["min_examples"], hybrid=hybrid,
        vocabulary=vocabulary, label_models=label_models, index=index,
        char_model=char_model, quality=quality, profiles=profiles,
        analyzers=analyzers, sublinear_tf=manifest.get("sublinear_tf", False))
