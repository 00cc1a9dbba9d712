import re
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from kratt.preprocess import (IdentityAnalyzer, RuleAnalyzer, analyze,
                              build_language_profiles, detect_language,
                              load_analyzers)

from conftest import make_words, prose_page

ANALYZER_DIR = Path(__file__).resolve().parents[1] / "src" / "kratt" / "data" / "analyzers"


def lang_samples(seed=0, langs=("et", "en", "ru"), n_pages=30, words_per=120):
    rng = np.random.default_rng(seed)
    samples = {}
    vocab = {}
    for lang in langs:
        vocab[lang] = make_words(rng, 400, lang)
        samples[lang] = [prose_page(rng, vocab[lang], words_per) for _ in range(n_pages)]
    return samples, vocab


class TestProfiles:
    def test_one_profile_per_language(self):
        samples, _ = lang_samples()
        profiles = build_language_profiles(samples)
        assert [p.lang for p in profiles] == ["en", "et", "ru"]

    def test_degenerate_single_trigram(self):
        profiles = build_language_profiles({"aa": ["a" * 6000]})
        assert profiles[0].trigram_freqs == {"aaa": 1.0}

    def test_insufficient_sample_names_language(self):
        with pytest.raises(ValueError, match="xx"):
            build_language_profiles({"xx": ["short sample"]})

    def test_top_trigrams_match_brute_force_count(self):
        samples, _ = lang_samples(seed=5, langs=("et",))
        profiles = build_language_profiles(samples, top_k=50)
        freqs = profiles[0].trigram_freqs

        text = " ".join(" ".join(t.split()).lower() for t in samples["et"])
        counts = Counter(text[i:i + 3] for i in range(len(text) - 2))
        total = sum(counts.values())
        expected = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:50]
        assert freqs == {g: c / total for g, c in expected}

    def test_frequencies_sum_at_most_one(self):
        samples, _ = lang_samples(seed=9)
        for profile in build_language_profiles(samples, top_k=20):
            assert sum(profile.trigram_freqs.values()) <= 1.0 + 1e-12


class TestDetect:
    def test_held_out_paragraph_detected(self):
        rng = np.random.default_rng(2)
        samples, vocab = lang_samples(seed=2)
        profiles = build_language_profiles(samples)
        held_out = prose_page(rng, vocab["et"], 40)
        lang, confidence = detect_language(profiles, held_out)
        assert lang == "et"
        assert confidence > 0

    def test_short_text_is_und(self):
        samples, _ = lang_samples()
        profiles = build_language_profiles(samples)
        assert detect_language(profiles, "liiga lyhike") == ("und", 0.0)

    def test_training_sample_wins_self_similarity(self):
        samples, _ = lang_samples(seed=4)
        profiles = build_language_profiles(samples)
        lang, _ = detect_language(profiles, samples["ru"][0])
        assert lang == "ru"

    def test_accuracy_on_held_out_paragraphs(self):
        # profiles from one half of the text, 200-char paragraphs from the other
        rng = np.random.default_rng(8)
        samples, vocab = lang_samples(seed=8, n_pages=40)
        train = {lang: texts[:20] for lang, texts in samples.items()}
        profiles = build_language_profiles(train)
        correct = total = 0
        for lang, words in vocab.items():
            for _ in range(40):
                paragraph = prose_page(rng, words, 60)[:200]
                detected, _ = detect_language(profiles, paragraph)
                correct += detected == lang
                total += 1
        assert correct / total >= 0.95

    def test_deterministic(self):
        samples, vocab = lang_samples(seed=12)
        profiles = build_language_profiles(samples)
        text = prose_page(np.random.default_rng(0), vocab["en"], 50)
        assert detect_language(profiles, text) == detect_language(profiles, text)


class TestAnalyze:
    def test_lemma_dictionary(self):
        analyzer = RuleAnalyzer(lemmas={"running": "run", "runs": "run", "ran": "run"})
        page = analyze("Running runs RAN", "en", analyzer)
        assert [t.lemma for t in page.tokens] == ["run", "run", "run"]
        assert [t.surface for t in page.tokens] == ["running", "runs", "ran"]

    def test_numerals_map_to_num(self):
        page = analyze("aastal 2020 ilmus", "et", IdentityAnalyzer())
        assert [t.lemma for t in page.tokens] == ["aastal", "<num>", "ilmus"]

    def test_suffix_table_matches_hand_application(self):
        # independent application of the same shipped rule table
        analyzers = load_analyzers(ANALYZER_DIR)
        et = analyzers["et"]

        rules = {}
        for line in (ANALYZER_DIR / "et_suffixes.tsv").read_text().splitlines():
            if line.strip():
                suffix, _, repl = line.partition("\t")
                rules[suffix] = repl

        def hand_lemma(word):
            for suffix in sorted(rules, key=lambda s: (-len(s), s)):
                if word.endswith(suffix) and len(word) - len(suffix) >= 2:
                    return word[:len(word) - len(suffix)] + rules[suffix]
            return word

        lemma_dict = {}
        for line in (ANALYZER_DIR / "et_lemmas.tsv").read_text().splitlines():
            if line.strip():
                surface, _, lemma = line.partition("\t")
                lemma_dict[surface] = lemma

        words = ["raamatud", "kodudest", "metsas", "linnadele", "maja",
                 "jarvele", "saartelt", "inimeste", "pikksilmaga"]
        page = analyze(" ".join(words), "et", et)
        for token in page.tokens:
            expected = lemma_dict.get(token.surface) or hand_lemma(token.surface)
            assert token.lemma == expected, token.surface

    def test_pos_from_lexicon_and_numerals(self):
        analyzers = load_analyzers(ANALYZER_DIR)
        en = analyzers["en"]
        page = analyze("children ran 42 times", "en", en)
        by_surface = {t.surface: t.pos for t in page.tokens}
        assert by_surface["children"] == "NOUN"   # lemma child in lexicon
        assert by_surface["ran"] == "VERB"
        assert by_surface["42"] == "NUM"
        assert by_surface["times"] is None

    def test_token_count_matches_segmentation(self):
        text = "Üks, kaks; kolm! neli?  viis\nkuus"
        page = analyze(text, "et")
        assert len(page.tokens) == len(re.findall(r"\w+", text))

    def test_deterministic_and_stable_on_own_surfaces(self):
        analyzers = load_analyzers(ANALYZER_DIR)
        page = analyze("The Children Were Running 2020 Meters", "en", analyzers["en"])
        again = analyze(" ".join(t.surface for t in page.tokens), "en", analyzers["en"])
        assert [t.surface for t in again.tokens] == [t.surface for t in page.tokens]
        assert [t.lemma for t in again.tokens] == [t.lemma for t in page.tokens]

    def test_worst_case_identity_fallback(self):
        page = analyze("tundmatu keele sõnad", "xx", None)
        assert [t.lemma for t in page.tokens] == ["tundmatu", "keele", "sõnad"]
        assert all(t.pos is None for t in page.tokens)

    def test_invalid_pos_coerced_to_other(self):
        class WeirdAnalyzer:
            def lemmatize(self, surface):
                return surface

            def pos_tag(self, surface, lemma):
                return "GERUND"

        page = analyze("word", "en", WeirdAnalyzer())
        assert page.tokens[0].pos == "OTHER"
