import json

import numpy as np
import pytest

from kratt.cli import main
from kratt.corpus import save_corpus

from conftest import build_topic_corpus, make_words, prose_page


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = build_topic_corpus(seed=77, n_topics=5, books_per_topic=3,
                               page_range=(15, 20), topic_vocab=25, n_common=40)
    corpus_path = root / "corpus.jsonl"
    save_corpus(corpus.books, corpus_path)

    bundle_dir = root / "bundle"
    code = main(["train", "--corpus", str(corpus_path), "--out", str(bundle_dir),
                 "--min-examples", "15", "--dim", "16384", "--seed", "3",
                 "--epochs", "8"])
    assert code == 0
    return root, corpus, corpus_path, bundle_dir


class TestTrainIndex:
    def test_bundle_files_written(self, cli_env):
        _, _, _, bundle_dir = cli_env
        names = {p.name for p in bundle_dir.iterdir()}
        assert {"manifest.json", "label_models.jsonl",
                "similarity_index.json"} <= names

    def test_index_json_output(self, cli_env, capsys, tmp_path):
        root, corpus, _, bundle_dir = cli_env
        rng = np.random.default_rng(5)
        book = corpus.fresh_book(rng, corpus.topics[0], 25, "cli-book")
        book_path = tmp_path / "book.json"
        book_dict = {"id": book.id, "title": book.title, "language": "et",
                     "author_birth_year": None, "pages": book.pages, "subjects": []}
        book_path.write_text(json.dumps(book_dict), encoding="utf-8")

        code = main(["index", "--model", str(bundle_dir), "--book", str(book_path),
                     "--seed", "2"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert "elapsed_ms" not in payload  # deterministic by default
        assert payload["pages_used"] == 10
        assert payload["keywords"][0]["term"] == corpus.topics[0]

    def test_index_timing_flag(self, cli_env, capsys, tmp_path):
        root, corpus, _, bundle_dir = cli_env
        rng = np.random.default_rng(6)
        book = corpus.fresh_book(rng, corpus.topics[1], 20, "cli-book2")
        book_path = tmp_path / "b.txt"
        book_path.write_text("\f".join(book.pages), encoding="utf-8")
        code = main(["index", "--model", str(bundle_dir), "--book", str(book_path),
                     "--timing"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert isinstance(payload["elapsed_ms"], int)

    def test_index_marc21_output(self, cli_env, capsys, tmp_path):
        root, corpus, _, bundle_dir = cli_env
        rng = np.random.default_rng(7)
        book = corpus.fresh_book(rng, corpus.topics[2], 20, "cli-book3")
        book_path = tmp_path / "b.txt"
        book_path.write_text("\f".join(book.pages), encoding="utf-8")
        code = main(["index", "--model", str(bundle_dir), "--book", str(book_path),
                     "--format", "marc21"])
        assert code == 0
        out = capsys.readouterr().out.strip()
        assert f"650 _7 $a {corpus.topics[2]} $2 ems" in out.splitlines()


class TestEval:
    def test_eval_prints_summary(self, cli_env, capsys, tmp_path):
        root, corpus, _, bundle_dir = cli_env
        rng = np.random.default_rng(8)
        test_books = [corpus.fresh_book(rng, t, 15, f"ev-{t}")
                      for t in corpus.topics[:3]]
        test_path = tmp_path / "test.jsonl"
        save_corpus(test_books, test_path)
        out_json = tmp_path / "report.json"

        code = main(["eval", "--model", str(bundle_dir), "--test", str(test_path),
                     "--thresholds", "0,0.4", "--seed", "4",
                     "--out-json", str(out_json)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "threshold 0:" in printed
        assert "threshold 0.4:" in printed
        reports = json.loads(out_json.read_text())
        assert len(reports) == 2


class TestQcCommands:
    def test_qc_train_and_score(self, tmp_path, capsys):
        rng = np.random.default_rng(9)
        words = make_words(rng, 500)
        text_path = tmp_path / "clean.txt"
        text_path.write_text(
            "\n".join(prose_page(rng, words, 150) for _ in range(30)),
            encoding="utf-8")
        model_path = tmp_path / "qc.json"

        code = main(["qc-train", "--text-file", str(text_path),
                     "--out", str(model_path)])
        assert code == 0
        assert model_path.exists()

        sample = tmp_path / "sample.txt"
        sample.write_text(prose_page(rng, words, 100), encoding="utf-8")
        code = main(["qc-score", "--model", str(model_path),
                     "--text-file", str(sample)])
        assert code == 0
        clean_score = float(capsys.readouterr().out.strip())

        junk = tmp_path / "junk.txt"
        junk.write_text("AXwQkKSj4G" * 12, encoding="utf-8")
        main(["qc-score", "--model", str(model_path), "--text-file", str(junk)])
        junk_score = float(capsys.readouterr().out.strip())
        assert junk_score < clean_score
