"""End-to-end command-line workflows in a temp directory."""

import json

import pytest

from protoed import parse_corpus
from protoed.cli import main

FAST_FLAGS = [
    "--dim", "10", "--steps", "5", "--batch-size", "12", "--n-buckets", "128",
    "--context-radius", "1", "--support-shots", "1", "--query-shots", "2",
]


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def gen(capsys, tmp_path, **kw):
    corpus = tmp_path / "corpus.jsonl"
    schema = tmp_path / "schema.json"
    args = [
        "gen-synth", "--out", str(corpus), "--schema-out", str(schema),
        "--n-types", "3", "--n-sentences", "80", "--vocab-size", "24",
        "--min-len", "5", "--max-len", "8", "--seed", "0",
    ]
    for k, v in kw.items():
        args += ["--" + k.replace("_", "-"), str(v)]
    rc, out, err = run(capsys, *args)
    assert rc == 0, err
    return corpus, schema, json.loads(out)


class TestGenSynth:
    def test_writes_corpus_and_stats(self, capsys, tmp_path):
        corpus, schema, stats = gen(capsys, tmp_path)
        data = parse_corpus(corpus, schema=None)
        assert stats["sentences"] == 80 == len(data)
        assert stats["types"] == 3
        assert stats["mentions"] == sum(len(s.mentions) for s in data)
        assert json.loads(schema.read_text())


class TestSample:
    def test_kshot_files(self, capsys, tmp_path):
        corpus, schema, _ = gen(capsys, tmp_path)
        train_out = tmp_path / "train.jsonl"
        rest_out = tmp_path / "rest.jsonl"
        rc, out, err = run(
            capsys, "sample", "--corpus", str(corpus), "--schema", str(schema),
            "--k", "2", "--train-out", str(train_out), "--rest-out", str(rest_out),
        )
        assert rc == 0, err
        stats = json.loads(out)
        train = parse_corpus(train_out, schema=None)
        assert stats["train_sentences"] == len(train)
        assert stats["dev_sentences"] == 0
        for t in train.schema.types:
            count = sum(1 for s in train for m in s.mentions if m.label == t)
            assert count >= 2
        rest = parse_corpus(rest_out, schema=None)
        assert not (train.ids() & rest.ids())


class TestSplitTransfer:
    def test_explicit_source_types(self, capsys, tmp_path):
        corpus, schema, _ = gen(capsys, tmp_path)
        src, tgt = tmp_path / "src.jsonl", tmp_path / "tgt.jsonl"
        rc, out, err = run(
            capsys, "split-transfer", "--corpus", str(corpus),
            "--source-types", "k0w0,k1w0",
            "--source-out", str(src), "--target-out", str(tgt),
            "--target-schema-out", str(tmp_path / "tgt-schema.json"),
        )
        assert rc == 0, err
        stats = json.loads(out)
        assert stats["source_types"] == ["k0w0", "k1w0"]
        assert stats["target_types"] == ["k2w0"]
        assert not set(stats["source_types"]) & set(stats["target_types"])
        assert stats["source_sentences"] == len(parse_corpus(src, schema=None))

    def test_n_source_picks_frequent(self, capsys, tmp_path):
        corpus, _, _ = gen(capsys, tmp_path)
        rc, out, err = run(
            capsys, "split-transfer", "--corpus", str(corpus), "--n-source", "2",
            "--source-out", str(tmp_path / "s.jsonl"),
            "--target-out", str(tmp_path / "t.jsonl"),
        )
        assert rc == 0, err
        assert len(json.loads(out)["source_types"]) == 2

    def test_needs_a_selector(self, capsys, tmp_path):
        corpus, _, _ = gen(capsys, tmp_path)
        rc, _, err = run(
            capsys, "split-transfer", "--corpus", str(corpus),
            "--source-out", str(tmp_path / "s.jsonl"),
            "--target-out", str(tmp_path / "t.jsonl"),
        )
        assert rc == 1
        payload = json.loads(err)
        assert payload["error"] == "ConfigError"
        assert "--source-types" in payload["message"] or "source" in payload["message"]


@pytest.fixture
def sampled(capsys, tmp_path):
    corpus, schema, _ = gen(capsys, tmp_path)
    train, rest = tmp_path / "train.jsonl", tmp_path / "rest.jsonl"
    rc, _, err = run(
        capsys, "sample", "--corpus", str(corpus), "--schema", str(schema),
        "--k", "2", "--train-out", str(train), "--rest-out", str(rest),
    )
    assert rc == 0, err
    capsys.readouterr()
    return dict(schema=schema, train=train, rest=rest, dir=tmp_path)


class TestTrainEval:
    def test_train_eval_round_trip(self, capsys, sampled):
        pred = sampled["dir"] / "pred.jsonl"
        rc, out, err = run(
            capsys, "train", "--method", "fsls",
            "--train", str(sampled["train"]), "--test", str(sampled["rest"]),
            "--schema", str(sampled["schema"]), "--seed", "0",
            "--pred-out", str(pred), *FAST_FLAGS,
        )
        assert rc == 0, err
        result = json.loads(out)
        assert result["method"] == "fsls"
        assert set(result) >= {"config_hash", "seed", "lr", "precision", "recall", "f1"}

        rc, out, err = run(
            capsys, "eval", "--pred", str(pred), "--gold", str(sampled["rest"]),
            "--schema", str(sampled["schema"]),
        )
        assert rc == 0, err
        expected = (
            f"precision={result['precision']:.4f} "
            f"recall={result['recall']:.4f} f1={result['f1']:.4f}"
        )
        assert out.strip() == expected

    def test_eval_gold_against_itself_is_perfect(self, capsys, sampled):
        rc, out, _ = run(
            capsys, "eval", "--pred", str(sampled["rest"]),
            "--gold", str(sampled["rest"]), "--schema", str(sampled["schema"]),
        )
        assert rc == 0
        assert out.strip() == "precision=1.0000 recall=1.0000 f1=1.0000"

    def test_train_without_test_reports_loss(self, capsys, sampled):
        rc, out, err = run(
            capsys, "train", "--method", "protonet",
            "--train", str(sampled["train"]), "--schema", str(sampled["schema"]),
            "--seed", "1", *FAST_FLAGS,
        )
        assert rc == 0, err
        result = json.loads(out)
        assert "final_loss" in result and "f1" not in result

    def test_save_and_log(self, capsys, sampled):
        model = sampled["dir"] / "model.npz"
        log = sampled["dir"] / "log.jsonl"
        rc, _, err = run(
            capsys, "train", "--method", "fsls",
            "--train", str(sampled["train"]), "--test", str(sampled["rest"]),
            "--schema", str(sampled["schema"]),
            "--save-model", str(model), "--log", str(log), *FAST_FLAGS,
        )
        assert rc == 0, err
        assert model.exists()
        assert json.loads(log.read_text().splitlines()[0])["kind"] == "low-resource"

    def test_config_file_supplies_method_and_overrides(self, capsys, sampled):
        cfg = sampled["dir"] / "cfg.json"
        cfg.write_text(json.dumps({
            "method": "fsls",
            "overrides": {"dim": 10, "steps": 5, "n_buckets": 128,
                          "context_radius": 1, "batch_size": 12},
        }))
        rc, out, err = run(
            capsys, "train", "--config", str(cfg),
            "--train", str(sampled["train"]), "--schema", str(sampled["schema"]),
        )
        assert rc == 0, err
        assert json.loads(out)["method"] == "fsls"

    def test_unknown_method_is_one_json_error_line(self, capsys, sampled):
        rc, _, err = run(
            capsys, "train", "--method", "nope",
            "--train", str(sampled["train"]), "--schema", str(sampled["schema"]),
        )
        assert rc == 1
        payload = json.loads(err.strip())
        assert payload["error"] == "ConfigError"
        assert "nope" in payload["message"]

    def test_missing_file_is_reported_not_raised(self, capsys, sampled):
        rc, _, err = run(
            capsys, "train", "--method", "fsls", "--train", "/does/not/exist.jsonl",
        )
        assert rc == 1
        assert json.loads(err.strip())["error"] == "FileNotFoundError"


class TestGrid:
    def test_grid_from_config(self, capsys, tmp_path):
        corpus, schema, _ = gen(capsys, tmp_path)
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps({
            "methods": ["fsls", "protonet"],
            "corpus": str(corpus),
            "schema": str(schema),
            "k": 2,
            "seeds": [0, 1],
            "overrides": {"dim": 10, "steps": 5, "n_buckets": 128,
                          "context_radius": 1, "batch_size": 12,
                          "support_shots": 1, "query_shots": 2},
        }))
        out_path = tmp_path / "rows.json"
        rc, out, err = run(capsys, "grid", "--config", str(cfg), "--out", str(out_path))
        assert rc == 0, err
        lines = [json.loads(line) for line in out.strip().splitlines()]
        assert len(lines) == 2
        assert all(row["seeds"] == [0, 1] for row in lines)
        assert json.loads(out_path.read_text()) == lines

    def test_seeds_flag_overrides_config(self, capsys, tmp_path):
        corpus, schema, _ = gen(capsys, tmp_path)
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps({
            "methods": ["fsls"], "corpus": str(corpus), "schema": str(schema),
            "k": 2, "seeds": [0, 1, 2],
            "overrides": {"dim": 10, "steps": 5, "n_buckets": 128,
                          "context_radius": 1, "batch_size": 12},
        }))
        rc, out, err = run(capsys, "grid", "--config", str(cfg), "--seeds", "7")
        assert rc == 0, err
        assert json.loads(out.strip())["seeds"] == [7]

    def test_empty_methods_rejected(self, capsys, tmp_path):
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps({"methods": [], "corpus": "x.jsonl", "k": 2}))
        rc, _, err = run(capsys, "grid", "--config", str(cfg))
        assert rc == 1
        assert json.loads(err.strip())["error"] == "ConfigError"


class TestTransferGrid:
    def test_sources_by_name_and_none(self, capsys, tmp_path):
        corpus, schema, _ = gen(capsys, tmp_path)
        cfg = tmp_path / "tg.json"
        cfg.write_text(json.dumps({
            "corpus": str(corpus),
            "schema": str(schema),
            "source_types": ["k0w0", "k1w0"],
            "sources": ["none", "fsls"],
            "targets": ["fsls"],
            "k": 2,
            "seeds": [0],
            "overrides": {"dim": 10, "steps": 5, "n_buckets": 128,
                          "context_radius": 1, "batch_size": 12,
                          "support_shots": 1, "query_shots": 2},
        }))
        rc, out, err = run(capsys, "transfer-grid", "--config", str(cfg))
        assert rc == 0, err
        rows = [json.loads(line) for line in out.strip().splitlines()]
        assert [(r["source"], r["target"]) for r in rows] == [
            ("none", "fsls"), ("fsls", "fsls"),
        ]
