import json

import pytest

from playtrack import cli, data, weaklabel
from playtrack.cli import main

from conftest import make_event


@pytest.fixture
def tiny_corpus(tmp_path):
    store = tmp_path / "store.jsonl"
    truth = tmp_path / "truth.jsonl"
    rc = main([
        "synth", "--pick-and-roll", "6", "--handoff", "6", "--spread", "6",
        "--sigma", "0.2", "--seed", "3", "--out", str(store), "--truth", str(truth),
    ])
    assert rc == 0
    return store, truth


class TestParser:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "command" in capsys.readouterr().out

    def test_subcommand_help(self, capsys):
        assert main(["finetune", "--help"]) == 0
        out = capsys.readouterr().out
        for flag in ("--stage", "--labels", "--val-labels", "--from-checkpoint",
                     "--seed", "--patience", "--lr", "--batch"):
            assert flag in out

    def test_unknown_subcommand(self):
        assert main(["transmogrify"]) == 1

    def test_no_subcommand(self):
        assert main([]) == 1


class TestIngestSegment:
    def test_ingest_reports_rejects(self, tmp_path, capsys):
        frames = make_event(6)
        raw = tmp_path / "raw.csv"
        data.write_frames_csv(frames, raw)
        with open(raw, "a") as fh:
            fh.write("g1,e1,9.9,not-a-number" + ",x" * 43 + "\n")
        out = tmp_path / "frames.jsonl"
        assert main(["ingest", "--input", str(raw), "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert json.loads(captured.out) == {"frames": 6, "rejected": 1}
        assert "rejected line" in captured.err

    def test_ingest_missing_file(self, tmp_path):
        assert main(["ingest", "--input", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "o.jsonl")]) == 2

    def test_ingest_bad_schema(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["ingest", "--input", str(bad),
                     "--out", str(tmp_path / "o.jsonl")]) == 1

    def test_segment_pipeline(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        data.write_frames_csv(make_event(150), raw)
        store = tmp_path / "store.jsonl"
        assert main(["segment", "--input", str(raw), "--out", str(store)]) == 0
        assert json.loads(capsys.readouterr().out)["segments"] == 5
        assert len(data.read_segments(store)) == 5


class TestWeaklabelCommand:
    def test_writes_labels_and_audit(self, tiny_corpus, tmp_path, capsys):
        store, _ = tiny_corpus
        labels = tmp_path / "weak.jsonl"
        audit = tmp_path / "audit.csv"
        rc = main(["weaklabel", "--segments", str(store),
                   "--labels", str(labels), "--audit", str(audit)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["labels"] == 18
        assert audit.exists()
        assert len(weaklabel.read_labels(labels)) == 18

    def test_threshold_override(self, tiny_corpus, tmp_path, capsys):
        store, _ = tiny_corpus
        cfg = tmp_path / "thr.cfg"
        cfg.write_text("possession_max_dist = 0.01\n")  # nothing can hold the ball
        rc = main(["weaklabel", "--segments", str(store),
                   "--labels", str(tmp_path / "w.jsonl"),
                   "--audit", str(tmp_path / "a.csv"),
                   "--thresholds", str(cfg)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["counts"]["pick_and_roll"] == 0
        assert summary["counts"]["handoff"] == 0

    def test_bad_threshold_key(self, tiny_corpus, tmp_path):
        store, _ = tiny_corpus
        cfg = tmp_path / "thr.cfg"
        cfg.write_text("nonsense = 1\n")
        rc = main(["weaklabel", "--segments", str(store),
                   "--labels", str(tmp_path / "w.jsonl"),
                   "--audit", str(tmp_path / "a.csv"),
                   "--thresholds", str(cfg)])
        assert rc == 1

    def test_missing_store(self, tmp_path):
        rc = main(["weaklabel", "--segments", str(tmp_path / "missing.jsonl"),
                   "--labels", str(tmp_path / "w.jsonl"),
                   "--audit", str(tmp_path / "a.csv")])
        assert rc == 2


class TestEvaluate:
    def test_label_files(self, tiny_corpus, tmp_path, capsys):
        store, truth = tiny_corpus
        labels = tmp_path / "weak.jsonl"
        main(["weaklabel", "--segments", str(store), "--labels", str(labels),
              "--audit", str(tmp_path / "a.csv")])
        capsys.readouterr()
        rc = main(["evaluate", "--labels", str(truth), "--pred", str(labels)])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"per_class", "macro_f1", "confusion"}

    def test_needs_pred_or_checkpoint(self, tiny_corpus):
        _, truth = tiny_corpus
        assert main(["evaluate", "--labels", str(truth)]) == 1

    def test_trajectory_checkpoint_rejected(self, tiny_corpus, tmp_path, capsys):
        store, truth = tiny_corpus
        ckpt = tmp_path / "pre.ckpt"
        rc = main(["pretrain", "--segments", str(store), "--out", str(ckpt),
                   "--epochs", "1", "--patience", "1", "--d-h", "8",
                   "--layers", "1", "--heads", "2"])
        assert rc == 0
        capsys.readouterr()
        rc = main(["evaluate", "--labels", str(truth),
                   "--checkpoint", str(ckpt), "--segments", str(store)])
        assert rc == 1


class TestTrainCommands:
    def test_finetune_then_export(self, tiny_corpus, tmp_path, capsys):
        store, truth = tiny_corpus
        ckpt = tmp_path / "cls.ckpt"
        rc = main(["finetune", "--segments", str(store), "--labels", str(truth),
                   "--out", str(ckpt), "--epochs", "2", "--patience", "1",
                   "--d-h", "8", "--layers", "1", "--heads", "2",
                   "--alpha", "0.77,2.34,0.77"])
        assert rc == 0
        capsys.readouterr()
        out = tmp_path / "emb.csv"
        rc = main(["export-embeddings", "--checkpoint", str(ckpt),
                   "--segments", str(store), "--labels", str(truth),
                   "--out", str(out)])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["rows"] == 18

    def test_bad_learning_rate(self, tiny_corpus, tmp_path):
        store, truth = tiny_corpus
        rc = main(["finetune", "--segments", str(store), "--labels", str(truth),
                   "--out", str(tmp_path / "m.ckpt"), "--lr", "-1"])
        assert rc == 1

    def test_from_checkpoint_missing(self, tiny_corpus, tmp_path):
        store, truth = tiny_corpus
        rc = main(["finetune", "--segments", str(store), "--labels", str(truth),
                   "--out", str(tmp_path / "m.ckpt"), "--epochs", "1",
                   "--from-checkpoint", str(tmp_path / "missing.ckpt")])
        assert rc == 2
