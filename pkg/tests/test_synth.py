import collections

import numpy as np
import pytest

from playtrack import data, synth, weaklabel
from playtrack.synth import PlayScript, generate, make_corpus


class TestScripts:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown script kind"):
            PlayScript("alley_oop", seed=0)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            PlayScript("spread", seed=0, noise_sigma=-0.1)

    def test_deterministic(self):
        a = generate(PlayScript("handoff", seed=42, noise_sigma=0.3))
        b = generate(PlayScript("handoff", seed=42, noise_sigma=0.3))
        assert a.frames == b.frames

    def test_different_seeds_differ(self):
        a = generate(PlayScript("spread", seed=1))
        b = generate(PlayScript("spread", seed=2))
        assert a.frames != b.frames

    def test_frame_structure(self):
        play = generate(PlayScript("pick_and_roll", seed=0))
        assert len(play.frames) == 32 * data.DOWNSAMPLE_FACTOR
        for f in play.frames[:5]:
            assert len(f.players) == 10
            teams = collections.Counter(p.team for p in f.players)
            assert teams == {data.TEAM_OFFENSE: 5, data.TEAM_DEFENSE: 5}
            assert f.shot_clock is not None

    def test_shot_clock_strictly_decreasing(self):
        play = generate(PlayScript("spread", seed=3))
        clocks = [f.shot_clock for f in play.frames]
        assert all(b < a for a, b in zip(clocks, clocks[1:]))

    def test_event_step_inside_first_window(self):
        for kind in ("pick_and_roll", "handoff"):
            for seed in range(5):
                play = generate(PlayScript(kind, seed=seed))
                assert play.event_step is not None
                assert 0 <= play.event_step < data.INPUT_STEPS

    def test_non_event_kinds_have_no_event(self):
        assert generate(PlayScript("spread", seed=0)).event_step is None
        assert generate(PlayScript("random_walk", seed=0)).event_step is None

    def test_survives_preprocessing(self):
        # a scripted play must come out the far end as a full possession
        for kind in synth.SCRIPT_KINDS:
            play = generate(PlayScript(kind, seed=7, noise_sigma=0.3))
            segs = data.preprocess_event(play.frames)
            assert len(segs) >= 2, kind


class TestCorpus:
    def test_counts_and_balance(self, tmp_path):
        store = tmp_path / "store.jsonl"
        truth = tmp_path / "truth.jsonl"
        segs, records = make_corpus(
            {"pick_and_roll": 4, "handoff": 4, "spread": 4, "random_walk": 2},
            sigma=0.0,
            seed=0,
            store_path=store,
            truth_path=truth,
        )
        assert len(segs) == 14
        counts = collections.Counter(r.label for r in records)
        assert counts == {"pick_and_roll": 4, "handoff": 4, "other": 6}
        assert all(r.source == "manual" and r.annotator == "script" for r in records)

    def test_store_files_readable(self, tmp_path):
        store = tmp_path / "store.jsonl"
        truth = tmp_path / "truth.jsonl"
        segs, records = make_corpus(
            {"spread": 3}, sigma=0.1, seed=1, store_path=store, truth_path=truth
        )
        loaded = data.read_segments(store)
        assert [s.segment_id for s in loaded] == [s.segment_id for s in segs]
        assert weaklabel.read_labels(truth) == records

    def test_segments_carry_futures(self, tmp_path):
        segs, _ = make_corpus(
            {"pick_and_roll": 2},
            sigma=0.0,
            seed=2,
            store_path=tmp_path / "s.jsonl",
            truth_path=tmp_path / "t.jsonl",
            horizon=10,
        )
        assert all(s.nu is not None and s.nu.shape == (11, 10, 2) for s in segs)

    def test_negative_count_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            make_corpus({"spread": -1}, 0.0, 0, tmp_path / "s", tmp_path / "t")

    def test_noiseless_weak_labels_match_truth(self, tmp_path):
        segs, truth = make_corpus(
            {"pick_and_roll": 10, "handoff": 10, "spread": 10},
            sigma=0.0,
            seed=3,
            store_path=tmp_path / "s.jsonl",
            truth_path=tmp_path / "t.jsonl",
        )
        weak, _ = weaklabel.weak_label_store(segs)
        truth_map = {r.segment_id: r.label for r in truth}
        assert all(truth_map[r.segment_id] == r.label for r in weak)
