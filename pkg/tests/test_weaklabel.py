import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from playtrack import weaklabel
from playtrack.data import PlaySegment
from playtrack.weaklabel import (
    KeyFrame,
    LabelRecord,
    RuleThresholds,
    Timeline,
    assign_defense,
    brute_force_assignment,
    detect_handoffs,
    detect_pick_and_rolls,
    detect_possessions,
    label_segments,
    min_cost_assignment,
    read_labels,
    write_labels,
)

IDS = ("", "A1", "A2", "A3", "A4", "A5", "D1", "D2", "D3", "D4", "D5")
DT = 0.12


def make_timeline(T=12, base_step=0, key="g:e:0"):
    """Static, well-separated players; ball parked on A1."""
    pos = np.zeros((11, T, 2))
    spots = [
        (25.0, 60.0),  # A1
        (40.0, 55.0),
        (10.0, 55.0),
        (40.0, 85.0),
        (10.0, 85.0),
    ]
    for i, (x, y) in enumerate(spots):
        pos[1 + i, :, 0] = x
        pos[1 + i, :, 1] = y
        pos[6 + i, :, 0] = x  # matching defender 8 ft toward the baseline
        pos[6 + i, :, 1] = y + 8.0
    pos[0] = pos[1]  # ball with A1
    return Timeline(
        possession_key=key,
        base_step=base_step,
        pos=pos,
        ball_z=np.full(T, 4.0),
        player_ids=IDS,
        dt=DT,
    )


# ---------------------------------------------------------------------------
# thresholds config


class TestThresholds:
    def test_defaults(self):
        thr = RuleThresholds()
        assert thr.possession_max_dist == 5.0
        assert thr.screen_max_block_dist == 3.0
        assert thr.handoff_max_dist == 6.5

    def test_from_file(self, tmp_path):
        cfg = tmp_path / "thr.cfg"
        cfg.write_text("# comment\nscreen_max_block_dist = 4.5\npossession_min_steps=3\n")
        thr = RuleThresholds.from_file(cfg)
        assert thr.screen_max_block_dist == 4.5
        assert thr.possession_min_steps == 3
        assert thr.possession_max_dist == 5.0  # untouched default

    def test_from_file_rejects_unknown_key(self, tmp_path):
        cfg = tmp_path / "thr.cfg"
        cfg.write_text("max_warp_speed = 9\n")
        with pytest.raises(ValueError, match="unknown threshold"):
            RuleThresholds.from_file(cfg)


# ---------------------------------------------------------------------------
# possession detection


class TestPossessions:
    def test_single_holder(self):
        tl = make_timeline()
        (iv,) = detect_possessions(tl)
        assert iv.player_id == "A1"
        assert (iv.start, iv.end) == (0, 11)

    def test_min_steps_gate(self):
        tl = make_timeline(T=4)  # below the 5-step minimum
        assert detect_possessions(tl) == []

    def test_distance_gate(self):
        tl = make_timeline()
        tl.pos[0, :, 0] += 5.1  # just beyond 5 ft
        assert detect_possessions(tl) == []
        tl.pos[0, :, 0] -= 0.2  # back inside 5 ft
        assert len(detect_possessions(tl)) == 1

    def test_ball_height_gate(self):
        tl = make_timeline()
        tl.ball_z[:] = 10.0  # exactly at the limit counts as too high
        assert detect_possessions(tl) == []

    def test_ball_speed_gate(self):
        tl = make_timeline()
        # ball teleports forward every step: speed >> 25 ft/s
        tl.pos[0, :, 1] += np.arange(tl.n_steps) * 4.0
        assert detect_possessions(tl) == []

    def test_tie_goes_to_lowest_player_id(self):
        tl = make_timeline()
        tl.pos[2] = tl.pos[1]  # A2 exactly on top of A1
        (iv,) = detect_possessions(tl)
        assert iv.player_id == "A1"

    def test_holder_change_splits_runs(self):
        tl = make_timeline(T=12)
        tl.pos[0, 6:] = tl.pos[2, 6:]  # ball jumps to A2 at step 6
        ivs = detect_possessions(tl)
        # the jump step itself fails the ball-speed gate, so A2's run starts at 7
        assert [(iv.player_id, iv.start, iv.end) for iv in ivs] == [
            ("A1", 0, 5),
            ("A2", 7, 11),
        ]

    def test_base_step_offset(self):
        tl = make_timeline(base_step=20)
        (iv,) = detect_possessions(tl)
        assert (iv.start, iv.end) == (20, 31)


# ---------------------------------------------------------------------------
# defensive assignment


class TestAssignment:
    def test_matches_brute_force_on_random_instances(self, rng):
        for _ in range(200):
            cost = rng.uniform(0, 50, size=(5, 5))
            bf_perm, bf_cost = brute_force_assignment(cost)
            perm, total = min_cost_assignment(cost)
            assert perm == bf_perm
            assert total == bf_cost

    def test_lexicographic_tie_break(self):
        # all-equal costs: every bijection is optimal; identity is least
        cost = np.ones((5, 5))
        perm, total = min_cost_assignment(cost)
        assert perm == (0, 1, 2, 3, 4)
        assert total == 5.0

    def test_assign_defense_pairs_nearest(self):
        tl = make_timeline()
        a = assign_defense(tl, 0)
        assert dict(a.pairs) == {f"A{i}": f"D{i}" for i in range(1, 6)}
        assert a.cost == pytest.approx(40.0)  # five 8 ft gaps

    @given(
        cost=arrays(
            np.float64,
            (4, 4),
            elements=st.floats(0, 100, allow_nan=False),
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_property_matches_brute_force(self, cost):
        _, bf_cost = brute_force_assignment(cost)
        _, total = min_cost_assignment(cost)
        assert total == pytest.approx(bf_cost, abs=1e-9)


# ---------------------------------------------------------------------------
# pick-and-roll rule


class TestPickAndRoll:
    def _with_screen(self, block_dist, attacker_dist=4.0):
        tl = make_timeline()
        # defender D1 sits 3 ft behind A1; screener A2 stands near D1; D2
        # glued to the screener so the optimal matching keeps D1 on A1
        tl.pos[6, :, :] = tl.pos[1, :, :] + np.array([0.0, 3.0])
        tl.pos[2, :, :] = tl.pos[6, :, :] + np.array([block_dist, 0.0])
        tl.pos[7, :, :] = tl.pos[2, :, :] + np.array([0.0, 1.2])
        # keep the handler-screener distance under control
        assert np.linalg.norm(tl.pos[2, 0] - tl.pos[1, 0]) <= attacker_dist + 3.1
        return tl

    def test_screen_detected(self):
        tl = self._with_screen(1.0)
        ivs = detect_possessions(tl)
        keys = detect_pick_and_rolls(tl, ivs)
        assert keys and all(k.kind == "pick_and_roll" for k in keys)
        assert keys[0].players == ("A1", "A2", "D1")

    def test_block_threshold_inclusive(self):
        keys = detect_pick_and_rolls(
            self._with_screen(3.0), detect_possessions(self._with_screen(3.0))
        )
        assert keys  # exactly 3 ft still counts
        tl = self._with_screen(3.2)
        assert detect_pick_and_rolls(tl, detect_possessions(tl)) == []

    def test_defender_must_be_close_to_handler(self):
        tl = make_timeline()
        # screener hugs D1, but D1 is 8 ft from A1 (> 6)
        tl.pos[2, :, :] = tl.pos[6, :, :] + np.array([1.0, 0.0])
        assert detect_pick_and_rolls(tl, detect_possessions(tl)) == []

    def test_defender_possession_never_triggers(self):
        tl = make_timeline()
        tl.pos[0] = tl.pos[6]  # defense controls the ball
        ivs = detect_possessions(tl)
        assert ivs and ivs[0].player_id == "D1"
        assert detect_pick_and_rolls(tl, ivs) == []

    def test_loosening_thresholds_superset(self):
        tl = self._with_screen(2.9)
        ivs = detect_possessions(tl)
        tight = {
            (k.step, k.players)
            for k in detect_pick_and_rolls(tl, ivs, RuleThresholds())
        }
        loose_thr = dataclasses.replace(
            RuleThresholds(),
            screen_max_block_dist=5.0,
            screen_max_defender_dist=8.0,
        )
        loose = {
            (k.step, k.players) for k in detect_pick_and_rolls(tl, ivs, loose_thr)
        }
        assert tight <= loose


# ---------------------------------------------------------------------------
# handoff rule


class TestHandoff:
    def _with_transfer(self, gap_steps=0, dist=3.0, receiver_slot=2):
        tl = make_timeline(T=14)
        switch = 7
        tl.pos[receiver_slot, :, :] = tl.pos[1, :, :] + np.array([dist, 0.0])
        tl.pos[0, switch:] = tl.pos[receiver_slot, switch:]
        if gap_steps:
            # lift the ball out of reach during the gap
            tl.ball_z[switch - gap_steps : switch] = 12.0
        return tl

    def test_handoff_detected(self):
        tl = self._with_transfer()
        keys = detect_handoffs(tl, detect_possessions(tl))
        # the jump step 7 fails the speed gate; the receiver's run starts at 8
        assert [(k.step, k.players) for k in keys] == [(8, ("A1", "A2"))]

    def test_gap_within_half_second(self):
        tl = self._with_transfer(gap_steps=2)  # 0.24 s gap... wait, recompute below
        ivs = detect_possessions(tl)
        keys = detect_handoffs(tl, ivs)
        assert len(keys) == 1

    def test_gap_too_long(self):
        tl = make_timeline(T=20)
        tl.pos[2, :, :] = tl.pos[1, :, :] + np.array([3.0, 0.0])
        tl.pos[0, 12:] = tl.pos[2, 12:]
        tl.ball_z[6:12] = 12.0  # 6-step gap = 0.72 s > 0.5 s
        assert detect_handoffs(tl, detect_possessions(tl)) == []

    def test_distance_strictly_below_threshold(self):
        tl = self._with_transfer(dist=6.5)
        assert detect_handoffs(tl, detect_possessions(tl)) == []
        tl = self._with_transfer(dist=6.4)
        assert len(detect_handoffs(tl, detect_possessions(tl))) == 1

    def test_cross_team_change_is_not_a_handoff(self):
        tl = self._with_transfer(receiver_slot=6)
        assert detect_handoffs(tl, detect_possessions(tl)) == []


# ---------------------------------------------------------------------------
# segment labeling


def seg(key, start, sid=None, L=10):
    return PlaySegment(
        segment_id=sid or f"{key}:{start}",
        game_id="g",
        event_id="e",
        possession_key=key,
        start_step=start,
        dt=DT,
        tau=np.zeros((11, L, 2)),
        ball_z=np.zeros(L),
        player_ids=IDS,
    )


class TestLabelSegments:
    def test_containment(self):
        kf = KeyFrame("k", step=12, kind="pick_and_roll", players=("A1", "A2", "D1"))
        records = label_segments([seg("k", 0), seg("k", 10), seg("k", 20)], [kf])
        assert [r.label for r in records] == ["other", "pick_and_roll", "other"]
        assert records[1].key_frame == 12

    def test_earlier_key_frame_wins(self):
        kfs = [
            KeyFrame("k", 5, "handoff", ("A1", "A2")),
            KeyFrame("k", 7, "pick_and_roll", ("A1", "A2", "D1")),
        ]
        (rec,) = label_segments([seg("k", 0)], kfs)
        assert rec.label == "handoff"

    def test_tie_goes_to_pick_and_roll(self):
        kfs = [
            KeyFrame("k", 5, "handoff", ("A1", "A2")),
            KeyFrame("k", 5, "pick_and_roll", ("A1", "A2", "D1")),
        ]
        (rec,) = label_segments([seg("k", 0)], kfs)
        assert rec.label == "pick_and_roll"

    def test_other_possession_key_frames_ignored(self):
        kf = KeyFrame("other-poss", 5, "handoff", ("A1", "A2"))
        (rec,) = label_segments([seg("k", 0)], [kf])
        assert rec.label == "other"

    def test_rule_version_recorded(self):
        (rec,) = label_segments([seg("k", 0)], [])
        assert rec.rule_version == weaklabel.RULE_VERSION
        assert rec.source == "weak"


# ---------------------------------------------------------------------------
# I/O and determinism


class TestLabelIO:
    def test_round_trip(self, tmp_path):
        records = [
            LabelRecord("s1", "pick_and_roll", "weak", key_frame=3,
                        rule_version="rules-1.0"),
            LabelRecord("s2", "other", "manual", annotator="me",
                        created_at="2026-01-01T00:00:00+00:00"),
        ]
        path = tmp_path / "labels.jsonl"
        write_labels(records, path)
        assert read_labels(path) == records

    def test_none_fields_dropped_from_json(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        write_labels([LabelRecord("s1", "other", "weak")], path)
        obj = json.loads(path.read_text())
        assert "key_frame" not in obj and "annotator" not in obj

    def test_weak_label_store_deterministic(self, tmp_path):
        from playtrack import synth
        from playtrack.data import preprocess_event

        play = synth.generate(synth.PlayScript("pick_and_roll", seed=5,
                                               noise_sigma=0.3))
        segments = preprocess_event(play.frames)
        out = []
        for name in ("a.jsonl", "b.jsonl"):
            records, _ = weaklabel.weak_label_store(segments)
            path = tmp_path / name
            write_labels(records, path)
            out.append(path.read_bytes())
        assert out[0] == out[1]

    def test_audit_report(self, tmp_path):
        records = [
            LabelRecord("s1", "pick_and_roll", "weak"),
            LabelRecord("s2", "other", "weak"),
        ]
        kfs = [KeyFrame("k", 5, "pick_and_roll", ("A1", "A2", "D1"))]
        path = tmp_path / "audit.csv"
        counts = weaklabel.write_audit_report(records, kfs, path)
        assert counts == {"pick_and_roll": 1, "handoff": 0, "other": 1}
        lines = path.read_text().splitlines()
        assert lines[0] == "possession_key,step,kind,players"
        assert lines[1] == "k,5,pick_and_roll,A1|A2|D1"
