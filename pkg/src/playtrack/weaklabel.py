"""Rule-based labeling of pick-and-rolls and handoffs.

All rules run on the downsampled 0.12 s timeline, reconstructed from the
segment store by concatenating contiguous windows of one possession, so
label files are reproducible from the store alone.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from itertools import permutations
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import N_OBJECTS, PlaySegment

LABELS = ("pick_and_roll", "handoff", "other")
RULE_VERSION = "rules-1.0"

ATTACKER_SLOTS = range(1, 6)
DEFENDER_SLOTS = range(6, 11)


@dataclass(frozen=True)
class RuleThresholds:
    possession_max_dist: float = 5.0  # ball-to-player planar distance, ft
    possession_max_ball_z: float = 10.0  # ft
    possession_max_ball_speed: float = 25.0  # ft/s, planar
    possession_min_steps: int = 5
    screen_max_attacker_dist: float = 6.0  # handler-to-screener
    screen_max_defender_dist: float = 6.0  # defender-to-handler
    screen_max_block_dist: float = 3.0  # defender-to-screener
    handoff_max_dist: float = 6.5  # giver-to-receiver, strict
    handoff_max_gap_s: float = 0.5  # allowed possession gap during transfer

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleThresholds":
        """Flat key=value overrides; unknown keys rejected."""
        values = {}
        fields = cls.__dataclass_fields__
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in fields:
                    raise ValueError(f"unknown threshold {key!r} at line {lineno}")
                typ = int if fields[key].type == "int" else float
                values[key] = typ(raw.strip())
        return cls(**values)


@dataclass(frozen=True)
class PossessionInterval:
    player_id: str
    slot: int  # object index 1..10 in segment order
    start: int  # timeline step, inclusive
    end: int  # inclusive

    @property
    def n_steps(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class DefensiveAssignment:
    step: int
    pairs: tuple[tuple[str, str], ...]  # (attacker_id, defender_id) x 5
    cost: float


@dataclass(frozen=True)
class KeyFrame:
    possession_key: str
    step: int  # timeline step
    kind: str  # pick_and_roll | handoff
    players: tuple[str, ...]  # (a1, a2, d1) or (giver, receiver)


@dataclass(frozen=True)
class LabelRecord:
    segment_id: str
    label: str
    source: str  # weak | manual
    key_frame: Optional[int] = None
    annotator: Optional[str] = None
    rule_version: Optional[str] = None
    created_at: Optional[str] = None


@dataclass
class Timeline:
    """Contiguous downsampled steps of one possession."""

    possession_key: str
    base_step: int
    pos: np.ndarray  # (11, T, 2)
    ball_z: np.ndarray  # (T,)
    player_ids: tuple[str, ...]
    dt: float

    @property
    def n_steps(self) -> int:
        return self.pos.shape[1]


def timelines_from_segments(segments: Sequence[PlaySegment]) -> list[Timeline]:
    by_poss: dict[str, list[PlaySegment]] = {}
    for s in segments:
        by_poss.setdefault(s.possession_key, []).append(s)
    timelines: list[Timeline] = []
    for key in sorted(by_poss):
        group = sorted(by_poss[key], key=lambda s: s.start_step)
        run: list[PlaySegment] = []
        for seg in group:
            if run and seg.start_step != run[-1].start_step + run[-1].n_steps:
                timelines.append(_merge_run(key, run))
                run = []
            run.append(seg)
        if run:
            timelines.append(_merge_run(key, run))
    return timelines


def _merge_run(key: str, run: list[PlaySegment]) -> Timeline:
    return Timeline(
        possession_key=key,
        base_step=run[0].start_step,
        pos=np.concatenate([s.tau for s in run], axis=1),
        ball_z=np.concatenate([s.ball_z for s in run]),
        player_ids=run[0].player_ids,
        dt=run[0].dt,
    )


# ---------------------------------------------------------------------------
# ball possession


def _ball_speed(pos: np.ndarray, dt: float) -> np.ndarray:
    ball = pos[0]
    if ball.shape[0] < 2:
        return np.zeros(ball.shape[0])
    step_speed = np.linalg.norm(np.diff(ball, axis=0), axis=1) / dt
    return np.concatenate([[step_speed[0]], step_speed])


def detect_possessions(
    timeline: Timeline, thr: RuleThresholds = RuleThresholds()
) -> list[PossessionInterval]:
    """Maximal runs of >= possession_min_steps where one player controls the ball.

    A step belongs to a player iff they are strictly closest to the ball
    (distance ties go to the lowest player_id), within possession_max_dist,
    with the ball lower than possession_max_ball_z and slower than
    possession_max_ball_speed.
    """
    pos = timeline.pos
    T = timeline.n_steps
    speed = _ball_speed(pos, timeline.dt)
    holder = np.full(T, -1, dtype=int)
    for t in range(T):
        if timeline.ball_z[t] >= thr.possession_max_ball_z:
            continue
        if speed[t] >= thr.possession_max_ball_speed:
            continue
        dists = np.linalg.norm(pos[1:, t] - pos[0, t], axis=1)
        order = sorted(range(10), key=lambda i: (dists[i], timeline.player_ids[i + 1]))
        best = order[0]
        if dists[best] <= thr.possession_max_dist:
            holder[t] = best + 1  # object slot

    intervals: list[PossessionInterval] = []
    t = 0
    while t < T:
        if holder[t] < 0:
            t += 1
            continue
        u = t
        while u + 1 < T and holder[u + 1] == holder[t]:
            u += 1
        if u - t + 1 >= thr.possession_min_steps:
            slot = int(holder[t])
            intervals.append(
                PossessionInterval(
                    player_id=timeline.player_ids[slot],
                    slot=slot,
                    start=timeline.base_step + t,
                    end=timeline.base_step + u,
                )
            )
        t = u + 1
    return intervals


# ---------------------------------------------------------------------------
# defensive assignment


def brute_force_assignment(cost: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Exhaustive minimum over all bijections; lexicographically least on ties.

    Reference oracle; O(n!)."""
    n = cost.shape[0]
    best: Optional[tuple[int, ...]] = None
    best_cost = math.inf
    for perm in permutations(range(n)):
        c = sum(cost[i, perm[i]] for i in range(n))
        if c < best_cost:
            best, best_cost = perm, c
    return best, best_cost  # type: ignore[return-value]


def min_cost_assignment(cost: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Minimum-cost bijection, lexicographically least among optima.

    Solved with a polynomial assignment algorithm, then refined greedily:
    for each row in order, keep the smallest column whose forced choice
    still completes to the optimal total.
    """
    n = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    optimal = float(cost[rows, cols].sum())
    tol = 1e-9 * max(1.0, abs(optimal))

    chosen: list[int] = []
    free = list(range(n))
    fixed_cost = 0.0
    for i in range(n):
        for j in sorted(free):
            rest_rows = [r for r in range(i + 1, n)]
            rest_cols = [c for c in free if c != j]
            completion = 0.0
            if rest_rows:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                rr, cc = linear_sum_assignment(sub)
                completion = float(sub[rr, cc].sum())
            if fixed_cost + cost[i, j] + completion <= optimal + tol:
                chosen.append(j)
                free.remove(j)
                fixed_cost += float(cost[i, j])
                break
        else:  # pragma: no cover - defensive, cannot happen
            raise RuntimeError("no completion found for assignment")
    total = float(sum(cost[i, chosen[i]] for i in range(n)))
    return tuple(chosen), total


def assign_defense(timeline: Timeline, t: int) -> DefensiveAssignment:
    """Match each attacker with a defender, minimizing summed distances."""
    local = t - timeline.base_step
    attackers = timeline.pos[1:6, local]
    defenders = timeline.pos[6:11, local]
    cost = np.linalg.norm(attackers[:, None, :] - defenders[None, :, :], axis=2)
    chosen, total = min_cost_assignment(cost)
    pairs = tuple(
        (timeline.player_ids[1 + i], timeline.player_ids[6 + chosen[i]])
        for i in range(5)
    )
    return DefensiveAssignment(step=t, pairs=pairs, cost=total)


# ---------------------------------------------------------------------------
# pick-and-roll / handoff rules


def detect_pick_and_rolls(
    timeline: Timeline,
    intervals: Sequence[PossessionInterval],
    thr: RuleThresholds = RuleThresholds(),
) -> list[KeyFrame]:
    """Steps where a screener blocks the ball handler's defender.

    At a step inside an attacker's possession interval, with d1 the
    handler's assigned defender: key frame iff some other attacker a2 has
    |a1-a2| <= screen_max_attacker_dist, |d1-a1| <= screen_max_defender_dist
    and |d1-a2| <= screen_max_block_dist (all inclusive).
    """
    keys: list[KeyFrame] = []
    for iv in intervals:
        if iv.slot not in ATTACKER_SLOTS:
            continue
        for t in range(iv.start, iv.end + 1):
            local = t - timeline.base_step
            a1 = timeline.pos[iv.slot, local]
            assignment = assign_defense(timeline, t)
            d1_id = dict(assignment.pairs)[iv.player_id]
            d1_slot = timeline.player_ids.index(d1_id)
            d1 = timeline.pos[d1_slot, local]
            if np.linalg.norm(d1 - a1) > thr.screen_max_defender_dist:
                continue
            best: Optional[tuple[float, int]] = None
            for slot in ATTACKER_SLOTS:
                if slot == iv.slot:
                    continue
                a2 = timeline.pos[slot, local]
                if np.linalg.norm(a1 - a2) > thr.screen_max_attacker_dist:
                    continue
                block = float(np.linalg.norm(d1 - a2))
                if block > thr.screen_max_block_dist:
                    continue
                if best is None or block < best[0]:
                    best = (block, slot)
            if best is not None:
                keys.append(
                    KeyFrame(
                        possession_key=timeline.possession_key,
                        step=t,
                        kind="pick_and_roll",
                        players=(
                            iv.player_id,
                            timeline.player_ids[best[1]],
                            d1_id,
                        ),
                    )
                )
    return keys


def detect_handoffs(
    timeline: Timeline,
    intervals: Sequence[PossessionInterval],
    thr: RuleThresholds = RuleThresholds(),
) -> list[KeyFrame]:
    """First steps of possession intervals that continue a teammate's possession.

    Giver and receiver must both be attackers, the possession gap at most
    handoff_max_gap_s, and their distance at the receiver's first step
    strictly below handoff_max_dist.
    """
    keys: list[KeyFrame] = []
    ordered = sorted(intervals, key=lambda iv: iv.start)
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.player_id == cur.player_id:
            continue
        if prev.slot not in ATTACKER_SLOTS or cur.slot not in ATTACKER_SLOTS:
            continue  # cross-team change is a turnover, not a handoff
        gap_steps = cur.start - prev.end - 1
        if gap_steps * timeline.dt > thr.handoff_max_gap_s + 1e-9:
            continue
        local = cur.start - timeline.base_step
        dist = np.linalg.norm(
            timeline.pos[prev.slot, local] - timeline.pos[cur.slot, local]
        )
        if dist < thr.handoff_max_dist:
            keys.append(
                KeyFrame(
                    possession_key=timeline.possession_key,
                    step=cur.start,
                    kind="handoff",
                    players=(prev.player_id, cur.player_id),
                )
            )
    return keys


# ---------------------------------------------------------------------------
# segment labeling


def label_segments(
    segments: Sequence[PlaySegment],
    key_frames: Sequence[KeyFrame],
    rule_version: str = RULE_VERSION,
) -> list[LabelRecord]:
    """One weak label per segment from the key frames it contains.

    Both kinds present: the earlier key frame wins, ties go to
    pick_and_roll.  No key frames: other.
    """
    by_poss: dict[str, list[KeyFrame]] = {}
    for kf in key_frames:
        by_poss.setdefault(kf.possession_key, []).append(kf)

    records: list[LabelRecord] = []
    for seg in segments:
        lo = seg.start_step
        hi = seg.start_step + seg.n_steps
        inside = [
            kf for kf in by_poss.get(seg.possession_key, []) if lo <= kf.step < hi
        ]
        label = "other"
        key_step: Optional[int] = None
        if inside:
            first_pnr = min(
                (kf.step for kf in inside if kf.kind == "pick_and_roll"),
                default=None,
            )
            first_ho = min(
                (kf.step for kf in inside if kf.kind == "handoff"), default=None
            )
            if first_pnr is not None and (first_ho is None or first_pnr <= first_ho):
                label, key_step = "pick_and_roll", first_pnr
            else:
                label, key_step = "handoff", first_ho
        records.append(
            LabelRecord(
                segment_id=seg.segment_id,
                label=label,
                source="weak",
                key_frame=key_step,
                rule_version=rule_version,
            )
        )
    return records


def weak_label_store(
    segments: Sequence[PlaySegment], thr: RuleThresholds = RuleThresholds()
) -> tuple[list[LabelRecord], list[KeyFrame]]:
    """Run the full rule pipeline over a segment store."""
    key_frames: list[KeyFrame] = []
    for timeline in timelines_from_segments(segments):
        intervals = detect_possessions(timeline, thr)
        key_frames.extend(detect_pick_and_rolls(timeline, intervals, thr))
        key_frames.extend(detect_handoffs(timeline, intervals, thr))
    return label_segments(segments, key_frames), key_frames


# ---------------------------------------------------------------------------
# label file I/O and audit


def write_labels(records: Iterable[LabelRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            rec = {k: v for k, v in asdict(r).items() if v is not None}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_labels(path: str | Path) -> list[LabelRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                LabelRecord(
                    segment_id=obj["segment_id"],
                    label=obj["label"],
                    source=obj["source"],
                    key_frame=obj.get("key_frame"),
                    annotator=obj.get("annotator"),
                    rule_version=obj.get("rule_version"),
                    created_at=obj.get("created_at"),
                )
            )
    return records


def write_audit_report(
    records: Sequence[LabelRecord],
    key_frames: Sequence[KeyFrame],
    path: str | Path,
) -> dict[str, int]:
    """Key-frame dump for manual spot checks; returns per-rule counts."""
    counts = {label: 0 for label in LABELS}
    for r in records:
        counts[r.label] += 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["possession_key", "step", "kind", "players"])
        for kf in sorted(key_frames, key=lambda k: (k.possession_key, k.step, k.kind)):
            writer.writerow([kf.possession_key, kf.step, kf.kind, "|".join(kf.players)])
    return counts
