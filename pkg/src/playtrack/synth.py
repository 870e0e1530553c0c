"""Deterministic scripted-play generator.

Scripts are laid out in canonical coordinates (x across 0..50, y along
0..94, attacked basket near (25, 88.75)) and mapped back to the raw court
convention before emitting frames, so the whole preprocessing pipeline is
exercised.  Same (kind, seed, sigma) always yields byte-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data
from .data import PlayerObs, PlaySegment, TrackingFrame
from .weaklabel import LabelRecord, write_labels

SCRIPT_KINDS = ("pick_and_roll", "handoff", "spread", "random_walk")

RAW_PER_STEP = data.DOWNSAMPLE_FACTOR  # raw frames per downsampled step
SCRIPT_STEPS = 32  # downsampled steps per script
BALL_HEIGHT = 4.5  # ft, dribble height
BASKET = np.array([25.0, data.COURT_LENGTH - data.BASKET_FROM_BASELINE])

# far spread spots, pairwise >= 13 ft and >= 13 ft from the action zone
CORNER_SPOTS = [(6.0, 52.0), (44.0, 52.0), (6.0, 88.0), (44.0, 88.0), (25.0, 91.0)]


@dataclass(frozen=True)
class PlayScript:
    kind: str  # pick_and_roll | handoff | spread | random_walk
    seed: int
    duration_steps: int = SCRIPT_STEPS
    noise_sigma: float = 0.0
    game_id: str = "synth"
    event_id: str = "0"

    def __post_init__(self):
        if self.kind not in SCRIPT_KINDS:
            raise ValueError(f"unknown script kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")


@dataclass
class GeneratedPlay:
    frames: list[TrackingFrame]
    kind: str
    event_step: Optional[int]  # downsampled step of the key moment, if any


def _interp_path(waypoints: Sequence[tuple[float, float, float]], n: int) -> np.ndarray:
    """Piecewise-linear path sampled at raw frames 0..n-1.

    Waypoints are (downsampled step, x, y)."""
    ts = np.array([w[0] * RAW_PER_STEP for w in waypoints])
    xs = np.array([w[1] for w in waypoints])
    ys = np.array([w[2] for w in waypoints])
    k = np.arange(n)
    return np.stack([np.interp(k, ts, xs), np.interp(k, ts, ys)], axis=1)


def _toward(src: np.ndarray, dst: np.ndarray, dist: float) -> np.ndarray:
    v = dst - src
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        return src.copy()
    return src + v * (dist / norm)


def _pick_and_roll(rng: np.random.Generator, n_raw: int, S: int):
    bx = rng.uniform(18.0, 32.0)
    by = rng.uniform(58.0, 70.0)
    event = int(rng.integers(6, 9))  # block moment, inside the first window

    handler = _interp_path([(0, bx, by), (S, bx + 3.0, by + 4.0)], n_raw)
    guard = np.array([_toward(p, BASKET, 3.0) for p in handler])

    start = handler[0] + np.array([11.0, -2.0])
    spot = _toward(guard[event * RAW_PER_STEP], handler[event * RAW_PER_STEP], 0.8)
    hold = _toward(guard[(event + 3) * RAW_PER_STEP],
                   handler[(event + 3) * RAW_PER_STEP], 0.8)
    roll_end = _toward(hold, BASKET, 10.0)
    screener = _interp_path(
        [
            (0, start[0], start[1]),
            (event, spot[0], spot[1]),
            (event + 3, hold[0], hold[1]),
            (S, roll_end[0], roll_end[1]),
        ],
        n_raw,
    )
    screen_guard = np.array([_toward(p, BASKET, 1.2) for p in screener])

    corners = [CORNER_SPOTS[i] for i in rng.permutation(5)[:3]]
    attackers = [handler, screener]
    defenders = [guard, screen_guard]
    for cx, cy in corners:
        drift = rng.uniform(-1.0, 1.0, size=2)
        path = _interp_path([(0, cx, cy), (S, cx + drift[0], cy + drift[1])], n_raw)
        attackers.append(path)
        defenders.append(np.array([_toward(p, BASKET, 3.0) for p in path]))

    ball = handler.copy()
    return attackers, defenders, ball, event


def _handoff(rng: np.random.Generator, n_raw: int, S: int):
    bx = rng.uniform(18.0, 30.0)
    by = rng.uniform(58.0, 70.0)
    event = 5  # transfer step: both possession runs reach the 5-step minimum

    # the giver steps back as the ball is handed over, so the receiver is
    # unambiguously closest to the ball from the transfer step on
    giver = _interp_path(
        [
            (0, bx, by),
            (event - 1, bx, by),
            (event, bx, by - 0.8),
            (2 * event - 1, bx, by - 3.0),
            (S, bx, by - 4.0),
        ],
        n_raw,
    )
    # closest approach (1.5 ft) exactly at the transfer step keeps the ball
    # hand-over slow enough for the possession speed gate
    receiver = _interp_path(
        [
            (0, bx + 12.0, by + 1.5),
            (event, bx, by + 1.5),
            (2 * event, bx - 7.5, by + 6.0),
            (S, bx - 9.0, by + 7.0),
        ],
        n_raw,
    )
    # sagging defenders keep the screen rule silent during the crossing
    d_giver = np.array([_toward(p, BASKET, 8.0) for p in giver])
    d_receiver = np.array([_toward(p, BASKET, 8.0) for p in receiver])

    corners = [CORNER_SPOTS[i] for i in rng.permutation(5)[:3]]
    attackers = [giver, receiver]
    defenders = [d_giver, d_receiver]
    for cx, cy in corners:
        drift = rng.uniform(-1.0, 1.0, size=2)
        path = _interp_path([(0, cx, cy), (S, cx + drift[0], cy + drift[1])], n_raw)
        attackers.append(path)
        defenders.append(np.array([_toward(p, BASKET, 3.0) for p in path]))

    transfer_raw = event * RAW_PER_STEP
    ball = np.concatenate([giver[:transfer_raw], receiver[transfer_raw:]])
    return attackers, defenders, ball, event


def _spread(rng: np.random.Generator, n_raw: int, S: int):
    attackers = []
    defenders = []
    for cx, cy in CORNER_SPOTS:
        jitter = rng.uniform(-1.5, 1.5, size=2)
        drift = rng.uniform(-1.0, 1.0, size=2)
        x0, y0 = cx + jitter[0], cy + jitter[1]
        path = _interp_path([(0, x0, y0), (S, x0 + drift[0], y0 + drift[1])], n_raw)
        attackers.append(path)
        defenders.append(np.array([_toward(p, BASKET, 4.0) for p in path]))
    ball = attackers[0].copy()
    return attackers, defenders, ball, None


def _random_walk(rng: np.random.Generator, n_raw: int, S: int):
    attackers = []
    for _ in range(5):
        waypoints = [(0.0, rng.uniform(5, 45), rng.uniform(50, 92))]
        step = 0.0
        while step < S:
            step += 8.0
            prev = waypoints[-1]
            # at most 8 ft per 8 steps (~8.3 ft/s), well under the speed cap
            waypoints.append(
                (
                    min(step, float(S)),
                    float(np.clip(prev[1] + rng.uniform(-8, 8), 2, 48)),
                    float(np.clip(prev[2] + rng.uniform(-8, 8), 49, 92)),
                )
            )
        attackers.append(_interp_path(waypoints, n_raw))
    defenders = [np.array([_toward(p, BASKET, 4.0) for p in path]) for path in attackers]
    ball = attackers[int(rng.integers(0, 5))].copy()
    return attackers, defenders, ball, None


_BUILDERS = {
    "pick_and_roll": _pick_and_roll,
    "handoff": _handoff,
    "spread": _spread,
    "random_walk": _random_walk,
}


def _canon_to_raw(xy: np.ndarray, positive_x: bool) -> np.ndarray:
    x, y = xy[..., 0], xy[..., 1]
    if positive_x:
        return np.stack([y, x], axis=-1)
    return np.stack([data.COURT_LENGTH - y, x], axis=-1)


def generate(script: PlayScript) -> GeneratedPlay:
    """Emit raw 25 Hz frames for one scripted play."""
    rng = np.random.default_rng(script.seed)
    S = script.duration_steps
    n_raw = S * RAW_PER_STEP

    attackers, defenders, ball, event = _BUILDERS[script.kind](rng, n_raw, S)

    paths = np.stack([ball] + attackers + defenders)  # (11, n_raw, 2)
    if script.noise_sigma > 0:
        paths = paths + rng.normal(0.0, script.noise_sigma, size=paths.shape)
    paths[..., 0] = np.clip(paths[..., 0], 0.5, 49.5)
    paths[..., 1] = np.clip(paths[..., 1], 47.5, 93.5)

    positive_x = bool(rng.integers(0, 2))
    raw = _canon_to_raw(paths, positive_x)

    # scripted roles land on shuffled player ids; segment order re-sorts by id
    att_ids = [f"A{i}" for i in rng.permutation(5) + 1]
    def_ids = [f"D{i}" for i in rng.permutation(5) + 1]

    frames = []
    for k in range(n_raw):
        players = tuple(
            [
                PlayerObs(att_ids[i], data.TEAM_OFFENSE, *raw[1 + i, k])
                for i in range(5)
            ]
            + [
                PlayerObs(def_ids[i], data.TEAM_DEFENSE, *raw[6 + i, k])
                for i in range(5)
            ]
        )
        frames.append(
            TrackingFrame(
                game_id=script.game_id,
                event_id=script.event_id,
                t=round(k * data.RAW_DT, 6),
                ball=(float(raw[0, k, 0]), float(raw[0, k, 1]), BALL_HEIGHT),
                players=players,
                shot_clock=round(24.0 - k * data.RAW_DT, 6),
            )
        )
    return GeneratedPlay(frames=frames, kind=script.kind, event_step=event)


def designated_segment(
    play: GeneratedPlay, segments: Sequence[PlaySegment]
) -> Optional[tuple[PlaySegment, str]]:
    """The one stored segment per script with its ground-truth label.

    Event scripts keep the window containing the key moment; the others
    keep the first window, labeled other."""
    if not segments:
        return None
    if play.event_step is None:
        return segments[0], "other"
    for seg in segments:
        if seg.start_step <= play.event_step < seg.start_step + seg.n_steps:
            return seg, play.kind
    return None


def make_corpus(
    counts: dict[str, int],
    sigma: float,
    seed: int,
    store_path: str | Path,
    truth_path: str | Path,
    horizon: int = 10,
) -> tuple[list[PlaySegment], list[LabelRecord]]:
    """Generate scripts, run the preprocessing pipeline, keep one segment each."""
    for kind in counts:
        if kind not in SCRIPT_KINDS:
            raise ValueError(f"unknown script kind {kind!r}")
        if counts[kind] < 0:
            raise ValueError("counts must be >= 0")

    total = sum(counts.get(k, 0) for k in SCRIPT_KINDS)
    child_seeds = np.random.SeedSequence(seed).generate_state(max(total, 1))

    segments: list[PlaySegment] = []
    truth: list[LabelRecord] = []
    idx = 0
    for kind in SCRIPT_KINDS:
        for _ in range(counts.get(kind, 0)):
            script = PlayScript(
                kind=kind,
                seed=int(child_seeds[idx]),
                noise_sigma=sigma,
                game_id=f"synth-{seed}",
                event_id=f"{kind}-{idx}",
            )
            idx += 1
            play = generate(script)
            segs = data.preprocess_event(play.frames, H=horizon)
            picked = designated_segment(play, segs)
            if picked is None:
                continue
            seg, label = picked
            segments.append(seg)
            truth.append(
                LabelRecord(
                    segment_id=seg.segment_id,
                    label=label,
                    source="manual",
                    annotator="script",
                    rule_version=None,
                )
            )
    data.write_segments(segments, store_path)
    write_labels(truth, truth_path)
    return segments, truth
