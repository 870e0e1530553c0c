"""Tracking-data model and preprocessing.

Raw frames use the unrotated court convention: x runs along the court
length (0..94 ft), y from sideline to sideline (0..50 ft).  Canonical
frames are rotated so that the offense attacks along +y: x across the
court (0..50 ft), y along it (0..94 ft), attacked basket near y = 88.75.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

COURT_LENGTH = 94.0
COURT_WIDTH = 50.0
HALF_X = COURT_LENGTH / 2.0
BASKET_FROM_BASELINE = 5.25

RAW_DT = 0.04
DOWNSAMPLE_FACTOR = 3
DT = RAW_DT * DOWNSAMPLE_FACTOR  # 0.12 s

INPUT_STEPS = 10  # L
MIN_POSSESSION_SECONDS = 3.0

TEAM_OFFENSE = "O"
TEAM_DEFENSE = "D"

N_OBJECTS = 11  # ball + 5 attackers + 5 defenders
ROLES = ("ball",) + ("offense",) * 5 + ("defense",) * 5


@dataclass(frozen=True)
class PlayerObs:
    player_id: str
    team: str  # "O" or "D"
    x: float
    y: float


@dataclass(frozen=True)
class TrackingFrame:
    game_id: str
    event_id: str
    t: float
    ball: tuple[float, float, float]  # x, y, z (z kept for weak labeling)
    players: tuple[PlayerObs, ...]
    shot_clock: Optional[float] = None
    canonical: bool = False

    def player_xy(self) -> dict[str, tuple[float, float]]:
        return {p.player_id: (p.x, p.y) for p in self.players}


@dataclass(frozen=True)
class Possession:
    game_id: str
    event_id: str
    start_index: int  # inclusive, into the event frame list
    end_index: int  # inclusive
    offense_team_id: str = TEAM_OFFENSE
    attack_positive_x: bool = True  # attacked basket on the x = 94 side (raw frame)

    @property
    def key(self) -> str:
        return f"{self.game_id}:{self.event_id}:{self.start_index}"


@dataclass
class PlaySegment:
    segment_id: str
    game_id: str
    event_id: str
    possession_key: str
    start_step: int  # step offset within the downsampled possession timeline
    dt: float
    tau: np.ndarray  # (11, L, 2) positions, object order [B, A1..A5, D1..D5]
    ball_z: np.ndarray  # (L,) ball height, weak-labeling only
    player_ids: tuple[str, ...]  # 11 ids, "" for the ball
    nu: Optional[np.ndarray] = None  # (11, H, 2) future velocities

    @property
    def n_steps(self) -> int:
        return self.tau.shape[1]

    @property
    def horizon(self) -> Optional[int]:
        return None if self.nu is None else self.nu.shape[1]


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class RejectedRow:
    line: int
    reason: str


@dataclass
class IngestResult:
    frames: list[TrackingFrame]
    rejected: list[RejectedRow]

    def by_event(self) -> dict[tuple[str, str], list[TrackingFrame]]:
        groups: dict[tuple[str, str], list[TrackingFrame]] = {}
        for f in self.frames:
            groups.setdefault((f.game_id, f.event_id), []).append(f)
        return groups


CSV_COLUMNS = ["game_id", "event_id", "t", "shot_clock", "ball_x", "ball_y", "ball_z"]
for _i in range(1, 11):
    CSV_COLUMNS += [f"p{_i}_id", f"p{_i}_team", f"p{_i}_x", f"p{_i}_y"]


class ParseError(ValueError):
    pass


def _parse_shot_clock(raw: Optional[str]) -> Optional[float]:
    if raw is None or raw == "":
        return None
    return float(raw)


def _validate_players(players: Sequence[PlayerObs]) -> Optional[str]:
    if len(players) != 10:
        return f"expected 10 players, got {len(players)}"
    n_off = sum(1 for p in players if p.team == TEAM_OFFENSE)
    n_def = sum(1 for p in players if p.team == TEAM_DEFENSE)
    if n_off != 5 or n_def != 5:
        return f"expected 5 players per team, got O={n_off} D={n_def}"
    for p in players:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            return f"non-finite coordinates for player {p.player_id}"
    return None


def _frame_from_csv_row(row: dict[str, str]) -> TrackingFrame:
    players = []
    for i in range(1, 11):
        pid = (row[f"p{i}_id"] or "").strip()
        if pid == "":
            continue  # slot left empty -> fewer than 10 players
        players.append(
            PlayerObs(
                player_id=pid,
                team=row[f"p{i}_team"].strip(),
                x=float(row[f"p{i}_x"]),
                y=float(row[f"p{i}_y"]),
            )
        )
    return TrackingFrame(
        game_id=row["game_id"],
        event_id=row["event_id"],
        t=float(row["t"]),
        ball=(float(row["ball_x"]), float(row["ball_y"]), float(row["ball_z"])),
        players=tuple(players),
        shot_clock=_parse_shot_clock(row.get("shot_clock")),
    )


def _frame_from_json_obj(obj: dict) -> TrackingFrame:
    players = tuple(
        PlayerObs(
            player_id=str(p["player_id"]),
            team=str(p["team"]),
            x=float(p["x"]),
            y=float(p["y"]),
        )
        for p in obj["players"]
    )
    sc = obj.get("shot_clock")
    return TrackingFrame(
        game_id=str(obj["game_id"]),
        event_id=str(obj["event_id"]),
        t=float(obj["t"]),
        ball=(float(obj["ball_x"]), float(obj["ball_y"]), float(obj["ball_z"])),
        players=players,
        shot_clock=None if sc is None else float(sc),
    )


def ingest(path: str | Path, format: Optional[str] = None) -> IngestResult:
    """Read tracking frames from a CSV or JSONL file.

    Frames come back grouped by (game_id, event_id) and sorted by t.
    Malformed rows are collected in ``rejected`` with their line number.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".json") else "csv"
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format: {format!r}")

    frames: list[TrackingFrame] = []
    rejected: list[RejectedRow] = []

    if format == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                return IngestResult([], [])
            missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
            if missing:
                raise ParseError(f"missing required column(s): {', '.join(missing)}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    frame = _frame_from_csv_row(row)
                except (KeyError, TypeError, ValueError) as exc:
                    rejected.append(RejectedRow(lineno, f"unparseable row: {exc}"))
                    continue
                problem = _validate_players(frame.players)
                if problem is not None:
                    rejected.append(RejectedRow(lineno, problem))
                    log.warning("rejected frame at line %d: %s", lineno, problem)
                    continue
                frames.append(frame)
    else:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    frame = _frame_from_json_obj(json.loads(line))
                except (KeyError, TypeError, ValueError) as exc:
                    rejected.append(RejectedRow(lineno, f"unparseable row: {exc}"))
                    continue
                problem = _validate_players(frame.players)
                if problem is not None:
                    rejected.append(RejectedRow(lineno, problem))
                    log.warning("rejected frame at line %d: %s", lineno, problem)
                    continue
                frames.append(frame)

    frames.sort(key=lambda f: (f.game_id, f.event_id, f.t))
    return IngestResult(frames, rejected)


def frame_to_json_obj(frame: TrackingFrame) -> dict:
    return {
        "game_id": frame.game_id,
        "event_id": frame.event_id,
        "t": frame.t,
        "shot_clock": frame.shot_clock,
        "ball_x": frame.ball[0],
        "ball_y": frame.ball[1],
        "ball_z": frame.ball[2],
        "players": [
            {"player_id": p.player_id, "team": p.team, "x": p.x, "y": p.y}
            for p in frame.players
        ],
    }


def write_frames_csv(frames: Iterable[TrackingFrame], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for f in frames:
            row = [
                f.game_id,
                f.event_id,
                repr(f.t),
                "" if f.shot_clock is None else repr(f.shot_clock),
                repr(f.ball[0]),
                repr(f.ball[1]),
                repr(f.ball[2]),
            ]
            for p in f.players:
                row += [p.player_id, p.team, repr(p.x), repr(p.y)]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# possession segmentation


def _attack_positive_x(frames: Sequence[TrackingFrame]) -> bool:
    # Side of the court the play lives on decides the attacked basket.
    n_high = sum(1 for f in frames if f.ball[0] > HALF_X)
    return n_high * 2 >= len(frames)


def _all_players_in_half(frame: TrackingFrame, positive_x: bool) -> bool:
    if positive_x:
        return all(p.x >= HALF_X for p in frame.players)
    return all(p.x <= HALF_X for p in frame.players)


def segment_possessions(frames: Sequence[TrackingFrame]) -> list[Possession]:
    """Split one event's frames into possessions.

    Boundaries fall where the shot clock increases between consecutive
    frames (a reset) or where a tracking gap exceeds twice the nominal
    frame interval.  Frames with any player in the back court are trimmed;
    runs shorter than 3 s are dropped.
    """
    if not frames:
        return []
    game_id = frames[0].game_id
    event_id = frames[0].event_id

    have_clock = any(f.shot_clock is not None for f in frames)
    if not have_clock:
        log.info(
            "event %s:%s has no shot clock; falling back to event boundaries",
            game_id,
            event_id,
        )

    dts = [frames[i + 1].t - frames[i].t for i in range(len(frames) - 1)]
    nominal_dt = float(np.median(dts)) if dts else RAW_DT

    # candidate runs split at clock resets and tracking gaps
    boundaries = [0]
    for i in range(1, len(frames)):
        prev, cur = frames[i - 1], frames[i]
        gap = cur.t - prev.t
        reset = (
            have_clock
            and prev.shot_clock is not None
            and cur.shot_clock is not None
            and cur.shot_clock > prev.shot_clock
        )
        if reset or gap > 2.0 * nominal_dt + 1e-9:
            boundaries.append(i)
    boundaries.append(len(frames))

    possessions: list[Possession] = []
    for b in range(len(boundaries) - 1):
        lo, hi = boundaries[b], boundaries[b + 1]
        run = frames[lo:hi]
        if not run:
            continue
        positive_x = _attack_positive_x(run)
        # maximal contiguous sub-runs where all ten players are in the half
        i = 0
        while i < len(run):
            if not _all_players_in_half(run[i], positive_x):
                i += 1
                continue
            j = i
            while j + 1 < len(run) and _all_players_in_half(run[j + 1], positive_x):
                j += 1
            duration = run[j].t - run[i].t
            if duration >= MIN_POSSESSION_SECONDS - 1e-9:
                possessions.append(
                    Possession(
                        game_id=game_id,
                        event_id=event_id,
                        start_index=lo + i,
                        end_index=lo + j,
                        attack_positive_x=positive_x,
                    )
                )
            i = j + 1
    return possessions


# ---------------------------------------------------------------------------
# canonicalization


def _canon_xy(x: float, y: float, positive_x: bool) -> tuple[float, float]:
    if positive_x:
        return (y, x)  # reflection across the x=y diagonal
    return (y, COURT_LENGTH - x)  # 90 degree rotation


def canonicalize(
    possession: Possession, frames: Sequence[TrackingFrame]
) -> list[TrackingFrame]:
    """Rotate/reflect a possession's frames so the offense attacks +y.

    The transform is an isometry of the court; already-canonical frames
    pass through unchanged.
    """
    out: list[TrackingFrame] = []
    for f in frames:
        if f.canonical:
            out.append(f)
            continue
        bx, by = _canon_xy(f.ball[0], f.ball[1], possession.attack_positive_x)
        players = []
        for p in f.players:
            px, py = _canon_xy(p.x, p.y, possession.attack_positive_x)
            players.append(replace(p, x=px, y=py))
        players = tuple(players)
        out.append(replace(f, ball=(bx, by, f.ball[2]), players=players, canonical=True))
    return out


def possession_frames(
    possession: Possession, event_frames: Sequence[TrackingFrame]
) -> list[TrackingFrame]:
    return list(event_frames[possession.start_index : possession.end_index + 1])


# ---------------------------------------------------------------------------
# downsampling / windowing


def downsample(frames: Sequence[TrackingFrame], factor: int) -> list[TrackingFrame]:
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    return list(frames[::factor])


def _object_order(frame: TrackingFrame) -> tuple[str, ...]:
    attackers = sorted(p.player_id for p in frame.players if p.team == TEAM_OFFENSE)
    defenders = sorted(p.player_id for p in frame.players if p.team == TEAM_DEFENSE)
    return ("",) + tuple(attackers) + tuple(defenders)


def windowize(
    possession: Possession,
    frames: Sequence[TrackingFrame],
    L: int = INPUT_STEPS,
    H: Optional[int] = None,
    dt: float = DT,
) -> list[PlaySegment]:
    """Cut a possession's (canonical, downsampled) frames into segments.

    Windows of L steps are consecutive and non-overlapping; each carries
    the next H steps as future velocities when those steps exist within
    the possession.  A trailing remainder shorter than L is discarded.
    """
    if not frames:
        return []
    ids = _object_order(frames[0])
    n = len(frames)
    pos = np.empty((N_OBJECTS, n, 2), dtype=np.float64)
    ball_z = np.empty(n, dtype=np.float64)
    for t, f in enumerate(frames):
        xy = f.player_xy()
        pos[0, t] = (f.ball[0], f.ball[1])
        ball_z[t] = f.ball[2]
        for o, pid in enumerate(ids[1:], start=1):
            pos[o, t] = xy[pid]

    segments: list[PlaySegment] = []
    for start in range(0, n - L + 1, L):
        end = start + L  # exclusive
        tau = pos[:, start:end].copy()
        nu = None
        if H is not None and end + H <= n:
            future = pos[:, end - 1 : end + H]  # anchor + H future positions
            nu = np.diff(future, axis=1) / dt
        segments.append(
            PlaySegment(
                segment_id=f"{possession.key}:{start}",
                game_id=possession.game_id,
                event_id=possession.event_id,
                possession_key=possession.key,
                start_step=start,
                dt=dt,
                tau=tau,
                ball_z=ball_z[start:end].copy(),
                player_ids=ids,
                nu=nu,
            )
        )
    return segments


# ---------------------------------------------------------------------------
# velocity conversion


def to_velocities(tau: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference velocities along the step axis (second to last)."""
    if tau.shape[-2] < 2:
        raise ValueError("need at least 2 steps to compute velocities")
    return np.diff(tau, axis=-2) / dt


def integrate(anchor: np.ndarray, nu: np.ndarray, dt: float) -> np.ndarray:
    """Inverse of :func:`to_velocities` given the first position."""
    steps = np.cumsum(nu * dt, axis=-2)
    return np.concatenate(
        [np.expand_dims(anchor, -2), np.expand_dims(anchor, -2) + steps], axis=-2
    )


# ---------------------------------------------------------------------------
# segment store


def write_segments(segments: Iterable[PlaySegment], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in segments:
            rec = {
                "segment_id": s.segment_id,
                "game_id": s.game_id,
                "event_id": s.event_id,
                "possession_key": s.possession_key,
                "start_step": s.start_step,
                "dt": s.dt,
                "L": int(s.tau.shape[1]),
                "H": None if s.nu is None else int(s.nu.shape[1]),
                "player_ids": list(s.player_ids),
                "tau": s.tau.ravel().tolist(),
                "ball_z": s.ball_z.tolist(),
                "nu": None if s.nu is None else s.nu.ravel().tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def read_segments(path: str | Path) -> list[PlaySegment]:
    segments: list[PlaySegment] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            L = rec["L"]
            tau = np.asarray(rec["tau"], dtype=np.float64).reshape(N_OBJECTS, L, 2)
            nu = None
            if rec["nu"] is not None:
                H = rec["H"]
                nu = np.asarray(rec["nu"], dtype=np.float64).reshape(N_OBJECTS, H, 2)
            segments.append(
                PlaySegment(
                    segment_id=rec["segment_id"],
                    game_id=rec["game_id"],
                    event_id=rec["event_id"],
                    possession_key=rec["possession_key"],
                    start_step=rec["start_step"],
                    dt=rec["dt"],
                    tau=tau,
                    ball_z=np.asarray(rec["ball_z"], dtype=np.float64),
                    player_ids=tuple(rec["player_ids"]),
                    nu=nu,
                )
            )
    return segments


def preprocess_event(
    frames: Sequence[TrackingFrame],
    L: int = INPUT_STEPS,
    H: Optional[int] = None,
    factor: int = DOWNSAMPLE_FACTOR,
) -> list[PlaySegment]:
    """Full raw-frames-to-segments pipeline for a single event."""
    segments: list[PlaySegment] = []
    for poss in segment_possessions(frames):
        pf = canonicalize(poss, possession_frames(poss, frames))
        down = downsample(pf, factor)
        segments.extend(windowize(poss, down, L=L, H=H, dt=RAW_DT * factor))
    return segments
