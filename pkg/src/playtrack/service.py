"""HTTP annotation service backing the browser labeling client."""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import asdict
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import data
from .train import sample_for_annotation
from .weaklabel import LABELS, LabelRecord, read_labels

COURT_GEOMETRY = {
    # canonical frame: x across the court, y along it, offense attacks +y
    "width_ft": data.COURT_WIDTH,
    "length_ft": data.COURT_LENGTH,
    "basket_xy": [data.COURT_WIDTH / 2.0, data.COURT_LENGTH - data.BASKET_FROM_BASELINE],
    "half_line_y": data.HALF_X,
}

DEFAULT_QUOTA = 600


class LabelPost(BaseModel):
    segment_id: str
    label: str
    annotator: str
    session_id: Optional[str] = None


class AnnotationState:
    def __init__(
        self,
        segments: list[data.PlaySegment],
        weak_labels: list[LabelRecord],
        manual_path: Path,
        sessions_dir: Path,
    ):
        self.segments = {s.segment_id: s for s in segments}
        self.weak_by_id = {r.segment_id: r.label for r in weak_labels}
        self.weak_labels = weak_labels
        self.manual_path = manual_path
        self.sessions_dir = sessions_dir
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.labeled: dict[str, str] = {}
        if manual_path.exists():
            for rec in read_labels(manual_path):
                if rec.source == "manual":
                    self.labeled[rec.segment_id] = rec.label

    # -- sessions ---------------------------------------------------------

    def _session_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.json"

    def create_session(self, annotator: str, quota: int, seed: int) -> dict:
        session = {
            "session_id": uuid.uuid4().hex,
            "annotator": annotator,
            "queue": sample_for_annotation(self.weak_labels, quota, seed),
            "cursor": 0,
        }
        self._save_session(session)
        return session

    def load_session(self, session_id: str) -> dict:
        path = self._session_path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        return json.loads(path.read_text(encoding="utf-8"))

    def _save_session(self, session: dict) -> None:
        path = self._session_path(session["session_id"])
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(session, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    # -- labels -----------------------------------------------------------

    def append_label(self, rec: LabelRecord) -> bool:
        """Atomic single-write append; returns False for duplicates."""
        if rec.segment_id in self.labeled:
            return False
        payload = {k: v for k, v in asdict(rec).items() if v is not None}
        line = (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8")
        fd = os.open(self.manual_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
        try:
            os.write(fd, line)
        finally:
            os.close(fd)
        self.labeled[rec.segment_id] = rec.label
        return True

    def tally(self) -> dict[str, int]:
        counts = {label: 0 for label in LABELS}
        for label in self.labeled.values():
            counts[label] += 1
        return counts


def segment_payload(state: AnnotationState, segment_id: str) -> dict:
    seg = state.segments.get(segment_id)
    if seg is None:
        raise HTTPException(status_code=404, detail=f"unknown segment {segment_id!r}")
    objects = [
        {
            "role": data.ROLES[o],
            "player_id": seg.player_ids[o],
            "points": [[float(x), float(y)] for x, y in seg.tau[o]],
        }
        for o in range(data.N_OBJECTS)
    ]
    return {
        "segment_id": seg.segment_id,
        "dt": seg.dt,
        "objects": objects,
        "weak_label": state.weak_by_id.get(segment_id),
    }


def create_app(
    segments: list[data.PlaySegment],
    weak_labels: list[LabelRecord],
    manual_path: str | Path,
    sessions_dir: str | Path,
    static_dir: Optional[str | Path] = None,
) -> FastAPI:
    state = AnnotationState(
        segments, weak_labels, Path(manual_path), Path(sessions_dir)
    )
    app = FastAPI(title="play annotation service")
    app.state.annotation = state

    @app.get("/api/session")
    def get_session(
        annotator: str = "anonymous",
        session_id: Optional[str] = None,
        quota: int = DEFAULT_QUOTA,
        seed: int = 0,
    ):
        if session_id is not None:
            try:
                session = state.load_session(session_id)
            except KeyError:
                raise HTTPException(status_code=404, detail="unknown session")
        else:
            session = state.create_session(annotator, quota, seed)
        return {
            "session_id": session["session_id"],
            "annotator": session["annotator"],
            "cursor": session["cursor"],
            "queue_length": len(session["queue"]),
            "court": COURT_GEOMETRY,
            "labels": list(LABELS),
            "tally": state.tally(),
        }

    @app.get("/api/segments/next")
    def next_segment(session_id: str):
        try:
            session = state.load_session(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        cursor = session["cursor"]
        if cursor >= len(session["queue"]):
            return {"done": True}
        payload = segment_payload(state, session["queue"][cursor])
        payload["cursor"] = cursor
        payload["queue_length"] = len(session["queue"])
        return payload

    @app.get("/api/segments/{segment_id}")
    def get_segment(segment_id: str):
        return segment_payload(state, segment_id)

    @app.post("/api/labels")
    def post_label(body: LabelPost):
        if body.label not in LABELS:
            raise HTTPException(
                status_code=422,
                detail=f"label must be one of {list(LABELS)}, got {body.label!r}",
            )
        if body.segment_id not in state.segments:
            raise HTTPException(
                status_code=404, detail=f"unknown segment {body.segment_id!r}"
            )
        import datetime

        rec = LabelRecord(
            segment_id=body.segment_id,
            label=body.label,
            source="manual",
            annotator=body.annotator,
            created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        )
        stored = state.append_label(rec)
        if body.session_id is not None:
            try:
                session = state.load_session(body.session_id)
            except KeyError:
                session = None
            if session is not None:
                cursor = session["cursor"]
                queue = session["queue"]
                if cursor < len(queue) and queue[cursor] == body.segment_id:
                    session["cursor"] = cursor + 1
                    state._save_session(session)
        return {"stored": stored, "duplicate": not stored, "tally": state.tally()}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
