"""Trajectory displacement errors, confusion/F1 metrics, embedding export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import PlaySegment, integrate
from .model import GroupActivityNet, HEAD_CLASSIFICATION, segments_to_tensors
from .weaklabel import LABELS

ROLE_FILTERS = {
    "all": slice(0, 11),
    "offense": slice(1, 6),
    "defense": slice(6, 11),
    "players": slice(1, 11),
}


@dataclass(frozen=True)
class TrajectoryScore:
    ade: float
    fde: float
    horizon: int
    role_filter: str


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] = plays with ground truth class i predicted as class j."""

    counts: tuple[tuple[int, ...], ...]
    classes: tuple[str, ...] = LABELS

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.as_array().sum())


@dataclass(frozen=True)
class ClassScores:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    undefined: bool = False


def ade_fde(
    true_tau: np.ndarray,
    pred_nu: np.ndarray,
    anchors: np.ndarray,
    dt: float,
    role_filter: str = "all",
) -> TrajectoryScore:
    """Average/final displacement error in feet.

    Predicted positions are integrated from the last observed location;
    ``true_tau`` holds the true future positions over the same H steps.
    Shapes: true_tau (n, objects, H, 2), pred_nu likewise, anchors
    (n, objects, 2)."""
    if true_tau.shape != pred_nu.shape:
        raise ValueError(
            f"shape mismatch: {true_tau.shape} vs {pred_nu.shape}"
        )
    if anchors.shape != true_tau.shape[:2] + (2,):
        raise ValueError(f"bad anchors shape {anchors.shape}")
    sel = ROLE_FILTERS[role_filter]
    H = true_tau.shape[2]
    pred_tau = integrate(anchors, pred_nu, dt)[..., 1:, :]  # drop the anchor step
    err = np.linalg.norm(pred_tau - true_tau, axis=-1)  # (n, objects, H)
    err = err[:, sel, :]
    return TrajectoryScore(
        ade=float(err.mean()),
        fde=float(err[..., -1].mean()),
        horizon=H,
        role_filter=role_filter,
    )


def score_trajectories(
    model: GroupActivityNet,
    segments: Sequence[PlaySegment],
    role_filter: str = "all",
    batch_size: int = 256,
) -> TrajectoryScore:
    """ade_fde of a trajectory model over segments that carry futures."""
    segs = [s for s in segments if s.nu is not None]
    if not segs:
        raise ValueError("no segments with future velocities")
    preds = []
    with torch.no_grad():
        for start in range(0, len(segs), batch_size):
            tau, _ = segments_to_tensors(segs[start : start + batch_size])
            preds.append(model(tau).numpy())
    pred_nu = np.concatenate(preds)
    dt = segs[0].dt
    anchors = np.stack([s.tau[:, -1, :] for s in segs])
    true_nu = np.stack([s.nu for s in segs])
    true_tau = integrate(anchors, true_nu, dt)[..., 1:, :]
    # express the truth as positions, then integrate predictions the same way
    return ade_fde(true_tau, pred_nu, anchors, dt, role_filter)


def confusion(
    true_labels: Sequence[str],
    pred_labels: Sequence[str],
    classes: Sequence[str] = LABELS,
) -> ConfusionMatrix:
    if len(true_labels) != len(pred_labels):
        raise ValueError("label sequences differ in length")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for truth, pred in zip(true_labels, pred_labels):
        if truth not in index or pred not in index:
            raise ValueError(f"unknown class in pair ({truth!r}, {pred!r})")
        counts[index[truth], index[pred]] += 1
    return ConfusionMatrix(
        counts=tuple(tuple(int(x) for x in row) for row in counts),
        classes=tuple(classes),
    )


def f1_scores(cm: ConfusionMatrix) -> dict[str, ClassScores]:
    """One-vs-all precision/recall/F1 per class.

    A zero denominator yields an absent (None) score flagged undefined,
    never a silent 0."""
    m = cm.as_array()
    out: dict[str, ClassScores] = {}
    for i, cls in enumerate(cm.classes):
        pred_total = int(m[:, i].sum())
        truth_total = int(m[i, :].sum())
        precision = m[i, i] / pred_total if pred_total else None
        recall = m[i, i] / truth_total if truth_total else None
        f1 = None
        if precision is not None and recall is not None and (precision + recall) > 0:
            f1 = 2 * precision * recall / (precision + recall)
        out[cls] = ClassScores(
            precision=None if precision is None else float(precision),
            recall=None if recall is None else float(recall),
            f1=None if f1 is None else float(f1),
            undefined=precision is None or recall is None or f1 is None,
        )
    return out


def macro_f1(scores: dict[str, ClassScores]) -> float:
    values = [s.f1 for s in scores.values() if s.f1 is not None]
    if not values:
        return 0.0
    return float(np.mean(values))


def metrics_report(
    cm: Optional[ConfusionMatrix] = None,
    trajectory: Optional[TrajectoryScore] = None,
) -> dict:
    report: dict = {}
    if trajectory is not None:
        report["ade"] = trajectory.ade
        report["fde"] = trajectory.fde
        report["horizon"] = trajectory.horizon
        report["role_filter"] = trajectory.role_filter
    if cm is not None:
        scores = f1_scores(cm)
        report["per_class"] = {
            cls: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
            for cls, s in scores.items()
        }
        report["macro_f1"] = macro_f1(scores)
        report["confusion"] = [list(row) for row in cm.counts]
    return report


def export_embeddings(
    model: GroupActivityNet,
    segments: Sequence[PlaySegment],
    labels: dict[str, str],
    path: str | Path,
    batch_size: int = 256,
) -> int:
    """Write one CSV row per segment: id, label, team-pooled embedding."""
    if model.head_kind != HEAD_CLASSIFICATION:
        raise ValueError("embedding export requires a classification-head model")
    width = 3 * model.cfg.d_h
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["segment_id", "label"] + [f"e{i}" for i in range(width)])
        with torch.no_grad():
            for start in range(0, len(segments), batch_size):
                chunk = segments[start : start + batch_size]
                tau, _ = segments_to_tensors(chunk)
                emb = model.play_embedding(tau).numpy()
                for seg, row in zip(chunk, emb):
                    writer.writerow(
                        [seg.segment_id, labels.get(seg.segment_id, "")]
                        + [repr(float(x)) for x in row]
                    )
                    n += 1
    return n
