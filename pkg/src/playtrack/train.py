"""Staged training: trajectory pretraining, then label fine-tuning, plus
splits, class balancing, early stopping, and annotation sampling."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import metrics as metrics_mod
from . import model as model_mod
from .data import DatasetSplit, PlaySegment
from .model import (
    GroupActivityNet,
    NetsConfig,
    build_model,
    mse_loss,
    nll_loss,
    save_checkpoint,
    segments_to_tensors,
    transfer_base,
)
from .weaklabel import LABELS, LabelRecord

log = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune_weak", "finetune_manual")

# paper-scale class weights for (pick_and_roll, handoff, other)
DEFAULT_ALPHA = (0.77, 2.34, 0.77)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainRunConfig:
    stage: str = "pretrain"
    net: NetsConfig = field(default_factory=NetsConfig)
    learning_rate: float = 5e-5
    batch_size: int = 64
    patience: int = 50
    max_epochs: int = 1000
    alpha: Optional[tuple[float, float, float]] = None
    seed: int = 0
    checkpoint_in: Optional[str] = None
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    deterministic: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class RunLog:
    stage: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    wall_time_s: float = 0.0

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.write(
                json.dumps(
                    {
                        "summary": True,
                        "stage": self.stage,
                        "best_epoch": self.best_epoch,
                        "stop_epoch": self.stop_epoch,
                        "wall_time_s": round(self.wall_time_s, 3),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# splits and balancing


def _largest_remainder(n: int, shares=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    raw = [n * s for s in shares]
    sizes = [int(x) for x in raw]
    leftovers = sorted(
        range(len(shares)), key=lambda i: raw[i] - sizes[i], reverse=True
    )
    for i in range(n - sum(sizes)):
        sizes[leftovers[i % len(shares)]] += 1
    return tuple(sizes)  # type: ignore[return-value]


def make_splits(
    segments: Sequence[PlaySegment], seed: int, by_possession: bool = True
) -> DatasetSplit:
    """Disjoint, exhaustive 80/10/10 split, deterministic in the seed.

    Segments of one possession stay in one split by default, so nearly
    identical neighboring windows cannot leak across the test boundary.
    """
    if len(segments) < 10:
        raise ValueError(f"need at least 10 segments to split, got {len(segments)}")
    if by_possession:
        groups: dict[str, list[str]] = {}
        for s in segments:
            groups.setdefault(s.possession_key, []).append(s.segment_id)
        units = [sorted(groups[k]) for k in sorted(groups)]
    else:
        units = [[s.segment_id] for s in segments]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    quotas = list(_largest_remainder(len(segments)))
    buckets: list[list[str]] = [[], [], []]
    filled = [0, 0, 0]
    for idx in order:
        unit = units[idx]
        deficits = [quotas[i] - filled[i] for i in range(3)]
        target = max(range(3), key=lambda i: (deficits[i], -i))
        buckets[target].extend(unit)
        filled[target] += len(unit)
    return DatasetSplit(
        train=tuple(buckets[0]),
        validation=tuple(buckets[1]),
        test=tuple(buckets[2]),
        seed=seed,
    )


def balance_classes(
    train_ids: Sequence[str], labels: dict[str, str], seed: int
) -> list[str]:
    """Downsample `other` to the pick_and_roll count; handoff is left alone
    (its imbalance is handled by the loss weights)."""
    pnr = [i for i in train_ids if labels[i] == "pick_and_roll"]
    handoff = [i for i in train_ids if labels[i] == "handoff"]
    other = [i for i in train_ids if labels[i] == "other"]
    if len(other) > len(pnr):
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(other), size=len(pnr), replace=False)
        other = [other[i] for i in sorted(keep)]
    kept = set(pnr) | set(handoff) | set(other)
    return [i for i in train_ids if i in kept]


def class_weights(labels: Sequence[str]) -> tuple[float, float, float]:
    """Inverse class frequency, normalized to mean 1."""
    counts = np.array([max(1, sum(1 for l in labels if l == c)) for c in LABELS])
    inv = 1.0 / counts
    inv = inv / inv.mean()
    return tuple(float(x) for x in inv)  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# training loops


def _check_finite_grads(model: torch.nn.Module) -> None:
    for name, p in model.named_parameters():
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")


def _snapshot(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {n: p.detach().clone() for n, p in model.named_parameters()}


def _restore(model: torch.nn.Module, snap: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for n, p in model.named_parameters():
            p.copy_(snap[n])


def _train_loop(
    model: GroupActivityNet,
    cfg: TrainRunConfig,
    train_step,
    val_loss_fn,
    extra_metrics=None,
) -> RunLog:
    if cfg.deterministic:
        torch.set_num_threads(1)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=cfg.adam_betas,
        eps=cfg.adam_eps,
    )
    runlog = RunLog(stage=cfg.stage)
    best_val = float("inf")
    best_snap = _snapshot(model)
    best_epoch = 0
    started = time.monotonic()
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.default_rng((cfg.seed, epoch))
        train_loss = train_step(model, optimizer, rng)
        with torch.no_grad():
            val_loss = float(val_loss_fn(model))
        rec = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
        if extra_metrics is not None:
            with torch.no_grad():
                rec.update(extra_metrics(model))
        runlog.epochs.append(rec)
        if val_loss < best_val:
            best_val = val_loss
            best_snap = _snapshot(model)
            best_epoch = epoch
        if epoch - best_epoch >= cfg.patience:
            break
    _restore(model, best_snap)
    runlog.best_epoch = best_epoch
    runlog.stop_epoch = epoch
    runlog.wall_time_s = time.monotonic() - started
    return runlog


def _batched(ids: np.ndarray, batch_size: int):
    for start in range(0, len(ids), batch_size):
        yield ids[start : start + batch_size]


def pretrain(
    cfg: TrainRunConfig,
    segments: Sequence[PlaySegment],
    split: DatasetSplit,
    checkpoint_out: str | Path,
) -> tuple[GroupActivityNet, RunLog]:
    """Self-supervised velocity prediction; saves the best-validation model."""
    by_id = {s.segment_id: s for s in segments}
    train_segs = [by_id[i] for i in split.train if by_id[i].nu is not None]
    val_segs = [by_id[i] for i in split.validation if by_id[i].nu is not None]
    if not train_segs or not val_segs:
        raise TrainingError("pretraining requires segments with future velocities")

    tau_tr, nu_tr = segments_to_tensors(train_segs, with_future=True)
    tau_va, nu_va = segments_to_tensors(val_segs, with_future=True)

    model = build_model(cfg.net, model_mod.HEAD_TRAJECTORY, seed=cfg.seed)

    def train_step(model, optimizer, rng):
        order = rng.permutation(len(train_segs))
        total, n = 0.0, 0
        for batch in _batched(order, cfg.batch_size):
            optimizer.zero_grad()
            loss = mse_loss(nu_tr[batch], model(tau_tr[batch]))
            loss.backward()
            _check_finite_grads(model)
            optimizer.step()
            total += float(loss.detach()) * len(batch)
            n += len(batch)
        return total / n

    def val_loss_fn(model):
        return mse_loss(nu_va, model(tau_va))

    runlog = _train_loop(model, cfg, train_step, val_loss_fn)
    save_checkpoint(model, checkpoint_out)
    return model, runlog


def _label_tensor(ids: Sequence[str], labels: dict[str, str]) -> torch.Tensor:
    onehot = torch.zeros(len(ids), len(LABELS), dtype=torch.float64)
    for row, sid in enumerate(ids):
        onehot[row, LABELS.index(labels[sid])] = 1.0
    return onehot


def finetune(
    cfg: TrainRunConfig,
    segments: Sequence[PlaySegment],
    labels: dict[str, str],
    split: DatasetSplit,
    checkpoint_out: str | Path,
    val_labels: Optional[dict[str, str]] = None,
    balance: bool = True,
) -> tuple[GroupActivityNet, RunLog]:
    """Classification fine-tuning from an optional pretraining checkpoint.

    ``val_labels`` lets early stopping run against a different label source
    than training (e.g. weak-label training validated on manual labels)."""
    by_id = {s.segment_id: s for s in segments}
    val_labels = labels if val_labels is None else val_labels

    train_ids = [i for i in split.train if i in by_id]
    unlabeled = sorted(i for i in train_ids if i not in labels)
    if unlabeled:
        raise TrainingError(f"label file is missing segment ids: {unlabeled}")
    val_ids = [i for i in split.validation if i in by_id and i in val_labels]
    if not val_ids:
        raise TrainingError("no labeled validation segments")

    if balance:
        train_ids = balance_classes(train_ids, labels, cfg.seed)

    alpha_values = cfg.alpha or class_weights([labels[i] for i in train_ids])
    alpha = torch.tensor(alpha_values, dtype=torch.float64)

    tau_tr, _ = segments_to_tensors([by_id[i] for i in train_ids])
    y_tr = _label_tensor(train_ids, labels)
    tau_va, _ = segments_to_tensors([by_id[i] for i in val_ids])
    y_va = _label_tensor(val_ids, val_labels)
    y_va_names = [val_labels[i] for i in val_ids]

    if cfg.checkpoint_in is not None:
        net = transfer_base(
            cfg.checkpoint_in, cfg.net, model_mod.HEAD_CLASSIFICATION, cfg.seed
        )
    else:
        net = build_model(cfg.net, model_mod.HEAD_CLASSIFICATION, seed=cfg.seed)

    def train_step(model, optimizer, rng):
        order = rng.permutation(len(train_ids))
        total, n = 0.0, 0
        for batch in _batched(order, cfg.batch_size):
            optimizer.zero_grad()
            loss = nll_loss(y_tr[batch], model(tau_tr[batch]), alpha)
            loss.backward()
            _check_finite_grads(model)
            optimizer.step()
            total += float(loss.detach()) * len(batch)
            n += len(batch)
        return total / n

    def val_loss_fn(model):
        return nll_loss(y_va, model(tau_va), alpha)

    def extra_metrics(model):
        preds = [LABELS[int(k)] for k in model(tau_va).argmax(dim=-1)]
        cm = metrics_mod.confusion(y_va_names, preds)
        return {"val_macro_f1": metrics_mod.macro_f1(metrics_mod.f1_scores(cm))}

    runlog = _train_loop(net, cfg, train_step, val_loss_fn, extra_metrics)
    save_checkpoint(net, checkpoint_out)
    return net, runlog


def predict_labels(
    model: GroupActivityNet,
    segments: Sequence[PlaySegment],
    batch_size: int = 256,
) -> dict[str, str]:
    out: dict[str, str] = {}
    with torch.no_grad():
        for start in range(0, len(segments), batch_size):
            chunk = segments[start : start + batch_size]
            tau, _ = segments_to_tensors(chunk)
            preds = model(tau).argmax(dim=-1)
            for seg, k in zip(chunk, preds):
                out[seg.segment_id] = LABELS[int(k)]
    return out


# ---------------------------------------------------------------------------
# annotation sampling


def sample_for_annotation(
    weak_labels: Sequence[LabelRecord], quota: int, seed: int
) -> list[str]:
    """Round-robin queue over the three weak-label pools, seeded shuffle
    within each pool, at most ``quota`` segments per class."""
    pools = {label: [] for label in LABELS}
    for r in sorted(weak_labels, key=lambda r: r.segment_id):
        if r.label in pools:
            pools[r.label].append(r.segment_id)
    rng = np.random.default_rng(seed)
    for label in LABELS:
        rng.shuffle(pools[label])
        if len(pools[label]) < quota:
            log.warning(
                "weak-label pool %r has only %d segments (quota %d)",
                label,
                len(pools[label]),
                quota,
            )
    queue: list[str] = []
    for i in range(quota):
        for label in LABELS:
            if i < len(pools[label]):
                queue.append(pools[label][i])
    return queue
