"""Masked losses, grouped cross-validation, and the fold training loop.

Variable-length batches are tail-padded (images with 0, labels with -1) and
the losses average over non-masked elements only, so padding contributes
nothing to value or gradient.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .core import View, load_annotation
from .labels import (
    MASK_VALUE,
    make_phase_labels,
    make_soft_labels,
    pad_batch,
    project_two_event,
    replicate_channels,
)
from .models import (
    ClassificationNetConfig,
    RegressionNetConfig,
    build_classification_net,
    build_regression_net,
    save_checkpoint,
)
from .synth import Manifest, load_recording

__all__ = [
    "EPS",
    "TrainConfig",
    "FoldPlan",
    "EpochStats",
    "EarlyStopper",
    "masked_categorical_crossentropy",
    "masked_mse",
    "make_cv_splits",
    "load_fold_items",
    "train_fold",
    "ensemble_average",
]

EPS = 1e-7  # clamp for log of predicted probabilities


def masked_categorical_crossentropy(labels: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Mean over non-masked frames of -log p(true class).

    labels: (..., T) integer classes with -1 meaning masked; probs:
    (..., T, C) rows summing to 1. Probabilities are clamped at 1e-7 before
    the log. Masked frames contribute exactly nothing to value or gradient.
    """
    labels = torch.as_tensor(labels)
    if labels.shape != probs.shape[:-1]:
        raise ValueError(f"labels shape {tuple(labels.shape)} != probs leading shape {tuple(probs.shape[:-1])}")
    valid = labels != MASK_VALUE
    if not bool(valid.any()):
        return probs.sum() * 0.0
    flat_probs = probs[valid]  # (N, C)
    flat_labels = labels[valid].long()
    picked = flat_probs.gather(1, flat_labels.unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(EPS)).mean()


def masked_mse(labels: torch.Tensor, preds: torch.Tensor) -> torch.Tensor:
    """Mean squared error over non-masked entries (mask value -1)."""
    labels = torch.as_tensor(labels, dtype=preds.dtype)
    if labels.shape != preds.shape:
        raise ValueError(f"labels shape {tuple(labels.shape)} != preds shape {tuple(preds.shape)}")
    valid = labels != MASK_VALUE
    if not bool(valid.any()):
        return preds.sum() * 0.0
    diff = preds[valid] - labels[valid]
    return (diff * diff).mean()


@dataclass(frozen=True)
class TrainConfig:
    """Protocol knobs. batch_size 0 resolves to the per-task default
    (8 whole padded sequences for classification, 4 fixed-length windows for
    regression)."""

    task: str = "classification"
    batch_size: int = 0
    window_len: int = 30
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 15
    seed: int = 0
    label_width: int = 5
    events: str = "six"  # "six" | "two": project phase labels to the ED/ES anchors
    view: str | None = None  # restrict training to one view; None trains on all

    def __post_init__(self) -> None:
        if self.task not in ("classification", "regression"):
            raise ValueError(f"task must be classification|regression, got '{self.task}'")
        if self.events not in ("six", "two"):
            raise ValueError(f"events must be six|two, got '{self.events}'")
        if self.batch_size == 0:
            object.__setattr__(self, "batch_size", 8 if self.task == "classification" else 4)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 < self.patience < self.max_epochs):
            raise ValueError(f"need 0 < patience < max_epochs, got {self.patience} / {self.max_epochs}")
        if self.view is not None:
            object.__setattr__(self, "view", View(self.view).value)

    @property
    def n_classes(self) -> int:
        return 6 if self.events == "six" else 2


@dataclass(frozen=True)
class FoldPlan:
    """k folds of patient ids; fold i tests on fold i, validates on fold
    (i+1) mod k, and trains on the rest, so test folds partition the
    patients and every view of a patient stays in one role."""

    folds: tuple[tuple[str, ...], ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def test_patients(self, i: int) -> tuple[str, ...]:
        return self.folds[i]

    def val_patients(self, i: int) -> tuple[str, ...]:
        return self.folds[(i + 1) % self.k]

    def train_patients(self, i: int) -> tuple[str, ...]:
        excluded = {i % self.k, (i + 1) % self.k}
        out: list[str] = []
        for j, fold in enumerate(self.folds):
            if j not in excluded:
                out.extend(fold)
        return tuple(out)

    def to_dict(self) -> dict:
        return {"k": self.k, "folds": [list(f) for f in self.folds]}

    def save(self, path: str | Path) -> None:
        import json

        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "FoldPlan":
        import json

        data = json.loads(Path(path).read_text())
        return FoldPlan(folds=tuple(tuple(f) for f in data["folds"]))


def make_cv_splits(manifest: Manifest, k: int = 10, seed: int = 0) -> FoldPlan:
    """Grouped k-fold plan over patients (all views of a patient together).

    Deterministic in (manifest, k, seed); fold sizes differ by at most one
    patient.
    """
    patients = manifest.patients()
    if len(patients) < k:
        raise ValueError(f"need at least k={k} patients, got {len(patients)}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF01D)))
    order = list(np.array(patients)[rng.permutation(len(patients))])
    folds = tuple(tuple(chunk) for chunk in np.array_split(order, k))
    return FoldPlan(folds=folds)


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self._since_best = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch's validation loss; True means stop now."""
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self._since_best = 0
            return False
        self._since_best += 1
        return self._since_best >= self.patience


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class _Item:
    frames: np.ndarray  # (T, H, W) float32
    labels: np.ndarray  # (T,) int64 or (T, 6) float32, time-major
    id: str
    fps: float


def load_fold_items(
    manifest: Manifest,
    patient_ids: Sequence[str],
    cfg: TrainConfig,
) -> list[_Item]:
    """Materialize (frames, labels) for every recording of the given patients."""
    wanted = set(patient_ids)
    items = []
    for entry in manifest.entries:
        if entry.patient not in wanted:
            continue
        if cfg.view is not None and entry.view.value != cfg.view:
            continue
        rec = load_recording(manifest.recording_path(entry))
        doc = load_annotation(manifest.annotation_path(entry))
        if cfg.task == "classification":
            labels = make_phase_labels(doc.annotation, rec.n_frames)
            if cfg.events == "two":
                labels = project_two_event(labels)
        else:
            labels = make_soft_labels(doc.annotation, rec.n_frames, width=cfg.label_width).T.copy()
        items.append(_Item(frames=rec.frames, labels=labels, id=entry.id, fps=entry.fps))
    if not items:
        raise ValueError("no recordings matched the requested patients/view")
    return items


def _windows(item: _Item, length: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    t = item.frames.shape[0]
    if t <= length:
        return item.frames, item.labels
    start = int(rng.integers(0, t - length + 1))
    return item.frames[start : start + length], item.labels[start : start + length]


def _batches(items: list[_Item], cfg: TrainConfig, rng: np.random.Generator, shuffle: bool):
    order = rng.permutation(len(items)) if shuffle else np.arange(len(items))
    for lo in range(0, len(order), cfg.batch_size):
        chosen = [items[i] for i in order[lo : lo + cfg.batch_size]]
        if cfg.task == "regression":
            pairs = [_windows(it, cfg.window_len, rng) for it in chosen]
        else:
            pairs = [(it.frames, it.labels) for it in chosen]
        frames, labels, _ = pad_batch(pairs)
        if cfg.task == "regression":
            frames = np.stack([replicate_channels(f) for f in frames])
        yield torch.from_numpy(np.ascontiguousarray(frames)), torch.from_numpy(np.ascontiguousarray(labels))


def _epoch_loss(model, items, cfg, rng, optimizer=None) -> float:
    loss_fn = masked_categorical_crossentropy if cfg.task == "classification" else masked_mse
    total, weight = 0.0, 0
    training = optimizer is not None
    model.train(training)
    with torch.set_grad_enabled(training):
        for bi, (frames, labels) in enumerate(_batches(items, cfg, rng, shuffle=training)):
            preds = model(frames)
            loss = loss_fn(labels, preds)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss in epoch batch {bi} ({'train' if training else 'val'})")
            if training:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            n_valid = int((torch.as_tensor(labels) != MASK_VALUE).sum())
            total += float(loss.detach()) * n_valid
            weight += n_valid
    return total / max(1, weight)


def train_fold(
    model_cfg,
    train_cfg: TrainConfig,
    manifest: Manifest,
    plan: FoldPlan,
    fold_index: int,
    out_dir: str | Path | None = None,
) -> tuple[torch.nn.Module, dict, list[EpochStats]]:
    """Train one fold to early stopping; returns the best-epoch model, its
    metadata {seed, epochs, best_epoch, best_val_loss}, and the loss history.

    When out_dir is given, writes checkpoint_fold{i}.pt and
    history_fold{i}.csv there.
    """
    torch.manual_seed(train_cfg.seed + fold_index)
    if isinstance(model_cfg, ClassificationNetConfig):
        model = build_classification_net(model_cfg)
    elif isinstance(model_cfg, RegressionNetConfig):
        model = build_regression_net(model_cfg)
    else:
        raise ValueError(f"unsupported model config {type(model_cfg).__name__}")

    train_items = load_fold_items(manifest, plan.train_patients(fold_index), train_cfg)
    val_items = load_fold_items(manifest, plan.val_patients(fold_index), train_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    stopper = EarlyStopper(train_cfg.patience)
    history: list[EpochStats] = []
    best_state: dict | None = None

    for epoch in range(train_cfg.max_epochs):
        rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, fold_index, epoch)))
        try:
            train_loss = _epoch_loss(model, train_items, train_cfg, rng, optimizer)
            val_loss = _epoch_loss(model, val_items, train_cfg, rng)
        except RuntimeError as exc:
            raise RuntimeError(f"fold {fold_index} epoch {epoch}: {exc}") from exc
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if stop:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    metadata = {
        "seed": train_cfg.seed,
        "epochs": len(history),
        "best_epoch": stopper.best_epoch,
        "best_val_loss": stopper.best,
        "fold": fold_index,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / f"checkpoint_fold{fold_index}.pt", model, model_cfg, metadata)
        with open(out_dir / f"history_fold{fold_index}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for st in history:
                writer.writerow([st.epoch, f"{st.train_loss:.6f}", f"{st.val_loss:.6f}"])
    return model, metadata, history


def ensemble_average(predictions: Sequence[np.ndarray], renormalize: bool = False) -> np.ndarray:
    """Element-wise mean of per-model frame predictions.

    renormalize=True rescales each row to sum to 1 afterwards — a numerical
    guard for probability rows, which already average to sum 1.
    """
    if not predictions:
        raise ValueError("no predictions to ensemble")
    shapes = {np.asarray(p).shape for p in predictions}
    if len(shapes) != 1:
        raise ValueError(f"prediction shape mismatch: {shapes}")
    mean = np.mean([np.asarray(p, dtype=np.float64) for p in predictions], axis=0)
    if renormalize:
        mean = mean / mean.sum(axis=-1, keepdims=True)
    return mean
