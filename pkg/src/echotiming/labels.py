"""Training-label construction.

Two representations of an annotation: per-frame phase classes for the
classification route, and per-event triangular curves for the regression
route. The mask value -1 marks both unresolvable frames and batch padding —
one mechanism, two causes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import EventAnnotation, EventType, Phase, phase_at, validate_annotation

__all__ = [
    "MASK_VALUE",
    "make_phase_labels",
    "make_soft_labels",
    "pad_batch",
    "project_two_event",
    "replicate_channels",
]

MASK_VALUE = -1


def _check_valid(ann: EventAnnotation, n_frames: int) -> None:
    violations = validate_annotation(ann, n_frames)
    if violations:
        v = violations[0]
        raise ValueError(f"invalid annotation (cycle {v.cycle}): {v.message}")


def make_phase_labels(ann: EventAnnotation, n_frames: int) -> np.ndarray:
    """Per-frame phase class in {0..5}, -1 where the phase is unresolvable.

    Returns an int64 array of length n_frames.
    """
    _check_valid(ann, n_frames)
    out = np.full(n_frames, MASK_VALUE, dtype=np.int64)
    for f in range(n_frames):
        ph = phase_at(ann, f, n_frames)
        if ph is not None:
            out[f] = int(ph)
    return out


def make_soft_labels(ann: EventAnnotation, n_frames: int, width: int = 5) -> np.ndarray:
    """Triangular event curves, one row per event type: (6, n_frames) float32.

    Row e is 1 at annotated frames of event e and decays linearly to 0 at
    `width` frames away; overlapping triangles from repeated occurrences are
    resolved by max so values stay <= 1. Rows of events never annotated in
    the recording are all -1 (masked).
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    _check_valid(ann, n_frames)
    out = np.full((len(EventType), n_frames), float(MASK_VALUE), dtype=np.float32)
    idx = np.arange(n_frames, dtype=np.float64)
    for ev in EventType:
        frames = ann.frames_of(ev)
        if not frames:
            continue
        curve = np.zeros(n_frames, dtype=np.float64)
        for t in frames:
            curve = np.maximum(curve, 1.0 - np.abs(idx - t) / width)
        out[ev.value] = np.clip(curve, 0.0, 1.0)
    return out


def pad_batch(
    items: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tail-pad (frames, labels) pairs to the longest sequence in the batch.

    Both arrays of an item must be time-major (length T_i on axis 0); soft
    label curves therefore need transposing to (T, 6) before padding. Frames
    pad with 0, labels with -1. Returns (frames (B, T, ...), labels
    (B, T, ...), mask (B, T) bool) where mask marks real frames.
    """
    if not items:
        raise ValueError("empty batch")
    frame_shapes = {np.asarray(f).shape[1:] for f, _ in items}
    label_shapes = {np.asarray(l).shape[1:] for _, l in items}
    if len(frame_shapes) != 1 or len(label_shapes) != 1:
        raise ValueError(f"inconsistent item shapes: frames {frame_shapes}, labels {label_shapes}")
    for f, l in items:
        if f.shape[0] != l.shape[0]:
            raise ValueError(f"frames/labels length mismatch: {f.shape[0]} vs {l.shape[0]}")
    t_max = max(f.shape[0] for f, _ in items)
    n = len(items)
    frames = np.zeros((n, t_max, *frame_shapes.pop()), dtype=np.asarray(items[0][0]).dtype)
    labels = np.full((n, t_max, *label_shapes.pop()), MASK_VALUE, dtype=np.asarray(items[0][1]).dtype)
    mask = np.zeros((n, t_max), dtype=bool)
    for i, (f, l) in enumerate(items):
        t = f.shape[0]
        frames[i, :t] = f
        labels[i, :t] = l
        mask[i, :t] = True
    return frames, labels, mask


def project_two_event(phase_labels: np.ndarray) -> np.ndarray:
    """Six-phase labels -> two classes: {IVC, EJECTION} -> 0, the rest -> 1.

    The surviving transitions are exactly the MVC (into 0) and AVC (into 1)
    anchors; mask values pass through unchanged.
    """
    labels = np.asarray(phase_labels)
    return np.where(labels < 0, labels, (labels > Phase.EJECTION.value).astype(labels.dtype))


def replicate_channels(frames: np.ndarray, n_channels: int = 3) -> np.ndarray:
    """(T, H, W) grayscale -> (T, C, H, W) by replication, for backbones
    that expect 3-channel input."""
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ValueError(f"expected (T, H, W), got shape {frames.shape}")
    return np.repeat(frames[:, None, :, :], n_channels, axis=1)
