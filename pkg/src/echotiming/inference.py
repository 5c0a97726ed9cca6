"""Post-processing: per-frame model outputs -> event frame predictions.

Classification route: argmax phases, mode-filter glitches, merge sub-minimal
runs, then emit each phase's opening event at the first frame of its run.
Regression route: Gaussian-smooth the six curves, pick local maxima above a
threshold, keep the tallest candidate per cycle (cycles delimited by MVC
candidates).

Both routes drop — never shift — events that contradict cyclic order, and
report drops in a diagnostics block.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter1d

from .core import (
    AnnotationDoc,
    EventAnnotation,
    EventType,
    FormatError,
    Phase,
    Recording,
    View,
    load_annotation,
)
from .models import ClassificationNet, RegressionNet

__all__ = [
    "FramePredictions",
    "Diagnostics",
    "phases_to_events",
    "curves_to_events",
    "predict",
    "predictions_to_events",
    "save_prediction",
    "load_prediction",
]

_GAP = -1  # pseudo-class for frames with no unique argmax (masked oracle frames)


@dataclass(frozen=True)
class FramePredictions:
    """Per-frame model output for one recording.

    kind "phase_probs": values (T, n_classes), rows summing to 1.
    kind "event_curves": values (6, T) in [0, 1].
    """

    kind: str
    values: np.ndarray = field(repr=False)
    fps: float
    id: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if self.kind == "phase_probs":
            if values.ndim != 2:
                raise ValueError(f"phase_probs must be (T, n_classes), got {values.shape}")
            sums = values.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=1e-4):
                raise ValueError("phase_probs rows must sum to 1")
        elif self.kind == "event_curves":
            if values.ndim != 2 or values.shape[0] != len(EventType):
                raise ValueError(f"event_curves must be (6, T), got {values.shape}")
            if values.min() < -1e-6 or values.max() > 1 + 1e-6:
                raise ValueError("event_curves values must lie in [0, 1]")
        else:
            raise ValueError(f"unknown prediction kind '{self.kind}'")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[1] if self.kind == "event_curves" else self.values.shape[0])


@dataclass
class Diagnostics:
    """What post-processing discarded or flagged."""

    dropped_events: list[dict] = field(default_factory=list)
    filter_flags: list[str] = field(default_factory=list)

    def drop(self, cycle: int, event: EventType, frame: int, reason: str) -> None:
        self.dropped_events.append(
            {"cycle": cycle, "event": event.name, "frame": int(frame), "reason": reason}
        )

    def to_dict(self) -> dict:
        return {"dropped_events": list(self.dropped_events), "filter_flags": list(self.filter_flags)}


def _argmax_classes(probs: np.ndarray) -> np.ndarray:
    """Per-frame argmax; frames whose maximum is not unique become gaps.

    Ties only occur on degenerate rows (uniform oracle encodings of masked
    frames); real model outputs have a unique maximum.
    """
    classes = probs.argmax(axis=1)
    top = probs.max(axis=1)
    tied = (np.isclose(probs, top[:, None])).sum(axis=1) > 1
    out = classes.astype(np.int64)
    out[tied] = _GAP
    return out


def _mode_filter(classes: np.ndarray, width: int) -> np.ndarray:
    """Sliding-window mode with boundary-clipped windows; ties keep the
    current value when it participates, else take the smallest class."""
    r = width // 2
    n = len(classes)
    out = classes.copy()
    for f in range(n):
        window = classes[max(0, f - r) : min(n, f + r + 1)]
        counts = Counter(window.tolist())
        best = max(counts.values())
        candidates = [c for c, k in counts.items() if k == best]
        out[f] = classes[f] if classes[f] in candidates else min(candidates)
    return out


def _runs(classes: np.ndarray) -> list[list[int]]:
    """Maximal constant runs as mutable [class, start, end) triples."""
    runs: list[list[int]] = []
    for f, c in enumerate(classes.tolist()):
        if runs and runs[-1][0] == c:
            runs[-1][2] = f + 1
        else:
            runs.append([c, f, f + 1])
    return runs


def _merge_short_runs(runs: list[list[int]], min_len: int, n_frames: int) -> list[list[int]]:
    """Absorb interior runs shorter than min_len into their previous run.

    Runs touching either sequence boundary or a gap are exempt: their true
    extent is unobserved, so shortness there is not evidence of noise.
    """
    changed = True
    while changed:
        changed = False
        for i, (c, s, e) in enumerate(runs):
            if c == _GAP or e - s >= min_len or s == 0 or e == n_frames:
                continue
            prev_ok = i > 0 and runs[i - 1][0] != _GAP
            next_ok = i + 1 < len(runs) and runs[i + 1][0] != _GAP
            if not (prev_ok and next_ok):
                continue
            runs[i][0] = runs[i - 1][0]
            merged = []
            for run in runs:
                if merged and merged[-1][0] == run[0]:
                    merged[-1][2] = run[2]
                else:
                    merged.append(run)
            runs = merged
            changed = True
            break
    return runs


def _repair_cycle(cycle: dict[EventType, int], cycle_index: int, diagnostics: Diagnostics) -> dict[EventType, int]:
    """Keep the longest-prefix chain consistent with cyclic order from the
    anchor (MVC when present, else the earliest event); drop the rest."""
    if not cycle:
        return cycle
    anchor = EventType.MVC if EventType.MVC in cycle else min(cycle, key=lambda ev: cycle[ev])
    kept: dict[EventType, int] = {}
    last_pos = -1
    last_frame = -1
    for ev, frame in sorted(cycle.items(), key=lambda kv: kv[1]):
        pos = (ev.value - anchor.value) % 6
        if not kept or (pos > last_pos and frame > last_frame):
            kept[ev] = frame
            last_pos, last_frame = pos, frame
        else:
            diagnostics.drop(cycle_index, ev, frame, "order violation")
    return kept


def phases_to_events(
    pred: FramePredictions, min_phase_len: int = 2, diagnostics: Diagnostics | None = None
) -> EventAnnotation:
    """Transitions of the filtered argmax phase sequence -> events.

    The mode filter has width 2*min_phase_len - 1; sequences shorter than
    the filter are passed through unfiltered (flagged). Each run opening
    phase p emits p's opening event at the run's first frame, except runs
    starting at frame 0, whose true start is unobserved. Transitions into
    IVC delimit cycles.
    """
    if pred.kind != "phase_probs":
        raise ValueError(f"phases_to_events needs phase_probs, got '{pred.kind}'")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    classes = _argmax_classes(pred.values)
    width = 2 * min_phase_len - 1
    if len(classes) < width:
        diagnostics.filter_flags.append("unfiltered:sequence-shorter-than-filter")
    else:
        classes = _mode_filter(classes, width)
    runs = _merge_short_runs(_runs(classes), min_phase_len, len(classes))

    cycles: list[dict[EventType, int]] = []
    current: dict[EventType, int] = {}
    for c, s, _ in runs:
        if c == _GAP or s == 0:
            continue
        event = Phase(c).opening_event
        if event is EventType.MVC and current:
            cycles.append(current)
            current = {}
        if event in current:
            diagnostics.drop(len(cycles), event, s, "repeated event in cycle")
            continue
        current[event] = s
    if current:
        cycles.append(current)
    repaired = tuple(
        _repair_cycle(cyc, ci, diagnostics) for ci, cyc in enumerate(cycles)
    )
    return EventAnnotation(cycles=tuple(c for c in repaired if c), source="prediction")


def _plateau_peaks(curve: np.ndarray, threshold: float) -> list[tuple[int, float]]:
    """(frame, height) of local maxima above threshold; plateaus report
    their first frame; sequence edges count as descending."""
    peaks = []
    n = len(curve)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and curve[j + 1] == curve[i]:
            j += 1
        v = curve[i]
        left_ok = i == 0 or curve[i - 1] < v
        right_ok = j == n - 1 or curve[j + 1] < v
        if left_ok and right_ok and v > threshold:
            peaks.append((i, float(v)))
        i = j + 1
    return peaks


def curves_to_events(
    pred: FramePredictions,
    sigma: float = 1.5,
    threshold: float = 0.3,
    diagnostics: Diagnostics | None = None,
) -> EventAnnotation:
    """Tallest-peak picking on smoothed event curves.

    Each curve is Gaussian-smoothed (sigma in frames, kernel truncated at
    4 sigma, reflected boundaries; sigma <= 0 skips smoothing), local maxima
    above `threshold` become candidates, MVC candidates delimit cycles, and
    the tallest candidate per event and cycle wins (ties -> earliest frame).
    """
    if pred.kind != "event_curves":
        raise ValueError(f"curves_to_events needs event_curves, got '{pred.kind}'")
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    curves = pred.values
    if sigma > 0:
        curves = gaussian_filter1d(curves, sigma=sigma, axis=1, mode="reflect", truncate=4.0)
    else:
        diagnostics.filter_flags.append("unsmoothed:sigma<=0")
    n = curves.shape[1]
    candidates = {ev: _plateau_peaks(curves[ev.value], threshold) for ev in EventType}

    mvc_frames = [f for f, _ in candidates[EventType.MVC]]
    bounds = [0] + mvc_frames + [n]
    spans = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1) if bounds[i] < bounds[i + 1]]

    cycles = []
    for lo, hi in spans:
        cycle: dict[EventType, int] = {}
        for ev in EventType:
            inside = [(f, v) for f, v in candidates[ev] if lo <= f < hi]
            if not inside:
                continue
            best_frame, _ = max(inside, key=lambda fv: (fv[1], -fv[0]))
            for f, _v in inside:
                if f != best_frame:
                    diagnostics.drop(len(cycles), ev, f, "shorter peak in cycle")
            cycle[ev] = best_frame
        if cycle:
            cycles.append(cycle)
    repaired = tuple(_repair_cycle(cyc, ci, diagnostics) for ci, cyc in enumerate(cycles))
    return EventAnnotation(cycles=tuple(c for c in repaired if c), source="prediction")


# --- applying models -------------------------------------------------------


def predict(model: torch.nn.Module, rec: Recording) -> FramePredictions:
    """Single whole-sequence pass of a built model over one recording."""
    from .labels import replicate_channels

    model.eval()
    with torch.no_grad():
        if isinstance(model, ClassificationNet):
            x = torch.from_numpy(rec.frames).unsqueeze(0)
            probs = model(x)[0].numpy()
            return FramePredictions(kind="phase_probs", values=probs, fps=rec.fps, id=rec.id)
        if isinstance(model, RegressionNet):
            x = torch.from_numpy(replicate_channels(rec.frames, model.cfg.in_channels)).unsqueeze(0)
            curves = model(x)[0].numpy().T  # (T, 6) -> (6, T)
            return FramePredictions(kind="event_curves", values=curves, fps=rec.fps, id=rec.id)
    raise ValueError(f"unsupported model type {type(model).__name__}")


def predictions_to_events(
    pred: FramePredictions,
    min_phase_len: int = 2,
    sigma: float = 1.5,
    threshold: float = 0.3,
) -> tuple[EventAnnotation, Diagnostics]:
    """Dispatch to the post-processing rule matching the prediction kind."""
    diagnostics = Diagnostics()
    if pred.kind == "phase_probs":
        ann = phases_to_events(pred, min_phase_len=min_phase_len, diagnostics=diagnostics)
    else:
        ann = curves_to_events(pred, sigma=sigma, threshold=threshold, diagnostics=diagnostics)
    return ann, diagnostics


def save_prediction(path: str | Path, doc: AnnotationDoc, diagnostics: Diagnostics) -> None:
    """Annotation JSON with source='prediction' plus a diagnostics block."""
    payload = doc.to_dict()
    payload["source"] = "prediction"
    payload["diagnostics"] = diagnostics.to_dict()
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_prediction(path: str | Path) -> tuple[AnnotationDoc, dict]:
    doc = load_annotation(path)
    raw = json.loads(Path(path).read_text())
    diagnostics = raw.get("diagnostics", {"dropped_events": [], "filter_flags": []})
    if not isinstance(diagnostics, dict) or "dropped_events" not in diagnostics:
        raise FormatError(f"{path}: malformed field 'diagnostics'")
    return doc, diagnostics
