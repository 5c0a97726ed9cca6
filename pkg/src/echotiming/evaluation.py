"""Event-timing metrics: frame differences, aggregation, histograms, and
cardiac-interval analysis.

Sign convention everywhere: difference = predicted (or annotator-1) frame
minus reference frame, so positive FD means the prediction is late. FD is
the mean signed difference (reported with its standard deviation), aFD the
mean absolute difference; millisecond figures are converted with each
recording's own frame rate before averaging, since datasets mix frame
rates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import EventAnnotation, EventType, View, frames_to_ms

__all__ = [
    "EventPairing",
    "EventStats",
    "EventAccumulator",
    "RecordingEvaluation",
    "EvaluationReport",
    "NORMAL_RANGES_MS",
    "default_window",
    "match_events",
    "fd_stats",
    "aggregate_report",
    "error_histogram",
    "compare_annotations",
    "cardiac_intervals",
    "classify_intervals",
]


@dataclass(frozen=True)
class EventPairing:
    """Matched (event, predicted frame, reference frame) triples plus the
    unmatched leftovers on both sides."""

    pairs: tuple[tuple[EventType, int, int], ...]
    unmatched_pred: tuple[tuple[EventType, int], ...]
    unmatched_ref: tuple[tuple[EventType, int], ...]

    def differences(self, event: EventType | None = None) -> list[int]:
        return [p - r for ev, p, r in self.pairs if event is None or ev is event]


def default_window(ref: EventAnnotation) -> int:
    """Matching window: half the median cycle length in frames.

    Cycle length is measured between consecutive cycle start frames; with a
    single cycle the annotated span stands in. Floor of 3 frames.
    """
    starts = sorted(min(c.values()) for c in ref.cycles if c)
    if len(starts) >= 2:
        diffs = sorted(b - a for a, b in zip(starts, starts[1:]))
        mid = len(diffs) // 2
        median = diffs[mid] if len(diffs) % 2 else (diffs[mid - 1] + diffs[mid]) / 2
    else:
        frames = [f for _, _, f in ref.iter_events()]
        median = (max(frames) - min(frames) + 1) if frames else 0
    return max(3, int(round(median / 2)))


def match_events(pred: EventAnnotation, ref: EventAnnotation, window_frames: int) -> EventPairing:
    """Greedy nearest-frame matching per event type within the window.

    Candidate pairs are taken closest-first (ties: earlier reference, then
    earlier prediction); each frame on either side matches at most once.
    Leftovers are reported as false detections / misses.
    """
    pairs = []
    un_pred = []
    un_ref = []
    for ev in EventType:
        p_frames = pred.frames_of(ev)
        r_frames = ref.frames_of(ev)
        cand = sorted(
            (abs(p - r), r, p)
            for p in p_frames
            for r in r_frames
            if abs(p - r) <= window_frames
        )
        used_p: set[int] = set()
        used_r: set[int] = set()
        for d, r, p in cand:
            if p in used_p or r in used_r:
                continue
            used_p.add(p)
            used_r.add(r)
            pairs.append((ev, p, r))
        un_pred.extend((ev, p) for p in p_frames if p not in used_p)
        un_ref.extend((ev, r) for r in r_frames if r not in used_r)
    return EventPairing(
        pairs=tuple(sorted(pairs, key=lambda t: (t[0].value, t[2]))),
        unmatched_pred=tuple(sorted(un_pred, key=lambda t: (t[0].value, t[1]))),
        unmatched_ref=tuple(sorted(un_ref, key=lambda t: (t[0].value, t[1]))),
    )


@dataclass
class EventAccumulator:
    """Streaming sums that aggregate exactly across recordings."""

    n: int = 0
    sum_d: float = 0.0
    sum_d2: float = 0.0
    sum_abs: float = 0.0
    sum_abs_ms: float = 0.0
    misses: int = 0
    false_detections: int = 0

    def add(self, diff: float, fps: float) -> None:
        self.n += 1
        self.sum_d += diff
        self.sum_d2 += diff * diff
        self.sum_abs += abs(diff)
        self.sum_abs_ms += frames_to_ms(abs(diff), fps)

    def merge(self, other: "EventAccumulator") -> None:
        self.n += other.n
        self.sum_d += other.sum_d
        self.sum_d2 += other.sum_d2
        self.sum_abs += other.sum_abs
        self.sum_abs_ms += other.sum_abs_ms
        self.misses += other.misses
        self.false_detections += other.false_detections

    def stats(self, std_mode: str = "sample") -> "EventStats | None":
        if self.n == 0:
            return None
        mean = self.sum_d / self.n
        var_num = max(0.0, self.sum_d2 - self.n * mean * mean)
        if std_mode == "sample":
            std = math.sqrt(var_num / (self.n - 1)) if self.n > 1 else 0.0
        elif std_mode == "population":
            std = math.sqrt(var_num / self.n)
        else:
            raise ValueError(f"std_mode must be sample|population, got '{std_mode}'")
        return EventStats(
            n=self.n,
            fd_mean=mean,
            fd_std=std,
            afd=self.sum_abs / self.n,
            afd_ms=self.sum_abs_ms / self.n,
            misses=self.misses,
            false_detections=self.false_detections,
        )


@dataclass(frozen=True)
class EventStats:
    n: int
    fd_mean: float
    fd_std: float
    afd: float
    afd_ms: float
    misses: int = 0
    false_detections: int = 0


def fd_stats(
    pairing: EventPairing, fps: float, std_mode: str = "sample"
) -> dict[EventType, EventStats]:
    """Per-event FD mean/std, aFD, and aFD in ms for one recording's pairing.

    Events with no pairs are absent from the result (not reported as zero).
    """
    accs = {ev: EventAccumulator() for ev in EventType}
    for ev, p, r in pairing.pairs:
        accs[ev].add(p - r, fps)
    for ev, _ in pairing.unmatched_ref:
        accs[ev].misses += 1
    for ev, _ in pairing.unmatched_pred:
        accs[ev].false_detections += 1
    out = {}
    for ev, acc in accs.items():
        st = acc.stats(std_mode)
        if st is not None or acc.misses or acc.false_detections:
            out[ev] = st if st is not None else EventStats(
                n=0, fd_mean=float("nan"), fd_std=float("nan"), afd=float("nan"),
                afd_ms=float("nan"), misses=acc.misses, false_detections=acc.false_detections,
            )
    return out


@dataclass(frozen=True)
class RecordingEvaluation:
    """One recording's pairing plus the keys it aggregates under."""

    id: str
    fps: float
    pairing: EventPairing
    view: View | None = None
    dataset: str = "default"


_EVENT_ORDER = list(EventType)


@dataclass
class EvaluationReport:
    """Aggregated per-(dataset, view, event) rows; view None rows aggregate
    across views, weighted by pair counts."""

    std_mode: str
    rows: dict[tuple[str, str | None, EventType], EventStats]
    errors: dict[tuple[str, EventType], list[int]] = field(default_factory=dict)
    sign_convention: str = "prediction minus reference (positive = late prediction)"

    def row(self, dataset: str, view: View | str | None, event: EventType) -> EventStats | None:
        key = (dataset, View(view).value if view is not None else None, event)
        return self.rows.get(key)

    def to_table(self) -> list[dict]:
        table = []
        for (dataset, view, ev), st in sorted(
            self.rows.items(), key=lambda kv: (kv[0][0], kv[0][1] or "", kv[0][2].value)
        ):
            table.append(
                {
                    "dataset": dataset,
                    "view": view or "ALL",
                    "event": ev.name,
                    "n": st.n,
                    "fd_mean": None if math.isnan(st.fd_mean) else round(st.fd_mean, 6),
                    "fd_std": None if math.isnan(st.fd_std) else round(st.fd_std, 6),
                    "afd": None if math.isnan(st.afd) else round(st.afd, 6),
                    "afd_ms": None if math.isnan(st.afd_ms) else round(st.afd_ms, 6),
                    "misses": st.misses,
                    "false_detections": st.false_detections,
                }
            )
        return table

    def to_csv(self, path: str | Path) -> None:
        table = self.to_table()
        fields = ["dataset", "view", "event", "n", "fd_mean", "fd_std", "afd", "afd_ms", "misses", "false_detections"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in table:
                writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})

    def to_json(self, path: str | Path) -> None:
        payload = {
            "sign_convention": self.sign_convention,
            "std_mode": self.std_mode,
            "rows": self.to_table(),
            "histograms": {
                f"{dataset}/{ev.name}": error_histogram(errs)
                for (dataset, ev), errs in sorted(self.errors.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
            },
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def aggregate_report(evals: Sequence[RecordingEvaluation], std_mode: str = "sample") -> EvaluationReport:
    """Exact weighted aggregation of per-recording pairings.

    Emits one row per (dataset, view, event) and a view-aggregated row per
    (dataset, event); each event's signed errors are retained for
    histograms.
    """
    accs: dict[tuple[str, str | None, EventType], EventAccumulator] = {}
    errors: dict[tuple[str, EventType], list[int]] = {}
    for ev_rec in evals:
        view = ev_rec.view.value if ev_rec.view is not None else None
        per_event: dict[EventType, EventAccumulator] = {ev: EventAccumulator() for ev in EventType}
        for ev, p, r in ev_rec.pairing.pairs:
            per_event[ev].add(p - r, ev_rec.fps)
            errors.setdefault((ev_rec.dataset, ev), []).append(p - r)
        for ev, _ in ev_rec.pairing.unmatched_ref:
            per_event[ev].misses += 1
        for ev, _ in ev_rec.pairing.unmatched_pred:
            per_event[ev].false_detections += 1
        for ev, acc in per_event.items():
            if acc.n == 0 and not acc.misses and not acc.false_detections:
                continue
            keys = [(ev_rec.dataset, None, ev)]
            if view is not None:
                keys.append((ev_rec.dataset, view, ev))
            for key in keys:
                accs.setdefault(key, EventAccumulator()).merge(acc)
    rows = {}
    for key, acc in accs.items():
        st = acc.stats(std_mode)
        if st is None:
            st = EventStats(
                n=0, fd_mean=float("nan"), fd_std=float("nan"), afd=float("nan"),
                afd_ms=float("nan"), misses=acc.misses, false_detections=acc.false_detections,
            )
        rows[key] = st
    return EvaluationReport(std_mode=std_mode, rows=rows, errors=errors)


def error_histogram(errors: Iterable[float], bin_width: float = 1.0) -> dict[int, float]:
    """Integer-centered bins (bin k covers [k*w - w/2, k*w + w/2)); values
    are proportions summing to 1. Empty input gives an empty histogram."""
    errs = list(errors)
    if not errs:
        return {}
    counts: dict[int, int] = {}
    for e in errs:
        k = int(math.floor(e / bin_width + 0.5))
        counts[k] = counts.get(k, 0) + 1
    total = len(errs)
    return {k: counts[k] / total for k in sorted(counts)}


def compare_annotations(
    a1: Mapping[str, EventAnnotation],
    a2: Mapping[str, EventAnnotation],
    fps: Mapping[str, float] | float,
    window_frames: int | None = None,
    std_mode: str = "sample",
) -> EvaluationReport:
    """Interobserver comparison: annotator 1 scored against annotator 2.

    Both maps must cover a common set of recording ids; a1 plays the
    prediction role (sign convention: a1 minus a2).
    """
    common = sorted(set(a1) & set(a2))
    if not common:
        raise ValueError("annotation sets share no recording ids")
    evals = []
    for rid in common:
        rec_fps = fps if isinstance(fps, (int, float)) else fps[rid]
        window = window_frames if window_frames is not None else default_window(a2[rid])
        pairing = match_events(a1[rid], a2[rid], window)
        evals.append(
            RecordingEvaluation(id=rid, fps=float(rec_fps), pairing=pairing, dataset="interobserver")
        )
    return aggregate_report(evals, std_mode=std_mode)


# Reference normal ranges (ms), inclusive bounds.
NORMAL_RANGES_MS: dict[str, tuple[float, float]] = {
    "IVRT": (72.0, 112.0),
    "IVCT": (23.0, 49.0),
    "ET": (272.0, 314.0),
}

_INTERVAL_DEFS = [
    ("IVCT", EventType.MVC, EventType.AVO),
    ("ET", EventType.AVO, EventType.AVC),
    ("IVRT", EventType.AVC, EventType.MVO),
    ("diastasis", EventType.DSS, EventType.ASS),
]


def cardiac_intervals(ann: EventAnnotation, fps: float) -> list[dict[str, float]]:
    """Per-cycle interval durations in ms: IVCT (MVC->AVO), ET (AVO->AVC),
    IVRT (AVC->MVO), and diastasis (DSS->ASS). Intervals whose endpoints are
    not both annotated are absent from that cycle's dict."""
    out = []
    for cycle in ann.cycles:
        row = {}
        for name, start, end in _INTERVAL_DEFS:
            if start in cycle and end in cycle:
                row[name] = frames_to_ms(cycle[end] - cycle[start], fps)
        out.append(row)
    return out


def classify_intervals(
    values_ms: Iterable[float], normal_range: tuple[float, float]
) -> dict[str, float]:
    """Proportions {below, normal, above} against an inclusive normal range."""
    lo, hi = normal_range
    if hi < lo:
        raise ValueError(f"normal range reversed: ({lo}, {hi})")
    vals = [v for v in values_ms if v is not None]
    if not vals:
        return {"below": 0.0, "normal": 0.0, "above": 0.0}
    below = sum(1 for v in vals if v < lo)
    above = sum(1 for v in vals if v > hi)
    n = len(vals)
    return {"below": below / n, "normal": (n - below - above) / n, "above": above / n}
