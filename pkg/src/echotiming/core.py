"""Domain types shared by the whole pipeline: valve events, cardiac phases,
apical views, recordings, annotations, and frame/millisecond conversions.

Frame indices are 0-based everywhere. An event marks the first frame of the
phase it opens.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "EventType",
    "Phase",
    "View",
    "Recording",
    "EventAnnotation",
    "AnnotationDoc",
    "Violation",
    "frames_to_ms",
    "ms_to_frames",
    "report_ms",
    "validate_annotation",
    "phase_at",
    "load_annotation",
    "save_annotation",
    "FormatError",
]


class FormatError(ValueError):
    """A persisted file does not match its documented schema."""


class EventType(enum.IntEnum):
    """The six valve events, in cyclic order MVC -> AVO -> AVC -> MVO -> DSS -> ASS -> MVC."""

    MVC = 0
    AVO = 1
    AVC = 2
    MVO = 3
    DSS = 4
    ASS = 5

    @property
    def successor(self) -> "EventType":
        return EventType((self.value + 1) % 6)

    @property
    def opens(self) -> "Phase":
        """The phase whose first frame this event marks."""
        return Phase(self.value)


class Phase(enum.IntEnum):
    """Cardiac phases; each begins at the event with the same index (IVC at MVC, etc.)."""

    IVC = 0
    EJECTION = 1
    IVR = 2
    EARLY_FILLING = 3
    DIASTASIS = 4
    ATRIAL_SYSTOLE = 5

    @property
    def opening_event(self) -> EventType:
        return EventType(self.value)


class View(str, enum.Enum):
    A4CH = "A4CH"
    A2CH = "A2CH"
    APLAX = "APLAX"

    @property
    def aortic_valve_visible(self) -> bool:
        # Only the apical long-axis view shows the aortic valve directly.
        return self is View.APLAX


def frames_to_ms(delta_frames: float, fps: float) -> float:
    """Convert a frame count (or difference) to milliseconds."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return delta_frames / fps * 1000.0


def ms_to_frames(ms: float, fps: float) -> float:
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return ms * fps / 1000.0


def report_ms(delta_frames: float, fps: float) -> int:
    """Millisecond figure as printed in report tables: round-half-to-even integer."""
    return round(frames_to_ms(delta_frames, fps))


@dataclass(frozen=True)
class Recording:
    """A grayscale frame sequence with acquisition metadata.

    frames: (n_frames, height, width) float32 array with intensities in [0, 1].
    """

    frames: np.ndarray = field(repr=False)
    fps: float
    view: View
    id: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.frames)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"frames must be a non-empty (T, H, W) array, got shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel intensities must lie in [0, 1], got [{lo}, {hi}]")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "view", View(self.view))

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


Cycle = Mapping[EventType, int]


@dataclass(frozen=True)
class EventAnnotation:
    """Per-cycle partial maps from event type to 0-based frame index.

    Events may be absent within a cycle (e.g. ASS in atrial-fibrillation-like
    recordings, or events falling before the first recorded frame).
    Treat instances as immutable once constructed.
    """

    cycles: tuple[Cycle, ...]
    source: str = "reference"

    def __post_init__(self) -> None:
        norm = tuple(
            {EventType[k] if isinstance(k, str) else EventType(k): int(v) for k, v in cycle.items()}
            for cycle in self.cycles
        )
        object.__setattr__(self, "cycles", norm)

    def iter_events(self) -> Iterator[tuple[int, EventType, int]]:
        """Yield (cycle_index, event, frame) in cycle order."""
        for ci, cycle in enumerate(self.cycles):
            for ev, frame in cycle.items():
                yield ci, ev, frame

    def events_by_frame(self) -> list[tuple[int, EventType, int]]:
        """All (frame, event, cycle_index) sorted by frame."""
        return sorted((frame, ev, ci) for ci, ev, frame in self.iter_events())

    def frames_of(self, event: EventType) -> list[int]:
        return sorted(cycle[event] for cycle in self.cycles if event in cycle)


@dataclass(frozen=True)
class Violation:
    kind: str  # "out_of_range" | "order" | "duplicate"
    cycle: int
    message: str


def _cycle_anchor(cycle: Cycle) -> EventType:
    """Anchor event for in-cycle ordering: MVC when present, else the earliest-frame event."""
    if EventType.MVC in cycle:
        return EventType.MVC
    return min(cycle, key=lambda ev: cycle[ev])


def validate_annotation(ann: EventAnnotation, n_frames: int) -> list[Violation]:
    """Check frame ranges and cyclic event ordering; an empty list means valid.

    Within a cycle the present events, taken in cyclic order starting from the
    anchor (MVC or the earliest present event), must have strictly increasing
    frames. Cycles must not overlap each other, and no two events may share a
    frame.
    """
    violations: list[Violation] = []
    prev_cycle_max = -1
    for ci, cycle in enumerate(ann.cycles):
        if not cycle:
            continue
        for ev, frame in cycle.items():
            if not (0 <= frame < n_frames):
                violations.append(
                    Violation("out_of_range", ci, f"{ev.name} at frame {frame} outside [0, {n_frames})")
                )
        anchor = _cycle_anchor(cycle)
        ordered = sorted(cycle, key=lambda ev: (ev.value - anchor.value) % 6)
        for a, b in zip(ordered, ordered[1:]):
            if cycle[a] == cycle[b]:
                violations.append(
                    Violation("duplicate", ci, f"{a.name} and {b.name} share frame {cycle[a]}")
                )
            elif cycle[a] > cycle[b]:
                violations.append(
                    Violation(
                        "order",
                        ci,
                        f"{a.name} (frame {cycle[a]}) must precede {b.name} (frame {cycle[b]})",
                    )
                )
        cycle_min = min(cycle.values())
        if cycle_min <= prev_cycle_max:
            violations.append(
                Violation("order", ci, f"cycle {ci} starts at frame {cycle_min}, not after cycle {ci - 1}")
            )
        prev_cycle_max = max(prev_cycle_max, max(cycle.values()))
    return violations


def phase_at(ann: EventAnnotation, frame: int, n_frames: int | None = None) -> Phase | None:
    """Phase governing `frame`, or None when it cannot be resolved.

    The governing event is the latest annotated event at-or-before the frame
    (across cycles). Its phase holds up to the next annotated event only when
    that next event is its cyclic successor; when an intermediate event is
    unannotated the span is ambiguous and yields None. Frames after the last
    annotated event keep its phase; frames before the first are None. The
    event frame itself always resolves to the opened phase.
    """
    if frame < 0 or (n_frames is not None and frame >= n_frames):
        raise ValueError(f"frame {frame} out of range")
    timeline = ann.events_by_frame()
    if not timeline:
        return None
    governing = None
    nxt = None
    for entry in timeline:
        if entry[0] <= frame:
            governing = entry
        else:
            nxt = entry
            break
    if governing is None:
        return None
    gframe, gevent, _ = governing
    if frame == gframe:
        return gevent.opens
    if nxt is None:
        return gevent.opens
    if nxt[1] is gevent.successor:
        return gevent.opens
    return None


# --- annotation file schema ---------------------------------------------
#
# {"id": str, "fps": float, "view": "A4CH"|"A2CH"|"APLAX", "n_frames": int,
#  "cycles": [{"MVC": int?, "AVO": int?, ...}], "source": str}
#
# Absent keys mean unannotated. Frame indices are 0-based.


@dataclass(frozen=True)
class AnnotationDoc:
    """An annotation plus the recording metadata it refers to."""

    id: str
    fps: float
    view: View
    n_frames: int
    annotation: EventAnnotation

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "fps": self.fps,
            "view": View(self.view).value,
            "n_frames": self.n_frames,
            "cycles": [{ev.name: frame for ev, frame in cycle.items()} for cycle in self.annotation.cycles],
            "source": self.annotation.source,
        }


def save_annotation(path: str | Path, doc: AnnotationDoc) -> None:
    Path(path).write_text(json.dumps(doc.to_dict(), indent=1, sort_keys=True) + "\n")


def _require(data: Mapping, key: str, path: Path):
    if key not in data:
        raise FormatError(f"{path}: missing field '{key}'")
    return data[key]


def load_annotation(path: str | Path) -> AnnotationDoc:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    cycles_raw: Sequence[Mapping[str, int]] = _require(data, "cycles", path)
    cycles = []
    for ci, cyc in enumerate(cycles_raw):
        parsed = {}
        for name, frame in cyc.items():
            if name not in EventType.__members__:
                raise FormatError(f"{path}: unknown event '{name}' in cycle {ci}")
            if frame is not None:
                parsed[EventType[name]] = int(frame)
        cycles.append(parsed)
    view_raw = _require(data, "view", path)
    try:
        view = View(view_raw)
    except ValueError:
        raise FormatError(f"{path}: unknown view '{view_raw}'") from None
    ann = EventAnnotation(cycles=tuple(cycles), source=str(data.get("source", "reference")))
    return AnnotationDoc(
        id=str(_require(data, "id", path)),
        fps=float(_require(data, "fps", path)),
        view=view,
        n_frames=int(_require(data, "n_frames", path)),
        annotation=ann,
    )
