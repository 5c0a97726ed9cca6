"""Deterministic synthetic echo phantom.

Generates grayscale recordings of a beating-ventricle cartoon (myocardial
ring, mitral leaflet, aortic leaflet in the long-axis view, multiplicative
speckle) whose valve-event frames are known exactly, as the ground-truth
oracle for training and evaluation.

Motion is driven per frame by the cardiac phase the frame belongs to:
cavity area shrinks during ejection and refills afterwards, the mitral
leaflet swings open at MVO, drifts back, freezes at DSS and moves again at
ASS, and the aortic leaflet is open exactly on the ejection frames. Event
frames are floor(t_event * fps / 1000), i.e. the frame whose span contains
the physical instant, so the rendered state switches on the annotated frame.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _kernels
from ._kernels import N_PARAMS, P
from .core import (
    AnnotationDoc,
    EventAnnotation,
    EventType,
    FormatError,
    Phase,
    Recording,
    View,
    save_annotation,
)

__all__ = [
    "PhantomConfig",
    "CycleSpec",
    "MotionProgram",
    "MotionProgramError",
    "DatasetError",
    "sample_motion_program",
    "program_event_frames",
    "annotation_from_program",
    "render_recording",
    "generate_dataset",
    "plan_dataset",
    "save_recording",
    "load_recording",
    "Manifest",
    "ManifestEntry",
    "config_digest",
]


class MotionProgramError(ValueError):
    """Raised when no valid motion program can be drawn from a configuration."""


class DatasetError(RuntimeError):
    """Raised when dataset generation fails (I/O, bad paths)."""


# Normal interval bands (ms) reported for tissue-Doppler reference ranges;
# defaults widen them so datasets contain below/normal/above cases.
_DEFAULT_INTERVALS_MS: dict[Phase, tuple[float, float]] = {
    Phase.IVC: (15.0, 80.0),  # normal band 23-49
    Phase.EJECTION: (170.0, 420.0),  # normal band 272-314
    Phase.IVR: (45.0, 180.0),  # normal band 72-112
    Phase.EARLY_FILLING: (90.0, 280.0),
    Phase.DIASTASIS: (40.0, 330.0),
    Phase.ATRIAL_SYSTOLE: (60.0, 210.0),
}


@dataclass(frozen=True)
class PhantomConfig:
    """Knobs for phantom generation: image geometry, motion ranges, noise."""

    image_size: int = 128
    fps: float = 48.0
    noise_level: float = 0.3
    n_cycles_range: tuple[int, int] = (1, 3)
    start_offset_max_ms: float = 320.0
    ass_missing_fraction: float = 0.0
    interval_ranges_ms: Mapping[Phase, tuple[float, float]] = field(
        default_factory=lambda: dict(_DEFAULT_INTERVALS_MS)
    )
    min_event_gap_frames: int = 1
    # geometry, as fractions of image size
    ventricle_radius_frac: tuple[float, float] = (0.22, 0.30)
    wall_thickness_frac: float = 0.05
    mitral_leaflet_frac: float = 0.62
    aortic_leaflet_frac: float = 0.36
    geometry_jitter: float = 0.05
    sector_half_angle_deg: float | None = 40.0
    edge_gain: float = 6.0
    leaflet_slope: float = 1.8

    def __post_init__(self) -> None:
        if self.image_size < 64:
            raise ValueError(f"image_size must be >= 64, got {self.image_size}")
        if not (0.0 <= self.noise_level < 1.0):
            raise ValueError(f"noise_level must lie in [0, 1), got {self.noise_level}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        lo, hi = self.n_cycles_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad n_cycles_range {self.n_cycles_range}")
        ranges = {Phase(k) if not isinstance(k, Phase) else k: (float(v[0]), float(v[1]))
                  for k, v in self.interval_ranges_ms.items()}
        for phase in Phase:
            if phase not in ranges:
                raise ValueError(f"interval_ranges_ms missing {phase.name}")
            plo, phi = ranges[phase]
            if plo <= 0 or phi < plo:
                raise ValueError(f"degenerate interval range for {phase.name}: ({plo}, {phi})")
        object.__setattr__(self, "interval_ranges_ms", ranges)

    @staticmethod
    def toy(**overrides) -> "PhantomConfig":
        """Small, fast preset for desk-scale training runs."""
        base = dict(image_size=64, n_cycles_range=(1, 2), noise_level=0.25)
        base.update(overrides)
        return PhantomConfig(**base)

    @staticmethod
    def external(**overrides) -> "PhantomConfig":
        """Held-out-style preset: higher frame rate, narrower sector."""
        base = dict(fps=61.0, sector_half_angle_deg=28.0)
        base.update(overrides)
        return PhantomConfig(**base)


def config_digest(config: PhantomConfig) -> str:
    return hashlib.sha256(json.dumps(_config_to_dict(config), sort_keys=True).encode()).hexdigest()


def _config_to_dict(config: PhantomConfig) -> dict:
    d = {}
    for name in config.__dataclass_fields__:
        value = getattr(config, name)
        if name == "interval_ranges_ms":
            value = {phase.name: list(rng) for phase, rng in sorted(value.items())}
        elif isinstance(value, tuple):
            value = list(value)
        d[name] = value
    return d


@dataclass(frozen=True)
class CycleSpec:
    """Durations of the six phases for one cycle, in ms, in Phase order."""

    durations_ms: tuple[float, float, float, float, float, float]
    ass_annotated: bool = True

    @property
    def length_ms(self) -> float:
        return float(sum(self.durations_ms))


@dataclass(frozen=True)
class MotionProgram:
    """A fully determined beat plan; rendering it is a pure function."""

    cycles: tuple[CycleSpec, ...]
    fps: float
    start_offset_ms: float
    seed: int

    def __post_init__(self) -> None:
        if not self.cycles:
            raise ValueError("program needs at least one cycle")
        for cyc in self.cycles:
            if any(d <= 0 for d in cyc.durations_ms):
                raise ValueError("phase durations must be positive")

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)


def _timeline(program: MotionProgram) -> list[tuple[int, EventType, float]]:
    """(cycle_index, event, t_ms) for every event, t relative to recording
    start (may be negative when the recording starts mid-cycle). Ends with the
    closing MVC of the final cycle."""
    out: list[tuple[int, EventType, float]] = []
    t = -program.start_offset_ms
    for ci, cyc in enumerate(program.cycles):
        rel = 0.0
        for phase in Phase:
            ev = phase.opening_event
            if ev is not EventType.ASS or cyc.ass_annotated:
                out.append((ci, ev, t + rel))
            rel += cyc.durations_ms[phase.value]
        t += cyc.length_ms
    out.append((program.n_cycles, EventType.MVC, t))
    return out


def program_event_frames(program: MotionProgram) -> tuple[list[tuple[int, EventType, int]], int]:
    """Event frames via cumulative summation and floor(t*fps/1000).

    Returns (kept_events, n_frames) where kept_events lists
    (cycle_index, event, frame) with frame >= 0, and n_frames runs up to the
    closing MVC inclusive.
    """
    frames = [(ci, ev, math.floor(t * program.fps / 1000.0)) for ci, ev, t in _timeline(program)]
    n_frames = frames[-1][2] + 1
    kept = [(ci, ev, f) for ci, ev, f in frames if f >= 0]
    return kept, n_frames


def _frames_valid(program: MotionProgram, min_gap: int) -> bool:
    kept, n_frames = program_event_frames(program)
    if n_frames < 2 or len(kept) < 2:
        return False
    fs = [f for _, _, f in kept]
    return all(b - a >= max(1, min_gap) for a, b in zip(fs, fs[1:]))


def annotation_from_program(program: MotionProgram) -> EventAnnotation:
    """Exact ground-truth annotation: kept events grouped per cycle."""
    kept, _ = program_event_frames(program)
    by_cycle: dict[int, dict[EventType, int]] = {}
    for ci, ev, f in kept:
        by_cycle.setdefault(ci, {})[ev] = f
    cycles = tuple(by_cycle[ci] for ci in sorted(by_cycle))
    return EventAnnotation(cycles=cycles, source="reference")


def sample_motion_program(seed: int, config: PhantomConfig) -> MotionProgram:
    """Draw a program from the configured ranges; deterministic in seed.

    Programs whose event frames are not strictly increasing (sub-frame
    intervals at low fps) are rejected and redrawn, which keeps the
    guarantee without skewing the configured ranges elsewhere.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for _ in range(200):
        n_cycles = int(rng.integers(config.n_cycles_range[0], config.n_cycles_range[1] + 1))
        offset = float(rng.uniform(0.0, config.start_offset_max_ms))
        ass = bool(rng.random() >= config.ass_missing_fraction)
        cycles = []
        for _ in range(n_cycles):
            durations = tuple(
                float(rng.uniform(*config.interval_ranges_ms[phase])) for phase in Phase
            )
            cycles.append(CycleSpec(durations_ms=durations, ass_annotated=ass))
        program = MotionProgram(cycles=tuple(cycles), fps=config.fps, start_offset_ms=offset, seed=seed)
        if _frames_valid(program, config.min_event_gap_frames):
            return program
    raise MotionProgramError(
        f"no valid program after 200 draws (seed {seed}); intervals too short for fps {config.fps}?"
    )


# --- per-frame motion curves ----------------------------------------------


def _smoothstep(p: float) -> float:
    p = min(1.0, max(0.0, p))
    return p * p * (3.0 - 2.0 * p)


def _area_scale(phase: Phase, p: float, filled: float) -> float:
    """Cavity area multiplier; `filled` is the diastasis plateau (0.97 when
    the cycle has no atrial kick, so closure itself restores 1.0).

    Every phase starts with a small step off the previous phase's end value,
    so the event frame itself is visibly distinct from its neighbors — the
    cue the detectors are supposed to time.
    """
    if phase is Phase.IVC:
        return 1.0
    if phase is Phase.EJECTION:
        return 1.0 - 0.45 * (0.18 + 0.82 * _smoothstep(p))
    if phase is Phase.IVR:
        return 0.50
    if phase is Phase.EARLY_FILLING:
        overshoot = min(1.0, filled + 0.025)
        return 0.50 + (overshoot - 0.50) * (0.2 + 0.8 * _smoothstep(p))
    if phase is Phase.DIASTASIS:
        return filled
    return filled + (1.0 - filled) * (0.3 + 0.7 * _smoothstep(p))


def _mitral_open(phase: Phase, p: float, has_ass: bool) -> float:
    """Mitral opening in [0, 1]; 0 = coapted. Jumps open on the MVO frame,
    drifts back toward the atrium, steps down and freezes at DSS, kicks at
    ASS, and snaps shut at MVC."""
    if phase in (Phase.IVC, Phase.EJECTION, Phase.IVR):
        return 0.0
    if phase is Phase.EARLY_FILLING:
        if p < 0.35:
            return 0.25 + 0.75 * _smoothstep(p / 0.35)
        return 1.0 - 0.38 * _smoothstep((p - 0.35) / 0.65)
    if phase is Phase.DIASTASIS:
        return 0.55
    if not has_ass:
        # no distinct atrial kick: leaflet stays frozen until closure
        return 0.55
    if p < 0.5:
        return 0.62 + 0.23 * _smoothstep(p / 0.5)
    return 0.85 - 0.75 * _smoothstep((p - 0.5) / 0.5)


_VIEW_STYLE = {
    View.A4CH: dict(aspect=(1.00, 1.00), mitral_deg=112.0, side=1.0, aortic=False, aortic_deg=0.0),
    View.A2CH: dict(aspect=(0.92, 1.05), mitral_deg=68.0, side=-1.0, aortic=False, aortic_deg=0.0),
    View.APLAX: dict(aspect=(1.06, 0.94), mitral_deg=118.0, side=1.0, aortic=True, aortic_deg=55.0),
}


@dataclass(frozen=True)
class _Geometry:
    cx: float
    cy: float
    ax: float  # outer semi-axis, x
    ay: float
    wall: float
    wall_int: float
    pool_int: float
    leaf_int: float
    background: float


def _patient_geometry(program: MotionProgram, config: PhantomConfig) -> _Geometry:
    rng = np.random.default_rng(np.random.SeedSequence((program.seed, 0x6E0)))
    size = config.image_size
    j = config.geometry_jitter
    return _Geometry(
        cx=size * (0.5 + rng.uniform(-j, j) * 0.5),
        cy=size * (0.46 + rng.uniform(-j, j) * 0.5),
        ax=size * config.ventricle_radius_frac[0] * (1.0 + rng.uniform(-j, j)),
        ay=size * config.ventricle_radius_frac[1] * (1.0 + rng.uniform(-j, j)),
        wall=size * config.wall_thickness_frac,
        wall_int=float(np.clip(0.55 + rng.uniform(-0.06, 0.06), 0.0, 1.0)),
        pool_int=0.06,
        leaf_int=0.92,
        background=0.02,
    )


def _segments(program: MotionProgram) -> list[tuple[int, Phase, int, int]]:
    """(cycle_index, phase, start_frame, end_frame) covering all frames,
    start may be negative; end of the final segment is n_frames."""
    frames = [(ci, ev, math.floor(t * program.fps / 1000.0)) for ci, ev, t in _timeline(program)]
    n_frames = frames[-1][2] + 1
    segs = []
    for (ci, ev, f), nxt in zip(frames, frames[1:] + [(None, None, n_frames)]):
        segs.append((ci, ev.opens, f, nxt[2]))
    return segs


def _frame_params(program: MotionProgram, view: View, config: PhantomConfig) -> tuple[np.ndarray, int]:
    geo = _patient_geometry(program, config)
    style = _VIEW_STYLE[View(view)]
    segs = _segments(program)
    n_frames = segs[-1][3]
    params = np.zeros((n_frames, N_PARAMS), dtype=np.float64)

    mitral_rad = math.radians(style["mitral_deg"])
    aortic_rad = math.radians(style["aortic_deg"])
    asp_x, asp_y = style["aspect"]
    ax0, ay0 = geo.ax * asp_x, geo.ay * asp_y

    si = 0
    for f in range(n_frames):
        while not (segs[si][2] <= f < segs[si][3]):
            si += 1
        ci, phase, s, e = segs[si]
        p = (f - s) / max(1, e - s)
        cyc = program.cycles[min(ci, program.n_cycles - 1)]
        has_ass = cyc.ass_annotated
        filled = 0.92 if has_ass else 0.97
        scale = math.sqrt(_area_scale(phase, p, filled))
        ax, ay = ax0 * scale, ay0 * scale
        row = params[f]
        row[P.CX] = geo.cx
        row[P.CY] = geo.cy
        row[P.INV_AX_OUT] = 1.0 / ax
        row[P.INV_AY_OUT] = 1.0 / ay
        row[P.INV_AX_IN] = 1.0 / max(1.0, ax - geo.wall)
        row[P.INV_AY_IN] = 1.0 / max(1.0, ay - geo.wall)
        row[P.WALL_INT] = geo.wall_int
        row[P.POOL_INT] = geo.pool_int
        row[P.BACKGROUND] = geo.background
        row[P.EDGE_GAIN] = config.edge_gain
        row[P.LEAF_SLOPE] = config.leaflet_slope

        theta = _mitral_open(phase, p, has_ass)
        hx = geo.cx + ax * math.cos(mitral_rad)
        hy = geo.cy + ay * math.sin(mitral_rad)
        ux, uy = geo.cx - hx, geo.cy - hy
        un = math.hypot(ux, uy)
        ux, uy = ux / un, uy / un
        vx, vy = -uy * style["side"], ux * style["side"]
        dx = (1.0 - theta) * vx + theta * ux
        dy = (1.0 - theta) * vy + theta * uy
        dn = math.hypot(dx, dy)
        length = config.mitral_leaflet_frac * ay0
        row[P.M_X1] = hx
        row[P.M_Y1] = hy
        row[P.M_X2] = hx + length * dx / dn
        row[P.M_Y2] = hy + length * dy / dn
        row[P.M_HALF_TH] = 1.4
        row[P.M_INT] = geo.leaf_int

        if style["aortic"]:
            theta_a = 0.95 if phase is Phase.EJECTION else 0.12
            ahx = geo.cx + ax * math.cos(aortic_rad)
            ahy = geo.cy + ay * math.sin(aortic_rad)
            aux, auy = geo.cx - ahx, geo.cy - ahy
            aun = math.hypot(aux, auy)
            aux, auy = aux / aun, auy / aun
            avx, avy = auy, -aux
            adx = (1.0 - theta_a) * avx + theta_a * aux
            ady = (1.0 - theta_a) * avy + theta_a * auy
            adn = math.hypot(adx, ady)
            alen = config.aortic_leaflet_frac * ay0
            row[P.A_X1] = ahx
            row[P.A_Y1] = ahy
            row[P.A_X2] = ahx + alen * adx / adn
            row[P.A_Y2] = ahy + alen * ady / adn
            row[P.A_HALF_TH] = 1.2
            row[P.A_INT] = 0.88
        else:
            row[P.A_INT] = 0.0
    return params, n_frames


def _sector_mask(config: PhantomConfig) -> np.ndarray | None:
    if config.sector_half_angle_deg is None:
        return None
    size = config.image_size
    half = math.radians(config.sector_half_angle_deg)
    apex_x, apex_y = size / 2.0, -0.06 * size
    X = np.arange(size, dtype=np.float64)[None, :]
    Y = np.arange(size, dtype=np.float64)[:, None]
    ang = np.arctan2(X - apex_x, Y - apex_y)
    rad = np.hypot(X - apex_x, Y - apex_y)
    mask = (np.abs(ang) <= half) & (rad <= 1.12 * size)
    return mask.astype(np.float64)


def render_recording(
    program: MotionProgram,
    view: View,
    config: PhantomConfig,
    rec_id: str | None = None,
    backend: str | None = None,
) -> tuple[Recording, EventAnnotation]:
    """Render one view of a program; the returned annotation is exact.

    With noise_level 0 this is a pure function of (program, view, config).
    """
    view = View(view)
    params, n_frames = _frame_params(program, view, config)
    render = _kernels.render_sequence if backend is None else _kernels.get_backend(backend).render_sequence
    geo = render(params, config.image_size, config.image_size)
    mask = _sector_mask(config)
    if mask is not None:
        geo *= mask
    if config.noise_level > 0.0:
        view_idx = list(View).index(view)
        rng = np.random.default_rng(np.random.SeedSequence((program.seed, view_idx, 0x5BEC)))
        speckle = rng.gamma(3.0, 1.0 / 3.0, size=geo.shape)
        geo = geo * ((1.0 - config.noise_level) + config.noise_level * speckle)
    frames = np.clip(geo, 0.0, 1.0).astype(np.float32)
    if rec_id is None:
        rec_id = f"rec-{program.seed & 0xFFFFFFFF:08x}-{view.value}"
    rec = Recording(frames=frames, fps=program.fps, view=view, id=rec_id)
    return rec, annotation_from_program(program)


# --- persistence -----------------------------------------------------------


def save_recording(rec: Recording, path: str | Path) -> None:
    """Write the frame stack as .npy plus a JSON sidecar next to it."""
    path = Path(path)
    np.save(path, rec.frames)
    sidecar = {
        "id": rec.id,
        "fps": rec.fps,
        "view": rec.view.value,
        "n_frames": rec.n_frames,
        "height": int(rec.frames.shape[1]),
        "width": int(rec.frames.shape[2]),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def load_recording(path: str | Path) -> Recording:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    if not path.exists():
        raise FormatError(f"{path}: recording file missing")
    if not sidecar_path.exists():
        raise FormatError(f"{sidecar_path}: sidecar missing")
    meta = json.loads(sidecar_path.read_text())
    for key in ("id", "fps", "view", "n_frames", "height", "width"):
        if key not in meta:
            raise FormatError(f"{sidecar_path}: missing field '{key}'")
    try:
        frames = np.load(path)
    except Exception as exc:
        raise FormatError(f"{path}: unreadable frame stack ({exc})") from exc
    expected = (meta["n_frames"], meta["height"], meta["width"])
    if frames.shape != tuple(expected):
        raise FormatError(f"{path}: field 'n_frames': shape {frames.shape} != sidecar {expected}")
    return Recording(frames=frames, fps=float(meta["fps"]), view=View(meta["view"]), id=str(meta["id"]))


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    patient: str
    view: View
    fps: float
    n_frames: int
    recording_path: str  # relative to the manifest directory
    annotation_path: str

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["view"] = View(self.view).value
        return d


@dataclass(frozen=True)
class Manifest:
    seed: int
    config_digest: str
    mode: str
    entries: tuple[ManifestEntry, ...]
    root: Path | None = None  # directory the paths are relative to, set on load/save

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_digest": self.config_digest,
            "mode": self.mode,
            "entries": [e.to_dict() for e in self.entries],
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def patients(self) -> list[str]:
        return sorted({e.patient for e in self.entries})

    def recording_path(self, entry: ManifestEntry) -> Path:
        if self.root is None:
            raise DatasetError("manifest has no root directory; load it from disk first")
        return self.root / entry.recording_path

    def annotation_path(self, entry: ManifestEntry) -> Path:
        if self.root is None:
            raise DatasetError("manifest has no root directory; load it from disk first")
        return self.root / entry.annotation_path

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "Manifest":
        path = Path(path)
        data = json.loads(path.read_text())
        entries = tuple(
            ManifestEntry(
                id=e["id"],
                patient=e["patient"],
                view=View(e["view"]),
                fps=float(e["fps"]),
                n_frames=int(e["n_frames"]),
                recording_path=e["recording_path"],
                annotation_path=e["annotation_path"],
            )
            for e in data["entries"]
        )
        return Manifest(
            seed=int(data["seed"]),
            config_digest=str(data["config_digest"]),
            mode=str(data["mode"]),
            entries=entries,
            root=path.parent,
        )


_MODE_VIEWS = {
    "triplane": (View.A4CH, View.A2CH, View.APLAX),
    "external": (View.APLAX,),
}


def _patient_seed(seed: int, patient_idx: int) -> int:
    ss = np.random.SeedSequence((seed, patient_idx, 0xECB0))
    return int(ss.generate_state(1, np.uint64)[0])


def plan_dataset(
    config: PhantomConfig, n_patients: int, seed: int, mode: str = "triplane"
) -> list[tuple[str, View, MotionProgram]]:
    """Cheap dataset plan: (patient_id, view, program) per recording, no pixels.

    In triplane mode each patient contributes all three views sharing one
    program (hence identical event frames); external mode is APLAX only;
    singleview cycles through the views, one per patient.
    """
    if mode not in (*_MODE_VIEWS, "singleview"):
        raise ValueError(f"unknown mode '{mode}'")
    plan = []
    all_views = list(View)
    for i in range(n_patients):
        pid = f"p{i:04d}"
        program = sample_motion_program(_patient_seed(seed, i), config)
        views = (_MODE_VIEWS[mode] if mode in _MODE_VIEWS else (all_views[i % 3],))
        for view in views:
            plan.append((pid, view, program))
    return plan


def generate_dataset(
    config: PhantomConfig,
    n_patients: int,
    seed: int,
    out_dir: str | Path,
    mode: str = "triplane",
) -> Manifest:
    """Render and persist a dataset; byte-identical for a fixed seed.

    Triplane mode writes three recordings per patient that share a single
    annotation file, mirroring synchronized multi-view acquisition.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    plan = plan_dataset(config, n_patients, seed, mode)
    entries = []
    seen_ann: dict[str, str] = {}
    try:
        for pid, view, program in plan:
            rec_id = f"{pid}-{view.value}"
            rec, ann = render_recording(program, view, config, rec_id=rec_id)
            rec_rel = f"rec_{pid}_{view.value}.npy"
            save_recording(rec, out_dir / rec_rel)
            if pid not in seen_ann:
                ann_rel = f"ann_{pid}.json"
                doc = AnnotationDoc(id=pid, fps=program.fps, view=view, n_frames=rec.n_frames, annotation=ann)
                save_annotation(out_dir / ann_rel, doc)
                seen_ann[pid] = ann_rel
            entries.append(
                ManifestEntry(
                    id=rec_id,
                    patient=pid,
                    view=view,
                    fps=program.fps,
                    n_frames=rec.n_frames,
                    recording_path=rec_rel,
                    annotation_path=seen_ann[pid],
                )
            )
    except OSError as exc:
        raise DatasetError(f"dataset write failed under {out_dir}: {exc}") from exc
    manifest = Manifest(
        seed=seed,
        config_digest=config_digest(config),
        mode=mode,
        entries=tuple(entries),
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
