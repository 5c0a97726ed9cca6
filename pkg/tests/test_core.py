"""Event/phase algebra, unit conversions, annotation validation, file I/O."""

import numpy as np
import pytest

from echotiming.core import (
    AnnotationDoc,
    EventAnnotation,
    EventType,
    FormatError,
    Phase,
    Recording,
    View,
    frames_to_ms,
    load_annotation,
    ms_to_frames,
    phase_at,
    report_ms,
    save_annotation,
    validate_annotation,
)
from conftest import HAND_FPS, HAND_N_FRAMES


CYCLIC_ORDER = [
    EventType.MVC,
    EventType.AVO,
    EventType.AVC,
    EventType.MVO,
    EventType.DSS,
    EventType.ASS,
]


def test_event_phase_bijection():
    for ev in EventType:
        assert ev.opens.opening_event is ev
        assert ev.opens.value == ev.value
    for ph in Phase:
        assert ph.opening_event.opens is ph


def test_event_successor_cycles_through_all_six():
    for a, b in zip(CYCLIC_ORDER, CYCLIC_ORDER[1:]):
        assert a.successor is b
    assert EventType.ASS.successor is EventType.MVC
    seen = set()
    ev = EventType.MVC
    for _ in range(6):
        seen.add(ev)
        ev = ev.successor
    assert seen == set(EventType) and ev is EventType.MVC


def test_phase_order_matches_event_order():
    assert [p.name for p in Phase] == [
        "IVC",
        "EJECTION",
        "IVR",
        "EARLY_FILLING",
        "DIASTASIS",
        "ATRIAL_SYSTOLE",
    ]


def test_only_aplax_shows_aortic_valve():
    assert View.APLAX.aortic_valve_visible
    assert not View.A4CH.aortic_valve_visible
    assert not View.A2CH.aortic_valve_visible
    assert {v.value for v in View} == {"A4CH", "A2CH", "APLAX"}


def test_frames_to_ms_reference_values():
    # 1.4 frames at 48 FPS is 29.1666... ms -> 29; 0.6 frames is 12.5 ms -> 12.
    assert frames_to_ms(1.4, 48.0) == pytest.approx(1000.0 * 1.4 / 48.0)
    assert report_ms(1.4, 48.0) == 29
    assert report_ms(0.6, 48.0) == 12


def test_report_ms_rounds_half_to_even():
    # At 40 FPS one frame is exactly 25 ms, so halves are exact.
    assert frames_to_ms(0.5, 40.0) == 12.5
    assert report_ms(0.5, 40.0) == 12
    assert report_ms(1.5, 40.0) == 38  # 37.5 -> even neighbour 38
    assert report_ms(-0.5, 40.0) == -12
    assert report_ms(-1.5, 40.0) == -38


def test_ms_frames_inverse():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = float(rng.uniform(-10, 10))
        fps = float(rng.uniform(20, 100))
        assert ms_to_frames(frames_to_ms(d, fps), fps) == pytest.approx(d)


def test_frames_to_ms_rejects_bad_fps():
    with pytest.raises(ValueError):
        frames_to_ms(1.0, 0.0)
    with pytest.raises(ValueError):
        ms_to_frames(1.0, -5.0)


# --- Recording --------------------------------------------------------------


def test_recording_accepts_and_casts_frames():
    frames = np.random.default_rng(1).random((4, 8, 8))  # float64 in [0, 1)
    rec = Recording(frames=frames, fps=48.0, view="A4CH", id="r1")
    assert rec.frames.dtype == np.float32
    assert rec.n_frames == 4
    assert rec.view is View.A4CH


@pytest.mark.parametrize(
    "frames, fps",
    [
        (np.zeros((8, 8), np.float32), 48.0),  # not (T, H, W)
        (np.zeros((0, 8, 8), np.float32), 48.0),  # empty
        (np.full((2, 4, 4), 1.5, np.float32), 48.0),  # out of [0, 1]
        (np.full((2, 4, 4), -0.1, np.float32), 48.0),
        (np.zeros((2, 4, 4), np.float32), 0.0),  # bad fps
    ],
)
def test_recording_rejects_invalid(frames, fps):
    with pytest.raises(ValueError):
        Recording(frames=frames, fps=fps, view=View.A4CH, id="bad")


# --- EventAnnotation --------------------------------------------------------


def test_annotation_normalizes_keys_and_sorts(hand_annotation):
    assert all(
        isinstance(ev, EventType) for cycle in hand_annotation.cycles for ev in cycle
    )
    by_frame = hand_annotation.events_by_frame()
    frames = [f for f, _, _ in by_frame]
    assert frames == sorted(frames)
    assert hand_annotation.frames_of(EventType.MVC) == [2, 44, 86]
    assert hand_annotation.frames_of(EventType.ASS) == [40, 82]


def test_validate_accepts_hand_annotation(hand_annotation):
    assert validate_annotation(hand_annotation, HAND_N_FRAMES) == []


def test_validate_accepts_partial_first_cycle():
    # Events before frame 0 dropped: first cycle starts mid-cycle at MVO.
    ann = EventAnnotation(cycles=({"MVO": 2, "DSS": 8, "ASS": 14}, {"MVC": 20, "AVO": 25}))
    assert validate_annotation(ann, 30) == []


def test_validate_flags_out_of_range():
    ann = EventAnnotation(cycles=({"MVC": 2, "AVO": 99},))
    kinds = {v.kind for v in validate_annotation(ann, 50)}
    assert kinds == {"out_of_range"}


def test_validate_flags_in_cycle_disorder():
    ann = EventAnnotation(cycles=({"MVC": 10, "AVO": 5},))
    kinds = {v.kind for v in validate_annotation(ann, 50)}
    assert "order" in kinds


def test_validate_flags_shared_frame():
    ann = EventAnnotation(cycles=({"MVC": 4, "AVO": 4},))
    kinds = {v.kind for v in validate_annotation(ann, 50)}
    assert "duplicate" in kinds


def test_validate_flags_cycle_overlap():
    ann = EventAnnotation(cycles=({"MVC": 2, "AVO": 10}, {"MVC": 8, "AVO": 20}))
    violations = validate_annotation(ann, 50)
    assert any(v.kind == "order" and v.cycle == 1 for v in violations)


# --- phase_at ----------------------------------------------------------------


def test_phase_at_full_walk(hand_annotation):
    assert phase_at(hand_annotation, 0, HAND_N_FRAMES) is None  # before first event
    assert phase_at(hand_annotation, 2) is Phase.IVC  # event frame opens its phase
    assert phase_at(hand_annotation, 5) is Phase.IVC
    assert phase_at(hand_annotation, 6) is Phase.EJECTION
    assert phase_at(hand_annotation, 19) is Phase.EJECTION
    assert phase_at(hand_annotation, 20) is Phase.IVR
    assert phase_at(hand_annotation, 24) is Phase.IVR
    assert phase_at(hand_annotation, 25) is Phase.EARLY_FILLING
    assert phase_at(hand_annotation, 33) is Phase.DIASTASIS
    assert phase_at(hand_annotation, 40) is Phase.ATRIAL_SYSTOLE
    assert phase_at(hand_annotation, 43) is Phase.ATRIAL_SYSTOLE
    assert phase_at(hand_annotation, 44) is Phase.IVC  # next cycle
    assert phase_at(hand_annotation, 86) is Phase.IVC  # closing MVC
    assert phase_at(hand_annotation, 89) is Phase.IVC  # trailing frames keep last phase


def test_phase_at_unannotated_intermediate_is_none():
    ann = EventAnnotation(cycles=({"MVC": 2, "AVC": 10},))  # AVO missing
    assert phase_at(ann, 5) is None  # MVC's span ends at a non-successor
    assert phase_at(ann, 2) is Phase.IVC  # event frame still resolves
    assert phase_at(ann, 10) is Phase.IVR
    assert phase_at(ann, 15) is Phase.IVR  # trailing extension


def test_phase_at_bounds():
    ann = EventAnnotation(cycles=({"MVC": 2},))
    with pytest.raises(ValueError):
        phase_at(ann, -1)
    with pytest.raises(ValueError):
        phase_at(ann, 10, n_frames=10)
    assert phase_at(EventAnnotation(cycles=()), 3) is None


# --- annotation files ---------------------------------------------------------


def test_annotation_doc_round_trip(tmp_path, hand_annotation):
    doc = AnnotationDoc(
        id="r7", fps=HAND_FPS, view=View.A2CH, n_frames=HAND_N_FRAMES, annotation=hand_annotation
    )
    path = tmp_path / "ann.json"
    save_annotation(path, doc)
    loaded = load_annotation(path)
    assert loaded.id == "r7"
    assert loaded.fps == HAND_FPS
    assert loaded.view is View.A2CH
    assert loaded.n_frames == HAND_N_FRAMES
    assert loaded.annotation.cycles == hand_annotation.cycles
    # Serialization is stable: saving the loaded doc reproduces the bytes.
    path2 = tmp_path / "ann2.json"
    save_annotation(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_load_annotation_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_annotation(p)
    p.write_text('{"id": "x", "fps": 50, "view": "A4CH", "cycles": []}')  # no n_frames
    with pytest.raises(FormatError):
        load_annotation(p)
    p.write_text('{"id": "x", "fps": 50, "view": "XXX", "n_frames": 5, "cycles": []}')
    with pytest.raises(FormatError):
        load_annotation(p)
    p.write_text('{"id": "x", "fps": 50, "view": "A4CH", "n_frames": 5, "cycles": [{"ZZZ": 1}]}')
    with pytest.raises(FormatError):
        load_annotation(p)
