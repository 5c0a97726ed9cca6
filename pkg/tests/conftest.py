"""Shared fixtures: a hand-built annotation and a tiny rendered dataset."""

import numpy as np
import pytest

from echotiming.core import EventAnnotation
from echotiming.synth import (
    MotionProgram,
    PhantomConfig,
    generate_dataset,
    sample_motion_program,
)

# A two-and-a-bit-cycle annotation with round numbers (fps 50 -> 20 ms/frame).
HAND_CYCLES = (
    {"MVC": 2, "AVO": 6, "AVC": 20, "MVO": 25, "DSS": 33, "ASS": 40},
    {"MVC": 44, "AVO": 48, "AVC": 62, "MVO": 67, "DSS": 75, "ASS": 82},
    {"MVC": 86},
)
HAND_N_FRAMES = 90
HAND_FPS = 50.0


@pytest.fixture
def hand_annotation() -> EventAnnotation:
    return EventAnnotation(cycles=HAND_CYCLES)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six-patient toy dataset, one view per patient (round-robin)."""
    root = tmp_path_factory.mktemp("tinyds")
    return generate_dataset(PhantomConfig.toy(), 6, seed=11, out_dir=root, mode="singleview")


def sampled_programs(n: int, seed0: int, config: PhantomConfig) -> list[MotionProgram]:
    return [sample_motion_program(seed0 + i, config) for i in range(n)]


def one_hot_probs(phase_labels: np.ndarray, n_classes: int = 6) -> np.ndarray:
    """Exact one-hot rows for labelled frames, uniform rows where masked."""
    t = phase_labels.shape[0]
    probs = np.full((t, n_classes), 1.0 / n_classes, dtype=np.float64)
    valid = phase_labels >= 0
    probs[valid] = np.eye(n_classes, dtype=np.float64)[phase_labels[valid]]
    return probs
