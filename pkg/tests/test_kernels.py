"""Rasterizer backends: agreement, selection, and input validation."""

import subprocess
import sys

import numpy as np
import pytest

from echotiming._kernels import (
    ACTIVE_BACKEND,
    N_PARAMS,
    available_backends,
    get_backend,
    render_sequence,
)
from echotiming.core import View
from echotiming.synth import PhantomConfig, _frame_params, sample_motion_program


def _realistic_params(seed: int, view: View) -> np.ndarray:
    cfg = PhantomConfig(image_size=64)
    program = sample_motion_program(seed, cfg)
    params, _ = _frame_params(program, view, cfg)
    return params


def test_numpy_backend_always_available():
    assert "numpy" in available_backends()
    assert ACTIVE_BACKEND in available_backends()


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_render_sequence_validates_shape():
    with pytest.raises(ValueError):
        render_sequence(np.zeros((4, N_PARAMS - 1)), 16, 16)
    with pytest.raises(ValueError):
        render_sequence(np.zeros(N_PARAMS), 16, 16)


def test_render_output_shape_and_range():
    params = _realistic_params(0, View.A4CH)[:5]
    out = render_sequence(params, 64, 64)
    assert out.shape == (5, 64, 64)
    assert out.dtype == np.float64
    assert np.isfinite(out).all()
    assert out.min() >= 0.0


@pytest.mark.skipif(
    len(available_backends()) < 2, reason="compiled backend not built"
)
def test_backends_agree_bitwise():
    """Both rasterizers must produce bit-identical float64 frames."""
    backends = [get_backend(n).render_sequence for n in available_backends()]
    for seed in range(8):
        for view in View:
            params = _realistic_params(seed, view)[:6]
            outs = [render(params, 64, 64) for render in backends]
            for other in outs[1:]:
                assert np.array_equal(outs[0], other), f"backends disagree (seed {seed}, {view.value})"


@pytest.mark.skipif(
    len(available_backends()) < 2, reason="compiled backend not built"
)
def test_env_var_forces_backend():
    import os

    code = "import echotiming._kernels as k; print(k.ACTIVE_BACKEND)"
    for name in available_backends():
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={**os.environ, "ECHOTIMING_RENDER_BACKEND": name},
            capture_output=True,
            text=True,
            check=True,
        )
        assert out.stdout.strip() == name
