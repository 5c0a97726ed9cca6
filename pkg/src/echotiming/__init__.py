"""Valve-event timing from echocardiographic image sequences.

Detects the six valve events (MVC, AVO, AVC, MVO, DSS, ASS) in grayscale
frame sequences with two designs — per-frame phase classification and
per-event proximity regression — trained and evaluated end-to-end on a
deterministic synthetic phantom.
"""

from .core import (
    AnnotationDoc,
    EventAnnotation,
    EventType,
    FormatError,
    Phase,
    Recording,
    View,
    Violation,
    frames_to_ms,
    load_annotation,
    ms_to_frames,
    phase_at,
    report_ms,
    save_annotation,
    validate_annotation,
)
from .synth import (
    Manifest,
    ManifestEntry,
    MotionProgram,
    PhantomConfig,
    generate_dataset,
    load_recording,
    render_recording,
    sample_motion_program,
    save_recording,
)
from .labels import make_phase_labels, make_soft_labels, pad_batch, project_two_event
from .models import (
    ClassificationNetConfig,
    RegressionNetConfig,
    build_classification_net,
    build_regression_net,
    count_parameters,
    estimate_flops,
    load_checkpoint,
    receptive_field,
    save_checkpoint,
)
from .training import (
    FoldPlan,
    TrainConfig,
    ensemble_average,
    make_cv_splits,
    masked_categorical_crossentropy,
    masked_mse,
    train_fold,
)
from .inference import (
    FramePredictions,
    curves_to_events,
    phases_to_events,
    predict,
    predictions_to_events,
)
from .evaluation import (
    EvaluationReport,
    aggregate_report,
    cardiac_intervals,
    classify_intervals,
    compare_annotations,
    error_histogram,
    fd_stats,
    match_events,
)

__version__ = "0.1.0"
