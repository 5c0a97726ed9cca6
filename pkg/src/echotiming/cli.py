"""Command-line pipeline driver.

One JSON config (every field defaulted) with dotted-key overrides; each
subcommand writes a resolved-config snapshot next to its outputs so a run
can be reproduced from the snapshot alone.

Exit codes: 0 success, 2 usage, 3 configuration, 4 missing path, 5 file
format. Errors print a single line `error:<category>: <message>` to stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import AnnotationDoc, FormatError, Phase, load_annotation
from .evaluation import (
    NORMAL_RANGES_MS,
    RecordingEvaluation,
    aggregate_report,
    cardiac_intervals,
    classify_intervals,
    default_window,
    match_events,
)
from .inference import FramePredictions, predict, predictions_to_events, save_prediction, load_prediction
from .labels import make_phase_labels, make_soft_labels
from .models import (
    ClassificationNetConfig,
    ConfigError,
    RegressionNetConfig,
    build_classification_net,
    build_regression_net,
    count_parameters,
    estimate_flops,
    load_checkpoint,
    receptive_field,
)
from .synth import (
    DatasetError,
    Manifest,
    MotionProgramError,
    PhantomConfig,
    generate_dataset,
    load_recording,
)
from .training import TrainConfig, ensemble_average, make_cv_splits, train_fold

__all__ = ["main", "default_config", "resolve_config"]


def default_config() -> dict:
    return {
        "seed": 0,
        "synth": {"preset": "toy", "n_patients": 20, "mode": "triplane"},
        "model": {"task": "classification", "scale": "toy", "classification": {}, "regression": {}},
        "train": {},
        "infer": {"min_phase_len": 2, "sigma": 1.5, "threshold": 0.3},
        "eval": {"window_frames": None, "std_mode": "sample", "dataset_name": "synthetic"},
        "paths": {"out_root": os.environ.get("ECHOTIMING_OUT", "runs")},
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override '{dotted}': '{part}' is not a section")
    node[parts[-1]] = value


def _parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override '{item}' must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def resolve_config(config_path: str | None, overrides: list[str] | None) -> dict:
    cfg = default_config()
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise FormatError(f"{path}: config root must be an object")
        cfg = _deep_merge(cfg, loaded)
    for item in overrides or []:
        key, value = _parse_override(item)
        _set_dotted(cfg, key, value)
    return cfg


def _phantom_config(section: dict) -> PhantomConfig:
    over = {k: v for k, v in section.items() if k not in ("preset", "n_patients", "mode")}
    if "interval_ranges_ms" in over:
        over["interval_ranges_ms"] = {
            (Phase[k] if isinstance(k, str) else Phase(k)): tuple(v)
            for k, v in over["interval_ranges_ms"].items()
        }
    for key in ("n_cycles_range", "ventricle_radius_frac"):
        if key in over:
            over[key] = tuple(over[key])
    preset = section.get("preset", "toy")
    if preset == "default":
        return PhantomConfig(**over)
    if preset == "toy":
        return PhantomConfig.toy(**over)
    if preset == "external":
        return PhantomConfig.external(**over)
    raise ConfigError(f"unknown synth preset '{preset}'")


def _model_config(section: dict, task: str, n_classes: int | None = None):
    over = dict(section.get(task, {}))
    scale = section.get("scale", "toy")
    if scale not in ("toy", "full"):
        raise ConfigError(f"model scale must be toy|full, got '{scale}'")
    if task == "classification":
        if n_classes is not None:
            over.setdefault("n_classes", n_classes)
        return ClassificationNetConfig(**over) if scale == "full" else ClassificationNetConfig.toy(**over)
    if task == "regression":
        return RegressionNetConfig(**over) if scale == "full" else RegressionNetConfig.toy(**over)
    raise ConfigError(f"task must be classification|regression, got '{task}'")


def _train_config(cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    section.setdefault("task", cfg.get("model", {}).get("task", "classification"))
    section.setdefault("seed", cfg.get("seed", 0))
    return TrainConfig(**section)


def _snapshot(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _out_dir(args, cfg: dict, leaf: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg["paths"]["out_root"]) / leaf


def _load_manifest(path: str) -> Manifest:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"manifest {p} not found")
    try:
        return Manifest.load(p)
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{p}: malformed manifest ({exc})") from exc


# --- subcommands -----------------------------------------------------------


def _cmd_synth(args, cfg: dict) -> int:
    section = cfg["synth"]
    phantom = _phantom_config(section)
    n_patients = int(args.n_patients or section.get("n_patients", 20))
    mode = args.mode or section.get("mode", "triplane")
    seed = cfg["seed"] if args.seed is None else args.seed
    out = _out_dir(args, cfg, "dataset")
    manifest = generate_dataset(phantom, n_patients, seed, out, mode=mode)
    _snapshot(cfg, out)
    print(f"dataset: {out}")
    print(f"recordings: {len(manifest.entries)}")
    print(f"manifest_digest: {manifest.digest()}")
    return 0


def _cmd_labels(args, cfg: dict) -> int:
    manifest = _load_manifest(args.manifest)
    out = _out_dir(args, cfg, "labels")
    out.mkdir(parents=True, exist_ok=True)
    width = args.width
    n = 0
    for entry in manifest.entries:
        doc = load_annotation(manifest.annotation_path(entry))
        phase = make_phase_labels(doc.annotation, entry.n_frames)
        soft = make_soft_labels(doc.annotation, entry.n_frames, width=width)
        np.save(out / f"phase_{entry.id}.npy", phase)
        np.save(out / f"soft_{entry.id}.npy", soft)
        n += 1
    _snapshot(cfg, out)
    print(f"labeled: {n} recordings -> {out}")
    return 0


def _fold_artifacts(cfg: dict, manifest: Manifest, k: int):
    train_cfg = _train_config(cfg)
    n_classes = train_cfg.n_classes if train_cfg.task == "classification" else None
    model_cfg = _model_config(cfg.get("model", {}), train_cfg.task, n_classes)
    plan = make_cv_splits(manifest, k=k, seed=cfg.get("seed", 0))
    return model_cfg, train_cfg, plan


def _predict_entries(model_or_models, manifest: Manifest, entries, infer_cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    models = model_or_models if isinstance(model_or_models, list) else [model_or_models]
    for entry in entries:
        rec = load_recording(manifest.recording_path(entry))
        preds = [predict(m, rec) for m in models]
        if len(preds) == 1:
            merged = preds[0]
        else:
            values = ensemble_average(
                [p.values for p in preds], renormalize=preds[0].kind == "phase_probs"
            )
            merged = FramePredictions(kind=preds[0].kind, values=values, fps=rec.fps, id=rec.id)
        ann, diagnostics = predictions_to_events(
            merged,
            min_phase_len=int(infer_cfg.get("min_phase_len", 2)),
            sigma=float(infer_cfg.get("sigma", 1.5)),
            threshold=float(infer_cfg.get("threshold", 0.3)),
        )
        doc = AnnotationDoc(id=entry.id, fps=entry.fps, view=entry.view, n_frames=entry.n_frames, annotation=ann)
        save_prediction(out_dir / f"pred_{entry.id}.json", doc, diagnostics)


def _evaluate_predictions(pred_dir: Path, manifest: Manifest, cfg: dict):
    eval_cfg = cfg.get("eval", {})
    evals = []
    for entry in manifest.entries:
        pred_path = pred_dir / f"pred_{entry.id}.json"
        if not pred_path.exists():
            raise FileNotFoundError(f"prediction {pred_path} not found")
        pred_doc, _diag = load_prediction(pred_path)
        ref_doc = load_annotation(manifest.annotation_path(entry))
        window = eval_cfg.get("window_frames")
        window = default_window(ref_doc.annotation) if window in (None, 0) else int(window)
        pairing = match_events(pred_doc.annotation, ref_doc.annotation, window)
        evals.append(
            RecordingEvaluation(
                id=entry.id,
                fps=entry.fps,
                pairing=pairing,
                view=entry.view,
                dataset=str(eval_cfg.get("dataset_name", "synthetic")),
            )
        )
    return aggregate_report(evals, std_mode=str(eval_cfg.get("std_mode", "sample")))


def _write_report(report, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "evaluation.csv")
    report.to_json(out / "evaluation.json")
    for row in report.to_table():
        if row["view"] != "ALL":
            continue
        afd = "-" if row["afd"] is None else f"{row['afd']:.3f}"
        afd_ms = "-" if row["afd_ms"] is None else f"{row['afd_ms']:.1f}"
        print(
            f"{row['dataset']} {row['event']}: n={row['n']} aFD={afd} frames ({afd_ms} ms) "
            f"misses={row['misses']} false={row['false_detections']}"
        )


def _cmd_train(args, cfg: dict) -> int:
    manifest = _load_manifest(args.manifest)
    model_cfg, train_cfg, plan = _fold_artifacts(cfg, manifest, args.k)
    run_dir = _out_dir(args, cfg, "train")
    _snapshot(cfg, run_dir)
    plan.save(run_dir / "foldplan.json")
    _model, metadata, history = train_fold(
        model_cfg, train_cfg, manifest, plan, args.fold, out_dir=run_dir / "checkpoints"
    )
    print(f"fold {args.fold}: epochs={metadata['epochs']} best_epoch={metadata['best_epoch']}")
    print(f"best_val_loss: {metadata['best_val_loss']:.6f}")
    print(f"checkpoint: {run_dir / 'checkpoints' / f'checkpoint_fold{args.fold}.pt'}")
    return 0


def _run_crossval_fold(payload) -> None:
    cfg, manifest_path, fold = payload
    manifest = _load_manifest(manifest_path)
    model_cfg, train_cfg, plan = _fold_artifacts(cfg, manifest, cfg["_k"])
    run_dir = Path(cfg["_run_dir"])
    model, _meta, _history = train_fold(
        model_cfg, train_cfg, manifest, plan, fold, out_dir=run_dir / "checkpoints"
    )
    test_ids = set(plan.test_patients(fold))
    entries = [e for e in manifest.entries if e.patient in test_ids]
    _predict_entries(model, manifest, entries, cfg.get("infer", {}), run_dir / "predictions")


def _cmd_crossval(args, cfg: dict) -> int:
    manifest = _load_manifest(args.manifest)
    _model_cfg, _train_cfg, plan = _fold_artifacts(cfg, manifest, args.k)
    run_dir = _out_dir(args, cfg, "crossval")
    _snapshot(cfg, run_dir)
    plan.save(run_dir / "foldplan.json")
    worker_cfg = dict(cfg, _k=args.k, _run_dir=str(run_dir))
    payloads = [(worker_cfg, args.manifest, fold) for fold in range(args.k)]
    if args.parallel_folds > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(args.parallel_folds) as pool:
            pool.map(_run_crossval_fold, payloads)
    else:
        for payload in payloads:
            _run_crossval_fold(payload)
    report = _evaluate_predictions(run_dir / "predictions", manifest, cfg)
    _write_report(report, run_dir / "reports")
    return 0


def _cmd_infer(args, cfg: dict) -> int:
    manifest = _load_manifest(args.manifest)
    if bool(args.checkpoint) == bool(args.ensemble):
        raise ConfigError("pass exactly one of --checkpoint or --ensemble")
    if args.checkpoint:
        path = Path(args.checkpoint)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        models = [load_checkpoint(path)[0]]
    else:
        ck_dir = Path(args.ensemble) / "checkpoints"
        paths = sorted(ck_dir.glob("checkpoint_fold*.pt"))
        if not paths:
            raise FileNotFoundError(f"no checkpoints under {ck_dir}")
        models = [load_checkpoint(p)[0] for p in paths]
    out = _out_dir(args, cfg, "predictions")
    _predict_entries(models, manifest, manifest.entries, cfg.get("infer", {}), out)
    _snapshot(cfg, out)
    print(f"predictions: {len(manifest.entries)} -> {out}")
    return 0


def _cmd_eval(args, cfg: dict) -> int:
    manifest = _load_manifest(args.manifest)
    pred_dir = Path(args.pred)
    if not pred_dir.exists():
        raise FileNotFoundError(f"prediction directory {pred_dir} not found")
    report = _evaluate_predictions(pred_dir, manifest, cfg)
    out = _out_dir(args, cfg, "reports")
    _write_report(report, out)
    _snapshot(cfg, out)
    return 0


def _cmd_intervals(args, cfg: dict) -> int:
    manifest = _load_manifest(args.manifest)
    out = _out_dir(args, cfg, "intervals")
    out.mkdir(parents=True, exist_ok=True)
    seen: dict[str, Path] = {}
    for entry in manifest.entries:
        seen.setdefault(entry.patient, manifest.annotation_path(entry))
    rows = []
    per_name: dict[str, list[float]] = {name: [] for name in ("IVCT", "ET", "IVRT", "diastasis")}
    for patient in sorted(seen):
        doc = load_annotation(seen[patient])
        for ci, cycle in enumerate(cardiac_intervals(doc.annotation, doc.fps)):
            row = {"patient": patient, "cycle": ci}
            for name in ("IVCT", "ET", "IVRT", "diastasis"):
                value = cycle.get(name)
                row[name] = None if value is None else round(value, 3)
                if value is not None:
                    per_name[name].append(value)
            rows.append(row)
    import csv as _csv

    with open(out / "intervals.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["patient", "cycle", "IVCT", "ET", "IVRT", "diastasis"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    summary = {}
    for name, values in per_name.items():
        if name in NORMAL_RANGES_MS and values:
            props = classify_intervals(values, NORMAL_RANGES_MS[name])
            summary[name] = {"n": len(values), "range_ms": list(NORMAL_RANGES_MS[name]), **props}
            print(
                f"{name}: n={len(values)} below={props['below']:.2f} "
                f"normal={props['normal']:.2f} above={props['above']:.2f}"
            )
    (out / "intervals_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _snapshot(cfg, out)
    return 0


def _cmd_report(args, cfg: dict) -> int:
    eval_path = Path(args.eval_json)
    if not eval_path.exists():
        raise FileNotFoundError(f"evaluation file {eval_path} not found")
    payload = json.loads(eval_path.read_text())
    out = _out_dir(args, cfg, "report")
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"sign convention: {payload.get('sign_convention', '?')}"]
    header = f"{'dataset':<14}{'view':<8}{'event':<6}{'n':>5}{'FD':>9}{'std':>8}{'aFD':>8}{'aFD ms':>9}"
    lines.append(header)
    for row in payload.get("rows", []):
        fd = "-" if row["fd_mean"] is None else f"{row['fd_mean']:.2f}"
        std = "-" if row["fd_std"] is None else f"{row['fd_std']:.2f}"
        afd = "-" if row["afd"] is None else f"{row['afd']:.2f}"
        afd_ms = "-" if row["afd_ms"] is None else f"{row['afd_ms']:.1f}"
        lines.append(
            f"{row['dataset']:<14}{row['view']:<8}{row['event']:<6}{row['n']:>5}{fd:>9}{std:>8}{afd:>8}{afd_ms:>9}"
        )
    (out / "tables.txt").write_text("\n".join(lines) + "\n")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for key, hist in payload.get("histograms", {}).items():
        if not hist:
            continue
        bins = sorted(int(k) for k in hist)
        props = [hist[str(k)] for k in bins]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(bins, props, width=0.9, color="#47708f")
        ax.set_xlabel("frame error")
        ax.set_ylabel("proportion")
        ax.set_title(key)
        fig.tight_layout()
        fig.savefig(out / f"hist_{key.replace('/', '_')}.png", dpi=120)
        plt.close(fig)
    print(f"report: {out}")
    _snapshot(cfg, out)
    return 0


def _cmd_complexity(args, cfg: dict) -> int:
    scale_cfg = dict(cfg.get("model", {}), scale=args.scale)
    if args.model == "classification":
        net_cfg = _model_config(scale_cfg, "classification")
        model = build_classification_net(net_cfg)
        rf = receptive_field(net_cfg)
        print(f"model: classification ({args.scale} scale)")
        print(f"parameters: {count_parameters(model)}")
        print(f"receptive_field: {rf[0]} {rf[1]} {rf[2]}")
        if args.flops:
            shape = (args.flops, net_cfg.image_size, net_cfg.image_size)
            per_frame_mac = estimate_flops(model, shape, flops_per_mac=1, include_bias=False, per_frame=True)
            total = estimate_flops(model, shape)
            print(f"flops_per_frame_1permac_nobias: {per_frame_mac}")
            print(f"flops_total_2permac_T{args.flops}: {total}")
    else:
        net_cfg = _model_config(scale_cfg, "regression")
        model = build_regression_net(net_cfg)
        print(f"model: regression ({args.scale} scale)")
        print(f"parameters: {count_parameters(model)}")
        if args.flops:
            shape = (args.flops, net_cfg.in_channels, net_cfg.image_size, net_cfg.image_size)
            total = estimate_flops(model, shape)
            print(f"flops_total_2permac_T{args.flops}: {total}")
    return 0


# --- wiring ----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; missing fields default")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY.PATH=VALUE",
        help="dotted config override, value parsed as JSON when possible",
    )
    parser = argparse.ArgumentParser(prog="echotiming", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name: str, **kwargs) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-patients", type=int, default=None)
    p.add_argument("--mode", choices=["triplane", "external", "singleview"], default=None)
    p.set_defaults(func=_cmd_synth)

    p = add_parser("labels", help="materialize label arrays for a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--width", type=int, default=5)
    p.set_defaults(func=_cmd_labels)

    p = add_parser("train", help="train a single cross-validation fold")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=_cmd_train)

    p = add_parser("crossval", help="run the full k-fold protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--parallel-folds", type=int, default=1)
    p.set_defaults(func=_cmd_crossval)

    p = add_parser("infer", help="apply a checkpoint or fold ensemble")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--ensemble", help="crossval run directory with checkpoints/")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_infer)

    p = add_parser("eval", help="score predictions against references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="directory of pred_<id>.json files")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = add_parser("intervals", help="cardiac interval tables from annotations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_intervals)

    p = add_parser("report", help="render tables and histogram plots")
    p.add_argument("--eval-json", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    p = add_parser("complexity", help="parameters / FLOPs / receptive field")
    p.add_argument("--model", choices=["classification", "regression"], default="classification")
    p.add_argument("--scale", choices=["full", "toy"], default="full")
    p.add_argument("--flops", type=int, default=0, metavar="T", help="also estimate FLOPs at sequence length T")
    p.set_defaults(func=_cmd_complexity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.overrides)
        return args.func(args, cfg)
    except FormatError as exc:
        print(f"error:format: {exc}", file=sys.stderr)
        return 5
    except FileNotFoundError as exc:
        print(f"error:missing-path: {exc}", file=sys.stderr)
        return 4
    except DatasetError as exc:
        print(f"error:missing-path: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, MotionProgramError, ValueError, TypeError) as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
