"""Command-line surface: subcommands, config plumbing, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from echotiming.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synthesize"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_complexity_reports_full_scale_architecture(capsys):
    code, out, _ = run(["complexity", "--model", "classification", "--scale", "full"], capsys)
    assert code == 0
    lines = dict(
        line.split(": ", 1) for line in out.strip().splitlines() if ": " in line
    )
    assert lines["parameters"] == "1716550"
    assert lines["receptive_field"] == "11 67 67"


def test_complexity_flops_flag(capsys):
    code, out, _ = run(
        ["complexity", "--model", "classification", "--scale", "toy", "--flops", "3"], capsys
    )
    assert code == 0
    assert "flops_per_frame_1permac_nobias:" in out
    assert "flops_total_2permac_T3:" in out


def test_synth_writes_dataset_and_is_deterministic(tmp_path, capsys):
    argv = [
        "synth",
        "--seed",
        "19",
        "--n-patients",
        "2",
        "--set",
        "synth.preset=toy",
        "--out",
    ]
    code1, out1, _ = run(argv + [tmp_path / "a"], capsys)
    code2, out2, _ = run(argv + [tmp_path / "b"], capsys)
    assert code1 == code2 == 0
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    digest1 = [l for l in out1.splitlines() if l.startswith("manifest_digest:")]
    digest2 = [l for l in out2.splitlines() if l.startswith("manifest_digest:")]
    assert digest1 == digest2 and digest1
    recs = sorted(p.name for p in (tmp_path / "a").glob("rec_*.npy"))
    assert len(recs) == 6  # 2 patients x 3 views
    assert (tmp_path / "a/config.json").exists()


def test_config_file_and_overrides(tmp_path, capsys):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"synth": {"preset": "toy", "n_patients": 1}}))
    code, out, _ = run(
        ["synth", "--config", cfg_file, "--set", "synth.mode=external", "--out", tmp_path / "ds"],
        capsys,
    )
    assert code == 0
    manifest = json.loads((tmp_path / "ds/manifest.json").read_text())
    assert len(manifest["entries"]) == 1  # external mode: APLAX only
    assert manifest["entries"][0]["view"] == "APLAX"
    snapshot = json.loads((tmp_path / "ds/config.json").read_text())
    assert snapshot["synth"]["mode"] == "external"
    assert snapshot["synth"]["n_patients"] == 1


def test_bad_config_exits_3(tmp_path, capsys):
    code, _, err = run(["synth", "--set", "synth.preset=bogus", "--out", tmp_path / "x"], capsys)
    assert code == 3
    assert err.startswith("error:config:")
    code, _, err = run(["synth", "--set", "not-an-assignment", "--out", tmp_path / "y"], capsys)
    assert code == 3


def test_missing_manifest_exits_4(tmp_path, capsys):
    code, _, err = run(["labels", "--manifest", tmp_path / "nope.json"], capsys)
    assert code == 4
    assert err.startswith("error:missing-path:")


def test_corrupt_manifest_exits_5(tmp_path, capsys):
    bad = tmp_path / "manifest.json"
    bad.write_text("{\"seed\": 1}")
    code, _, err = run(["labels", "--manifest", bad, "--out", tmp_path / "lab"], capsys)
    assert code == 5
    assert err.startswith("error:format:")
    bad.write_text("{not json")
    code, _, err = run(["labels", "--manifest", bad, "--out", tmp_path / "lab"], capsys)
    assert code == 5


def test_pipeline_train_infer_eval_report(tiny_dataset, tmp_path, capsys):
    manifest = tiny_dataset.root / "manifest.json"
    fast = [
        "--set",
        "model.scale=toy",
        "--set",
        "train.max_epochs=2",
        "--set",
        "train.patience=1",
        "--set",
        "train.batch_size=2",
    ]
    code, out, _ = run(
        ["train", "--manifest", manifest, "--fold", "0", "--k", "3", "--out", tmp_path / "run"]
        + fast,
        capsys,
    )
    assert code == 0
    ckpt = tmp_path / "run/checkpoints/checkpoint_fold0.pt"
    assert ckpt.exists()
    assert (tmp_path / "run/foldplan.json").exists()
    assert (tmp_path / "run/checkpoints/history_fold0.csv").exists()

    code, out, _ = run(
        ["infer", "--manifest", manifest, "--checkpoint", ckpt, "--out", tmp_path / "preds"],
        capsys,
    )
    assert code == 0
    preds = sorted((tmp_path / "preds").glob("pred_*.json"))
    assert len(preds) == 6
    payload = json.loads(preds[0].read_text())
    assert payload["source"] == "prediction"
    assert "diagnostics" in payload

    code, out, _ = run(
        ["eval", "--manifest", manifest, "--pred", tmp_path / "preds", "--out", tmp_path / "ev"],
        capsys,
    )
    assert code == 0
    assert (tmp_path / "ev/evaluation.csv").exists()
    assert (tmp_path / "ev/evaluation.json").exists()
    assert "MVC" in out

    code, out, _ = run(
        ["report", "--eval-json", tmp_path / "ev/evaluation.json", "--out", tmp_path / "rep"],
        capsys,
    )
    assert code == 0
    assert (tmp_path / "rep/tables.txt").exists()

    code, out, _ = run(
        ["intervals", "--manifest", manifest, "--out", tmp_path / "iv"], capsys
    )
    assert code == 0
    assert (tmp_path / "iv/intervals.csv").exists()
    summary = json.loads((tmp_path / "iv/intervals_summary.json").read_text())
    for name, stats in summary.items():
        assert stats["n"] > 0
        total = stats["below"] + stats["normal"] + stats["above"]
        assert total == pytest.approx(1.0)


def test_crossval_writes_reports(tiny_dataset, tmp_path, capsys):
    manifest = tiny_dataset.root / "manifest.json"
    code, out, _ = run(
        [
            "crossval",
            "--manifest",
            manifest,
            "--k",
            "3",
            "--out",
            tmp_path / "cv",
            "--set",
            "model.scale=toy",
            "--set",
            "train.max_epochs=1",
            "--set",
            "train.patience=0",
            "--set",
            "train.batch_size=2",
        ],
        capsys,
    )
    assert code == 3  # patience must be positive
    code, out, _ = run(
        [
            "crossval",
            "--manifest",
            manifest,
            "--k",
            "3",
            "--out",
            tmp_path / "cv",
            "--set",
            "model.scale=toy",
            "--set",
            "train.max_epochs=2",
            "--set",
            "train.patience=1",
            "--set",
            "train.batch_size=2",
        ],
        capsys,
    )
    assert code == 0
    assert (tmp_path / "cv/reports/evaluation.csv").exists()
    assert len(list((tmp_path / "cv/checkpoints").glob("checkpoint_fold*.pt"))) == 3
    assert len(list((tmp_path / "cv/predictions").glob("pred_*.json"))) == 6


def test_infer_requires_exactly_one_source(tiny_dataset, tmp_path, capsys):
    manifest = tiny_dataset.root / "manifest.json"
    code, _, err = run(["infer", "--manifest", manifest, "--out", tmp_path / "p"], capsys)
    assert code == 3
    code, _, err = run(
        [
            "infer",
            "--manifest",
            manifest,
            "--checkpoint",
            "x.pt",
            "--ensemble",
            "run",
            "--out",
            tmp_path / "p",
        ],
        capsys,
    )
    assert code == 3
