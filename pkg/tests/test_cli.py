import json
import math
import os

import pytest

from servosim.cli import main


def write_config(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
    return str(path)


def test_demo_and_deploy_success(tmp_path, capsys):
    demo_dir = tmp_path / "demo"
    assert main(["demo", "--out", str(demo_dir), "--seed", "5"]) == 0
    assert (demo_dir / "demo.json").exists()
    assert (demo_dir / "bottleneck.png").exists()
    assert (demo_dir / "mask.png").exists()
    capsys.readouterr()

    cfg = write_config(tmp_path / "cfg.json", {"estimator": "gt", "seed": 3})
    rc = main(["deploy", "--demo", str(demo_dir), "--config", cfg])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["success"] is True
    assert summary["position_error_m"] < 0.005


def test_deploy_failure_exit_code(tmp_path):
    demo_dir = tmp_path / "demo"
    assert main(["demo", "--out", str(demo_dir), "--seed", "5"]) == 0
    # a 3-step budget cannot reach the bottleneck
    cfg = write_config(tmp_path / "cfg.json",
                       {"estimator": "gt", "seed": 3, "max_steps": 3})
    assert main(["deploy", "--demo", str(demo_dir), "--config", cfg]) == 1


def test_deploy_missing_demo_is_config_error(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {"estimator": "gt"})
    assert main(["deploy", "--demo", str(tmp_path / "nope"), "--config", cfg]) == 2


def test_bad_estimator_is_config_error(tmp_path):
    demo_dir = tmp_path / "demo"
    assert main(["demo", "--out", str(demo_dir)]) == 0
    cfg = write_config(tmp_path / "cfg.json", {"estimator": "wizard"})
    assert main(["deploy", "--demo", str(demo_dir), "--config", cfg]) == 2


def test_gen_and_validate_data(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["gen-data", "--out", str(out), "--count", "3", "--seed", "2"]) == 0
    assert main(["validate-data", str(out)]) == 0
    # corrupt one label -> exit 1
    label = out / "samples" / "000000" / "label.json"
    doc = json.loads(label.read_text(encoding="utf-8"))
    doc["labels"][0]["e_x"] += 1.0
    label.write_text(json.dumps(doc), encoding="utf-8")
    assert main(["validate-data", str(out)]) == 1


def test_seg_score(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["gen-data", "--out", str(out), "--count", "2", "--seed", "4"]) == 0
    report_path = tmp_path / "iou.json"
    rc = main(["seg-score", "--pred", str(out), "--gt", str(out),
               "--out", str(report_path)])
    assert rc == 0
    doc = json.loads(report_path.read_text(encoding="utf-8"))
    assert doc["mean_iou"] == 1.0


def test_eval_noise_writes_report(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "estimator": "gt", "episodes": 2, "seed": 1, "noise_kinds": ["perfect"],
    })
    stem = tmp_path / "reports" / "noise"
    assert main(["eval-noise", "--config", cfg, "--out", str(stem)]) == 0
    assert (tmp_path / "reports" / "noise.csv").exists()
    assert (tmp_path / "reports" / "noise.json").exists()


def test_eval_gains_writes_report(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", {
        "estimator": "gt", "seed": 1, "multipliers": [5.0], "episodes": 2,
    })
    stem = tmp_path / "gains"
    assert main(["eval-gains", "--config", cfg, "--out", str(stem)]) == 0
    doc = json.loads((tmp_path / "gains.json").read_text(encoding="utf-8"))
    assert doc["groups"][0]["name"] == "x5"


def test_benchmark_cli(tmp_path):
    demo_dir = tmp_path / "demo"
    assert main(["demo", "--out", str(demo_dir), "--seed", "6"]) == 0
    cfg = write_config(tmp_path / "cfg.json", {"estimator": "gt", "seed": 2})
    stem = tmp_path / "bench"
    assert main(["benchmark", "--config", cfg, "--demo", str(demo_dir),
                 "--out", str(stem)]) == 0
    doc = json.loads((tmp_path / "bench.json").read_text(encoding="utf-8"))
    names = {g["name"] for g in doc["groups"]}
    assert names == {"no_distractors", "distractors"}


def test_seed_flag_overrides_config(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    cfg = write_config(tmp_path / "cfg.json", {"seed": 1})
    assert main(["gen-data", "--config", cfg, "--out", str(out_a), "--count", "1",
                 "--seed", "9"]) == 0
    assert main(["gen-data", "--out", str(out_b), "--count", "1", "--seed", "9"]) == 0
    a = (out_a / "samples" / "000000" / "label.json").read_text(encoding="utf-8")
    b = (out_b / "samples" / "000000" / "label.json").read_text(encoding="utf-8")
    assert a == b
