import filecmp
import json
import math
import os

import numpy as np
import pytest

from servosim.dataset import (IoUReport, Manifest, generate_dataset, score_masks,
                              validate_dataset)
from servosim.estimate import estimate_gt
from servosim.geometry import DEFAULT_INTRINSICS, Pose4
from servosim.render import load_image, load_mask, render_with_mask, save_mask, quantize
from servosim.scene import RandomizationConfig, sample_scene


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "set"
    config = RandomizationConfig(distractor_count=(0, 2))
    manifest = generate_dataset(config, 6, seed=42, out_dir=out)
    return out, config, manifest


def tree_files(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            out[os.path.relpath(path, root)] = path
    return out


def test_empty_dataset(tmp_path):
    manifest = generate_dataset(RandomizationConfig(), 0, 1, tmp_path / "empty")
    assert manifest.sample_count == 0
    report = validate_dataset(tmp_path / "empty")
    assert report.ok


def test_layout_and_manifest(small_dataset):
    out, config, manifest = small_dataset
    assert manifest.sample_count == 6
    assert manifest.image_size == (64, 64)
    with open(out / "manifest.json", encoding="utf-8") as fh:
        loaded = Manifest.from_dict(json.load(fh))
    assert loaded == manifest
    sample = out / "samples" / "000003"
    for name in ("bottleneck.png", "mask_bot.png", "label.json"):
        assert (sample / name).exists()
    for k in range(4):
        assert (sample / f"live_{k}.png").exists()
        assert (sample / f"mask_live_{k}.png").exists()


def test_regeneration_bit_identical(tmp_path):
    config = RandomizationConfig(distractor_count=(0, 2))
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_dataset(config, 4, seed=9, out_dir=a)
    generate_dataset(config, 4, seed=9, out_dir=b)
    fa, fb = tree_files(a), tree_files(b)
    assert fa.keys() == fb.keys()
    for rel in fa:
        assert filecmp.cmp(fa[rel], fb[rel], shallow=False), rel


def test_labels_match_estimate_gt(small_dataset):
    out, _, manifest = small_dataset
    for index in range(manifest.sample_count):
        with open(out / "samples" / f"{index:06d}" / "label.json", encoding="utf-8") as fh:
            doc = json.load(fh)
        assert len(doc["labels"]) == 4
        for label in doc["labels"]:
            est = estimate_gt(Pose4.from_sequence(label["live_pose"]),
                              Pose4.from_sequence(label["bottleneck_pose"]),
                              tuple(doc["target_xy"]), DEFAULT_INTRINSICS)
            assert label["e_x"] == pytest.approx(est.e_x, abs=1e-6)
            assert label["e_y"] == pytest.approx(est.e_y, abs=1e-6)
            assert label["e_s"] == pytest.approx(est.e_s, abs=1e-6)
            assert label["e_r"] == pytest.approx(est.e_r, abs=1e-6)


def test_bottleneck_contains_target_only(small_dataset):
    out, config, manifest = small_dataset
    for index in range(manifest.sample_count):
        sdir = out / "samples" / f"{index:06d}"
        with open(sdir / "label.json", encoding="utf-8") as fh:
            doc = json.load(fh)
        scene = sample_scene(config, doc["scene_seed"])
        bot_pose = Pose4.from_sequence(doc["labels"][0]["bottleneck_pose"])
        img, _ = render_with_mask(scene.without_distractors(), bot_pose, DEFAULT_INTRINSICS)
        assert np.array_equal(load_image(sdir / "bottleneck.png"), quantize(img))


def test_validate_passes(small_dataset):
    out, *_ = small_dataset
    report = validate_dataset(out)
    assert report.ok, report.failure


def test_validate_detects_corrupt_label(tmp_path):
    config = RandomizationConfig(distractor_count=(0, 0))
    out = tmp_path / "set"
    generate_dataset(config, 3, seed=5, out_dir=out)
    label_path = out / "samples" / "000001" / "label.json"
    with open(label_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["labels"][2]["e_s"] += 0.01
    with open(label_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    report = validate_dataset(out)
    assert not report.ok
    assert "000001" in report.failure and "e_s" in report.failure


def test_validate_detects_truncation(tmp_path):
    config = RandomizationConfig(distractor_count=(0, 0))
    out = tmp_path / "set"
    generate_dataset(config, 3, seed=5, out_dir=out)
    import shutil
    shutil.rmtree(out / "samples" / "000002")
    report = validate_dataset(out)
    assert not report.ok
    assert "count" in report.failure


def test_validate_requires_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        validate_dataset(tmp_path / "nothing")


def test_score_masks_identity(small_dataset, tmp_path):
    out, *_ = small_dataset
    report = score_masks(out, out)
    assert report.mean_iou == 1.0
    assert all(s.iou == 1.0 for s in report.scores)


def test_score_masks_disjoint(small_dataset, tmp_path):
    out, _, manifest = small_dataset
    pred = tmp_path / "pred"
    for index in range(manifest.sample_count):
        sdir = pred / "samples" / f"{index:06d}"
        os.makedirs(sdir)
        for k in range(4):
            gt = load_mask(out / "samples" / f"{index:06d}" / f"mask_live_{k}.png")
            save_mask(~gt, sdir / f"mask_live_{k}.png")
    report = score_masks(pred, out)
    assert report.mean_iou == 0.0


def test_score_masks_hand_counts(tmp_path):
    # synthetic two-sample dataset with hand-checkable IoU values
    config = RandomizationConfig(distractor_count=(0, 0))
    gt_dir = tmp_path / "gt"
    generate_dataset(config, 1, seed=3, out_dir=gt_dir)
    pred = tmp_path / "pred"
    sdir = pred / "samples" / "000000"
    os.makedirs(sdir)
    wants = []
    for k in range(4):
        gt = load_mask(gt_dir / "samples" / "000000" / f"mask_live_{k}.png")
        pred_mask = gt.copy()
        pred_mask[:32] = False  # drop the top half
        save_mask(pred_mask, sdir / f"mask_live_{k}.png")
        inter = int((gt & pred_mask).sum())
        union = int((gt | pred_mask).sum())
        wants.append(1.0 if union == 0 else inter / union)
    report = score_masks(pred, gt_dir)
    for k in range(4):
        assert report.scores[k].iou == pytest.approx(wants[k])


def test_score_masks_missing_prediction(small_dataset, tmp_path):
    out, *_ = small_dataset
    with pytest.raises(FileNotFoundError):
        score_masks(tmp_path / "missing", out)


def test_score_masks_distractor_split(tmp_path):
    config = RandomizationConfig(distractor_count=(0, 1))
    gt_dir = tmp_path / "gt"
    n = 8
    generate_dataset(config, n, seed=11, out_dir=gt_dir)
    report = score_masks(gt_dir, gt_dir)
    flags = {s.has_distractors for s in report.scores}
    if len(flags) == 2:
        assert report.mean_iou_with_distractors == 1.0
        assert report.mean_iou_without_distractors == 1.0
