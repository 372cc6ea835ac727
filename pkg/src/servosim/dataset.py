"""Synthetic dataset pipeline: bottleneck/live image-mask-label tuples for
training external models, plus mask-prediction IoU scoring.

Layout:
    out/manifest.json
    out/samples/000000/{bottleneck.png, mask_bot.png,
                        live_0.png..live_3.png, mask_live_0..3.png,
                        label.json}

The manifest is written last and doubles as the completion marker.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .estimate import estimate_gt, iou
from .geometry import DEFAULT_INTRINSICS, Intrinsics, Pose4
from .render import load_mask, render_with_mask, save_image, save_mask
from .scene import RandomizationConfig, Scene, sample_scene

SCHEMA_VERSION = 1
LIVE_VIEWS = 4
LIVE_HEIGHT_RANGE = (0.30, 0.60)  # m, brackets the 0.45 m start height
BOTTLENECK_HEIGHT_RANGE = (0.22, 0.32)  # m
BOTTLENECK_XY_JITTER = 0.01  # m, keeps the target roughly centered


@dataclass(frozen=True)
class Manifest:
    schema_version: int
    sample_count: int
    image_size: tuple[int, int]  # (width, height)
    config: dict
    master_seed: int

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "sample_count": self.sample_count,
            "image_size": list(self.image_size),
            "config": self.config,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        return cls(
            schema_version=data["schema_version"],
            sample_count=data["sample_count"],
            image_size=tuple(data["image_size"]),
            config=data["config"],
            master_seed=data["master_seed"],
        )


def _derived_seed(master_seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([master_seed, index, stream]).generate_state(1)[0])


def _sample_bottleneck_pose(rng: np.random.Generator, scene: Scene,
                            config: RandomizationConfig) -> Pose4:
    x, y, _ = scene.target.pose2
    return Pose4(
        x + rng.uniform(-BOTTLENECK_XY_JITTER, BOTTLENECK_XY_JITTER),
        y + rng.uniform(-BOTTLENECK_XY_JITTER, BOTTLENECK_XY_JITTER),
        rng.uniform(*BOTTLENECK_HEIGHT_RANGE),
        rng.uniform(-config.workspace.rotation_range, config.workspace.rotation_range),
    )


def _sample_live_pose(rng: np.random.Generator, config: RandomizationConfig) -> Pose4:
    ws = config.workspace
    return Pose4(
        rng.uniform(-ws.x_extent / 2, ws.x_extent / 2),
        rng.uniform(-ws.y_extent / 2, ws.y_extent / 2),
        rng.uniform(*LIVE_HEIGHT_RANGE),
        rng.uniform(-ws.rotation_range, ws.rotation_range),
    )


def _sample_dir(out_dir, index: int) -> str:
    return os.path.join(out_dir, "samples", f"{index:06d}")


def generate_dataset(config: RandomizationConfig, n: int, seed: int, out_dir,
                     intr: Intrinsics = DEFAULT_INTRINSICS) -> Manifest:
    """Write ``n`` samples. Per sample: a scene is drawn, the bottleneck view
    is rendered before distractors enter, then four live views of the full
    scene, with servo-error labels computed from the true poses. Bit-identical
    for identical (config, n, seed)."""
    if n < 0:
        raise ConfigError("sample count must be >= 0")
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    for index in range(n):
        _write_sample(config, seed, index, out_dir, intr)
    manifest = Manifest(
        schema_version=SCHEMA_VERSION,
        sample_count=n,
        image_size=(intr.width, intr.height),
        config=config.to_dict(),
        master_seed=seed,
    )
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
    return manifest


def _write_sample(config: RandomizationConfig, master_seed: int, index: int,
                  out_dir, intr: Intrinsics) -> None:
    scene_seed = _derived_seed(master_seed, index, 0)
    scene = sample_scene(config, scene_seed)
    rng = np.random.default_rng(_derived_seed(master_seed, index, 1))

    sdir = _sample_dir(out_dir, index)
    os.makedirs(sdir, exist_ok=True)

    bottleneck_pose = _sample_bottleneck_pose(rng, scene, config)
    bot_img, bot_mask = render_with_mask(scene.without_distractors(), bottleneck_pose, intr)
    save_image(bot_img, os.path.join(sdir, "bottleneck.png"))
    save_mask(bot_mask, os.path.join(sdir, "mask_bot.png"))

    target_xy = (scene.target.pose2[0], scene.target.pose2[1])
    labels = []
    for k in range(LIVE_VIEWS):
        live_pose = _sample_live_pose(rng, config)
        live_img, live_mask = render_with_mask(scene, live_pose, intr)
        save_image(live_img, os.path.join(sdir, f"live_{k}.png"))
        save_mask(live_mask, os.path.join(sdir, f"mask_live_{k}.png"))
        est = estimate_gt(live_pose, bottleneck_pose, target_xy, intr)
        labels.append({
            "e_x": est.e_x,
            "e_y": est.e_y,
            "e_s": est.e_s,
            "e_r": est.e_r,
            "live_pose": list(live_pose.as_tuple()),
            "bottleneck_pose": list(bottleneck_pose.as_tuple()),
            "object_id": index,
        })
    doc = {
        "object_id": index,
        "scene_seed": scene_seed,
        "target_xy": list(target_xy),
        "num_distractors": len(scene.distractors),
        "labels": labels,
    }
    with open(os.path.join(sdir, "label.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    samples_checked: int
    failure: str | None = None


LABEL_TOLERANCE = 1e-6


def validate_dataset(dataset_dir, intr: Intrinsics | None = None) -> ValidationReport:
    """Check sample count, image dimensions, mask/image pairing, and that
    every stored label reproduces from its stored poses."""
    manifest_path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = Manifest.from_dict(json.load(fh))
    if manifest.schema_version != SCHEMA_VERSION:
        return ValidationReport(False, 0, f"unrecognized schema version {manifest.schema_version}")
    width, height = manifest.image_size
    if intr is None:
        intr = Intrinsics(width=width, height=height)

    samples_root = os.path.join(dataset_dir, "samples")
    present = sorted(os.listdir(samples_root)) if os.path.isdir(samples_root) else []
    if len(present) != manifest.sample_count:
        return ValidationReport(
            False, 0,
            f"sample count mismatch: manifest says {manifest.sample_count}, found {len(present)}")

    for index in range(manifest.sample_count):
        sdir = _sample_dir(dataset_dir, index)
        where = f"sample {index:06d}"
        try:
            files = ["bottleneck.png", "mask_bot.png"]
            files += [f"live_{k}.png" for k in range(LIVE_VIEWS)]
            files += [f"mask_live_{k}.png" for k in range(LIVE_VIEWS)]
            for name in files:
                path = os.path.join(sdir, name)
                if not os.path.exists(path):
                    return ValidationReport(False, index, f"{where}: missing {name}")
            for k in range(LIVE_VIEWS):
                mask = load_mask(os.path.join(sdir, f"mask_live_{k}.png"))
                if mask.shape != (height, width):
                    return ValidationReport(
                        False, index, f"{where}: mask_live_{k}.png has shape {mask.shape}")
            with open(os.path.join(sdir, "label.json"), encoding="utf-8") as fh:
                doc = json.load(fh)
            labels = doc["labels"]
            if len(labels) != LIVE_VIEWS:
                return ValidationReport(False, index, f"{where}: expected {LIVE_VIEWS} labels")
            target_xy = tuple(doc["target_xy"])
            for k, label in enumerate(labels):
                live_pose = Pose4.from_sequence(label["live_pose"])
                bot_pose = Pose4.from_sequence(label["bottleneck_pose"])
                est = estimate_gt(live_pose, bot_pose, target_xy, intr)
                for fld, got in (("e_x", est.e_x), ("e_y", est.e_y),
                                 ("e_s", est.e_s), ("e_r", est.e_r)):
                    if not math.isclose(label[fld], got, abs_tol=LABEL_TOLERANCE):
                        return ValidationReport(
                            False, index,
                            f"{where}: label {k} field {fld} = {label[fld]}, recomputed {got}")
        except (OSError, ValueError, KeyError) as exc:
            return ValidationReport(False, index, f"{where}: {exc}")
    return ValidationReport(True, manifest.sample_count)


@dataclass(frozen=True)
class MaskScore:
    sample: int
    view: int
    iou: float
    has_distractors: bool


@dataclass(frozen=True)
class IoUReport:
    scores: tuple[MaskScore, ...]
    mean_iou: float
    mean_iou_with_distractors: float | None
    mean_iou_without_distractors: float | None

    def to_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "mean_iou_with_distractors": self.mean_iou_with_distractors,
            "mean_iou_without_distractors": self.mean_iou_without_distractors,
            "scores": [
                {"sample": s.sample, "view": s.view, "iou": s.iou,
                 "has_distractors": s.has_distractors}
                for s in self.scores
            ],
        }


def score_masks(pred_dir, gt_dir) -> IoUReport:
    """Mean IoU of predicted live masks against a generated dataset's ground
    truth, split by whether the sample's scene contains distractors. The
    prediction directory mirrors the dataset layout
    (samples/NNNNNN/mask_live_K.png)."""
    manifest_path = os.path.join(gt_dir, "manifest.json")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = Manifest.from_dict(json.load(fh))
    scores = []
    for index in range(manifest.sample_count):
        gt_sdir = _sample_dir(gt_dir, index)
        pred_sdir = _sample_dir(pred_dir, index)
        if not os.path.isdir(pred_sdir):
            raise FileNotFoundError(f"prediction directory missing sample {index:06d}")
        with open(os.path.join(gt_sdir, "label.json"), encoding="utf-8") as fh:
            doc = json.load(fh)
        has_distractors = doc["num_distractors"] > 0
        for k in range(LIVE_VIEWS):
            gt_mask = load_mask(os.path.join(gt_sdir, f"mask_live_{k}.png"))
            pred_path = os.path.join(pred_sdir, f"mask_live_{k}.png")
            if not os.path.exists(pred_path):
                raise FileNotFoundError(f"missing prediction {pred_path}")
            pred_mask = load_mask(pred_path)
            scores.append(MaskScore(index, k, iou(pred_mask, gt_mask), has_distractors))
    with_d = [s.iou for s in scores if s.has_distractors]
    without_d = [s.iou for s in scores if not s.has_distractors]
    every = [s.iou for s in scores]
    return IoUReport(
        scores=tuple(scores),
        mean_iou=float(np.mean(every)) if every else 1.0,
        mean_iou_with_distractors=float(np.mean(with_d)) if with_d else None,
        mean_iou_without_distractors=float(np.mean(without_d)) if without_d else None,
    )
