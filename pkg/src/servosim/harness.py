"""Experiment runner: noise/gain ablations and the deployment benchmark,
with CSV + JSON reporting.

Per-episode seeds are derived from the experiment seed so sweeps are
reproducible and episodes can run on worker processes without shared state;
report rows always follow episode order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import control
from .control import (BottleneckThresholds, EpisodeResult, Gains,
                      SuccessTolerance, base_gains, deploy, run_servo)
from .errors import ConfigError
from .estimate import rotation_by_template, rotational_self_iou
from .geometry import DEFAULT_INTRINSICS, Intrinsics, Pose4, compose
from .noise import NOISE_KINDS, NoiseSetting
from .render import render_with_mask
from .scene import (RandomizationConfig, Scene, designed_target, sample_eval_poses,
                    sample_scene)

REPORT_SCHEMA_VERSION = 1

CSV_COLUMNS = ("group", "episode", "seed", "reached", "steps",
               "position_error_m", "yaw_error_rad", "success")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs; JSON-serializable and hashable enough to
    reproduce a report bit-for-bit (wall-clock aside)."""

    estimator: str = "handcrafted"  # "gt" | "handcrafted" | "external"
    endpoint: dict | None = None  # protocol.EstimatorEndpoint.to_dict() form
    gains: Gains = field(default_factory=lambda: base_gains(multiplier=5.0))
    multipliers: tuple[float, ...] = (1.0, 3.0, 5.0, 7.0)
    noise: NoiseSetting = field(default_factory=NoiseSetting)
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    episodes: int = 50
    seed: int = 0
    scene: RandomizationConfig = field(default_factory=lambda: RandomizationConfig(
        distractor_count=(0, 0), shape_radius=(0.040, 0.048)))
    benchmark_distractors: int = 3
    bottleneck_offset: Pose4 = control.DEFAULT_BOTTLENECK_OFFSET
    start_height: float = control.START_HEIGHT
    randomize_start: bool = True
    randomize_start_yaw: bool = True
    dt: float = control.DEFAULT_DT
    max_steps: int = control.DEFAULT_MAX_STEPS
    thresholds: BottleneckThresholds = field(default_factory=BottleneckThresholds)
    success: SuccessTolerance = field(default_factory=SuccessTolerance)
    orientable_targets: bool = True
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.estimator not in ("gt", "handcrafted", "external"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "external" and self.endpoint is None:
            raise ConfigError("external estimator needs an endpoint")
        if self.episodes < 1:
            raise ConfigError("episode count must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for kind in self.noise_kinds:
            if kind not in NOISE_KINDS:
                raise ConfigError(f"unknown noise kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "endpoint": self.endpoint,
            "gains": self.gains.to_dict(),
            "multipliers": list(self.multipliers),
            "noise": self.noise.to_dict(),
            "noise_kinds": list(self.noise_kinds),
            "episodes": self.episodes,
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "benchmark_distractors": self.benchmark_distractors,
            "bottleneck_offset": list(self.bottleneck_offset.as_tuple()),
            "start_height": self.start_height,
            "randomize_start": self.randomize_start,
            "randomize_start_yaw": self.randomize_start_yaw,
            "dt": self.dt,
            "max_steps": self.max_steps,
            "thresholds": self.thresholds.to_dict(),
            "success": self.success.to_dict(),
            "orientable_targets": self.orientable_targets,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        kwargs: dict = {}
        simple = ("estimator", "endpoint", "episodes", "seed", "benchmark_distractors",
                  "start_height", "randomize_start", "randomize_start_yaw",
                  "dt", "max_steps", "jobs", "orientable_targets")
        for key in simple:
            if key in data:
                kwargs[key] = data[key]
        if "gains" in data:
            kwargs["gains"] = Gains.from_dict(data["gains"])
        if "multipliers" in data:
            kwargs["multipliers"] = tuple(data["multipliers"])
        if "noise" in data:
            kwargs["noise"] = NoiseSetting.from_dict(data["noise"])
        if "noise_kinds" in data:
            kwargs["noise_kinds"] = tuple(data["noise_kinds"])
        if "scene" in data:
            kwargs["scene"] = RandomizationConfig.from_dict(data["scene"])
        if "bottleneck_offset" in data:
            kwargs["bottleneck_offset"] = Pose4.from_sequence(data["bottleneck_offset"])
        if "thresholds" in data:
            kwargs["thresholds"] = BottleneckThresholds.from_dict(data["thresholds"])
        if "success" in data:
            kwargs["success"] = SuccessTolerance.from_dict(data["success"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _episode_seed(config_seed: int, label: str, index: int) -> int:
    tag = sum(ord(ch) for ch in label)
    return int(np.random.SeedSequence([config_seed, tag, index]).generate_state(1)[0])


ROTATION_PROBE_DEG = (2.2, 2.6, 3.0)


def rotation_resolvable(scene: Scene, bottleneck_offset: Pose4,
                        intr: Intrinsics = DEFAULT_INTRINSICS,
                        probe_deg: tuple[float, ...] = ROTATION_PROBE_DEG,
                        symmetry_max: float = 0.9) -> bool:
    """True when the target carries enough angular signal for the hand-crafted
    estimator: the bottleneck view is non-symmetric (rotational self-IoU below
    symmetry_max away from zero) and a probe_deg yaw offset yields a nonzero
    rotation readout at several sub-pixel camera alignments. Near-symmetric
    targets make the final yaw of a servoed episode meaningless, which is why
    angle aggregates use the median; suites that assert per-episode yaw
    accuracy select resolvable targets instead. Demonstration targets for
    deployment should use a stricter symmetry_max (around 0.7): the live and
    demo masks rasterize on different grids, which lowers the true template
    peak enough for a near-symmetric alias peak to compete."""
    bottleneck = compose(scene.target.pose4(), bottleneck_offset)
    target_only = scene.without_distractors()
    _, mask_bot = render_with_mask(target_only, bottleneck, intr)
    if not mask_bot.any():
        return False
    if max(rotational_self_iou(mask_bot, math.radians(d))
           for d in range(15, 181, 15)) >= symmetry_max:
        return False
    half_px = 0.5 * bottleneck.z / intr.focal
    offsets = ((0.0, 0.0), (half_px, 0.0), (0.0, half_px), (-half_px, 0.0),
               (0.0, -half_px), (half_px, half_px), (-half_px, -half_px))
    for dx, dy in offsets:
        for deg in probe_deg:
            for sign in (1.0, -1.0):
                cam = Pose4(bottleneck.x + dx, bottleneck.y + dy, bottleneck.z,
                            bottleneck.yaw + sign * math.radians(deg))
                _, mask_live = render_with_mask(target_only, cam, intr)
                if not mask_live.any():
                    return False
                if rotation_by_template(mask_live, mask_bot) == 0.0:
                    return False
    return True


def _sample_resolvable_scene(config: "ExperimentConfig", rng: np.random.Generator) -> Scene:
    """Draw scenes until one passes the orientability probe (when enabled);
    the rng stream makes the skipping deterministic."""
    for _ in range(60):
        scene = sample_scene(config.scene, int(rng.integers(2**31)))
        if not config.orientable_targets:
            return scene
        if rotation_resolvable(scene, config.bottleneck_offset):
            return scene
    raise RuntimeError("could not sample a rotation-resolvable scene")


def _make_estimator(config: ExperimentConfig):
    if config.estimator == "gt":
        return control.GroundTruthEstimator(), None
    if config.estimator == "handcrafted":
        return control.HandcraftedEstimator(), None
    from .protocol import EstimatorEndpoint, ExternalEstimatorClient
    client = ExternalEstimatorClient(EstimatorEndpoint.from_dict(config.endpoint))
    return control.ExternalEstimator(client), client


def _start_pose(config: ExperimentConfig, rng: np.random.Generator) -> Pose4:
    ws = config.scene.workspace
    if not config.randomize_start:
        return Pose4(0.0, 0.0, config.start_height, 0.0)
    yaw = (rng.uniform(-ws.rotation_range, ws.rotation_range)
           if config.randomize_start_yaw else 0.0)
    return Pose4(
        rng.uniform(-ws.x_extent / 2, ws.x_extent / 2),
        rng.uniform(-ws.y_extent / 2, ws.y_extent / 2),
        config.start_height,
        yaw,
    )


@dataclass(frozen=True)
class EpisodeRow:
    group: str
    episode: int
    seed: int
    reached: bool
    steps: int
    position_error: float
    yaw_error: float
    success: bool


@dataclass(frozen=True)
class GroupReport:
    name: str
    rows: tuple[EpisodeRow, ...]
    wall_clock_s: float

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.rows) / len(self.rows)

    @property
    def mean_position_error(self) -> float:
        return float(np.mean([r.position_error for r in self.rows]))

    @property
    def median_yaw_error(self) -> float:
        # the median resists symmetric-object outliers; see aggregate docs
        return float(np.median([r.yaw_error for r in self.rows]))

    def aggregates(self) -> dict:
        return {
            "episodes": len(self.rows),
            "success_rate": self.success_rate,
            "mean_position_error_m": self.mean_position_error,
            "median_yaw_error_rad": self.median_yaw_error,
            "wall_clock_s": self.wall_clock_s,
        }


@dataclass(frozen=True)
class Report:
    groups: tuple[GroupReport, ...]
    config: dict

    def group(self, name: str) -> GroupReport:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config,
            "groups": [{"name": g.name, **g.aggregates()} for g in self.groups],
        }


def _row_from_result(group: str, episode: int, seed: int, result: EpisodeResult) -> EpisodeRow:
    return EpisodeRow(
        group=group,
        episode=episode,
        seed=seed,
        reached=result.reached,
        steps=result.steps,
        position_error=result.position_error,
        yaw_error=result.yaw_error,
        success=result.success,
    )


def _designed_scene(config: "ExperimentConfig", pose2, rng: np.random.Generator) -> Scene:
    """Distractor-free scene around the designed evaluation target, with the
    usual background/brightness randomization."""
    background = tuple(rng.uniform(0.05, 0.90, size=3).tolist())
    brightness = float(rng.uniform(*config.scene.brightness))
    return Scene(target=designed_target(pose2=pose2), background=background,
                 brightness=brightness)


def _run_servo_episode(args) -> EpisodeRow:
    config_dict, group, episode, noise_dict, multiplier, eval_pose = args
    config = ExperimentConfig.from_dict(config_dict)
    seed = _episode_seed(config.seed, group, episode)
    rng = np.random.default_rng(seed)
    if eval_pose is not None:
        scene = _designed_scene(config, tuple(eval_pose), rng)
    else:
        scene = _sample_resolvable_scene(config, rng)
    start = _start_pose(config, rng)
    estimator, client = _make_estimator(config)
    gains = (replace(config.gains, multiplier=multiplier)
             if multiplier is not None else config.gains)
    noise = NoiseSetting.from_dict(noise_dict) if noise_dict is not None else None
    try:
        result = run_servo(
            scene, start, estimator, gains, config.thresholds,
            dt=config.dt, max_steps=config.max_steps,
            bottleneck_offset=config.bottleneck_offset,
            noise=noise, noise_seed=seed, success=config.success,
        )
    finally:
        if client is not None:
            client.close()
    return _row_from_result(group, episode, seed, result)


def _run_episodes(config: ExperimentConfig, specs: list) -> list[EpisodeRow]:
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_run_servo_episode, specs))
    return [_run_servo_episode(s) for s in specs]


def run_noise_ablation(config: ExperimentConfig) -> Report:
    """For each noise setting: ``config.episodes`` servo episodes, each with a
    freshly sampled object, ground-truth masks perturbed by the setting, and
    the configured estimator reading the perturbed masks."""
    if not config.noise_kinds:
        raise ConfigError("noise_kinds must be nonempty")
    groups = []
    for kind in config.noise_kinds:
        noise = replace(config.noise, kind=kind)
        t0 = time.perf_counter()
        specs = [(config.to_dict(), kind, i, noise.to_dict(), None, None)
                 for i in range(config.episodes)]
        rows = _run_episodes(config, specs)
        groups.append(GroupReport(kind, tuple(rows), time.perf_counter() - t0))
    return Report(tuple(groups), config.to_dict())


def run_gain_ablation(config: ExperimentConfig, scenes: int = 15) -> Report:
    """The designed evaluation target deployed on a fixed set of object poses
    (no distractors), repeated at every gain multiplier. Poses, start poses
    and scenes are identical across multipliers; only the gains change."""
    if not config.multipliers:
        raise ConfigError("multipliers must be nonempty")
    cfg = replace(config, scene=replace(config.scene, distractor_count=(0, 0)),
                  episodes=scenes, randomize_start_yaw=False)
    eval_poses = sample_eval_poses(scenes, cfg.scene.workspace, cfg.seed)
    groups = []
    for mult in config.multipliers:
        t0 = time.perf_counter()
        specs = [(cfg.to_dict(), "gains", i, None, float(mult), eval_poses[i])
                 for i in range(scenes)]
        rows = _run_episodes(cfg, specs)
        rows = [replace(r, group=f"x{mult:g}") for r in rows]
        groups.append(GroupReport(f"x{mult:g}", tuple(rows), time.perf_counter() - t0))
    return Report(tuple(groups), config.to_dict())


def _run_deploy_episode(args) -> EpisodeRow:
    config_dict, demo_dir, group, episode, pose2, n_distractors = args
    config = ExperimentConfig.from_dict(config_dict)
    demo = control.load_demo(demo_dir)
    seed = _episode_seed(config.seed, group, episode)
    rng = np.random.default_rng(seed)
    target = demo.target.at_pose(pose2)
    distractors = []
    if n_distractors > 0:
        donor = sample_scene(
            replace(config.scene, distractor_count=(n_distractors, n_distractors)),
            int(rng.integers(2**31)))
        # reuse the donor scene's distractors, but never the target's color
        distractors = [d for d in donor.distractors
                       if np.abs(np.subtract(d.color, target.color)).max() >= 0.1]
    background = tuple(rng.uniform(0.05, 0.90, size=3).tolist())
    brightness = float(rng.uniform(*config.scene.brightness))
    scene = Scene(target=target, distractors=tuple(distractors),
                  background=background, brightness=brightness)
    start = _start_pose(config, rng)
    estimator, client = _make_estimator(config)
    try:
        result = deploy(
            scene, start, demo, estimator, config.gains, config.thresholds,
            dt=config.dt, max_steps=config.max_steps,
            noise=config.noise if config.noise.kind != "perfect" else None,
            noise_seed=seed, success=config.success,
        )
    finally:
        if client is not None:
            client.close()
    return _row_from_result(group, episode, seed, result)


def run_benchmark(config: ExperimentConfig, demo_dir, poses: int = 30) -> Report:
    """Deploy a recorded demonstration on ``poses`` object poses; the second
    half of the poses also get random distractor objects. Success rates are
    reported separately for the two splits."""
    if not os.path.isdir(demo_dir):
        raise ConfigError(f"demo directory not found: {demo_dir}")
    eval_poses = sample_eval_poses(poses, config.scene.workspace, config.seed)
    # with distractors disabled the distractor split is empty (reported absent)
    half = poses // 2 if config.benchmark_distractors > 0 else 0
    specs_plain = []
    specs_distract = []
    for i, pose2 in enumerate(eval_poses):
        if i < poses - half:
            specs_plain.append((config.to_dict(), str(demo_dir), "no_distractors",
                                i, pose2, 0))
        else:
            specs_distract.append((config.to_dict(), str(demo_dir), "distractors",
                                   i, pose2, config.benchmark_distractors))
    groups = []
    for name, specs in (("no_distractors", specs_plain), ("distractors", specs_distract)):
        t0 = time.perf_counter()
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                rows = list(pool.map(_run_deploy_episode, specs))
        else:
            rows = [_run_deploy_episode(s) for s in specs]
        if rows:
            groups.append(GroupReport(name, tuple(rows), time.perf_counter() - t0))
    return Report(tuple(groups), config.to_dict())


def write_report(report: Report, stem) -> tuple[str, str]:
    """Emit <stem>.csv (one row per episode) and <stem>.json (aggregates).
    Floats are written with full round-trip precision so aggregates are
    exactly recomputable from the CSV."""
    stem = str(stem)
    os.makedirs(os.path.dirname(stem) or ".", exist_ok=True)
    csv_path = stem + ".csv"
    json_path = stem + ".json"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for g in report.groups:
            for r in g.rows:
                writer.writerow([
                    r.group, r.episode, r.seed, int(r.reached), r.steps,
                    repr(r.position_error), repr(r.yaw_error), int(r.success),
                ])
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return csv_path, json_path


def read_report_rows(csv_path) -> list[EpisodeRow]:
    rows = []
    with open(csv_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns: {reader.fieldnames}")
        for rec in reader:
            rows.append(EpisodeRow(
                group=rec["group"],
                episode=int(rec["episode"]),
                seed=int(rec["seed"]),
                reached=bool(int(rec["reached"])),
                steps=int(rec["steps"]),
                position_error=float(rec["position_error_m"]),
                yaw_error=float(rec["yaw_error_rad"]),
                success=bool(int(rec["success"])),
            ))
    return rows


def aggregates_from_rows(rows: list[EpisodeRow]) -> dict[str, dict]:
    """Recompute the JSON aggregates from CSV rows (modulo wall clock)."""
    by_group: dict[str, list[EpisodeRow]] = {}
    for r in rows:
        by_group.setdefault(r.group, []).append(r)
    out = {}
    for name, group_rows in by_group.items():
        out[name] = {
            "episodes": len(group_rows),
            "success_rate": sum(r.success for r in group_rows) / len(group_rows),
            "mean_position_error_m": float(np.mean([r.position_error for r in group_rows])),
            "median_yaw_error_rad": float(np.median([r.yaw_error for r in group_rows])),
        }
    return out
