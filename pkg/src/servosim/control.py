"""Deployment state machine: twist law, bottleneck detection, servo loop,
demonstration capture, and open-loop velocity replay.

The commanded twist lives in the camera/EE frame. Because the camera's depth
axis points down at the table, a positive v_z descends (z' = z - v_z*dt) and
a positive omega_z reduces world yaw (yaw' = yaw - omega_z*dt); both signs
are pinned by requiring that the twist law with positive gains closes the
loop.

Stability: per-axis contraction needs multiplier*dt below roughly
w*z_bot/(focal*g_x) (~3.5 s with defaults), so the default dt = 0.05 s is
stable for any multiplier the gain study uses.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import EstimatorUnavailableError, ProtocolError, TargetLostError
from .estimate import ServoEstimate, estimate_gt, estimate_handcrafted
from .geometry import DEFAULT_INTRINSICS, Intrinsics, Pose4, compose, relative, wrap_angle
from .noise import EpisodeNoise, NoiseSetting
from .render import apply_mask, load_image, load_mask, render_with_mask, save_image, save_mask
from .scene import Scene, SceneObject

DEFAULT_DT = 0.05  # s
DEFAULT_MAX_STEPS = 600
START_HEIGHT = 0.45  # m, canonical initial camera height
MIN_HEIGHT = 0.01  # m, the camera never descends below this
# Close-approach hover: low enough that the target spans most of the frame,
# which the hand-crafted rotation template needs for sub-2-degree accuracy.
DEFAULT_BOTTLENECK_OFFSET = Pose4(0.0, 0.0, 0.10, 0.0)

# Maximum speeds at the x7 gain setting: {0.49 m/s, 0.59 m/s, 0.105 m/s,
# 2.8 rad/s} for x, y, z and yaw; base gains are those maxima divided by 7.
GAIN_X7_MAXIMA = (0.49, 0.59, 0.105, 2.8)


@dataclass(frozen=True)
class Gains:
    """Per-axis speed limits for the twist law; the multiplier scales all four."""

    g_x: float
    g_y: float
    g_s: float
    g_r: float
    multiplier: float = 1.0

    def __post_init__(self) -> None:
        if min(self.g_x, self.g_y, self.g_s, self.g_r) <= 0:
            raise ValueError("all gains must be positive")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")

    def to_dict(self) -> dict:
        return {"g_x": self.g_x, "g_y": self.g_y, "g_s": self.g_s,
                "g_r": self.g_r, "multiplier": self.multiplier}

    @classmethod
    def from_dict(cls, data: dict) -> "Gains":
        return cls(**data)


def base_gains(multiplier: float = 1.0) -> Gains:
    gx, gy, gs, gr = (v / 7.0 for v in GAIN_X7_MAXIMA)
    return Gains(g_x=gx, g_y=gy, g_s=gs, g_r=gr, multiplier=multiplier)


@dataclass(frozen=True)
class Twist:
    """Camera/EE-frame velocity; only the 4 servoed DoF may be nonzero."""

    v_x: float = 0.0
    v_y: float = 0.0
    v_z: float = 0.0
    omega_x: float = 0.0
    omega_y: float = 0.0
    omega_z: float = 0.0

    def __post_init__(self) -> None:
        if self.omega_x != 0.0 or self.omega_y != 0.0:
            raise ValueError("omega_x and omega_y must be zero in the 4-DoF regime")

    def as_list(self) -> list[float]:
        return [self.v_x, self.v_y, self.v_z, self.omega_x, self.omega_y, self.omega_z]

    @classmethod
    def from_sequence(cls, seq) -> "Twist":
        vals = [float(v) for v in seq]
        if len(vals) != 6:
            raise ValueError("a twist needs exactly 6 components")
        return cls(*vals)


ZERO_TWIST = Twist()


def twist_from_estimate(e: ServoEstimate, gains: Gains, intr: Intrinsics) -> Twist:
    """Proportional twist law. Each error is normalized to [-1, 1] (e_s via a
    clip to [0, 2] around its neutral value of 1) so the effective gains are
    also the per-axis maximum speeds."""
    g_x = gains.g_x * gains.multiplier
    g_y = gains.g_y * gains.multiplier
    g_s = gains.g_s * gains.multiplier
    g_r = gains.g_r * gains.multiplier
    return Twist(
        v_x=e.e_x * g_x / intr.width,
        v_y=e.e_y * g_y / intr.height,
        v_z=(min(max(e.e_s, 0.0), 2.0) - 1.0) * g_s,
        omega_z=e.e_r * g_r / math.pi,
    )


@dataclass(frozen=True)
class BottleneckThresholds:
    """Alignment tolerances for bottleneck detection, held for ``hold``
    consecutive steps. Defaults are tightened until the ground-truth
    estimator lands within 2 mm / 1 degree of the true bottleneck."""

    pixel: float = 0.25  # px, |e_x| and |e_y|
    scale: float = 0.008  # |e_s - 1|
    angle: float = math.radians(0.5)  # rad, |e_r|
    hold: int = 3

    def __post_init__(self) -> None:
        if min(self.pixel, self.scale, self.angle) <= 0:
            raise ValueError("tolerances must be positive")
        if self.hold < 1:
            raise ValueError("hold count must be >= 1")

    def within(self, e: ServoEstimate) -> bool:
        return (abs(e.e_x) <= self.pixel and abs(e.e_y) <= self.pixel
                and abs(e.e_s - 1.0) <= self.scale and abs(e.e_r) <= self.angle)

    def to_dict(self) -> dict:
        return {"pixel": self.pixel, "scale": self.scale,
                "angle_rad": self.angle, "hold": self.hold}

    @classmethod
    def from_dict(cls, data: dict) -> "BottleneckThresholds":
        return cls(pixel=data["pixel"], scale=data["scale"],
                   angle=data["angle_rad"], hold=data["hold"])


def at_bottleneck(e: ServoEstimate, th: BottleneckThresholds, history=()) -> bool:
    """True iff ``e`` and the last hold-1 entries of ``history`` (previous
    estimates, oldest first) all sit within the thresholds."""
    recent = list(history)[-(th.hold - 1):] if th.hold > 1 else []
    if len(recent) < th.hold - 1:
        return False
    return th.within(e) and all(th.within(prev) for prev in recent)


def step_camera(pose: Pose4, twist: Twist, dt: float) -> Pose4:
    """Integrate one control period of a camera-frame twist. The camera depth
    axis points down, so +v_z descends and +omega_z reduces world yaw; the
    height is clamped so the camera never reaches the table."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = math.cos(pose.yaw)
    s = math.sin(pose.yaw)
    return Pose4(
        pose.x + (c * twist.v_x - s * twist.v_y) * dt,
        pose.y + (s * twist.v_x + c * twist.v_y) * dt,
        max(pose.z - twist.v_z * dt, MIN_HEIGHT),
        pose.yaw - twist.omega_z * dt,
    )


@dataclass(frozen=True)
class SuccessTolerance:
    position: float = 0.005  # m
    angle: float = math.radians(2.0)  # rad

    def to_dict(self) -> dict:
        return {"position": self.position, "angle_rad": self.angle}

    @classmethod
    def from_dict(cls, data: dict) -> "SuccessTolerance":
        return cls(position=data["position"], angle=data["angle_rad"])


DEFAULT_SUCCESS = SuccessTolerance()
DEFAULT_THRESHOLDS = BottleneckThresholds()


@dataclass(frozen=True)
class Demonstration:
    """Everything captured at demonstration time: the bottleneck observation
    and the end-effector-frame velocity script that completes the task."""

    image: np.ndarray
    mask: np.ndarray
    segmented: np.ndarray
    dt: float
    velocities: tuple[Twist, ...]
    target: SceneObject  # the demonstrated object, posed as during the demo
    bottleneck_offset: Pose4  # bottleneck pose in the object's frame

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError("bottleneck image and mask dimensions differ")
        if not np.array_equal(self.segmented, apply_mask(self.image, self.mask)):
            raise ValueError("segmented image must equal image * mask")

    def bottleneck_world(self) -> Pose4:
        return compose(self.target.pose4(), self.bottleneck_offset)

    def terminal_offset(self) -> Pose4:
        """Terminal EE pose in the object's frame after replaying the script
        from the bottleneck."""
        return replay(self.bottleneck_offset, self)


def record_demo(scene: Scene, bottleneck_offset: Pose4, script, dt: float,
                intr: Intrinsics = DEFAULT_INTRINSICS) -> Demonstration:
    """Capture a demonstration: render the bottleneck observation of the
    target (distractors are absent at demo time) and store the velocity
    script verbatim."""
    bottleneck = compose(scene.target.pose4(), bottleneck_offset)
    if bottleneck.z <= 0:
        raise ValueError("bottleneck pose must be above the table")
    image, mask = render_with_mask(scene.without_distractors(), bottleneck, intr)
    if not mask.any():
        raise ValueError("target not visible from the bottleneck pose")
    velocities = tuple(tw if isinstance(tw, Twist) else Twist.from_sequence(tw)
                       for tw in script)
    return Demonstration(
        image=image,
        mask=mask,
        segmented=apply_mask(image, mask),
        dt=dt,
        velocities=velocities,
        target=scene.target,
        bottleneck_offset=bottleneck_offset,
    )


def replay(start: Pose4, demo: Demonstration) -> Pose4:
    """Open-loop replay: fold the camera integrator over the recorded
    EE-frame velocities. Deterministic and uninterruptible."""
    pose = start
    for tw in demo.velocities:
        pose = step_camera(pose, tw, demo.dt)
    return pose


DEMO_SCHEMA_VERSION = 1


def save_demo(demo: Demonstration, dirpath) -> None:
    """Demonstration directory: demo.json plus bottleneck.png and mask.png."""
    os.makedirs(dirpath, exist_ok=True)
    save_image(demo.image, os.path.join(dirpath, "bottleneck.png"))
    save_mask(demo.mask, os.path.join(dirpath, "mask.png"))
    doc = {
        "schema_version": DEMO_SCHEMA_VERSION,
        "dt": demo.dt,
        "velocities": [tw.as_list() for tw in demo.velocities],
        "bottleneck_offset": list(demo.bottleneck_offset.as_tuple()),
        "target": {
            "vertices": [list(v) for v in demo.target.vertices],
            "color": list(demo.target.color),
            "pose2": list(demo.target.pose2),
            "texture_seed": demo.target.texture_seed,
            "texture_amplitude": demo.target.texture_amplitude,
            "z_order": demo.target.z_order,
        },
    }
    with open(os.path.join(dirpath, "demo.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def load_demo(dirpath) -> Demonstration:
    with open(os.path.join(dirpath, "demo.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != DEMO_SCHEMA_VERSION:
        raise ValueError(f"unrecognized demo schema version {doc.get('schema_version')!r}")
    image = load_image(os.path.join(dirpath, "bottleneck.png"))
    mask = load_mask(os.path.join(dirpath, "mask.png"))
    tgt = doc["target"]
    target = SceneObject(
        vertices=tuple(tuple(v) for v in tgt["vertices"]),
        color=tuple(tgt["color"]),
        pose2=tuple(tgt["pose2"]),
        texture_seed=tgt["texture_seed"],
        texture_amplitude=tgt["texture_amplitude"],
        z_order=tgt["z_order"],
    )
    # the Demonstration constructor re-checks the segmented-image invariant
    return Demonstration(
        image=image,
        mask=mask,
        segmented=apply_mask(image, mask),
        dt=float(doc["dt"]),
        velocities=tuple(Twist.from_sequence(v) for v in doc["velocities"]),
        target=target,
        bottleneck_offset=Pose4.from_sequence(doc["bottleneck_offset"]),
    )


@dataclass(frozen=True)
class ServoContext:
    """Per-episode constants handed to estimators alongside each live frame."""

    bottleneck_world: Pose4
    bottleneck_image: np.ndarray
    bottleneck_mask: np.ndarray
    segmented_bottleneck: np.ndarray
    target_ref_xy: tuple[float, float]
    intr: Intrinsics


@dataclass(frozen=True)
class Frame:
    """One live observation inside the servo loop."""

    image: np.ndarray
    mask: np.ndarray
    segmented: np.ndarray
    camera: Pose4
    index: int


class GroundTruthEstimator:
    """Oracle stand-in for a learned servoing model; reads the true poses."""

    def __call__(self, frame: Frame, ctx: ServoContext) -> ServoEstimate:
        return estimate_gt(frame.camera, ctx.bottleneck_world, ctx.target_ref_xy, ctx.intr)


class HandcraftedEstimator:
    """Mask-based estimator: medians, pixel-count ratio, rotation template."""

    def __call__(self, frame: Frame, ctx: ServoContext) -> ServoEstimate:
        return estimate_handcrafted(frame.mask, ctx.bottleneck_mask)


class ExternalEstimator:
    """Adapter sending segmented image pairs to an out-of-process estimator."""

    def __init__(self, client):
        self.client = client

    def __call__(self, frame: Frame, ctx: ServoContext) -> ServoEstimate:
        return self.client.estimate(frame.segmented, ctx.segmented_bottleneck)


def make_servo_context(scene: Scene, bottleneck_offset: Pose4, intr: Intrinsics,
                       noise_state: EpisodeNoise | None = None) -> ServoContext:
    """Build the per-episode context by observing the target (alone) from its
    bottleneck pose. The bottleneck mask is perturbed only when the noise
    setting explicitly asks for it."""
    bottleneck = compose(scene.target.pose4(), bottleneck_offset)
    if bottleneck.z <= 0:
        raise ValueError("bottleneck pose must be above the table")
    image, mask = render_with_mask(scene.without_distractors(), bottleneck, intr)
    if not mask.any():
        raise ValueError("target not visible from the bottleneck pose")
    if noise_state is not None:
        mask = noise_state.perturb_bottleneck_mask(mask)
    return ServoContext(
        bottleneck_world=bottleneck,
        bottleneck_image=image,
        bottleneck_mask=mask,
        segmented_bottleneck=apply_mask(image, mask),
        target_ref_xy=(scene.target.pose2[0], scene.target.pose2[1]),
        intr=intr,
    )


def context_from_demo(demo: Demonstration, scene: Scene, intr: Intrinsics,
                      noise_state: EpisodeNoise | None = None) -> ServoContext:
    """Deployment context: bottleneck observation from the demonstration, true
    bottleneck pose from the deployed object pose plus the demo offset."""
    mask = demo.mask
    if noise_state is not None:
        mask = noise_state.perturb_bottleneck_mask(mask)
    return ServoContext(
        bottleneck_world=compose(scene.target.pose4(), demo.bottleneck_offset),
        bottleneck_image=demo.image,
        bottleneck_mask=mask,
        segmented_bottleneck=apply_mask(demo.image, mask),
        target_ref_xy=(scene.target.pose2[0], scene.target.pose2[1]),
        intr=intr,
    )


@dataclass(frozen=True)
class TraceStep:
    pose: Pose4
    estimate: ServoEstimate | None
    twist: Twist | None


@dataclass(frozen=True)
class EpisodeResult:
    reached: bool
    steps: int
    final_pose: Pose4
    position_error: float
    yaw_error: float
    success: bool
    failure: str | None
    trace: tuple[TraceStep, ...]


def _pose_errors(pose: Pose4, target: Pose4) -> tuple[float, float]:
    dp = math.sqrt((pose.x - target.x) ** 2 + (pose.y - target.y) ** 2
                   + (pose.z - target.z) ** 2)
    return dp, abs(wrap_angle(pose.yaw - target.yaw))


def _servo_loop(scene: Scene, start: Pose4, estimator, gains: Gains,
                thresholds: BottleneckThresholds, ctx: ServoContext, dt: float,
                max_steps: int, noise_state: EpisodeNoise | None):
    """Shared render -> segment -> estimate -> twist -> step loop."""
    pose = start
    history: list[ServoEstimate] = []
    trace: list[TraceStep] = []
    reached = False
    failure = None
    for t in range(max_steps):
        image, mask = render_with_mask(scene, pose, ctx.intr)
        if noise_state is not None:
            mask = noise_state.perturb(mask, t)
        segmented = apply_mask(image, mask)
        try:
            est = estimator(Frame(image, mask, segmented, pose, t), ctx)
        except TargetLostError:
            failure = "target lost"
            break
        except EstimatorUnavailableError:
            failure = "estimator unavailable"
            break
        except ProtocolError as exc:
            failure = f"protocol error: {exc}"
            break
        tw = twist_from_estimate(est, gains, ctx.intr)
        trace.append(TraceStep(pose, est, tw))
        done = at_bottleneck(est, thresholds, history)
        history.append(est)
        if done:
            reached = True
            break
        pose = step_camera(pose, tw, dt)
    return pose, reached, failure, trace


def run_servo(scene: Scene, start: Pose4, estimator, gains: Gains,
              thresholds: BottleneckThresholds = DEFAULT_THRESHOLDS,
              dt: float = DEFAULT_DT, max_steps: int = DEFAULT_MAX_STEPS, *,
              bottleneck_offset: Pose4 = DEFAULT_BOTTLENECK_OFFSET,
              intr: Intrinsics = DEFAULT_INTRINSICS,
              noise: NoiseSetting | None = None, noise_seed: int = 0,
              success: SuccessTolerance = DEFAULT_SUCCESS) -> EpisodeResult:
    """Servo from ``start`` toward the target's bottleneck pose; final errors
    are measured against the true bottleneck pose."""
    noise_state = (EpisodeNoise(noise, intr, noise_seed)
                   if noise is not None and noise.kind != "perfect" else None)
    ctx = make_servo_context(scene, bottleneck_offset, intr, noise_state)
    pose, reached, failure, trace = _servo_loop(
        scene, start, estimator, gains, thresholds, ctx, dt, max_steps, noise_state)
    pos_err, yaw_err = _pose_errors(pose, ctx.bottleneck_world)
    ok = reached and pos_err <= success.position and yaw_err <= success.angle
    return EpisodeResult(
        reached=reached,
        steps=len(trace),
        final_pose=pose,
        position_error=pos_err,
        yaw_error=yaw_err,
        success=ok,
        failure=failure,
        trace=tuple(trace),
    )


def deploy(scene: Scene, start: Pose4, demo: Demonstration, estimator, gains: Gains,
           thresholds: BottleneckThresholds = DEFAULT_THRESHOLDS,
           dt: float = DEFAULT_DT, max_steps: int = DEFAULT_MAX_STEPS, *,
           intr: Intrinsics = DEFAULT_INTRINSICS,
           noise: NoiseSetting | None = None, noise_seed: int = 0,
           success: SuccessTolerance = DEFAULT_SUCCESS) -> EpisodeResult:
    """Full pipeline: servo to the demo's bottleneck, then replay its velocity
    script. Success is geometric: the object-relative terminal pose must match
    the demonstration's within the tolerance. Final errors report that
    object-relative mismatch."""
    noise_state = (EpisodeNoise(noise, intr, noise_seed)
                   if noise is not None and noise.kind != "perfect" else None)
    ctx = context_from_demo(demo, scene, intr, noise_state)
    pose, reached, failure, trace = _servo_loop(
        scene, start, estimator, gains, thresholds, ctx, dt, max_steps, noise_state)
    if reached:
        for tw in demo.velocities:
            trace.append(TraceStep(pose, None, tw))
            pose = step_camera(pose, tw, demo.dt)
    expected = demo.terminal_offset()
    actual = relative(scene.target.pose4(), pose)
    pos_err, yaw_err = _pose_errors(actual, expected)
    ok = reached and pos_err <= success.position and yaw_err <= success.angle
    if not reached and failure is None:
        failure = "bottleneck not reached"
    return EpisodeResult(
        reached=reached,
        steps=len(trace),
        final_pose=pose,
        position_error=pos_err,
        yaw_error=yaw_err,
        success=ok,
        failure=None if ok else failure,
        trace=tuple(trace),
    )
