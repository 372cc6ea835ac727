"""Servo estimators: the quantities (e_x, e_y, e_s, e_r) that drive the twist law.

Sign conventions (pinned by closed-loop convergence with positive gains):
  e_x, e_y  live-minus-bottleneck object position in pixels;
  e_s       bottleneck/live segmented-pixel-count ratio (> 1 means the live
            object looks smaller, i.e. the camera is too high);
  e_r       camera rotation live-relative-to-bottleneck, radians in (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TargetLostError
from .geometry import Intrinsics, PixelCoord, Pose4, project, wrap_angle


@dataclass(frozen=True)
class ServoEstimate:
    e_x: float
    e_y: float
    e_s: float
    e_r: float

    def __post_init__(self) -> None:
        for name in ("e_x", "e_y", "e_s", "e_r"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite estimate field {name!r}")
        if self.e_s <= 0:
            raise ValueError(f"e_s must be positive, got {self.e_s}")
        object.__setattr__(self, "e_r", wrap_angle(self.e_r))


def estimate_gt(camera: Pose4, bottleneck_world: Pose4, target_ref_xy: tuple[float, float],
                intr: Intrinsics) -> ServoEstimate:
    """Pose-derived oracle: exact servo errors from the true camera and
    bottleneck poses, using the pinhole projection of a target reference
    point for e_xy and the height-squared area law for e_s."""
    if camera.z <= 0 or bottleneck_world.z <= 0:
        raise ValueError("camera and bottleneck heights must be positive")
    live = project(camera, intr, target_ref_xy)
    bot = project(bottleneck_world, intr, target_ref_xy)
    return ServoEstimate(
        e_x=live.u - bot.u,
        e_y=live.v - bot.v,
        e_s=(camera.z / bottleneck_world.z) ** 2,
        e_r=wrap_angle(camera.yaw - bottleneck_world.yaw),
    )


def median_pixel(mask: np.ndarray) -> PixelCoord:
    """Per-axis median of set-pixel coordinates; even counts average the two
    middle values."""
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise TargetLostError("target lost: empty segmentation mask")
    return PixelCoord(float(np.median(cols)), float(np.median(rows)))


def scale_ratio(mask_bot: np.ndarray, mask_live: np.ndarray) -> float:
    """Bottleneck over live segmented-pixel count."""
    n_bot = int(mask_bot.sum())
    n_live = int(mask_live.sum())
    if n_bot == 0:
        raise ValueError("empty bottleneck mask")
    if n_live == 0:
        raise TargetLostError("target lost: empty live mask")
    return n_bot / n_live


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two masks; 1.0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def rotate_mask(mask: np.ndarray, angle: float, pivot: PixelCoord) -> np.ndarray:
    """Nearest-neighbor rotation about ``pivot``: content at q moves to
    pivot + R(angle) (q - pivot), where R is the standard rotation matrix in
    (u, v) coordinates. Inverse-mapped; sources outside the frame read empty.
    """
    h, w = mask.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    du = uu - pivot.u
    dv = vv - pivot.v
    c = math.cos(angle)
    s = math.sin(angle)
    src_u = np.rint(pivot.u + c * du + s * dv).astype(int)
    src_v = np.rint(pivot.v - s * du + c * dv).astype(int)
    valid = (src_u >= 0) & (src_u < w) & (src_v >= 0) & (src_v < h)
    out = np.zeros_like(mask)
    out[valid] = mask[src_v[valid], src_u[valid]]
    return out


# Sweep order puts 0 first and smaller magnitudes before larger ones, so the
# first argmax implements the smallest-|angle| tie-break (positive preferred
# at equal magnitude). 180 has no negative twin: the range is -179..180.
_SWEEP_DEGREES = [0]
for _d in range(1, 180):
    _SWEEP_DEGREES += [_d, -_d]
_SWEEP_DEGREES.append(180)

_SWEEP_COS = np.array([math.cos(math.radians(d)) for d in _SWEEP_DEGREES])
_SWEEP_SIN = np.array([math.sin(math.radians(d)) for d in _SWEEP_DEGREES])

try:
    from numba import config as _numba_config
    from numba import njit, prange

    # workqueue is fork-safe, so harness process pools can coexist with the
    # parallel kernel
    _numba_config.THREADING_LAYER = "workqueue"

    @njit(cache=True, parallel=True)
    def _sweep_counts_numba(live, bot, med_lu, med_lv, med_bu, med_bv,
                            h, w, cos_t, sin_t):
        n_angles = cos_t.shape[0]
        inter = np.zeros(n_angles, dtype=np.int64)
        area = np.zeros(n_angles, dtype=np.int64)
        for a in prange(n_angles):
            c = cos_t[a]
            s = sin_t[a]
            got_i = 0
            got_a = 0
            for r in range(h):
                dv = r - med_bv
                for q in range(w):
                    du = q - med_bu
                    su = int(np.rint(med_lu + c * du + s * dv))
                    sv = int(np.rint(med_lv + c * dv - s * du))
                    if 0 <= su < w and 0 <= sv < h:
                        val = live[sv, su]
                        if val:
                            got_a += 1
                            if bot[r, q]:
                                got_i += 1
            inter[a] = got_i
            area[a] = got_a
        return inter, area

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def _sweep_counts_numpy(live, bot, med_lu, med_lv, med_bu, med_bv, h, w, cos_t, sin_t):
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    du = (uu - med_bu).ravel()
    dv = (vv - med_bv).ravel()
    su = np.rint(med_lu + cos_t[:, None] * du + sin_t[:, None] * dv).astype(np.int32)
    sv = np.rint(med_lv + cos_t[:, None] * dv - sin_t[:, None] * du).astype(np.int32)
    flat = sv * w + su
    # out-of-frame sources read the padded empty sentinel at h*w
    np.putmask(flat, (su < 0) | (su >= w) | (sv < 0) | (sv >= h), h * w)
    padded = np.append(live.ravel(), False).astype(np.float32)
    warped = padded[flat]  # (n_angles, h*w)
    inter = (warped @ bot.ravel().astype(np.float32)).astype(np.int64)
    area = warped.sum(axis=1).astype(np.int64)
    return inter, area


def _sweep_counts(live: np.ndarray, bot: np.ndarray, med_l: PixelCoord,
                  med_b: PixelCoord) -> tuple[np.ndarray, np.ndarray]:
    h, w = live.shape
    if _HAVE_NUMBA:
        return _sweep_counts_numba(live, bot, med_l.u, med_l.v, med_b.u, med_b.v,
                                   h, w, _SWEEP_COS, _SWEEP_SIN)
    return _sweep_counts_numpy(live, bot, med_l.u, med_l.v, med_b.u, med_b.v,
                               h, w, _SWEEP_COS, _SWEEP_SIN)


def rotation_by_template(mask_live: np.ndarray, mask_bot: np.ndarray) -> float:
    """Template-matched rotation: align the masks' medians, sweep -179..180
    degrees in 1-degree steps, and return the radian angle whose rotated live
    mask maximizes IoU with the bottleneck mask. Ties break toward the
    smallest |angle|.

    The median alignment and each candidate rotation are folded into a single
    nearest-neighbor lookup (live read at med_live + R(-a)(p - med_bot)), so
    the fractional parts of both medians are honored exactly instead of being
    rounded away by a separate translation pass.
    """
    if mask_live.shape != mask_bot.shape:
        raise ValueError(f"mask dimension mismatch: {mask_live.shape} vs {mask_bot.shape}")
    med_l = median_pixel(mask_live)
    med_b = median_pixel(mask_bot)
    inter, area = _sweep_counts(mask_live, mask_bot, med_l, med_b)
    n_bot = int(mask_bot.sum())
    union = area + n_bot - inter
    scores = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    best = int(np.argmax(scores))
    return math.radians(_SWEEP_DEGREES[best])


def rotational_self_iou(mask: np.ndarray, angle: float) -> float:
    """IoU of a mask with itself rotated about its median; low values mean the
    shape carries usable orientation information."""
    return iou(rotate_mask(mask, angle, median_pixel(mask)), mask)


def estimate_handcrafted(seg_live: np.ndarray, seg_bot: np.ndarray) -> ServoEstimate:
    """Hand-crafted servo estimator on segmentation masks: median-pixel offset
    for e_xy, pixel-count ratio for e_s, 1-degree IoU template matching for
    e_r."""
    med_l = median_pixel(seg_live)
    med_b = median_pixel(seg_bot)
    return ServoEstimate(
        e_x=med_l.u - med_b.u,
        e_y=med_l.v - med_b.v,
        e_s=scale_ratio(seg_bot, seg_live),
        e_r=rotation_by_template(seg_live, seg_bot),
    )
