"""4-DoF pose algebra and the top-down pinhole camera model.

World frame: x/y span the table plane, z is height above it. Cameras look
straight down at the table; the image u-axis tracks the camera-frame x-axis
and the v-axis the camera-frame y-axis, where the camera frame is the world
frame rotated by the pose's yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class Pose4:
    """Camera/end-effector pose restricted to the 4 servoed degrees of freedom.

    z is height above the table plane; any pose used as a camera must have
    z > 0. yaw is stored wrapped to (-pi, pi]. The same type doubles as a
    relative offset, where z may be zero or negative.
    """

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite pose field {name!r}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.yaw)

    @classmethod
    def from_sequence(cls, seq) -> "Pose4":
        x, y, z, yaw = (float(v) for v in seq)
        return cls(x, y, z, yaw)


IDENTITY = Pose4()


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics for the downward-looking camera.

    The principal point defaults to the image center.
    """

    focal: float = 64.0
    width: int = 64
    height: int = 64
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self) -> None:
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)


# 64x64 frame with the focal length chosen so the full desk workspace is
# visible from the canonical 0.45 m start height.
DEFAULT_INTRINSICS = Intrinsics()


class PixelCoord(NamedTuple):
    """Sub-pixel image position; u grows rightward, v downward."""

    u: float
    v: float


def compose(base: Pose4, offset: Pose4) -> Pose4:
    """Apply ``offset`` in ``base``'s frame: the offset's x/y are rotated by
    base.yaw, heights add, yaws add and re-wrap."""
    c = math.cos(base.yaw)
    s = math.sin(base.yaw)
    return Pose4(
        base.x + c * offset.x - s * offset.y,
        base.y + s * offset.x + c * offset.y,
        base.z + offset.z,
        base.yaw + offset.yaw,
    )


def relative(a: Pose4, b: Pose4) -> Pose4:
    """Express ``b`` in ``a``'s frame, i.e. compose(a, relative(a, b)) == b."""
    dx = b.x - a.x
    dy = b.y - a.y
    c = math.cos(a.yaw)
    s = math.sin(a.yaw)
    return Pose4(
        c * dx + s * dy,
        -s * dx + c * dy,
        b.z - a.z,
        b.yaw - a.yaw,
    )


def project(camera: Pose4, intr: Intrinsics, world_xy: tuple[float, float]) -> PixelCoord:
    """Project a table-plane point into the image of a downward camera.

    pixel = principal + focal * R(-yaw) @ (world_xy - camera_xy) / camera.z
    """
    if camera.z <= 0:
        raise ValueError(f"camera height must be positive, got {camera.z}")
    dx = world_xy[0] - camera.x
    dy = world_xy[1] - camera.y
    c = math.cos(camera.yaw)
    s = math.sin(camera.yaw)
    u = intr.cx + intr.focal * (c * dx + s * dy) / camera.z
    v = intr.cy + intr.focal * (-s * dx + c * dy) / camera.z
    return PixelCoord(u, v)
