"""Segmentation-mask perturbations for the robustness study.

Five settings: perfect (identity), perlin (masks warped by a gradient-noise
vector field frozen for the whole episode), and extra1/2/3 (1-3 elliptical
artifacts unioned into the live mask, re-placed every frame).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics

NOISE_KINDS = ("perfect", "perlin", "extra1", "extra2", "extra3")


@dataclass(frozen=True)
class NoiseSetting:
    kind: str = "perfect"
    seed: int = 0
    amplitude: float = 4.0  # px, max displacement norm of the warp field
    cell: int = 16  # px, gradient lattice spacing
    artifact_area: tuple[float, float] = (0.05, 0.25)  # fraction of true mask area
    perturb_bottleneck: bool = False

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.cell < 2:
            raise ValueError("cell size must be >= 2")
        lo, hi = self.artifact_area
        if not (0 < lo <= hi < 1):
            raise ValueError("artifact area fractions must lie in (0, 1)")

    @property
    def extra_count(self) -> int:
        return int(self.kind[-1]) if self.kind.startswith("extra") else 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "amplitude": self.amplitude,
            "cell": self.cell,
            "artifact_area": list(self.artifact_area),
            "perturb_bottleneck": self.perturb_bottleneck,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSetting":
        kwargs = dict(data)
        if "artifact_area" in kwargs:
            kwargs["artifact_area"] = tuple(kwargs["artifact_area"])
        return cls(**kwargs)


def _gradient_noise(rng: np.random.Generator, height: int, width: int, cell: int) -> np.ndarray:
    """Classic 2-D gradient (Perlin) noise sampled at pixel centers."""
    gx = width // cell + 2
    gy = height // cell + 2
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(gy, gx))
    grads = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    u = np.arange(width, dtype=float) / cell
    v = np.arange(height, dtype=float) / cell
    uu, vv = np.meshgrid(u, v)
    iu = uu.astype(int)
    iv = vv.astype(int)
    fu = uu - iu
    fv = vv - iv

    def dot(corner_du: int, corner_dv: int) -> np.ndarray:
        g = grads[iv + corner_dv, iu + corner_du]
        return g[..., 0] * (fu - corner_du) + g[..., 1] * (fv - corner_dv)

    def fade(t: np.ndarray) -> np.ndarray:
        return t * t * t * (t * (t * 6 - 15) + 10)

    su = fade(fu)
    sv = fade(fv)
    n0 = dot(0, 0) + su * (dot(1, 0) - dot(0, 0))
    n1 = dot(0, 1) + su * (dot(1, 1) - dot(0, 1))
    return n0 + sv * (n1 - n0)


def perlin_field(setting: NoiseSetting, intr: Intrinsics) -> np.ndarray:
    """Per-pixel (du, dv) displacement field of shape (h, w, 2), deterministic
    per seed, with displacement norms scaled to peak at the amplitude."""
    if setting.kind != "perlin":
        raise ValueError(f"warp fields exist only for the perlin kind, got {setting.kind!r}")
    rng = np.random.default_rng(setting.seed)
    du = _gradient_noise(rng, intr.height, intr.width, setting.cell)
    dv = _gradient_noise(rng, intr.height, intr.width, setting.cell)
    field = np.stack([du, dv], axis=-1)
    if setting.amplitude == 0:
        return np.zeros_like(field)
    peak = float(np.hypot(field[..., 0], field[..., 1]).max())
    if peak > 0:
        field *= setting.amplitude / peak
    return field


def warp_mask(mask: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Inverse-mapped nearest-neighbor warp; positive field values push
    content in the positive pixel direction. Out-of-frame lookups read empty.
    """
    if field.shape[:2] != mask.shape:
        raise ValueError(f"field {field.shape[:2]} vs mask {mask.shape} dimension mismatch")
    h, w = mask.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    src_u = np.rint(uu - field[..., 0]).astype(int)
    src_v = np.rint(vv - field[..., 1]).astype(int)
    valid = (src_u >= 0) & (src_u < w) & (src_v >= 0) & (src_v < h)
    out = np.zeros_like(mask)
    out[valid] = mask[src_v[valid], src_u[valid]]
    return out


def _fill_ellipse(mask: np.ndarray, center_u: float, center_v: float,
                  semi_u: float, semi_v: float, angle: float) -> None:
    h, w = mask.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    du = uu - center_u
    dv = vv - center_v
    c, s = math.cos(angle), math.sin(angle)
    au = c * du + s * dv
    av = -s * du + c * dv
    mask |= (au / semi_u) ** 2 + (av / semi_v) ** 2 <= 1.0


def add_artifacts(mask: np.ndarray, k: int, setting: NoiseSetting,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Union the mask with k filled ellipses. Each ellipse area is uniform in
    the configured fraction range of the true mask's area; centers are uniform
    over the frame."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if rng is None:
        rng = np.random.default_rng(setting.seed)
    out = mask.copy()
    true_area = float(mask.sum())
    h, w = mask.shape
    lo, hi = setting.artifact_area
    for _ in range(k):
        area = rng.uniform(lo, hi) * true_area
        cu = rng.uniform(0, w)
        cv = rng.uniform(0, h)
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        angle = rng.uniform(0.0, math.pi)
        if area <= 0:
            continue
        semi_u = math.sqrt(area * aspect / math.pi)
        semi_v = math.sqrt(area / (aspect * math.pi))
        _fill_ellipse(out, cu, cv, semi_u, semi_v, angle)
    return out


class EpisodeNoise:
    """Per-episode perturbation state: the warp field is frozen once, artifact
    placement is reseeded from (episode seed, frame index) every frame."""

    def __init__(self, setting: NoiseSetting, intr: Intrinsics, episode_seed: int):
        self.setting = setting
        self.episode_seed = int(episode_seed)
        self.field = perlin_field(setting, intr) if setting.kind == "perlin" else None

    def perturb(self, mask: np.ndarray, frame_index: int) -> np.ndarray:
        setting = self.setting
        if setting.kind == "perfect":
            return mask
        if setting.kind == "perlin":
            return warp_mask(mask, self.field)
        rng = np.random.default_rng((setting.seed, self.episode_seed, frame_index))
        return add_artifacts(mask, setting.extra_count, setting, rng)

    def perturb_bottleneck_mask(self, mask: np.ndarray) -> np.ndarray:
        """Applied once per episode, and only when explicitly configured."""
        setting = self.setting
        if not setting.perturb_bottleneck or setting.kind == "perfect":
            return mask
        if setting.kind == "perlin":
            return warp_mask(mask, self.field)
        # distinct stream from every live frame: extra tuple element
        rng = np.random.default_rng((setting.seed, self.episode_seed, 0xB07, 1))
        return add_artifacts(mask, setting.extra_count, setting, rng)


def perturb(mask: np.ndarray, setting: NoiseSetting, episode_state: EpisodeNoise,
            frame_index: int) -> np.ndarray:
    """Functional wrapper over EpisodeNoise.perturb."""
    if episode_state.setting is not setting:
        raise ValueError("episode state was built for a different noise setting")
    return episode_state.perturb(mask, frame_index)
