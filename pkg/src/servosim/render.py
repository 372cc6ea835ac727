"""Deterministic software rasterizer: RGB observations and exact target masks.

Images are float64 arrays of shape (h, w, 3) with channels in [0, 1]; masks
are bool arrays of shape (h, w). Pixel (r, c) covers the half-open square
[c, c+1) x [r, r+1) with its center at (c+0.5, r+0.5) in projection
coordinates; mask/median operations address the same pixel as (u=c, v=r).
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image as PILImage

from .geometry import Intrinsics, Pose4, project
from .scene import Scene, SceneObject


def new_image(intr: Intrinsics, color=(0.0, 0.0, 0.0)) -> np.ndarray:
    img = np.empty((intr.height, intr.width, 3), dtype=np.float64)
    img[:] = np.asarray(color, dtype=np.float64)
    return img


def fill_convex_polygon(vertices_uv: np.ndarray, width: int, height: int) -> np.ndarray:
    """Scanline fill of a convex polygon given in projection coordinates.

    A pixel is covered iff its center lies inside under half-open boundary
    semantics: centers exactly on a top/left edge are in, bottom/right out.
    Exact and independent of vertex order.
    """
    mask = np.zeros((height, width), dtype=bool)
    verts = np.asarray(vertices_uv, dtype=float)
    n = len(verts)
    if n < 3:
        return mask
    v_lo = verts[:, 1].min()
    v_hi = verts[:, 1].max()
    r0 = max(0, int(np.ceil(v_lo - 0.5)))
    r1 = min(height - 1, int(np.floor(v_hi - 0.5)))
    for r in range(r0, r1 + 1):
        vc = r + 0.5
        u_min = np.inf
        u_max = -np.inf
        for i in range(n):
            u0, v0 = verts[i]
            u1, v1 = verts[(i + 1) % n]
            # half-open crossing rule: count the edge iff vc is in [min, max)
            if (v0 <= vc < v1) or (v1 <= vc < v0):
                u = u0 + (vc - v0) * (u1 - u0) / (v1 - v0)
                u_min = min(u_min, u)
                u_max = max(u_max, u)
        if u_min >= u_max:
            continue
        c0 = max(0, int(np.ceil(u_min - 0.5)))
        c1 = min(width - 1, int(np.ceil(u_max - 0.5)) - 1)
        if c1 >= c0:
            mask[r, c0:c1 + 1] = True
    return mask


def _speckle(seed: int, height: int, width: int) -> np.ndarray:
    """Deterministic per-pixel value noise in [-1, 1] from an integer mix."""
    rr, cc = np.meshgrid(
        np.arange(height, dtype=np.uint64),
        np.arange(width, dtype=np.uint64),
        indexing="ij",
    )
    h = rr * np.uint64(0x9E3779B97F4A7C15) ^ cc * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    h = (h ^ (h >> np.uint64(33))) * np.uint64(0xFF51AFD7ED558CCD)
    h = h ^ (h >> np.uint64(33))
    return (h >> np.uint64(11)).astype(np.float64) / float(2**53 - 1) * 2.0 - 1.0


def _object_color_field(obj: SceneObject, intr: Intrinsics, brightness: float) -> np.ndarray:
    base = np.asarray(obj.color, dtype=np.float64)
    field = np.empty((intr.height, intr.width, 3), dtype=np.float64)
    field[:] = base
    if obj.texture_seed is not None and obj.texture_amplitude > 0.0:
        noise = _speckle(obj.texture_seed, intr.height, intr.width)
        field *= (1.0 + obj.texture_amplitude * noise)[:, :, None]
    np.clip(field * brightness, 0.0, 1.0, out=field)
    return field


def rasterize(scene: Scene, camera: Pose4, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Render the scene and return (image, owner) where owner[r, c] is the
    index into scene.objects() of the topmost object at that pixel, -1 for
    background. Paint order is ascending z-order, ties kept in list order."""
    if camera.z <= 0:
        raise ValueError(f"camera height must be positive, got {camera.z}")
    img = new_image(intr, np.clip(np.asarray(scene.background) * scene.brightness, 0.0, 1.0))
    owner = np.full((intr.height, intr.width), -1, dtype=np.int32)
    objects = scene.objects()
    order = sorted(range(len(objects)), key=lambda i: (objects[i].z_order, i))
    for idx in order:
        obj = objects[idx]
        verts_uv = np.array([project(camera, intr, (wx, wy))
                             for wx, wy in obj.world_vertices()])
        cover = fill_convex_polygon(verts_uv, intr.width, intr.height)
        if not cover.any():
            continue
        field = _object_color_field(obj, intr, scene.brightness)
        img[cover] = field[cover]
        owner[cover] = idx
    return img, owner


def render(scene: Scene, camera: Pose4, intr: Intrinsics) -> np.ndarray:
    """RGB observation of the scene from a downward camera."""
    img, _ = rasterize(scene, camera, intr)
    return img


def render_mask(scene: Scene, camera: Pose4, intr: Intrinsics) -> np.ndarray:
    """Ground-truth target segmentation: set exactly where the target is the
    topmost object."""
    _, owner = rasterize(scene, camera, intr)
    return owner == 0


def render_with_mask(scene: Scene, camera: Pose4, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """One-pass (image, target mask) render for control loops."""
    img, owner = rasterize(scene, camera, intr)
    return img, owner == 0


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Element-wise product of an image with a binary mask."""
    if img.shape[:2] != mask.shape:
        raise ValueError(f"image {img.shape[:2]} vs mask {mask.shape} dimension mismatch")
    return img * mask[:, :, None]


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid used by PNG serialization."""
    return np.round(img * 255.0) / 255.0


def encode_png(img: np.ndarray) -> bytes:
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(blob: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(blob)) as pil:
        data = np.asarray(pil.convert("RGB"), dtype=np.float64)
    return data / 255.0


def save_image(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def encode_mask_png(mask: np.ndarray) -> bytes:
    data = np.where(mask, 255, 0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def save_mask(mask: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_mask_png(mask))


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as pil:
        data = np.asarray(pil.convert("L"))
    if not np.isin(data, (0, 255)).all():
        raise ValueError(f"mask file {path} is not binary 0/255")
    return data == 255
