import numpy as np
import pytest

from servosim.geometry import DEFAULT_INTRINSICS
from servosim.scene import RandomizationConfig, Scene, SceneObject


@pytest.fixture
def intr():
    return DEFAULT_INTRINSICS


@pytest.fixture
def plain_config():
    return RandomizationConfig(distractor_count=(0, 0), shape_radius=(0.040, 0.048))


def square_object(side=0.04, color=(0.9, 0.2, 0.1), pose2=(0.0, 0.0, 0.0), z_order=1):
    h = side / 2
    return SceneObject(
        vertices=((-h, -h), (h, -h), (h, h), (-h, h)),
        color=color,
        pose2=pose2,
        z_order=z_order,
    )


def single_square_scene(side=0.04, pose2=(0.0, 0.0, 0.0), background=(0.2, 0.25, 0.3)):
    return Scene(target=square_object(side=side, pose2=pose2), background=background)


def mask_from_pixels(pixels, h=64, w=64):
    """Build a mask from (u, v) pixel coordinates."""
    mask = np.zeros((h, w), dtype=bool)
    for u, v in pixels:
        mask[v, u] = True
    return mask
