import numpy as np
import pytest

from servosim.geometry import Intrinsics
from servosim.noise import (EpisodeNoise, NoiseSetting, add_artifacts, perlin_field,
                            perturb, warp_mask)


def blob_mask(h=64, w=64, cu=32, cv=32, r=10):
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    return (uu - cu) ** 2 + (vv - cv) ** 2 <= r**2


def test_setting_validation():
    with pytest.raises(ValueError):
        NoiseSetting(kind="speckle")
    with pytest.raises(ValueError):
        NoiseSetting(amplitude=-1)
    with pytest.raises(ValueError):
        NoiseSetting(cell=1)
    with pytest.raises(ValueError):
        NoiseSetting(artifact_area=(0.0, 0.2))
    assert NoiseSetting(kind="extra2").extra_count == 2
    assert NoiseSetting(kind="perlin").extra_count == 0


def test_setting_round_trip():
    s = NoiseSetting(kind="extra3", seed=9, amplitude=2.5, cell=8,
                     artifact_area=(0.1, 0.2), perturb_bottleneck=True)
    assert NoiseSetting.from_dict(s.to_dict()) == s


def test_perlin_zero_amplitude(intr):
    field = perlin_field(NoiseSetting(kind="perlin", amplitude=0.0), intr)
    assert not field.any()


def test_perlin_deterministic(intr):
    s = NoiseSetting(kind="perlin", seed=4)
    assert np.array_equal(perlin_field(s, intr), perlin_field(s, intr))
    s2 = NoiseSetting(kind="perlin", seed=5)
    assert not np.array_equal(perlin_field(s, intr), perlin_field(s2, intr))


def test_perlin_bounded_by_amplitude(intr):
    for seed in range(100):
        s = NoiseSetting(kind="perlin", seed=seed, amplitude=4.0)
        field = perlin_field(s, intr)
        norms = np.hypot(field[..., 0], field[..., 1])
        assert norms.max() <= 4.0 + 1e-9


def test_warp_zero_field_identity():
    mask = blob_mask()
    field = np.zeros(mask.shape + (2,))
    assert np.array_equal(warp_mask(mask, field), mask)


def test_warp_constant_field_translates():
    mask = blob_mask(cu=20, cv=40, r=6)
    field = np.zeros(mask.shape + (2,))
    field[..., 0] = 3.0
    out = warp_mask(mask, field)
    assert np.array_equal(out, np.roll(mask, 3, axis=1))


def test_warp_preserves_emptiness():
    field = np.full((16, 16, 2), 2.0)
    assert not warp_mask(np.zeros((16, 16), dtype=bool), field).any()


def test_warp_dimension_mismatch():
    with pytest.raises(ValueError):
        warp_mask(np.zeros((8, 8), dtype=bool), np.zeros((4, 4, 2)))


def test_artifacts_zero_is_identity():
    mask = blob_mask()
    assert np.array_equal(add_artifacts(mask, 0, NoiseSetting(kind="extra1")), mask)


def test_artifacts_superset_and_area():
    mask = blob_mask(r=9)
    true_area = int(mask.sum())
    setting = NoiseSetting(kind="extra1", artifact_area=(0.05, 0.25))
    grows = []
    for seed in range(30):
        rng = np.random.default_rng(seed)
        out = add_artifacts(mask, 1, setting, rng)
        assert (out | mask).sum() == out.sum()  # superset
        grows.append(int(out.sum()) - true_area)
    grows = np.array(grows)
    # ellipse may overlap the blob or clip the frame, so growth is bounded
    # above by the sampled area plus rasterization slack
    assert grows.max() <= 0.25 * true_area + 40
    assert np.mean(grows) > 0.02 * true_area


def test_artifacts_three_disjoint_accounting():
    mask = blob_mask(cu=8, cv=8, r=4)
    true_area = int(mask.sum())
    setting = NoiseSetting(kind="extra3", artifact_area=(0.05, 0.25))
    # wide frame: overlap between small artifacts and the corner blob is rare
    for seed in (3, 7, 11):
        rng = np.random.default_rng(seed)
        out = add_artifacts(mask, 3, setting, rng)
        grow = int(out.sum()) - true_area
        assert 0 <= grow <= 3 * 0.25 * true_area + 60


def test_artifacts_deterministic():
    mask = blob_mask()
    setting = NoiseSetting(kind="extra2", seed=21)
    assert np.array_equal(add_artifacts(mask, 2, setting), add_artifacts(mask, 2, setting))


def test_episode_perfect_identity(intr):
    state = EpisodeNoise(NoiseSetting(kind="perfect"), intr, episode_seed=1)
    mask = blob_mask()
    for frame in (0, 10, 50):
        assert np.array_equal(state.perturb(mask, frame), mask)


def test_episode_perlin_field_frozen(intr):
    state = EpisodeNoise(NoiseSetting(kind="perlin", seed=2), intr, episode_seed=1)
    mask = blob_mask()
    assert np.array_equal(state.perturb(mask, 1), state.perturb(mask, 50))


def test_episode_extra_replaced_per_frame(intr):
    state = EpisodeNoise(NoiseSetting(kind="extra2", seed=2), intr, episode_seed=1)
    mask = blob_mask(r=8)
    a = state.perturb(mask, 0)
    b = state.perturb(mask, 1)
    assert not np.array_equal(a, b)
    # same frame index reproduces exactly
    assert np.array_equal(a, state.perturb(mask, 0))


def test_episode_seed_changes_artifacts(intr):
    setting = NoiseSetting(kind="extra1", seed=2)
    mask = blob_mask(r=8)
    a = EpisodeNoise(setting, intr, episode_seed=1).perturb(mask, 0)
    b = EpisodeNoise(setting, intr, episode_seed=2).perturb(mask, 0)
    assert not np.array_equal(a, b)


def test_bottleneck_perturbation_gated(intr):
    mask = blob_mask()
    off = EpisodeNoise(NoiseSetting(kind="extra1", seed=3), intr, 1)
    assert np.array_equal(off.perturb_bottleneck_mask(mask), mask)
    on = EpisodeNoise(NoiseSetting(kind="extra1", seed=3, perturb_bottleneck=True), intr, 1)
    assert not np.array_equal(on.perturb_bottleneck_mask(mask), mask)


def test_perturb_wrapper_checks_state(intr):
    setting = NoiseSetting(kind="perlin", seed=1)
    state = EpisodeNoise(setting, intr, 0)
    mask = blob_mask()
    assert np.array_equal(perturb(mask, setting, state, 3), state.perturb(mask, 3))
    with pytest.raises(ValueError):
        perturb(mask, NoiseSetting(kind="perlin", seed=2), state, 0)


def test_non_square_frame():
    intr = Intrinsics(width=80, height=48)
    s = NoiseSetting(kind="perlin", seed=8, amplitude=3.0)
    field = perlin_field(s, intr)
    assert field.shape == (48, 80, 2)
    mask = np.zeros((48, 80), dtype=bool)
    mask[20:30, 30:50] = True
    assert warp_mask(mask, field).shape == mask.shape
