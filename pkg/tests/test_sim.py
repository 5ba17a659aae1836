import warnings

import numpy as np
import pytest

from rawradar import dsp
from rawradar.errors import ContractError, SceneError
from rawradar.sim import (
    C_LIGHT,
    PRESETS,
    CollisionWarning,
    Scene,
    Target,
    ground_truth_grids,
    preset,
    random_scene,
    synthesize_adc,
)

DESK = preset("desk").replace(noise_std=0.0)


def circ_dist(a, b, n):
    d = abs(a - b) % n
    return min(d, n - d)


def test_preset_invariants():
    for name, cfg in PRESETS.items():
        assert cfg.samples_per_chirp <= cfg.sample_rate * cfg.chirp_duration * (1 + 1e-9)
        assert cfg.range_resolution > 0
        assert cfg.max_velocity == pytest.approx(cfg.wavelength / (4 * cfg.chirp_duration))
    assert preset("LD").n_virtual == 8
    assert preset("LD").frame_shape == (256, 64, 8)
    assert preset("HD").frame_shape == (512, 256, 16)
    assert preset("desk").frame_shape == (64, 32, 8)


def test_samples_must_fit_in_chirp():
    with pytest.raises(ContractError):
        DESK.replace(sample_rate=DESK.sample_rate / 2)


def test_empty_scene_noiseless_is_zero():
    frame = synthesize_adc(Scene([]), DESK, seed=3)
    assert frame.samples.shape == DESK.frame_shape
    assert not frame.samples.any()


def test_single_target_on_grid_range_bin():
    for k in (3, 17, 40):
        scene = Scene([Target(range=k * DESK.range_bin, radial_velocity=0.0, azimuth=0.0)])
        x = synthesize_adc(scene, DESK).samples
        spec = np.abs(dsp.fft(x, axis=0)).sum(axis=(1, 2))
        assert int(np.argmax(spec)) == k


def test_superposition_exact():
    a = Target(12.3, 3.1, -20.0, 1.2, 0)
    b = Target(40.7, -7.5, 31.0, 0.8, 1)
    both = synthesize_adc(Scene([a, b]), DESK).samples
    sep = synthesize_adc(Scene([a]), DESK).samples + synthesize_adc(Scene([b]), DESK).samples
    assert np.array_equal(both, sep)


def test_determinism_with_noise():
    cfg = preset("desk")
    scene = Scene([Target(20.0, 2.0, 10.0)])
    f1 = synthesize_adc(scene, cfg, seed=42).samples
    f2 = synthesize_adc(scene, cfg, seed=42).samples
    f3 = synthesize_adc(scene, cfg, seed=43).samples
    assert np.array_equal(f1, f2)
    assert not np.array_equal(f1, f3)


@pytest.mark.parametrize("bad", [
    Target(-1.0, 0.0, 0.0),
    Target(1000.0, 0.0, 0.0),
    Target(10.0, 1e3, 0.0),
    Target(10.0, 0.0, 95.0),
])
def test_targets_outside_limits_rejected(bad):
    with pytest.raises(SceneError):
        synthesize_adc(Scene([bad]), DESK)


def test_bin_mapping_oracle_over_random_scenes():
    rng = np.random.default_rng(7)
    N, M, A = DESK.samples_per_chirp, DESK.chirps_per_frame, DESK.azimuth_bins
    for _ in range(100):
        t = Target(
            range=rng.uniform(2, DESK.max_range - 2),
            radial_velocity=rng.uniform(-0.95, 0.95) * DESK.max_velocity,
            azimuth=rng.uniform(-60, 60),
        )
        frame = synthesize_adc(Scene([t]), DESK)
        cube = dsp.rad_cube(frame, A, window=False)[0]
        r, d, a = np.unravel_index(np.argmax(cube), cube.shape)
        f_beat = 2 * DESK.bandwidth * t.range / (C_LIGHT * DESK.chirp_duration)
        exp_r = round(f_beat * N / DESK.sample_rate)
        assert circ_dist(r, exp_r, N) <= 1
        assert circ_dist(d, round(float(DESK.velocity_to_bin(t.radial_velocity))), M) <= 1
        assert circ_dist(a, round(float(DESK.azimuth_to_bin(t.azimuth))), A) <= 1


class TestGroundTruth:
    def test_empty_scene(self):
        gt = ground_truth_grids(Scene([]), DESK)
        assert not gt.binary.any() and not gt.regression.any() and not gt.classes.any()
        assert gt.binary.shape == (16, 16)
        assert gt.freespace.shape == (32, 8)
        assert gt.freespace.all()

    def test_corner_target_has_zero_offsets(self):
        # range bin 8 (cell 2 with reduction 4); azimuth 0 deg sits on native bin 16 (cell 8)
        gt = ground_truth_grids(Scene([Target(8 * DESK.range_bin, 0.0, 0.0)]), DESK)
        assert gt.binary[2, 8] == 1
        np.testing.assert_allclose(gt.regression[2, 8], (0.0, 0.0), atol=1e-12)

    def test_fractional_range_offset(self):
        gt = ground_truth_grids(Scene([Target(10.5 * DESK.range_bin, 0.0, 0.0)]), DESK, 4, 2)
        assert gt.binary[2].sum() == 1
        assert gt.regression[2, 8, 0] == pytest.approx(0.625, abs=1e-12)

    def test_class_one_hot(self):
        gt = ground_truth_grids(Scene([Target(20.0, 0.0, 0.0, class_id=1)]), DESK)
        i, j = np.argwhere(gt.binary)[0]
        np.testing.assert_array_equal(gt.classes[i, j], [0, 1])

    def test_collision_keeps_stronger(self):
        a = Target(20.0, 0.0, 0.0, amplitude=1.0, class_id=0)
        b = Target(20.2, 0.0, 0.5, amplitude=2.0, class_id=1)
        with pytest.warns(CollisionWarning):
            gt = ground_truth_grids(Scene([a, b]), DESK)
        assert gt.binary.sum() == 1
        i, j = np.argwhere(gt.binary)[0]
        assert gt.classes[i, j, 1] == 1

    def test_freespace_stops_at_nearest_target(self):
        t = Target(20.0, 0.0, 0.0)
        gt = ground_truth_grids(Scene([t]), DESK)
        col = int(DESK.azimuth_to_bin(0.0) // 4)
        centers = (np.arange(32) + 0.5) * 2 * DESK.range_bin
        np.testing.assert_array_equal(gt.freespace[:, col], (centers < 20.0).astype(float))
        other = [c for c in range(8) if c != col]
        assert gt.freespace[:, other].all()

    def test_bad_reduction(self):
        with pytest.raises(ContractError):
            ground_truth_grids(Scene([]), DESK, 5, 2)


def test_random_scene_has_no_collisions():
    rng = np.random.default_rng(0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", CollisionWarning)
        for i in range(200):
            scene = random_scene(preset("desk"), rng, max_targets=3, frame_id=i)
            gt = ground_truth_grids(scene, preset("desk"))
            assert gt.binary.sum() == len(scene.targets)


def test_scene_round_trip_dict():
    s = Scene([Target(1.0, 2.0, 3.0, 4.0, 1)], frame_id=9)
    assert Scene.from_dict(s.to_dict()) == s
