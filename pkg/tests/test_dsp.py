import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rawradar import dsp
from rawradar.errors import ContractError
from rawradar.sim import Scene, Target, preset, synthesize_adc

DESK = preset("desk").replace(noise_std=0.0)


class TestHamming:
    def test_endpoints_exact(self):
        for n in (2, 3, 4, 64, 257):
            w = dsp.hamming(n)
            assert w[0] == 0.08 and w[-1] == 0.08

    def test_odd_midpoint_is_one(self):
        for n in (3, 5, 65):
            assert dsp.hamming(n)[(n - 1) // 2] == pytest.approx(1.0, abs=1e-15)

    def test_length_four(self):
        direct = [0.54 - 0.46 * np.cos(2 * np.pi * k / 3) for k in range(4)]
        np.testing.assert_allclose(dsp.hamming(4), direct, atol=1e-15)
        np.testing.assert_allclose(dsp.hamming(4), [0.08, 0.77, 0.77, 0.08], atol=1e-15)

    def test_too_short(self):
        with pytest.raises(ContractError):
            dsp.hamming(1)


class TestFFT:
    def test_impulse(self):
        np.testing.assert_allclose(dsp.fft([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)

    def test_constant(self):
        np.testing.assert_allclose(dsp.fft([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 8, 64, 256])
    def test_fast_matches_reference(self, n):
        rng = np.random.default_rng(n)
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        ref = dsp.dft_reference(x)
        fast = dsp.fft(x)
        assert np.max(np.abs(fast - ref)) / np.max(np.abs(ref)) < 1e-10

    def test_along_axis_of_tensor(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 16, 3)) + 1j * rng.normal(size=(4, 16, 3))
        np.testing.assert_allclose(dsp.fft(x, axis=1), dsp.dft_reference(x, axis=1), atol=1e-10)

    def test_non_power_of_two_falls_back(self):
        x = np.arange(6.0)
        np.testing.assert_allclose(dsp.fft(x), dsp.dft_reference(x), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10), st.integers(0, 2**31 - 1))
    def test_parseval(self, log_n, seed):
        n = 2 ** log_n
        rng = np.random.default_rng(seed)
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        X = dsp.fft(x)
        lhs = np.sum(np.abs(x) ** 2)
        assert abs(lhs - np.sum(np.abs(X) ** 2) / n) / lhs < 1e-8


def peak_to_sidelobe_db(x, pad=1024):
    spec = np.abs(dsp.fft(np.concatenate([x, np.zeros(pad - len(x))])))
    spec = np.concatenate([spec[pad // 2:], spec[:pad // 2]])  # avoid wrap at the peak
    p = int(np.argmax(spec))
    lo = p
    while lo > 0 and spec[lo - 1] < spec[lo]:
        lo -= 1
    hi = p
    while hi < len(spec) - 1 and spec[hi + 1] < spec[hi]:
        hi += 1
    side = max(spec[:lo].max(initial=0), spec[hi + 1:].max(initial=0))
    return 20 * np.log10(spec[p] / side)


def test_hamming_suppresses_sidelobes():
    n = 64
    tone = np.exp(2j * np.pi * 10.37 * np.arange(n) / n)
    rect = peak_to_sidelobe_db(tone)
    ham = peak_to_sidelobe_db(tone * dsp.hamming(n))
    assert ham - rect > 10


class TestShift:
    def test_halves_swapped(self):
        np.testing.assert_array_equal(dsp.fftshift([0, 1, 2, 3]), [2, 3, 0, 1])

    @pytest.mark.parametrize("n", [2, 4, 10, 64])
    def test_involution_even(self, n):
        x = np.arange(n)
        np.testing.assert_array_equal(dsp.fftshift(dsp.fftshift(x)), x)

    def test_zero_velocity_lands_at_center(self):
        frame = synthesize_adc(Scene([Target(20.0, 0.0, 0.0)]), DESK)
        rd = np.abs(dsp.rd_spectrum(frame, window=False, shift=True)[0]).sum(axis=(0, 2))
        assert int(np.argmax(rd)) == DESK.chirps_per_frame // 2


class TestRDInput:
    def test_zero_frame_with_training_stats(self):
        mean = np.arange(16.0) + 1
        std = np.full(16, 2.0)
        rd = dsp.make_rd_input(np.zeros(DESK.frame_shape, complex), stats=(mean, std))
        np.testing.assert_allclose(rd.tensor, np.broadcast_to(-mean / std, rd.tensor.shape))

    def test_zero_frame_zero_mean(self):
        rd = dsp.make_rd_input(np.zeros(DESK.frame_shape, complex), stats=(np.zeros(16), np.ones(16)))
        assert not rd.tensor.any()

    def test_single_target_peak(self):
        t = Target(25.0, 4.0, 0.0)
        frame = synthesize_adc(Scene([t]), DESK)
        rd = dsp.make_rd_input(frame, window=True, shift=True, stats=(np.zeros(16), np.ones(16)))
        mag = np.hypot(rd.tensor[..., 0::2], rd.tensor[..., 1::2]).sum(axis=-1)
        r, d = np.unravel_index(np.argmax(mag), mag.shape)
        assert abs(r - DESK.range_to_bin(t.range)) <= 1
        assert abs(d - DESK.velocity_to_bin(t.radial_velocity)) <= 1

    def test_renormalization_is_standard(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=DESK.frame_shape) + 1j * rng.normal(size=DESK.frame_shape)
        once = dsp.make_rd_input(x).tensor
        acc = dsp.ChannelStats(once.shape[-1])
        acc.update(once)
        again = dsp.normalize(once, *acc.finalize())
        flat = again.reshape(-1, again.shape[-1])
        np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-10)

    def test_degenerate_channel_warns(self):
        with pytest.warns(dsp.DegenerateChannelWarning):
            dsp.make_rd_input(np.zeros(DESK.frame_shape, complex))

    def test_unwindowed_matches_quadratic_dft_composition(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=DESK.frame_shape) + 1j * rng.normal(size=DESK.frame_shape)
        ref = dsp.dft_reference(dsp.dft_reference(x, axis=0), axis=1)
        ref = dsp.split_complex(ref)
        mean, std = ref.reshape(-1, 16).mean(axis=0), ref.reshape(-1, 16).std(axis=0)
        got = dsp.make_rd_input(x, window=False, shift=False, stats=(mean, std)).tensor
        np.testing.assert_allclose(got, (ref - mean) / std, atol=1e-9)


class TestRADInput:
    def test_empty_scene_zero_cube(self):
        frame = synthesize_adc(Scene([]), DESK)
        assert not dsp.rad_cube(frame, DESK.azimuth_bins).any()

    def test_non_negative(self):
        frame = synthesize_adc(Scene([Target(20.0, 3.0, 12.0)]), preset("desk"), seed=1)
        assert (dsp.rad_cube(frame, DESK.azimuth_bins) >= 0).all()

    def test_broadside_target_at_center_azimuth(self):
        frame = synthesize_adc(Scene([Target(20.0, 3.0, 0.0)]), DESK)
        cube = dsp.rad_cube(frame, DESK.azimuth_bins, window=False)[0]
        assert np.unravel_index(np.argmax(cube), cube.shape)[2] == DESK.azimuth_bins // 2

    def test_make_rad_input_normalizes_single_channel(self):
        frame = synthesize_adc(Scene([Target(20.0, 3.0, 0.0)]), preset("desk"), seed=2)
        rad = dsp.make_rad_input(frame)
        assert rad.tensor.shape == (64, 32, 32)
        assert rad.tensor.mean() == pytest.approx(0, abs=1e-10)
        assert rad.tensor.std() == pytest.approx(1, abs=1e-10)


class TestTransformers:
    def test_rd_fit_transform_uses_training_stats(self):
        from sklearn.base import clone
        cfg = preset("desk")
        rng = np.random.default_rng(0)
        train = [synthesize_adc(Scene([Target(rng.uniform(5, 50), 1.0, 5.0)]), cfg, seed=i) for i in range(6)]
        tr = dsp.RDTransformer(window=True, shift=True, chunk_size=4).fit(train)
        out = tr.transform(train)
        assert out.shape == (6, 64, 32, 16)
        flat = out.reshape(-1, 16)
        np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-9)
        np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-9)
        assert clone(tr).get_params() == {"window": True, "shift": True, "chunk_size": 4}

    def test_transform_before_fit(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            dsp.RDTransformer().transform(np.zeros((1,) + DESK.frame_shape, complex))

    def test_rad_transformer(self):
        cfg = preset("desk")
        frames = [synthesize_adc(Scene([Target(30.0, 2.0, -10.0)]), cfg, seed=i) for i in range(3)]
        out = dsp.RADTransformer(azimuth_bins=32).fit_transform(frames)
        assert out.shape == (3, 64, 32, 32)
        assert out.mean() == pytest.approx(0, abs=1e-9)
