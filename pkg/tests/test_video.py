import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motionfilters.errors import FormatError, NonFiniteError, TruncationError
from motionfilters.flow import FlowField, brightness_constancy_residual, flow_rotation
from motionfilters.video import (BlurSchedule, NightSchedule, VideoClip, apply_schedules,
                                 blur_sigma_at, gaussian_blur, gen_rotating, gen_translating,
                                 high_freq_energy, load_clip, save_clip, translating_pattern)


# -- generators --------------------------------------------------------------

@pytest.mark.parametrize("pattern", ["sinusoid", "gaussian-bumps"])
def test_zero_velocity_frames_identical(pattern):
    clip = gen_translating(16, 20, 5, (0.0, 0.0), pattern, seed=3)
    for f in clip.frames[1:]:
        np.testing.assert_array_equal(f, clip.frames[0])


def test_single_frame_is_pattern_at_zero():
    clip = gen_translating(12, 12, 1, (0.7, -0.3), "gaussian-bumps", seed=5)
    y, x = np.mgrid[0:12, 0:12].astype(float)
    f = translating_pattern(12, 12, "gaussian-bumps", seed=5)
    assert len(clip) == 1
    np.testing.assert_array_equal(clip.frames[0], f(x, y))


def test_translating_sinusoid_matches_direct_evaluation():
    H, W, T = 32, 32, 6
    clip = gen_translating(H, W, T, (1.0, 0.0), "sinusoid", seed=11, wavelength=16)
    # Rebuild the plaid from its parameters, independently of the generator's code path.
    p = translating_pattern(H, W, "sinusoid", seed=11, wavelength=16)
    assert p.kx == pytest.approx(2 * np.pi / 16) and p.ky == pytest.approx(2 * np.pi / 16)
    for t in range(T):
        expected = np.array([[0.5 + 0.25 * math.sin(p.kx * (x - t) + p.phase_x)
                              + 0.25 * math.sin(p.ky * y + p.phase_y)
                              for x in range(W)] for y in range(H)])
        assert np.max(np.abs(clip.frames[t] - expected)) <= 1e-12


@pytest.mark.parametrize("pattern", ["sinusoid", "gaussian-bumps"])
def test_translation_wraps_periodically(pattern):
    clip = gen_translating(16, 24, 25, (1.0, 0.0), pattern, seed=2, wavelength=8)
    np.testing.assert_allclose(clip.frames[24], clip.frames[0], atol=1e-12)


def test_translating_errors():
    with pytest.raises(ValueError):
        gen_translating(16, 16, 3, (float("nan"), 0.0))
    with pytest.raises(ValueError):
        gen_translating(16, 16, 0, (1.0, 0.0))
    with pytest.raises(ValueError):
        gen_translating(16, 16, 3, (1.0, 0.0), pattern="checkerboard")


def test_rotation_zero_omega_identical():
    clip = gen_rotating(16, 16, 4, 0.0, "gaussian-bumps", seed=1)
    for f in clip.frames[1:]:
        np.testing.assert_array_equal(f, clip.frames[0])


def test_rotation_center_pixel_constant():
    clip = gen_rotating(33, 33, 20, 0.1, "gaussian-bumps", seed=4)
    np.testing.assert_allclose(clip.frames[:, 16, 16], clip.frames[0, 16, 16], atol=1e-14)


def test_rotation_rejects_undersampled_motion():
    with pytest.raises(ValueError):
        gen_rotating(16, 16, 3, np.pi / 2)
    with pytest.raises(ValueError):
        gen_rotating(16, 16, 3, -2.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rotation_constancy_with_analytic_flow(seed):
    clip = gen_rotating(32, 32, 3, 0.05, "gaussian-bumps", seed=seed)
    flow = flow_rotation(32, 32, 0.05)
    zero = FlowField.zeros(32, 32)
    r_true = brightness_constancy_residual(clip.frames[0], clip.frames[1], flow)
    r_zero = brightness_constancy_residual(clip.frames[0], clip.frames[1], zero)
    assert r_true <= 0.05 * r_zero


# -- blur --------------------------------------------------------------------

def test_blur_zero_sigma_is_identity(rng):
    f = rng.uniform(size=(10, 13))
    out = gaussian_blur(f, 0.0)
    assert out is not f
    np.testing.assert_array_equal(out, f)


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5, 6.0])
def test_blur_preserves_constants(sigma):
    f = np.full((12, 9), 0.37)
    np.testing.assert_allclose(gaussian_blur(f, sigma), f, rtol=0, atol=1e-15)


def test_blur_impulse_matches_dense_2d_kernel():
    sigma = 1.5
    radius = math.ceil(3 * sigma)
    f = np.zeros((21, 21))
    f[10, 10] = 1.0
    # Dense 2-D truncated Gaussian, normalised as a whole.
    d = np.arange(-radius, radius + 1)
    dense = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma ** 2))
    dense /= dense.sum()
    expected = np.zeros_like(f)
    expected[10 - radius:11 + radius, 10 - radius:11 + radius] = dense[::-1, ::-1]
    assert np.max(np.abs(gaussian_blur(f, sigma) - expected)) <= 1e-12


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 3.0])
def test_blur_preserves_mass_of_interior_content(rng, sigma):
    f = np.zeros((32, 32))
    f[10:22, 10:22] = rng.uniform(size=(12, 12))
    out = gaussian_blur(f, sigma)
    assert abs(out.mean() - f.mean()) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["sinusoid", "gaussian-bumps", "noise"]))
def test_high_freq_energy_non_increasing_in_sigma(seed, kind):
    if kind == "noise":
        f = np.random.default_rng(seed).uniform(size=(32, 32))
    else:
        f = gen_translating(32, 32, 1, (0.0, 0.0), kind, seed=seed, wavelength=8).frames[0]
    energies = [high_freq_energy(gaussian_blur(f, s)) for s in (0, 0.5, 1, 2, 4)]
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_blur_sigma_schedule():
    s = BlurSchedule(sigma0=2.0, tau=10.0, floor=0.2)
    assert blur_sigma_at(s, 0) == 2.0
    assert blur_sigma_at(s, 10) == pytest.approx(2 * math.exp(-1), abs=1e-12)
    assert blur_sigma_at(s, 10) == pytest.approx(0.73576, abs=1e-5)
    assert blur_sigma_at(s, 100) == 0.0
    values = [blur_sigma_at(s, t) for t in range(60)]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] == 0.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        BlurSchedule(sigma0=-1)
    with pytest.raises(ValueError):
        BlurSchedule(tau=0)
    with pytest.raises(ValueError):
        NightSchedule(day_len=0)


# -- schedules ---------------------------------------------------------------

def test_apply_schedules_identity():
    clip = gen_translating(12, 12, 5, (1, 0), "sinusoid", seed=0)
    out = apply_schedules(clip, BlurSchedule(sigma0=0), NightSchedule(3, 0))
    np.testing.assert_array_equal(out.frames, clip.frames)
    assert not out.night_flags.any()


def test_apply_schedules_night_pattern():
    clip = gen_translating(12, 12, 6, (1, 0), "sinusoid", seed=0)
    out = apply_schedules(clip, BlurSchedule(sigma0=0), NightSchedule(day_len=3, night_len=2))
    assert len(out) == 10
    assert out.night_flags.astype(int).tolist() == [0, 0, 0, 1, 1, 0, 0, 0, 1, 1]
    assert np.all(out.frames[out.night_flags] == 0.0)
    np.testing.assert_array_equal(out.frames[~out.night_flags], clip.frames)


def test_apply_schedules_phase_starts_in_night():
    clip = gen_translating(12, 12, 2, (1, 0), "sinusoid", seed=0)
    out = apply_schedules(clip, BlurSchedule(), NightSchedule(day_len=2, night_len=2, phase=2))
    assert out.night_flags.astype(int).tolist() == [1, 1, 0, 0, 1, 1]


def test_blurred_day_frames_lose_high_frequencies():
    clip = gen_rotating(24, 24, 12, 0.05, "gaussian-bumps", seed=9)
    out = apply_schedules(clip, BlurSchedule(sigma0=2.0, tau=5.0, floor=0.2),
                          NightSchedule(day_len=4, night_len=2))
    day = out.frames[~out.night_flags]
    sigmas = out.blur_sigmas[~out.night_flags]
    assert sigmas[0] == 2.0 and sigmas[-1] < sigmas[0]
    for src, blurred in zip(clip.frames, day):
        assert high_freq_energy(blurred) <= high_freq_energy(src)


def test_clip_rejects_lit_night_frames():
    frames = np.ones((2, 4, 4))
    with pytest.raises(ValueError):
        VideoClip(frames, 0.04, np.array([False, True]))


# -- high frequency energy ---------------------------------------------------

def test_hfe_constant_and_ramp_are_zero():
    assert high_freq_energy(np.full((9, 9), 3.0)) == 0.0
    y, x = np.mgrid[0:9, 0:11]
    assert high_freq_energy(0.3 * x - 0.1 * y + 2.0) == pytest.approx(0.0, abs=1e-26)


@pytest.mark.parametrize("wavelength", [4.0, 7.5, 16.0])
def test_hfe_sinusoid_closed_form(wavelength):
    H, W, phase = 10, 40, 0.3
    k = 2 * np.pi / wavelength
    f = np.tile(np.sin(k * np.arange(W) + phase), (H, 1))
    # Discrete Laplacian of sin(kx + phase) is (2 cos k - 2) sin(kx + phase);
    # interior columns 1..W-2, sum of sin^2 via the geometric cosine sum.
    m = W - 2
    cos_sum = math.sin(m * k) / math.sin(k) * math.cos(2 * phase + 2 * k + (m - 1) * k)
    mean_sin2 = 0.5 - 0.5 * cos_sum / m
    expected = (2 * math.cos(k) - 2) ** 2 * mean_sin2
    assert abs(high_freq_energy(f) - expected) <= 1e-9


# -- CVF1 --------------------------------------------------------------------

def test_clip_round_trip(tmp_path, rng):
    frames = rng.uniform(size=(4, 7, 9)).astype(np.float32).astype(np.float64)
    frames[2] = 0
    clip = VideoClip(frames, 0.125, np.array([0, 0, 1, 0], bool))
    save_clip(clip, tmp_path / "a.cvf")
    back = load_clip(tmp_path / "a.cvf")
    np.testing.assert_array_equal(back.frames, clip.frames)
    np.testing.assert_array_equal(back.night_flags, clip.night_flags)
    assert back.frame_period == 0.125
    save_clip(back, tmp_path / "b.cvf")
    assert (tmp_path / "a.cvf").read_bytes() == (tmp_path / "b.cvf").read_bytes()


def test_clip_layout_on_disk(tmp_path):
    clip = VideoClip(np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4), 0.5)
    save_clip(clip, tmp_path / "c.cvf")
    raw = (tmp_path / "c.cvf").read_bytes()
    assert raw[:4] == b"CVF1"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [3, 4, 2]
    assert np.frombuffer(raw[16:24], "<f8")[0] == 0.5
    assert raw[24:26] == b"\x00\x00"
    np.testing.assert_array_equal(np.frombuffer(raw[26:], "<f4"), np.arange(24))


def test_clip_bad_magic(tmp_path):
    clip = gen_translating(8, 8, 2, (1, 0))
    save_clip(clip, tmp_path / "c.cvf")
    raw = bytearray((tmp_path / "c.cvf").read_bytes())
    raw[0:4] = b"XVF1"
    (tmp_path / "c.cvf").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_clip(tmp_path / "c.cvf")


def test_clip_truncated(tmp_path):
    clip = gen_translating(8, 8, 3, (1, 0))
    save_clip(clip, tmp_path / "c.cvf")
    raw = bytearray((tmp_path / "c.cvf").read_bytes())
    raw[12:16] = np.array([4], "<u4").tobytes()  # header claims 4 frames
    (tmp_path / "c.cvf").write_bytes(bytes(raw))
    with pytest.raises(TruncationError):
        load_clip(tmp_path / "c.cvf")


def test_clip_non_finite(tmp_path):
    clip = gen_translating(8, 8, 2, (1, 0))
    save_clip(clip, tmp_path / "c.cvf")
    raw = bytearray((tmp_path / "c.cvf").read_bytes())
    raw[-4:] = np.array([np.nan], "<f4").tobytes()
    (tmp_path / "c.cvf").write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError):
        load_clip(tmp_path / "c.cvf")
