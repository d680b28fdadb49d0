from __future__ import annotations

import numpy as np
import pytest

from nightcorr.optics import (
    DetectorNoise,
    MaskParams,
    Psf,
    SpeckleMask,
    apply_psf,
    bucket_value,
    gaussian_field,
    generate_mask,
    reference_intensity,
    simulate_frames,
)
from nightcorr.scene import Scene, SpectralChannel


def _scene_from(reflectance: np.ndarray) -> Scene:
    return Scene(channels=[SpectralChannel(785.0, 532.0)], reflectance=reflectance[None])


# ---------------------------------------------------------------------------
# mask generation
# ---------------------------------------------------------------------------


def test_mask_deterministic_and_in_range():
    params = MaskParams(4, 4, correlation_length_px=0.0, amplitude_range=(0.0, 1.0), seed=7)
    a = generate_mask(params, 0)
    b = generate_mask(params, 0)
    assert a.amplitude.shape == (4, 4)
    assert np.array_equal(a.amplitude, b.amplitude)
    assert a.amplitude.min() >= 0.0 and a.amplitude.max() <= 1.0
    assert a.index == 0


def test_mask_distinct_frames_and_seeds():
    params = MaskParams(8, 8, seed=1)
    m0 = generate_mask(params, 0).amplitude
    m1 = generate_mask(params, 1).amplitude
    other = generate_mask(MaskParams(8, 8, seed=2), 0).amplitude
    assert not np.array_equal(m0, m1)
    assert not np.array_equal(m0, other)


def test_mask_slm_grid_512():
    params = MaskParams(512, 512, correlation_length_px=2.0, seed=3)
    mask = generate_mask(params, 0)
    assert mask.amplitude.shape == (512, 512)


def test_mask_respects_amplitude_range():
    params = MaskParams(32, 32, correlation_length_px=1.0, amplitude_range=(0.2, 0.7), seed=9)
    amp = generate_mask(params, 4).amplitude
    assert amp.min() >= 0.2 and amp.max() <= 0.7


def test_mask_params_validation():
    with pytest.raises(ValueError):
        MaskParams(0, 4)
    with pytest.raises(ValueError):
        MaskParams(4, 4, correlation_length_px=-1.0)
    with pytest.raises(ValueError):
        MaskParams(4, 4, amplitude_range=(0.5, 0.5))
    with pytest.raises(ValueError):
        generate_mask(MaskParams(4, 4), -1)


def test_mask_autocorrelation_width():
    # empirical autocorrelation FWHM over 10000 masks should match the
    # configured correlation length: FWHM = 2.355 * corr_len within 25%
    corr_len = 2.0
    params = MaskParams(32, 32, correlation_length_px=corr_len, seed=1)
    acf = np.zeros((32, 32))
    n = 10000
    for i in range(n):
        amp = generate_mask(params, i).amplitude
        z = (amp - amp.mean()) / amp.std()
        spectrum = np.abs(np.fft.fft2(z)) ** 2
        acf += np.fft.ifft2(spectrum).real / z.size
    acf /= n
    profile = acf[0] / acf[0, 0]
    # half-maximum crossing along one axis, linear interpolation
    k = int(np.argmax(profile[: 16] < 0.5))
    assert k > 0
    frac = (profile[k - 1] - 0.5) / (profile[k - 1] - profile[k])
    fwhm = 2.0 * ((k - 1) + frac)
    target = 2.355 * corr_len
    assert abs(fwhm - target) <= 0.25 * target


def test_field_per_pixel_statistics():
    # pre-clamp field: per-pixel mean 0 and variance 1 across frames
    params = MaskParams(32, 32, correlation_length_px=1.5, seed=3)
    n = 20000
    s = np.zeros((32, 32))
    s2 = np.zeros((32, 32))
    for i in range(n):
        z = gaussian_field(params, i)
        s += z
        s2 += z * z
    mean = s / n
    var = s2 / n - mean**2
    assert np.abs(mean).max() < 5.0 / np.sqrt(n)
    assert np.abs(var - 1.0).max() < 0.05


def test_mask_clipping_fraction_below_contract():
    # affine map clamps at +-3 sigma; clipping must stay below 0.3% of pixels
    params = MaskParams(64, 64, correlation_length_px=1.5, seed=11)
    clipped = 0
    total = 0
    for i in range(200):
        z = gaussian_field(params, i)
        clipped += int(np.sum(np.abs(z) > 3.0))
        total += z.size
    assert clipped / total < 0.003


# ---------------------------------------------------------------------------
# psf
# ---------------------------------------------------------------------------


def test_psf_validation():
    with pytest.raises(ValueError):
        Psf(kernel=np.ones((2, 2)) / 4.0)  # even-sized
    with pytest.raises(ValueError):
        Psf(kernel=np.ones((3, 3)))  # not normalized
    with pytest.raises(ValueError):
        Psf(kernel=-np.ones((3, 3)) / 9.0)
    assert Psf.identity().is_identity
    assert Psf.box(3).kernel.shape == (3, 3)
    assert Psf.gaussian(1.0).kernel.sum() == pytest.approx(1.0, abs=1e-12)


def _reflect(i: int, n: int) -> int:
    while not 0 <= i < n:
        i = -1 - i if i < 0 else 2 * n - 1 - i
    return i


def _brute_conv_reflect(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # independent oracle: gather-style convolution with symmetric reflection
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    out = np.zeros_like(image)
    h, w = image.shape
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-ry, ry + 1):
                for dx in range(-rx, rx + 1):
                    acc += kernel[ry + dy, rx + dx] * image[_reflect(y - dy, h), _reflect(x - dx, w)]
            out[y, x] = acc
    return out


def test_apply_psf_matches_brute_force_reflect(rng):
    image = rng.uniform(0.0, 1.0, size=(8, 8))
    psf = Psf.box(3)
    got = apply_psf(image, psf)
    want = _brute_conv_reflect(image, psf.kernel)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_apply_psf_gaussian_matches_brute_force(rng):
    image = rng.uniform(0.0, 1.0, size=(12, 9))
    psf = Psf.gaussian(0.8, radius=2)
    np.testing.assert_allclose(
        apply_psf(image, psf), _brute_conv_reflect(image, psf.kernel), rtol=1e-12, atol=1e-14
    )


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_apply_psf_preserves_total_intensity(seed):
    # energy-conserving borders: the sum survives any normalized kernel,
    # including asymmetric ones
    r = np.random.default_rng(seed)
    image = r.uniform(0.0, 2.0, size=(17, 13))
    kernel = r.uniform(0.0, 1.0, size=(5, 3))
    kernel /= kernel.sum()
    out = apply_psf(image, Psf(kernel=kernel))
    assert np.sum(out) == pytest.approx(np.sum(image), rel=1e-12)


# ---------------------------------------------------------------------------
# reference arm
# ---------------------------------------------------------------------------


def test_reference_constant_mask_squares():
    mask = SpeckleMask(0, np.full((6, 6), 0.5))
    out = reference_intensity(mask)
    np.testing.assert_array_equal(out, np.full((6, 6), 0.25))


def test_reference_zero_mask():
    mask = SpeckleMask(0, np.zeros((5, 5)))
    np.testing.assert_array_equal(reference_intensity(mask), np.zeros((5, 5)))


def test_reference_identity_is_exact_square(rng):
    amp = rng.uniform(0.0, 1.0, size=(7, 7))
    mask = SpeckleMask(0, amp)
    out = reference_intensity(mask)
    assert np.array_equal(out, amp**2)


def test_reference_with_box_psf_matches_oracle(rng):
    amp = rng.uniform(0.0, 1.0, size=(8, 8))
    mask = SpeckleMask(0, amp)
    got = reference_intensity(mask, Psf.box(3))
    np.testing.assert_allclose(got, _brute_conv_reflect(amp**2, Psf.box(3).kernel), rtol=1e-12)


def test_reference_noise_reproducible():
    mask = SpeckleMask(0, np.full((4, 4), 0.5))
    noise = DetectorNoise(reference_noise_sigma=0.1)
    a = reference_intensity(mask, noise=noise, rng=np.random.default_rng(3))
    b = reference_intensity(mask, noise=noise, rng=np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, np.full((4, 4), 0.25))
    with pytest.raises(ValueError):
        reference_intensity(mask, noise=noise, rng=None)


# ---------------------------------------------------------------------------
# bucket detector
# ---------------------------------------------------------------------------


def test_bucket_dark_object_is_zero():
    scene = _scene_from(np.zeros((6, 6)))
    mask = generate_mask(MaskParams(6, 6, seed=1), 0)
    assert bucket_value(mask, scene, 0) == 0.0


def test_bucket_uniform_illumination_sums_reflectance(rng):
    reflectance = rng.uniform(0.0, 1.0, size=(6, 6))
    scene = _scene_from(reflectance)
    mask = SpeckleMask(0, np.ones((6, 6)))
    assert bucket_value(mask, scene, 0) == pytest.approx(reflectance.sum(), rel=1e-12)


def test_bucket_matches_multiply_sum_oracle(rng):
    reflectance = rng.uniform(0.0, 1.0, size=(16, 16))
    scene = _scene_from(reflectance)
    mask = generate_mask(MaskParams(16, 16, correlation_length_px=1.0, seed=5), 3)
    want = float(np.sum(mask.amplitude**2 * reflectance))
    assert bucket_value(mask, scene, 0) == pytest.approx(want, rel=1e-12)


def test_bucket_nonnegative_noiseless(rng):
    scene = _scene_from(rng.uniform(0.0, 1.0, size=(8, 8)))
    for i in range(20):
        mask = generate_mask(MaskParams(8, 8, seed=2), i)
        assert bucket_value(mask, scene, 0, Psf.box(3)) >= 0.0


def test_bucket_linear_in_reflectance(rng):
    a = rng.uniform(0.0, 1.0, size=(8, 8))
    b = rng.uniform(0.0, 1.0, size=(8, 8))
    alpha, beta = 0.3, 0.6
    mixed = _scene_from(alpha * a + beta * b)
    mask = generate_mask(MaskParams(8, 8, correlation_length_px=1.5, seed=8), 0)
    psf = Psf.gaussian(1.0)
    lhs = bucket_value(mask, mixed, 0, psf)
    rhs = alpha * bucket_value(mask, _scene_from(a), 0, psf) + beta * bucket_value(
        mask, _scene_from(b), 0, psf
    )
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_bucket_dimension_mismatch_rejected():
    scene = _scene_from(np.zeros((6, 6)))
    mask = generate_mask(MaskParams(4, 4, seed=1), 0)
    with pytest.raises(ValueError):
        bucket_value(mask, scene, 0)


# ---------------------------------------------------------------------------
# frame stream
# ---------------------------------------------------------------------------


def test_simulate_frames_counts_and_indices(rng):
    scene = _scene_from(rng.uniform(0.0, 1.0, size=(8, 8)))
    params = MaskParams(8, 8, seed=4)
    records = list(simulate_frames(scene, 0, params, n_frames=5))
    assert [r.frame_index for r in records] == [0, 1, 2, 3, 4]
    single = list(simulate_frames(scene, 0, params, n_frames=1))
    assert len(single) == 1


def test_simulate_frames_bit_identical_reruns(rng):
    scene = _scene_from(rng.uniform(0.0, 1.0, size=(8, 8)))
    params = MaskParams(8, 8, correlation_length_px=1.0, seed=10)
    noise = DetectorNoise(bucket_noise_sigma=0.05, reference_noise_sigma=0.01)
    run1 = list(simulate_frames(scene, 0, params, noise=noise, n_frames=6))
    run2 = list(simulate_frames(scene, 0, params, noise=noise, n_frames=6))
    for a, b in zip(run1, run2):
        assert a.bucket == b.bucket
        assert np.array_equal(a.reference, b.reference)


def test_simulate_frames_shared_mask_per_frame(rng):
    # the reference map and bucket of frame i derive from the same mask
    scene = _scene_from(rng.uniform(0.0, 1.0, size=(8, 8)))
    params = MaskParams(8, 8, correlation_length_px=1.0, seed=6)
    for rec in simulate_frames(scene, 0, params, n_frames=4):
        mask = generate_mask(params, rec.frame_index)
        assert np.array_equal(rec.reference, mask.amplitude**2)
        assert rec.bucket == pytest.approx(
            float(np.sum(mask.amplitude**2 * scene.channel_map(0))), rel=1e-12
        )


def test_simulate_frames_range_restart_matches(rng):
    # frames [k, k+n) regenerated in isolation equal the same frames of a long run
    scene = _scene_from(rng.uniform(0.0, 1.0, size=(8, 8)))
    params = MaskParams(8, 8, seed=12)
    full = list(simulate_frames(scene, 0, params, n_frames=10))
    tail = list(simulate_frames(scene, 0, params, n_frames=4, first_frame=6))
    for a, b in zip(full[6:], tail):
        assert a.frame_index == b.frame_index
        assert a.bucket == b.bucket
        assert np.array_equal(a.reference, b.reference)


def test_simulate_frames_validation(rng):
    scene = _scene_from(rng.uniform(0.0, 1.0, size=(8, 8)))
    with pytest.raises(ValueError):
        list(simulate_frames(scene, 0, MaskParams(8, 8), n_frames=0))
    with pytest.raises(ValueError):
        list(simulate_frames(scene, 0, MaskParams(4, 4), n_frames=1))
