import numpy as np
import pytest

from pupilrecon.aperture import FullCircular, SmallCircular, render_mask
from pupilrecon.errors import DimensionError, ParameterError
from pupilrecon.fields import centered_grid, circular_support, convolve, estimate_shift, fourier_shift
from pupilrecon.simulator import (CaptureSet, CaptureEntry, NoiseModel, PupilFunction,
                                  capture_image, make_pupil, measure_snr, oracle_shift_px, otf,
                                  photon_scale_for_snr, psf_from_masked_pupil, simulate_captures,
                                  siemens_star, wave_oracle_psf)


def point_reflect(a):
    # value at -k for centered grids of even size
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))


def test_pupil_validation():
    with pytest.raises(ParameterError):
        PupilFunction(np.ones((64, 64)), 20)
    with pytest.raises(DimensionError):
        PupilFunction(np.zeros((64, 64)), 40)


def test_flat_full_disk_psf_peaks_at_center():
    P = make_pupil(128, 30)
    h = psf_from_masked_pupil(P, FullCircular(30))
    assert np.unravel_index(np.argmax(h), h.shape) == (64, 64)
    assert abs(h.sum() / P.support().sum() - 1) < 1e-12


def test_tilted_pupil_shifts_psf():
    P0 = make_pupil(128, 30)
    y, x = centered_grid(128)
    # choose the point so the displacement is (3, -5) px
    scale = P0.n * P0.pitch / (P0.wavelength * P0.focal_length)
    x0, y0 = 5 / scale, -3 / scale
    u, v = x * P0.pitch, y * P0.pitch
    tilt = np.exp(-2j * np.pi * (x0 * u + y0 * v) / (P0.wavelength * P0.focal_length))
    Pt = PupilFunction(P0.field * tilt, 30)
    shift = oracle_shift_px((x0, y0), P0)
    np.testing.assert_allclose(shift, (3, -5))
    h0 = psf_from_masked_pupil(P0, FullCircular(30))
    ht = psf_from_masked_pupil(Pt, FullCircular(30))
    np.testing.assert_allclose(ht, np.roll(h0, (3, -5), axis=(0, 1)), atol=1e-10 * h0.max())


def test_empty_mask_gives_zero_psf_and_otf_error():
    P = make_pupil(64, 20)
    h = psf_from_masked_pupil(P, np.zeros((64, 64)))
    assert not h.any()
    with pytest.raises(ParameterError):
        otf(h)
    with pytest.raises(DimensionError):
        psf_from_masked_pupil(P, np.ones((32, 32)))


def test_otf_equals_disk_autocorrelation():
    N, R = 128, 20
    disk = circular_support(R, N)
    H = otf(psf_from_masked_pupil(make_pupil(N, R), disk))
    c = N // 2
    prof = []
    for s in range(0, 2 * R + 2, 3):
        overlap = (disk * np.roll(disk, s, axis=1)).sum() / disk.sum()
        assert abs(abs(H[c, c + s]) - overlap) < 1e-10
        prof.append(abs(H[c, c + s]))
    assert all(b <= a for a, b in zip(prof, prof[1:]))


def test_otf_contracts(acceptance_pupil):
    for M in [FullCircular(60), SmallCircular((20.0, -15.0), 60 / 2.75)]:
        h = psf_from_masked_pupil(acceptance_pupil, M)
        H = otf(h)
        assert abs(H[128, 128] - 1) < 1e-12
        assert np.abs(H).max() <= 1 + 1e-12
        assert np.abs(H - np.conj(point_reflect(H))).max() < 1e-10


def test_acceptance_pupil_has_otf_nulls(acceptance_pupil):
    H = otf(psf_from_masked_pupil(acceptance_pupil, FullCircular(60)))
    y, x = centered_grid(256)
    band = np.hypot(y, x) <= 0.95 * 120
    assert np.abs(H[band]).min() < 0.01


def test_capture_impulse_and_constant():
    P = make_pupil(64, 16, {4: 1.0})
    h = psf_from_masked_pupil(P, FullCircular(16))
    o = np.zeros((64, 64))
    o[32, 32] = 1
    np.testing.assert_allclose(capture_image(o, P, FullCircular(16)), h, atol=1e-12 * h.max())
    c = 2.5
    img = capture_image(np.full((64, 64), c), P, FullCircular(16))
    # pixel 31 sees every kernel offset in [-32, 31] land inside the tile
    assert abs(img[31, 31] / (c * h.sum()) - 1) < 1e-12
    np.testing.assert_allclose(convolve(np.full((64, 64), c), h), c * h.sum(), rtol=1e-12)


def test_capture_energy_of_centered_impulse():
    P = make_pupil(64, 16, {7: 0.8})
    o = np.zeros((64, 64))
    o[32, 32] = 3.0
    img = capture_image(o, P, FullCircular(16))
    h = psf_from_masked_pupil(P, FullCircular(16))
    assert abs(img.sum() / (o.sum() * h.sum()) - 1) < 1e-10


def test_capture_rejects_negative_scene():
    with pytest.raises(ParameterError):
        capture_image(-np.ones((64, 64)), make_pupil(64, 16), FullCircular(16))


def test_noise_model_validation():
    with pytest.raises(ParameterError):
        NoiseModel(photon_scale=-1)
    with pytest.raises(ParameterError):
        NoiseModel(read_noise_sigma=-1)


def test_snr_grows_with_sqrt_frames():
    P = make_pupil(64, 16)
    o = np.ones((64, 64))
    region = (24, 24, 16, 16)
    base = None
    for frames in (1, 4, 16, 64):
        vals = [measure_snr(capture_image(o, P, FullCircular(16), NoiseModel(0.05, rng_seed=s),
                                          frames), region) for s in range(8)]
        snr = np.mean(vals)
        base = base or snr
        assert abs(snr / (base * np.sqrt(frames)) - 1) < 0.15


def test_measure_snr_examples(rng):
    assert measure_snr(np.full((64, 64), 3.0), (0, 0, 64, 64)) == float("inf")
    img = 100 + rng.normal(0, 2, (64, 64))
    assert abs(measure_snr(img, (0, 0, 64, 64)) - 50) < 5
    with pytest.raises(ParameterError):
        measure_snr(img, (60, 60, 10, 10))


def test_photon_scale_reproduces_full_aperture_snr_51(acceptance_pupil):
    h = psf_from_masked_pupil(acceptance_pupil, FullCircular(60))
    s = photon_scale_for_snr(51, h.sum())
    img = capture_image(np.ones((256, 256)), acceptance_pupil, FullCircular(60), NoiseModel(s, rng_seed=5))
    assert abs(measure_snr(img, (112, 112, 32, 32)) / 51 - 1) < 0.1


def test_photon_scale_accounts_for_read_noise():
    s = photon_scale_for_snr(40, 10.0, read_noise_sigma=3.0)
    mean = s * 10
    assert abs(mean / np.sqrt(mean + 9) - 40) < 1e-9


def test_small_aperture_snr_scales_with_sqrt_area(acceptance_scan):
    N, R = 256, 60
    P = make_pupil(N, R)
    o = np.ones((N, N))
    region = (112, 112, 32, 32)
    s = photon_scale_for_snr(100, P.support().sum())
    full = measure_snr(capture_image(o, P, FullCircular(R), NoiseModel(s, rng_seed=1)), region)
    ratios = []
    for i, spec in enumerate(acceptance_scan):
        area = render_mask(spec, N, R).sum()
        snr = measure_snr(capture_image(o, P, spec, NoiseModel(s, rng_seed=10 + i)), region)
        ratios.append(snr / (full * np.sqrt(area / P.support().sum())))
    assert np.all(np.abs(np.array(ratios) - 1) < 0.2)


def test_simulate_captures_is_seeded_and_tagged(acceptance_scan):
    P = make_pupil(64, 16)
    o = siemens_star(64, 12)
    specs = [SmallCircular((0.0, 0.0), 6.0), FullCircular(16)]
    a = simulate_captures(o, P, specs, NoiseModel(100, rng_seed=2))
    b = simulate_captures(o, P, specs, NoiseModel(100, rng_seed=2))
    assert all(np.array_equal(x, y) for x, y in zip(a.images(), b.images()))
    assert len(a.images("SmallCircular")) == 1 and len(a.images("FullCircular")) == 1
    assert not np.array_equal(a.images()[0], simulate_captures(o, P, specs[:1], NoiseModel(100, rng_seed=3)).images()[0])
    with pytest.raises(ParameterError):
        CaptureSet([CaptureEntry(specs[0], -np.ones((4, 4)))])


# ------------------------------------------------------------- wave oracle

def _norm(a):
    return a / a.sum()


def test_oracle_on_axis_matches_fast_path(acceptance_pupil):
    for d in (0.0, 0.05):
        U = wave_oracle_psf(acceptance_pupil, FullCircular(60), (0.0, 0.0), {"d": d, "f3": 0.167})
        h = psf_from_masked_pupil(acceptance_pupil, FullCircular(60))
        e = np.linalg.norm(_norm(np.abs(U) ** 2) - _norm(h)) / np.linalg.norm(_norm(h))
        assert e < 1e-6


def test_oracle_zero_distance_flat_pupil_is_fourier_transform_of_mask():
    P = make_pupil(64, 20)
    M = render_mask(FullCircular(20), 64, 20)
    U = wave_oracle_psf(P, M, (0.0, 0.0), {"d": 0.0})
    np.testing.assert_allclose(np.abs(U) ** 2, np.abs(np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(M), norm="ortho"))) ** 2, atol=1e-12)


def test_oracle_off_axis_point_is_translated_psf(acceptance_pupil):
    P = acceptance_pupil
    h = _norm(psf_from_masked_pupil(P, SmallCircular((15.0, 10.0), 60 / 2.75)))
    scale = P.n * P.pitch / (P.wavelength * P.focal_length)
    pt = (7.3 / scale, -4.6 / scale)
    U = wave_oracle_psf(P, SmallCircular((15.0, 10.0), 60 / 2.75), pt, {"d": 0.08, "f3": 0.167})
    I = _norm(np.abs(U) ** 2)
    s = estimate_shift(h, I)
    np.testing.assert_allclose(s, oracle_shift_px(pt, P), atol=1e-3)
    e = np.linalg.norm(fourier_shift(h, s) - I) / np.linalg.norm(I)
    assert e < 1e-3
