import numpy as np
import pytest

from pupilrecon.aperture import SmallCircular
from pupilrecon.blur import (BlurParams, centroid_surrogate, estimate_blur, kernel_centroid, ncc)
from pupilrecon.errors import DimensionError, NonConvergenceError, ParameterError
from pupilrecon.fields import convolve, estimate_shift, fourier_shift
from pupilrecon.simulator import make_pupil, psf_from_masked_pupil

EXACT = BlurParams(delta0=1e-12)


def broadband(n, rng):
    return rng.random((n, n))


def random_kernel(n, rng, size=9):
    k = np.zeros((n, n))
    c = n // 2
    h = size // 2
    k[c - h:c + h + 1, c - h:c + h + 1] = rng.random((size, size))
    return k / k.sum()


def test_identity_pair_gives_center_impulse(rng):
    i = broadband(64, rng)
    est = estimate_blur(i, i, EXACT)
    k = est.kernel
    assert abs(k[32, 32] - 1) < 1e-6
    assert k.sum() - k[32, 32] < 1e-6
    assert np.allclose(est.centroid, (0, 0), atol=1e-6)


@pytest.mark.parametrize("shift", [(3, -2), (-5, 4), (0, 7)])
def test_integer_shift_gives_shifted_impulse(rng, shift):
    i = broadband(64, rng)
    est = estimate_blur(i, np.roll(i, shift, axis=(0, 1)), EXACT)
    assert np.allclose(est.centroid, shift, atol=0.1)
    assert est.kernel[32 + shift[0], 32 + shift[1]] > 0.999


def test_random_kernels_recovered_with_default_parameters(rng):
    for _ in range(20):
        i = broadband(64, rng)
        k = random_kernel(64, rng)
        est = estimate_blur(i, convolve(i, k))
        assert ncc(est.kernel, k) > 0.98


def test_kernel_sum_and_monotone_residual(rng):
    i = broadband(64, rng)
    k = random_kernel(64, rng) * 0.6
    im = convolve(i, k)
    est = estimate_blur(i, im)
    assert est.kernel.min() >= 0
    assert abs(est.kernel.sum() / (im.sum() / i.sum()) - 1) < 0.01
    h = est.residual_history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_degenerate_reference_and_shapes():
    with pytest.raises(ParameterError):
        estimate_blur(np.zeros((32, 32)), np.ones((32, 32)))
    with pytest.raises(DimensionError):
        estimate_blur(np.ones((32, 32)), np.ones((32, 34)))


def test_divergence_raises_with_best_iterate(rng):
    i = broadband(64, rng)
    im = convolve(i, random_kernel(64, rng))
    p = BlurParams(alpha=40.0, backtrack=False, nonneg=False, renormalize=False, delta0=1.0)
    with pytest.raises(NonConvergenceError) as err:
        estimate_blur(i, im, p)
    best = err.value.best
    assert best.kernel.shape == (64, 64)
    assert best.residual <= min(best.residual_history)


def test_centroid_tracks_local_phase_gradient(rng):
    # defocus has a linear local gradient, so an off-center aperture's PSF
    # moves by the gradient at its center: sqrt(3) * 4 * a * c / R^2 rad/px
    N, R, a = 128, 40, 1.0
    P = make_pupil(N, R, {4: a})
    r = R / 2.75
    c = (12.0, -9.0)
    h1 = psf_from_masked_pupil(P, SmallCircular((0.0, 0.0), r))
    hm = psf_from_masked_pupil(P, SmallCircular(c, r))
    o = broadband(N, rng)
    g = np.sqrt(3) * 4 * a * np.array(c) / R ** 2
    expected = g * N / (2 * np.pi)
    assert np.allclose(kernel_centroid(hm / hm.sum()), expected, atol=0.1)
    est = estimate_blur(convolve(o, h1), convolve(o, hm))
    assert np.allclose(est.centroid, expected, atol=0.5)


def test_kernel_beats_centroid_surrogate_on_aberrated_apertures(acceptance_pupil, acceptance_scan, rng):
    P = acceptance_pupil
    N = P.n
    o = broadband(N, rng)
    spot = psf_from_masked_pupil(make_pupil(N, 60), acceptance_scan[0])
    i1 = convolve(o, psf_from_masked_pupil(P, acceptance_scan[0]))
    p = BlurParams(delta0=1e-10, window_frac=0.75, max_iter=0)
    ks, cs, hs = [], [], []
    for spec in acceptance_scan[10:40:6]:
        h = psf_from_masked_pupil(P, spec)
        est = estimate_blur(i1, convolve(o, h), p, reference_psf=spot)
        ks.append(est.kernel * spot.sum())
        cs.append(centroid_surrogate(est, spot))
        hs.append(h)
    # one shared offset: the tilt seen by the aberrated center aperture
    s = estimate_shift(sum(ks), sum(hs))
    for k, c, h in zip(ks, cs, hs):
        assert ncc(fourier_shift(k, s), h) > 0.99
        assert ncc(fourier_shift(k, s), h) > ncc(fourier_shift(c, s), h)


def test_kernel_centroid_helper():
    k = np.zeros((32, 32))
    k[10, 20] = 1
    assert kernel_centroid(k) == (-6.0, 4.0)
    assert kernel_centroid(np.zeros((32, 32))) == (0.0, 0.0)
