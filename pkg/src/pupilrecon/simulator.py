"""Forward model of aperture-masked incoherent imaging.

PSFs come from the masked pupil, ``h = |fft2(M P)|^2``; captures are the
scene convolved with ``h`` (zero-padded to avoid wrap-around) plus shot,
read and dark noise.  A wave-optics chain through a relay with an
angular-spectrum propagation step serves as an independent check of the
shift-invariant PSF model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .aperture import ApertureSpec, render_mask
from .errors import DimensionError, ParameterError
from .fields import (centered_grid, circular_support, convolve, fft2, ifft2,
                     zernike_phase)

DEFAULT_WAVELENGTH = 520e-9
DEFAULT_FOCAL_LENGTH = 0.167


@dataclass
class PupilFunction:
    """Complex pupil on an ``N x N`` grid.

    Parameters
    ----------
    field : ndarray
        Complex samples, zero outside the support disk.
    support_radius : float
        Support radius in pixels.
    wavelength, focal_length : float
        Meters.
    pitch : float
        Pupil-plane sample spacing in meters.
    """

    field: np.ndarray
    support_radius: float
    wavelength: float = DEFAULT_WAVELENGTH
    focal_length: float = DEFAULT_FOCAL_LENGTH
    pitch: float = 5.5e-3 / 120

    def __post_init__(self):
        self.field = np.asarray(self.field, dtype=complex)
        if self.field.ndim != 2 or self.field.shape[0] != self.field.shape[1]:
            raise DimensionError("pupil must be a square grid")
        if self.support_radius > self.n / 2:
            raise DimensionError("support does not fit in the grid")
        outside = self.support() == 0
        if np.any(self.field[outside] != 0):
            raise ParameterError("pupil must vanish outside its support")

    @property
    def n(self) -> int:
        return self.field.shape[0]

    def support(self) -> np.ndarray:
        return circular_support(self.support_radius, self.n)


def make_pupil(N: int, support_radius: float, coeffs=None, **kwargs) -> PupilFunction:
    """Uniform-modulus pupil with a Zernike phase (``coeffs`` in radians RMS)."""
    sup = circular_support(support_radius, N)
    phase = zernike_phase(coeffs or {}, support_radius, N)
    return PupilFunction(sup * np.exp(1j * phase), support_radius, **kwargs)


@dataclass
class NoiseModel:
    """Shot, read and dark noise parameters.

    ``photon_scale`` is the expected photon count per unit intensity.
    """

    photon_scale: float = 1000.0
    read_noise_sigma: float = 0.0
    dark_offset: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.photon_scale < 0 or self.read_noise_sigma < 0:
            raise ParameterError("noise parameters must be non-negative")


def _pupil_array(P):
    return P.field if isinstance(P, PupilFunction) else np.asarray(P, dtype=complex)


def _mask_array(M, P):
    if isinstance(M, np.ndarray):
        return M
    if not isinstance(P, PupilFunction):
        raise ParameterError("rendering an aperture spec needs a PupilFunction")
    return render_mask(M, P.n, P.support_radius)


def psf_from_masked_pupil(P, M) -> np.ndarray:
    """Intensity PSF ``|fft2(M P)|^2``; its sum equals ``sum |M P|^2``."""
    p = _pupil_array(P)
    m = _mask_array(M, P)
    if m.shape != p.shape:
        raise DimensionError("mask and pupil grids differ")
    return np.abs(fft2(m * p)) ** 2


def otf(h) -> np.ndarray:
    """Optical transfer function ``fft2(h)`` normalized to 1 at DC."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ParameterError("PSF must be non-negative")
    H = fft2(h)
    c = h.shape[0] // 2
    if H[c, c].real <= 0:
        raise ParameterError("empty aperture: PSF has no energy")
    return H / H[c, c].real


def capture_image(o, P, spec, noise: Optional[NoiseModel] = None, frames: int = 1,
                  rng=None) -> np.ndarray:
    """Simulate a capture of scene ``o`` through the pupil masked by ``spec``.

    Parameters
    ----------
    o : ndarray
        Non-negative scene tile, same grid as the pupil.
    P : PupilFunction
    spec : ApertureSpec or ndarray
        Aperture, or an already rendered mask.
    noise : NoiseModel, optional
        None gives the noiseless image ``frames * (h * o)``.
    frames : int
        Number of independent frames summed.
    rng : numpy Generator, optional
        Overrides ``noise.rng_seed``.

    Notes
    -----
    The convolution zero-pads both operands to ``2N`` and crops back, so
    light blurred past the tile edge is lost rather than wrapped.
    """
    o = np.asarray(o, dtype=float)
    if np.any(o < 0):
        raise ParameterError("scene must be non-negative")
    h = psf_from_masked_pupil(P, spec)
    if o.shape != h.shape:
        raise DimensionError("scene and pupil grids differ")
    clean = np.maximum(convolve(o, h, linear=True), 0.0)
    if noise is None:
        return frames * clean
    rng = rng if rng is not None else np.random.default_rng(noise.rng_seed)
    out = np.zeros_like(clean)
    lam = noise.photon_scale * clean
    for _ in range(frames):
        f = rng.poisson(lam).astype(float)
        if noise.read_noise_sigma > 0:
            f += rng.normal(0.0, noise.read_noise_sigma, f.shape)
        out += np.maximum(f + noise.dark_offset, 0.0)
    return out


def photon_scale_for_snr(snr: float, level: float, read_noise_sigma: float = 0.0) -> float:
    """Photon scale at which a flat region of intensity ``level`` reaches ``snr``.

    Solves ``s L / sqrt(s L + sigma^2) = snr`` for the photon scale ``s``.
    """
    x = 0.5 * (snr ** 2 + np.sqrt(snr ** 4 + 4 * snr ** 2 * read_noise_sigma ** 2))
    return x / level


def measure_snr(image, flat_region) -> float:
    """Mean over standard deviation in ``flat_region = (row, col, height, width)``.

    Returns ``inf`` for a zero-variance region.
    """
    image = np.asarray(image, dtype=float)
    r, c, h, w = flat_region
    if r < 0 or c < 0 or r + h > image.shape[0] or c + w > image.shape[1] or h * w < 2:
        raise ParameterError("flat region outside the image")
    patch = image[r:r + h, c:c + w]
    sd = patch.std()
    return float("inf") if sd == 0 else float(patch.mean() / sd)


# ------------------------------------------------------------- wave oracle

def oracle_shift_px(point, P: PupilFunction):
    """Expected ``(row, col)`` PSF displacement for a point source at ``(x0, y0)`` meters."""
    x0, y0 = point
    scale = P.n * P.pitch / (P.wavelength * P.focal_length)
    return (-y0 * scale, -x0 * scale)


def wave_oracle_psf(P: PupilFunction, spec, point=(0.0, 0.0), relay=None) -> np.ndarray:
    """Camera-plane field of a point source, propagated through the full relay.

    The field after the unknown lens is the pupil with the point's tilt;
    it is masked, propagated by ``relay["d"]`` with the angular spectrum
    method (evanescent components zeroed), and Fourier transformed by the
    final lens of focal length ``relay["f3"]``.  Constant prefactors are
    dropped; the quadratic phase of the final lens is kept.

    Returns
    -------
    ndarray
        Complex field; ``abs(...)**2`` is the intensity PSF.
    """
    relay = relay or {}
    d = float(relay.get("d", 0.0))
    f3 = float(relay.get("f3", P.focal_length))
    N, du, lam = P.n, P.pitch, P.wavelength
    y, x = centered_grid(N)
    u, v = x * du, y * du
    x0, y0 = point
    tilt = np.exp(-2j * np.pi * (x0 * u + y0 * v) / (lam * P.focal_length))
    mask = _mask_array(spec, P)
    u2 = mask * P.field * tilt
    fx, fy = x / (N * du), y / (N * du)
    arg = 1.0 - (lam * fx) ** 2 - (lam * fy) ** 2
    prop = np.where(arg >= 0, np.exp(-2j * np.pi * d / lam * np.sqrt(np.maximum(arg, 0))), 0)
    u3 = ifft2(fft2(u2) * prop)
    xi, eta = lam * f3 * fx, lam * f3 * fy
    quad = np.exp(1j * np.pi * (xi ** 2 + eta ** 2) / (lam * f3))
    return quad * fft2(u3)


# ------------------------------------------------------------- scenes

def siemens_star(N: int, radius: float, spokes: int = 36, supersample: int = 4) -> np.ndarray:
    """Binary spoke target of the given radius, area-averaged on a fine grid."""
    s = supersample
    y, x = (np.mgrid[0:N * s, 0:N * s] + 0.5) / s - 0.5 - N // 2
    theta = np.arctan2(y, x)
    star = (np.cos(spokes * theta) > 0) & (np.hypot(y, x) <= radius)
    return star.reshape(N, s, N, s).mean(axis=(1, 3))


def bar_target(N: int, period: float, extent: float, vertical=True) -> np.ndarray:
    """Square-wave bar pattern of ``period`` px inside a centered ``extent`` box."""
    y, x = centered_grid(N)
    coord = x if vertical else y
    bars = (np.mod(coord, period) < period / 2).astype(float)
    box = (np.abs(x) <= extent / 2) & (np.abs(y) <= extent / 2)
    return bars * box


# ------------------------------------------------------------- capture sets

@dataclass
class CaptureEntry:
    spec: ApertureSpec
    image: np.ndarray
    frame_count: int = 1


@dataclass
class CaptureSet:
    """Aperture-tagged stack of intensity images plus acquisition metadata."""

    entries: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.entries:
            if np.any(np.asarray(e.image) < 0):
                raise ParameterError("capture images must be non-negative")

    def images(self, kind=None):
        return [e.image for e in self.entries if kind is None or _kind(e.spec) == kind]

    def specs(self, kind=None):
        return [e.spec for e in self.entries if kind is None or _kind(e.spec) == kind]


def _kind(spec):
    return type(spec).__name__


def simulate_captures(o, P: PupilFunction, specs, noise: Optional[NoiseModel] = None,
                      frames: int = 1) -> CaptureSet:
    """Capture ``o`` once per aperture; noise streams are independent per entry."""
    entries = []
    for i, spec in enumerate(specs):
        rng = None if noise is None else np.random.default_rng([noise.rng_seed, i])
        img = capture_image(o, P, spec, noise, frames, rng=rng)
        entries.append(CaptureEntry(spec, img, frames))
    meta = {"wavelength": P.wavelength, "focal_length": P.focal_length,
            "pupil_pitch": P.pitch, "pupil_radius": P.support_radius, "N": P.n,
            "noise": None if noise is None else vars(noise).copy(),
            "intensity_scale": frames * (1.0 if noise is None else noise.photon_scale)}
    return CaptureSet(entries, meta)
