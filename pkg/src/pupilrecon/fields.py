"""Grid, transform and Zernike utilities shared by every other module.

Conventions
-----------
* Arrays are indexed ``[row, col]``.  Centered coordinates are integer
  offsets from the grid center at index ``N // 2``: ``y`` is the row offset
  and ``x`` the column offset.
* Transforms are unitary (``norm="ortho"``) with the DC term at the grid
  center.  Shifting to corner DC happens only inside ``fft2``/``ifft2``.
* With this convention the circular convolution of ``a`` and ``b`` (both
  centered) is ``ifft2(N * fft2(a) * fft2(b))`` for an ``N x N`` grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Mapping

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionError, ParameterError

PLANE_TAGS = ("sample", "pupil", "camera")


@dataclass
class ComplexField2D:
    """Square grid of complex samples with a physical pixel pitch.

    Parameters
    ----------
    data : ndarray
        ``N x N`` complex samples, ``N`` even and at least 32.
    pitch : float
        Sample spacing in meters per pixel.
    plane_tag : str
        One of ``"sample"``, ``"pupil"`` or ``"camera"``.
    """

    data: np.ndarray
    pitch: float = 1.0
    plane_tag: str = "pupil"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        _check_field_grid(self.data)
        if not self.pitch > 0:
            raise ParameterError("pitch must be positive")
        if self.plane_tag not in PLANE_TAGS:
            raise ParameterError(f"unknown plane tag {self.plane_tag!r}")

    @property
    def n(self) -> int:
        return self.data.shape[0]


@dataclass
class RealImage2D:
    """Square grid of real samples (intensities, kernels or residuals)."""

    data: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise DimensionError("image must be 2D")
        if not self.pitch > 0:
            raise ParameterError("pitch must be positive")


@dataclass
class ZernikeCoeffs:
    """Noll-indexed Zernike coefficients in radians RMS.

    Accepts any mapping ``{j: value}`` or iterable of ``(j, value)`` pairs;
    stored sorted by ``j`` with unique indices.
    """

    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        items = self.terms.items() if isinstance(self.terms, Mapping) else self.terms
        pairs = [(int(j), float(c)) for j, c in items]
        js = [j for j, _ in pairs]
        if len(set(js)) != len(js):
            raise ParameterError("duplicate Noll index")
        for j in js:
            _check_noll(j)
        self.terms = tuple(sorted(pairs))

    def as_dict(self) -> dict:
        return dict(self.terms)


def _check_field_grid(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square 2D grid, got shape {a.shape}")
    n = a.shape[0]
    if n % 2 or n < 32:
        raise DimensionError(f"grid size must be even and >= 32, got {n}")


def _check_square(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square 2D array, got shape {a.shape}")


def _check_noll(j):
    if int(j) != j or j < 1:
        raise ParameterError(f"unknown Noll index {j!r}")


# ---------------------------------------------------------------- transforms

def fft2(f) -> np.ndarray:
    """Unitary centered 2D DFT of a square array."""
    f = np.asarray(f)
    _check_square(f)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(f), norm="ortho"))


def ifft2(F) -> np.ndarray:
    """Inverse of :func:`fft2`."""
    F = np.asarray(F)
    _check_square(F)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(F), norm="ortho"))


def _fft2_any(a):
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a), norm="ortho"))


def _ifft2_any(a):
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a), norm="ortho"))


def convolve(a, b, linear=False) -> np.ndarray:
    """Convolve two centered real arrays of equal square shape.

    Parameters
    ----------
    a, b : ndarray
        ``N x N`` arrays; ``b`` is treated as a kernel centered at ``N // 2``.
    linear : bool
        If True both operands are zero-padded to ``2N`` before the circular
        convolution and the central ``N x N`` window is returned, which
        removes wrap-around.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_square(a)
    if a.shape != b.shape:
        raise DimensionError("operands must share a grid")
    n = a.shape[0]
    if linear:
        m = 2 * n
        out = np.real(ifft2(m * fft2(pad_center(a, m)) * fft2(pad_center(b, m))))
        return crop_center(out, n)
    return np.real(ifft2(n * fft2(a) * fft2(b)))


# ---------------------------------------------------------------- geometry

def centered_grid(n: int):
    """Return ``(y, x)`` float offsets from the grid center for an ``n x n`` grid."""
    y, x = np.mgrid[0:n, 0:n] - n // 2
    return y.astype(float), x.astype(float)


def circular_support(radius_px: float, N: int, center=(0.0, 0.0)) -> np.ndarray:
    """Binary disk: a pixel is inside iff its center lies within ``radius_px``.

    Parameters
    ----------
    radius_px : float
        Disk radius in pixels, at most ``N / 2``.
    N : int
        Grid size.
    center : tuple of float
        ``(row, col)`` offset of the disk center from the grid center.
    """
    if radius_px < 0 or radius_px > N / 2:
        raise ParameterError("radius must lie in [0, N/2]")
    y, x = centered_grid(N)
    d2 = (y - center[0]) ** 2 + (x - center[1]) ** 2
    return (d2 <= radius_px * radius_px).astype(float)


def pad_center(a, m: int) -> np.ndarray:
    """Zero-pad a square array to ``m x m`` keeping its center at ``m // 2``."""
    a = np.asarray(a)
    n = a.shape[0]
    if m < n:
        raise DimensionError("pad size smaller than input")
    out = np.zeros((m, m), dtype=a.dtype)
    s = m // 2 - n // 2
    out[s:s + n, s:s + n] = a
    return out


def crop_center(a, n: int) -> np.ndarray:
    """Extract the central ``n x n`` window (inverse of :func:`pad_center`)."""
    a = np.asarray(a)
    m = a.shape[0]
    if n > m:
        raise DimensionError("crop size larger than input")
    s = m // 2 - n // 2
    return a[s:s + n, s:s + n].copy()


def fourier_shift(a, shift) -> np.ndarray:
    """Translate an array by a (sub)pixel ``(d_row, d_col)`` with a phase ramp.

    Real input yields real output.  A zero shift returns an exact copy.
    """
    a = np.asarray(a)
    if shift[0] == 0 and shift[1] == 0:
        return a.copy()
    ny, nx = a.shape
    ky = (np.arange(ny) - ny // 2)[:, None] / ny
    kx = (np.arange(nx) - nx // 2)[None, :] / nx
    ramp = np.exp(-2j * np.pi * (ky * shift[0] + kx * shift[1]))
    out = _ifft2_any(_fft2_any(a) * ramp)
    return np.real(out) if np.isrealobj(a) else out


def estimate_shift(a, b) -> np.ndarray:
    """Subpixel translation ``s`` such that ``fourier_shift(a, s)`` best matches ``b``.

    Integer estimate from the cross-correlation peak, refined by maximizing
    the Fourier-interpolated correlation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError("arrays must share a shape")
    ny, nx = a.shape
    X = np.conj(_fft2_any(a)) * _fft2_any(b)
    cc = np.real(_ifft2_any(X))
    p = np.unravel_index(np.argmax(cc), cc.shape)
    s0 = np.array([p[0] - ny // 2, p[1] - nx // 2], float)
    ky = (np.arange(ny) - ny // 2)[:, None] / ny
    kx = (np.arange(nx) - nx // 2)[None, :] / nx

    def cost(s):
        return -np.real(np.sum(X * np.exp(2j * np.pi * (ky * s[0] + kx * s[1]))))

    res = minimize(cost, s0, method="Nelder-Mead",
                   options={"xatol": 1e-5, "fatol": 1e-14, "maxiter": 400})
    return res.x


def camera_pitch(wavelength: float, focal_length: float, N: int, pupil_pitch: float) -> float:
    """Camera-plane pitch conjugate to a pupil-plane pitch: ``lambda f / (N du)``."""
    return wavelength * focal_length / (N * pupil_pitch)


def check_conjugate_pitches(pupil: ComplexField2D, camera_pitch_m: float,
                            wavelength: float, focal_length: float, rtol=1e-9):
    """Raise if two pitches violate the discrete Fourier relation."""
    expected = camera_pitch(wavelength, focal_length, pupil.n, pupil.pitch)
    if abs(camera_pitch_m - expected) > rtol * expected:
        raise ParameterError(
            f"camera pitch {camera_pitch_m:g} inconsistent with pupil pitch (expected {expected:g})")


# ---------------------------------------------------------------- Zernike

def noll_to_nm(j: int):
    """Convert a Noll index to radial order ``n`` and signed azimuthal ``m``.

    Even ``j`` maps to cosine terms (``m > 0``), odd ``j`` to sine terms.
    """
    _check_noll(j)
    n = 0
    j1 = j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def zernike_radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho, dtype=float)
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * factorial(n - k) / (
            factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k))
        out += c * rho ** (n - 2 * k)
    return out


def zernike_noll(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Orthonormal (unit RMS over the unit disk) Zernike polynomial ``Z_j``."""
    n, m = noll_to_nm(j)
    r = zernike_radial(n, m, rho)
    if m == 0:
        return np.sqrt(n + 1) * r
    ang = np.cos(m * theta) if m > 0 else np.sin(-m * theta)
    return np.sqrt(2 * (n + 1)) * r * ang


def zernike_phase(coeffs, support_radius_px: float, N: int) -> np.ndarray:
    """Phase map in radians from Noll-indexed coefficients.

    Parameters
    ----------
    coeffs : ZernikeCoeffs or mapping
        ``{j: radians RMS}``.
    support_radius_px : float
        Radius of the unit disk in pixels, ``0 < r <= N/2``.
    N : int
        Grid size.

    Returns
    -------
    ndarray
        ``N x N`` phase, zero outside the disk.
    """
    if not isinstance(coeffs, ZernikeCoeffs):
        coeffs = ZernikeCoeffs(coeffs)
    if not 0 < support_radius_px <= N / 2:
        raise ParameterError("support radius must lie in (0, N/2]")
    y, x = centered_grid(N)
    rho = np.hypot(y, x) / support_radius_px
    theta = np.arctan2(y, x)
    inside = rho <= 1
    phase = np.zeros((N, N))
    for j, c in coeffs.terms:
        phase += c * zernike_noll(j, rho, theta)
    return phase * inside
