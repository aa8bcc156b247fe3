"""Fourier-ptychographic synthesis of the full pupil from local PSF intensities."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .aperture import ScanSequence, render_mask
from .blur import BlurEstimate
from .errors import ParameterError
from .fields import circular_support, fft2, ifft2, estimate_shift, fourier_shift
from .simulator import PupilFunction


@dataclass
class SynthesisParams:
    """FP settings.

    ``stall_tol`` stops the sweeps once the mean data error changed by less
    than this (relative) over the last ``stall_window`` sweeps.
    """

    beta: float = 1.0
    max_sweeps: int = 100
    stall_tol: float = 1e-4
    stall_window: int = 5
    zero_guard: float = 1e-12


@dataclass
class SynthesisState:
    """Evolving pupil estimate and per-sweep diagnostics."""

    pupil_estimate: np.ndarray
    sweep_count: int = 0
    aperture_errors: list = field(default_factory=list)
    mean_errors: list = field(default_factory=list)


def _kernel_array(k):
    return k.kernel if isinstance(k, BlurEstimate) else np.asarray(k, dtype=float)


def synthesize_pupil(kernels, seq: ScanSequence, N: int, params: SynthesisParams = None,
                     init=None, template: PupilFunction = None):
    """Stitch local PSF intensities into a complex pupil.

    For each aperture in scan order the current pupil is masked and
    transformed, its modulus is replaced by the square root of the measured
    kernel (keeping the phase), and the difference is added back inside the
    aperture.

    Parameters
    ----------
    kernels : list of BlurEstimate or ndarray
        One non-negative intensity kernel per aperture, on the ``N x N`` grid.
    seq : ScanSequence
    N : int
    params : SynthesisParams, optional
    init : ndarray, optional
        Starting pupil; defaults to unit modulus and zero phase on the support.
    template : PupilFunction, optional
        Supplies wavelength, focal length and pitch for the returned pupil.

    Returns
    -------
    (PupilFunction, SynthesisState)
    """
    p = params or SynthesisParams()
    if len(kernels) != len(seq):
        raise ParameterError(f"{len(kernels)} kernels for {len(seq)} apertures")
    sup = circular_support(seq.pupil_radius, N)
    masks = [render_mask(a, N, seq.pupil_radius) for a in seq]
    amps = []
    for i, k in enumerate(kernels):
        b = _kernel_array(k)
        if b.shape != (N, N):
            raise ParameterError("kernel grid does not match N")
        if np.any(b < 0):
            raise ParameterError("kernels must be non-negative")
        if not b.any():
            warnings.warn(f"aperture {i} has an all-zero kernel and is skipped")
            amps.append(None)
        else:
            amps.append(np.sqrt(b))
    P = sup.astype(complex) if init is None else np.asarray(init, dtype=complex) * sup
    state = SynthesisState(P)
    for sweep in range(p.max_sweeps):
        errs = []
        for amp, W in zip(amps, masks):
            if amp is None:
                continue
            psi = fft2(W * P)
            a = np.abs(psi)
            errs.append(float(np.linalg.norm(a ** 2 - amp ** 2) / np.linalg.norm(amp ** 2)))
            keep = a > p.zero_guard * a.max()
            phase = np.ones_like(psi)
            phase[keep] = psi[keep] / a[keep]
            P = P + p.beta * W * ifft2(amp * phase - psi)
            P = P * sup
        state.aperture_errors.append(errs)
        state.mean_errors.append(float(np.mean(errs)))
        state.sweep_count = sweep + 1
        m = state.mean_errors
        if len(m) > p.stall_window:
            ref = m[-1 - p.stall_window]
            # the absolute floor stops sweeps that already sit at roundoff
            if abs(ref - m[-1]) <= p.stall_tol * ref + 1e-14:
                break
    state.pupil_estimate = P
    kw = {}
    if template is not None:
        kw = dict(wavelength=template.wavelength, focal_length=template.focal_length,
                  pitch=template.pitch)
    return PupilFunction(P, seq.pupil_radius, **kw), state


def normalize_pupil(P: PupilFunction) -> PupilFunction:
    """Scale a pupil to unit mean power on its support."""
    sup = P.support() > 0
    s = np.sqrt(np.mean(np.abs(P.field[sup]) ** 2))
    return PupilFunction(P.field / s, P.support_radius, P.wavelength, P.focal_length, P.pitch)


def psf_match_error(P_rec, P_true, masks, subpixel=False):
    """Largest relative L2 PSF mismatch over ``masks`` after one common translation.

    The translation aligns the summed PSFs of the recovered pupil to the
    true ones; it is rounded to whole pixels unless ``subpixel`` is set.

    Returns
    -------
    (float, ndarray)
        Worst error and the translation used.
    """
    pr = P_rec.field if isinstance(P_rec, PupilFunction) else P_rec
    pt = P_true.field if isinstance(P_true, PupilFunction) else P_true
    hr = [np.abs(fft2(m * pr)) ** 2 for m in masks]
    ht = [np.abs(fft2(m * pt)) ** 2 for m in masks]
    s = estimate_shift(sum(hr), sum(ht))
    if not subpixel:
        s = np.round(s)
    errs = []
    for a, b in zip(hr, ht):
        a2 = np.roll(a, s.astype(int), (0, 1)) if not subpixel else fourier_shift(a, s)
        errs.append(np.linalg.norm(a2 - b) / np.linalg.norm(b))
    return float(max(errs)), s
