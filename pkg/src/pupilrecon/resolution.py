"""Diffraction-limit arithmetic and USAF 1951 target lookup."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

MTF_FLOOR = 0.05


def numerical_aperture(diameter: float, focal_length: float) -> float:
    """Small-angle NA of a circular aperture: half-diameter over focal length."""
    if diameter <= 0 or focal_length <= 0:
        raise ParameterError("diameter and focal length must be positive")
    return diameter / 2 / focal_length


def coherent_cutoff_period(wavelength: float, na: float) -> float:
    """Finest period passed by coherent imaging, ``lambda / NA``."""
    return wavelength / na


def incoherent_cutoff_period(wavelength: float, na: float) -> float:
    """Finest period passed by incoherent imaging, ``lambda / (2 NA)``."""
    return wavelength / (2 * na)


def usaf_lp_per_mm(group: int, element: int) -> float:
    """Line pairs per millimeter of a USAF 1951 group/element."""
    if not 1 <= element <= 6:
        raise ParameterError("element must be in 1..6")
    return 2.0 ** (group + (element - 1) / 6)


def incoherent_mtf(freq_ratio):
    """Diffraction-limited MTF of a circular pupil at ``f / f_cutoff``."""
    x = np.clip(np.asarray(freq_ratio, dtype=float), 0.0, 1.0)
    return 2 / np.pi * (np.arccos(x) - x * np.sqrt(1 - x * x))


def _elements(groups=range(-2, 10)):
    return [(g, e) for g in groups for e in range(1, 7)]


def usaf_bracket(diameter: float, focal_length: float, wavelength: float,
                 mtf_floor: float = MTF_FLOOR):
    """USAF elements bracketing the resolution limit of a circular aperture.

    The lower end is the coarsest element at or beyond the coherent cutoff
    frequency ``NA / lambda``.  The upper end is the finest element whose
    diffraction-limited incoherent contrast is still at least ``mtf_floor``.

    Returns
    -------
    ((int, int), (int, int))
        ``(group, element)`` pairs.
    """
    na = numerical_aperture(diameter, focal_length)
    f_coh = na / wavelength / 1e3  # lp/mm
    f_inc = 2 * f_coh
    els = _elements()
    lower = next(ge for ge in els if usaf_lp_per_mm(*ge) >= f_coh)
    upper = [ge for ge in els if incoherent_mtf(usaf_lp_per_mm(*ge) / f_inc) >= mtf_floor][-1]
    return lower, upper


def resolution_report(diameter: float, focal_length: float, wavelength: float) -> dict:
    """Cutoff periods (meters) and the USAF bracket for one aperture."""
    na = numerical_aperture(diameter, focal_length)
    lo, hi = usaf_bracket(diameter, focal_length, wavelength)
    return {
        "numerical_aperture": na,
        "coherent_cutoff_period": coherent_cutoff_period(wavelength, na),
        "incoherent_cutoff_period": incoherent_cutoff_period(wavelength, na),
        "usaf_bracket": {"lower": {"group": lo[0], "element": lo[1]},
                         "upper": {"group": hi[0], "element": hi[1]}},
    }
