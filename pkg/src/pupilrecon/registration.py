"""Frame registration, sinc rotation, radiometric calibration and frame averaging."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DimensionError, ParameterError
from .fields import estimate_shift, fourier_shift
from .simulator import CaptureEntry, CaptureSet

MAX_ROTATION_DEG = 10.0
MIN_CORRELATION = 0.2


@dataclass
class FrameTransform:
    """Maps a frame onto the reference: ``ref ~ fourier_shift(rotate_image_sinc(frame, rotation_deg), translation)``.

    ``score`` is the normalized cross-correlation after warping;
    ``registered`` is False for frames rejected by the correlation floor.
    """

    translation: tuple = (0.0, 0.0)
    rotation_deg: float = 0.0
    score: float = 1.0
    registered: bool = True

    def __post_init__(self):
        if abs(self.rotation_deg) >= MAX_ROTATION_DEG:
            raise ParameterError("rotation outside the registration search range")
        self.translation = (float(self.translation[0]), float(self.translation[1]))


@dataclass
class CalibrationPair:
    """Dark frame ``dark`` and flat reference ``reference`` for two-point calibration."""

    dark: np.ndarray
    reference: np.ndarray


def _shear(a, factor, axis):
    # shift line i along `axis` by factor * (i - n/2) with a Fourier phase ramp
    n = a.shape[axis]
    other = 1 - axis
    pos = np.arange(a.shape[other]) - a.shape[other] // 2
    k = np.fft.fftfreq(n)
    ramp = np.exp(-2j * np.pi * np.outer(factor * pos, k))
    if axis == 1:
        return np.fft.ifft(np.fft.fft(a, axis=1) * ramp, axis=1)
    return np.fft.ifft(np.fft.fft(a, axis=0) * ramp.T, axis=0)


def rotate_image_sinc(image, theta_deg: float) -> np.ndarray:
    """Rotate about the grid center by three Fourier-domain shears.

    Positive angles turn the image counterclockwise as displayed (row 0 at
    the top).  Each pass multiplies per-line spectra by a phase ramp, so the
    spectrum modulus is never filtered and ``theta = 0`` returns an exact copy.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise DimensionError("image must be 2D")
    if abs(theta_deg) >= 45:
        raise ParameterError("sinc rotation supports |theta| < 45 degrees")
    if theta_deg == 0:
        return image.copy()
    t = np.deg2rad(theta_deg)
    a = -np.tan(t / 2)
    b = np.sin(t)
    out = _shear(image.astype(complex), -a, axis=1)
    out = _shear(out, -b, axis=0)
    out = _shear(out, -a, axis=1)
    return out if np.iscomplexobj(image) else out.real


def apply_transform(frame, transform: FrameTransform) -> np.ndarray:
    """Warp a frame onto the reference."""
    return fourier_shift(rotate_image_sinc(frame, transform.rotation_deg), transform.translation)


def _ncc(a, b):
    a = a - a.mean()
    b = b - b.mean()
    d = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / d) if d > 0 else 0.0


def _translation(ref, img):
    s = estimate_shift(img, ref)
    return s, _ncc(ref, fourier_shift(img, s))


def register_frames(frames, reference_index: int = 0, coarse_steps: int = 21,
                    angle_tol: float = 1e-3, min_correlation: float = MIN_CORRELATION):
    """Rotation and translation of each frame relative to the reference frame.

    The rotation is bracketed by a coarse scan over +-10 degrees and refined
    by golden-section search on the correlation peak; the translation comes
    from the correlation peak refined to subpixel precision.

    Returns
    -------
    list of FrameTransform
        One per frame; frames whose best correlation stays below
        ``min_correlation`` are returned with ``registered=False``.
    """
    frames = [np.asarray(f, dtype=float) for f in frames]
    if len(frames) < 2:
        raise ParameterError("registration needs at least two frames")
    if not 0 <= reference_index < len(frames):
        raise ParameterError("reference index out of range")
    ref = frames[reference_index]
    for f in frames:
        if f.shape != ref.shape:
            raise DimensionError("frames must share one shape")
    lim = MAX_ROTATION_DEG - 1e-6
    grid = np.linspace(-lim, lim, coarse_steps)
    step = grid[1] - grid[0]
    out = []
    for i, f in enumerate(frames):
        if i == reference_index:
            out.append(FrameTransform())
            continue
        def cost(a):
            return -_translation(ref, rotate_image_sinc(f, a))[1]

        # the integer-shift peak is biased by subpixel offsets, so the scan
        # scores angles after subpixel alignment, like the refinement
        coarse = [cost(a) for a in grid]
        a0 = grid[int(np.argmin(coarse))]
        lo, hi = max(a0 - step, -lim), min(a0 + step, lim)

        r = minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                            options={"xatol": angle_tol})
        theta = float(r.x)
        s, score = _translation(ref, rotate_image_sinc(f, theta))
        out.append(FrameTransform(tuple(s), theta, score, score >= min_correlation))
    return out


def radiometric_calibrate(I, B, R):
    """Two-point calibration ``(I - B) / (R - B)``.

    Pixels with ``R - B <= 0`` are dead: they are set to 0 and flagged.

    Returns
    -------
    (ndarray, ndarray of bool)
        Calibrated image and dead-pixel mask.
    """
    I, B, R = (np.asarray(a, dtype=float) for a in (I, B, R))
    if not I.shape == B.shape == R.shape:
        raise DimensionError("image, dark and reference shapes differ")
    gain = R - B
    dead = ~(gain > 0)
    out = np.zeros_like(I)
    np.divide(I - B, gain, out=out, where=~dead)
    return out, dead


def average_frames(frames, transforms, grouping, metadata=None) -> CaptureSet:
    """Warp frames onto the reference and sum them per aperture.

    Parameters
    ----------
    frames : list of ndarray
    transforms : list of FrameTransform or None
        None means identity.  Unregistered frames are dropped.
    grouping : list of ApertureSpec
        Aperture of each frame; entries keep the order of first appearance.

    Returns
    -------
    CaptureSet
        One entry per aperture with at least one usable frame, holding the
        summed image and its frame count.
    """
    if transforms is None:
        transforms = [None] * len(frames)
    if not len(frames) == len(transforms) == len(grouping):
        raise ParameterError("frames, transforms and grouping must align")
    sums, counts, order = {}, {}, []
    for f, t, spec in zip(frames, transforms, grouping):
        if spec not in order:
            order.append(spec)
        key = order.index(spec)
        if t is not None and not t.registered:
            continue
        img = np.asarray(f, dtype=float) if t is None else apply_transform(f, t)
        sums[key] = img if key not in sums else sums[key] + img
        counts[key] = counts.get(key, 0) + 1
    entries = []
    for key, spec in enumerate(order):
        if key not in sums:
            warnings.warn(f"aperture {getattr(spec, 'id', key)} has no usable frames; omitted")
            continue
        entries.append(CaptureEntry(spec, np.maximum(sums[key], 0.0), counts[key]))
    return CaptureSet(entries, dict(metadata or {}))
