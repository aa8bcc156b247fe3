"""Multi-aperture iterative Tikhonov deconvolution and OTF coverage analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aperture import Coded, FullCircular, render_mask, rotate_coded
from .errors import DimensionError, NonConvergenceError, ParameterError
from .fields import centered_grid, estimate_shift, fft2, fourier_shift, ifft2
from .simulator import PupilFunction, otf, psf_from_masked_pupil

BIG_MASK_ROTATIONS = (0, 45, 90, 135)
DIVERGENCE_PATIENCE = 5


def build_big_mask_set(coded: Coded, pupil_radius: float):
    """Full circular aperture followed by the coded aperture at 0, 45, 90 and 135 degrees."""
    base = Coded(coded.pattern, 0, coded.diameter or 2 * pupil_radius, 0)
    masks = [FullCircular(pupil_radius, id=0)]
    for i, a in enumerate(BIG_MASK_ROTATIONS, start=1):
        r = rotate_coded(base, a)
        masks.append(Coded(r.pattern, r.rotation_deg, r.diameter, i))
    return masks


def _render_all(masks, P: PupilFunction):
    return [m if isinstance(m, np.ndarray) else render_mask(m, P.n, P.support_radius)
            for m in masks]


def band_mask(N: int, pupil_radius: float, frac: float) -> np.ndarray:
    """Frequencies within ``frac`` of the incoherent cutoff (twice the pupil radius)."""
    y, x = centered_grid(N)
    return np.hypot(y, x) <= frac * 2 * pupil_radius


def combined_otf_coverage(P: PupilFunction, masks, band_frac=0.95, null_threshold=1e-3) -> dict:
    """OTF strength of a mask set over the incoherent band.

    The first mask is taken as the full aperture.  Each OTF is normalized to
    one at DC; the combination is ``sqrt(sum_n |H_n|^2)``.
    """
    rendered = _render_all(masks, P)
    band = band_mask(P.n, P.support_radius, band_frac)
    mods = [np.abs(otf(psf_from_masked_pupil(P, m)))[band] for m in rendered]
    comb = np.sqrt(sum(a ** 2 for a in mods))
    return {
        "min_modulus_combined": float(comb.min()),
        "min_modulus_full_only": float(mods[0].min()),
        "null_fraction_each": [float((a < null_threshold).mean()) for a in mods],
        "null_fraction_combined": float((comb < null_threshold).mean()),
    }


@dataclass
class DeconvParams:
    """Deconvolution settings; ``delta`` is relative to ``max_n |H_n|^2``.

    Frequencies where the combined OTF is weak converge slowly, hence the
    generous iteration budget.
    """

    alpha: float = 1.0
    delta: float = 1e-3
    max_iter: int = 1000
    tol: float = 1e-7
    weights: tuple = None
    backtrack: bool = True
    max_halvings: int = 10


@dataclass
class DeconvResult:
    image: np.ndarray
    residual_history: list = field(default_factory=list)
    iterations_used: int = 0


def transfer_functions(P: PupilFunction, masks):
    """Per-mask transfer functions ``N * fft2(h_n)`` with PSFs recomputed from the pupil."""
    return [P.n * fft2(psf_from_masked_pupil(P, m)) for m in _render_all(masks, P)]


def deconvolve(captures, P: PupilFunction, masks, params: DeconvParams = None) -> DeconvResult:
    """Recover the latent image from captures taken through several big masks.

    Iterates ``O += alpha * sum_n w_n conj(H_n)(Phi_n - H_n O) / (sum_n w_n |H_n|^2 + delta)``
    from the Wiener solution, projecting onto non-negative images after
    every step.  Steps that raise the data residual are halved.

    Parameters
    ----------
    captures : list of ndarray
        ``phi_n``, one per mask, on the pupil grid.
    P : PupilFunction
    masks : list of ApertureSpec or ndarray
    params : DeconvParams, optional

    Returns
    -------
    DeconvResult
    """
    p = params or DeconvParams()
    if not captures:
        raise ParameterError("no captures to deconvolve")
    if len(captures) != len(masks):
        raise ParameterError("one mask per capture is required")
    N = P.n
    for c in captures:
        if np.shape(c) != (N, N):
            raise DimensionError("capture grid differs from the pupil grid")
    w = np.ones(len(captures)) if p.weights is None else np.asarray(p.weights, float)
    T = transfer_functions(P, masks)
    Phi = [fft2(np.asarray(c, float)) for c in captures]
    S = sum(wi * np.abs(t) ** 2 for wi, t in zip(w, T))
    d = p.delta * max(np.abs(t).max() ** 2 for t in T)
    den = S + d

    def residual(O):
        return float(np.sqrt(sum(wi * np.linalg.norm(f - t * O) ** 2
                                 for wi, t, f in zip(w, T, Phi))))

    def project(O):
        return fft2(np.maximum(np.real(ifft2(O)), 0.0))

    O = project(sum(wi * np.conj(t) * f for wi, t, f in zip(w, T, Phi)) / den)
    res = residual(O)
    hist = [res]
    best = (res, O, 0)
    growth = 0
    it = 0
    for it in range(1, p.max_iter + 1):
        step = p.alpha * sum(wi * np.conj(t) * (f - t * O) for wi, t, f in zip(w, T, Phi)) / den
        t_ = 1.0
        while True:
            O_new = project(O + t_ * step)
            r_new = residual(O_new)
            if not p.backtrack or r_new <= res or t_ < 2.0 ** -p.max_halvings:
                break
            t_ *= 0.5
        if p.backtrack and r_new > res:
            it -= 1
            break
        upd = np.linalg.norm(O_new - O) / max(np.linalg.norm(O), 1e-300)
        growth = growth + 1 if r_new > res else 0
        O, res = O_new, r_new
        hist.append(res)
        if res < best[0]:
            best = (res, O, it)
        if growth >= DIVERGENCE_PATIENCE:
            img = np.maximum(np.real(ifft2(best[1])), 0.0)
            raise NonConvergenceError("deconvolution diverged",
                                      best=DeconvResult(img, hist, best[2]))
        if upd < p.tol:
            break
    return DeconvResult(np.maximum(np.real(ifft2(O)), 0.0), hist, it)


def in_band_error(o_rec, o_true, pupil_radius: float, band_frac=0.9, align=True) -> float:
    """Relative L2 spectral error inside ``band_frac`` of the incoherent cutoff.

    With ``align`` the estimate is first translated (subpixel) onto the
    truth, since a global tilt of a recovered pupil shifts the whole image.
    """
    o_rec = np.asarray(o_rec, float)
    o_true = np.asarray(o_true, float)
    if align:
        o_rec = fourier_shift(o_rec, estimate_shift(o_rec, o_true))
    band = band_mask(o_true.shape[0], pupil_radius, band_frac)
    Ft = fft2(o_true)
    Fr = fft2(o_rec)
    return float(np.linalg.norm((Fr - Ft)[band]) / np.linalg.norm(Ft[band]))


def artifact_metric(o_rec, o_true, support, pupil_radius: float, highpass_frac=0.1,
                    band_frac=0.9) -> float:
    """High-pass energy outside the object support over the in-band signal energy.

    Parameters
    ----------
    support : ndarray of bool
        Region occupied by the object (margins included).
    highpass_frac : float
        Frequencies below this fraction of the cutoff are removed before
        measuring energy outside the support.
    """
    N = np.shape(o_rec)[0]
    y, x = centered_grid(N)
    kr = np.hypot(y, x)
    hp = kr > highpass_frac * 2 * pupil_radius
    o_hp = np.real(ifft2(fft2(o_rec) * hp))
    outside = ~np.asarray(support, bool)
    band = band_mask(N, pupil_radius, band_frac)
    sig = np.linalg.norm(fft2(o_true)[band]) ** 2
    return float(np.sum(o_hp[outside] ** 2) / sig)
