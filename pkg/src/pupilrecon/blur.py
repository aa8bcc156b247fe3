"""Local PSF estimation from an image pair by iterative Tikhonov deconvolution.

Given a sharp reference ``i_ref`` and a blurred image ``i_m`` of the same
scene, the kernel ``b`` with ``i_m = b * i_ref`` is estimated in the Fourier
domain with a preconditioned gradient update whose step is weighted by the
reference spectrum's relative modulus, followed each iteration by a spatial
projection (window, non-negativity, energy renormalization).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NonConvergenceError, ParameterError
from .fields import centered_grid, convolve, fft2, fourier_shift, ifft2

DIVERGENCE_PATIENCE = 5


@dataclass
class BlurParams:
    """Estimator settings.

    Attributes
    ----------
    alpha : float
        Base step size.
    delta : float
        Tikhonov weight of the update, relative to the squared peak of the
        reference spectrum.
    delta0 : float
        Same, for the Wiener-quotient initialization.
    max_iter : int
    tol : float
        Stop when the relative kernel update falls below this.
    window_frac : float
        Side of the centered square kernel window as a fraction of ``N``;
        values ``>= 1`` disable the window.
    nonneg, renormalize : bool
        Projection components.
    backtrack : bool
        Halve the step until the residual does not grow.  When False a
        residual that grows for five consecutive iterations raises
        :class:`NonConvergenceError`.
    max_halvings : int
    """

    alpha: float = 1.0
    delta: float = 1e-3
    delta0: float = 1e-2
    max_iter: int = 200
    tol: float = 1e-6
    window_frac: float = 0.25
    nonneg: bool = True
    renormalize: bool = True
    backtrack: bool = True
    max_halvings: int = 10


@dataclass
class BlurEstimate:
    """Estimated kernel with diagnostics."""

    kernel: np.ndarray
    centroid: tuple
    residual: float
    iterations_used: int
    residual_history: list = field(default_factory=list)


def kernel_centroid(k) -> tuple:
    """Intensity-weighted ``(row, col)`` offset of a kernel from the grid center."""
    k = np.asarray(k, dtype=float)
    y, x = centered_grid(k.shape[0])
    s = k.sum()
    if s == 0:
        return (0.0, 0.0)
    return (float((k * y).sum() / s), float((k * x).sum() / s))


def ncc(a, b) -> float:
    """Zero-mean normalized cross-correlation of two arrays."""
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


def _window(n, frac):
    if frac >= 1:
        return np.ones((n, n))
    y, x = centered_grid(n)
    hw = frac * n / 2
    return ((np.abs(y) <= hw) & (np.abs(x) <= hw)).astype(float)


def _project(K, win, total, p):
    k = np.real(ifft2(K)) * win
    if p.nonneg:
        k = np.maximum(k, 0.0)
    if p.renormalize:
        s = k.sum()
        if s > 0:
            k = k * (total / s)
    return k


def estimate_blur(i_ref, i_m, params: BlurParams = None, reference_psf=None) -> BlurEstimate:
    """Estimate the kernel relating a reference image to a blurred one.

    Parameters
    ----------
    i_ref : ndarray
        Sharp reference (center-aperture capture).
    i_m : ndarray
        Blurred capture of the same scene on the same grid.
    params : BlurParams, optional
    reference_psf : ndarray, optional
        Model of the reference image's own PSF.  When given, ``i_m`` is
        first convolved with it (normalized to unit sum), so that the
        estimated kernel approximates the blurred image's full PSF instead
        of its PSF deconvolved by the reference PSF.

    Returns
    -------
    BlurEstimate
        Kernel centered at ``N // 2``, summing to ``sum(i_m) / sum(i_ref)``
        when renormalization is on.

    Raises
    ------
    ParameterError
        If the reference carries no energy.
    NonConvergenceError
        When backtracking is off and the residual grows five iterations in
        a row; ``best`` holds the best estimate so far.
    """
    p = params or BlurParams()
    i_ref = np.asarray(i_ref, dtype=float)
    i_m = np.asarray(i_m, dtype=float)
    if i_ref.shape != i_m.shape or i_ref.ndim != 2 or i_ref.shape[0] != i_ref.shape[1]:
        raise DimensionError("image pair must share a square grid")
    if not i_ref.sum() > 0:
        raise ParameterError("degenerate reference: image has no energy")
    if reference_psf is not None:
        g = np.asarray(reference_psf, dtype=float)
        i_m = convolve(i_m, g / g.sum())
    n = i_ref.shape[0]
    total = i_m.sum() / i_ref.sum()

    A = n * fft2(i_ref)
    C = fft2(i_m)
    absA = np.abs(A)
    off_dc = absA.copy()
    off_dc[n // 2, n // 2] = 0.0
    amax = off_dc.max() if off_dc.max() > 0 else absA.max()
    w = np.minimum(absA / amax, 1.0)
    win = _window(n, p.window_frac)

    K = np.conj(A) * C / (absA ** 2 + p.delta0 * amax ** 2)
    k = _project(K, win, total, p)
    K = fft2(k)
    res = float(np.linalg.norm(C - A * K))
    history = [res]
    precond = p.alpha * w * np.conj(A) / (absA ** 2 + p.delta * amax ** 2)
    best = (res, k, 0)
    growth = 0
    it = 0
    for it in range(1, p.max_iter + 1):
        step = precond * (C - A * K)
        t = 1.0
        while True:
            k_new = _project(K + t * step, win, total, p)
            K_new = fft2(k_new)
            r_new = float(np.linalg.norm(C - A * K_new))
            if not p.backtrack or r_new <= res or t < 2.0 ** -p.max_halvings:
                break
            t *= 0.5
        if p.backtrack and r_new > res:
            it -= 1
            break
        upd = np.linalg.norm(k_new - k) / max(np.linalg.norm(k), 1e-300)
        growth = growth + 1 if r_new > res else 0
        k, K, res = k_new, K_new, r_new
        history.append(res)
        if res < best[0]:
            best = (res, k, it)
        if growth >= DIVERGENCE_PATIENCE:
            b = BlurEstimate(best[1], kernel_centroid(best[1]), best[0], best[2], history)
            raise NonConvergenceError("blur estimation diverged", best=b)
        if upd < p.tol:
            break
    return BlurEstimate(k, kernel_centroid(k), res, it, history)


def centroid_surrogate(estimate: BlurEstimate, spot) -> np.ndarray:
    """Reference spot moved to the estimate's centroid and scaled to its energy.

    This is the kernel model that keeps only the local PSF's displacement.
    """
    spot = np.asarray(spot, dtype=float)
    c0 = kernel_centroid(spot)
    c = estimate.centroid
    moved = np.maximum(fourier_shift(spot, (c[0] - c0[0], c[1] - c0[1])), 0.0)
    return moved * (estimate.kernel.sum() / moved.sum())
