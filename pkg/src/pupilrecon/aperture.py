"""Fourier-plane mask design: spiral small-aperture scans, GA-designed coded
apertures and their rotations, and rasterization onto the pupil grid."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .errors import DimensionError, ParameterError
from .fields import centered_grid, circular_support, fft2, zernike_phase

ALLOWED_ROTATIONS = (0, 45, 90, 135)


@dataclass(frozen=True)
class SmallCircular:
    """Small circular aperture ``W_m``.

    ``center`` is the ``(row, col)`` offset in pixels from the pupil center.
    """

    center: tuple
    radius: float
    id: int = 0


@dataclass(eq=False)
class Coded:
    """Binary ``K x K`` cell pattern spanning ``diameter`` pixels, rotated at render time."""

    pattern: np.ndarray
    rotation_deg: int = 0
    diameter: float = 0.0
    id: int = 0

    def __post_init__(self):
        p = np.asarray(self.pattern)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ParameterError("coded pattern must be a square cell grid")
        if not np.all((p == 0) | (p == 1)):
            raise ParameterError("coded pattern must be binary")
        if p.sum() == 0:
            raise ParameterError("coded pattern needs at least one open cell")
        if self.rotation_deg % 45:
            raise ParameterError("rotation must be a multiple of 45 degrees")
        self.pattern = p.astype(np.uint8)
        self.rotation_deg = int(self.rotation_deg) % 360

    def __eq__(self, other):
        return (isinstance(other, Coded) and np.array_equal(self.pattern, other.pattern)
                and self.rotation_deg == other.rotation_deg
                and self.diameter == other.diameter)


@dataclass(frozen=True)
class FullCircular:
    """Full circular aperture of the given radius."""

    radius: float
    id: int = 0


ApertureSpec = Union[SmallCircular, Coded, FullCircular]


@dataclass
class ScanSequence:
    """Ordered small-aperture scan with its design parameters."""

    apertures: list
    overlap_fraction: float
    pupil_radius: float
    spacing: float = field(default=0.0)

    def __len__(self):
        return len(self.apertures)

    def __iter__(self):
        return iter(self.apertures)

    def __getitem__(self, i):
        return self.apertures[i]


# ------------------------------------------------------------- spiral scan

def overlap_fraction(d: float, r: float = 1.0) -> float:
    """Intersection area of two radius-``r`` disks at center distance ``d``,
    as a fraction of one disk's area."""
    if d >= 2 * r:
        return 0.0
    if d <= 0:
        return 1.0
    lens = 2 * r * r * np.arccos(d / (2 * r)) - 0.5 * d * np.sqrt(4 * r * r - d * d)
    return lens / (np.pi * r * r)


def center_spacing(frac: float, r: float = 1.0) -> float:
    """Center distance at which two radius-``r`` disks overlap by ``frac`` of their area."""
    if not 0 < frac < 1:
        raise ParameterError("overlap fraction must lie in (0, 1)")
    return brentq(lambda d: overlap_fraction(d, r) - frac, 0.0, 2 * r, xtol=1e-14)


def spiral_small_apertures(pupil_radius_px: float, aperture_radius_px: float,
                           overlap_fraction: float = 0.4) -> ScanSequence:
    """Spiral-out sequence of small apertures covering the pupil.

    Rings of apertures are laid out at evenly spaced radii from ``d`` to the
    pupil radius, where ``d`` is the center spacing giving the requested
    consecutive overlap.  Each ring holds the fewest apertures whose chord
    spacing does not exceed ``d``, and every ring starts at the angle whose
    distance from the last aperture of the previous ring is exactly ``d``.

    Parameters
    ----------
    pupil_radius_px : float
    aperture_radius_px : float
        Must satisfy ``0 < r < pupil_radius_px``.
    overlap_fraction : float
        Target consecutive area overlap, in ``[0.3, 1)``.

    Returns
    -------
    ScanSequence
        Starts at the pupil center and winds outward.
    """
    Rp, r = float(pupil_radius_px), float(aperture_radius_px)
    if not 0 < r < Rp:
        raise ParameterError("aperture radius must lie in (0, pupil radius)")
    if not 0.3 <= overlap_fraction < 1:
        raise ParameterError("overlap fraction must lie in [0.3, 1)")
    d = center_spacing(overlap_fraction, r)
    centers = [(0.0, 0.0)]
    # a center aperture reaching to within a pixel of the rim already covers the pupil
    if r < Rp - 1:
        ring_pitch = d * np.sqrt(3) / 2
        n_rings = int(np.ceil((Rp - d) / ring_pitch)) + 1 if Rp > d else 1
        radii = np.linspace(d, max(Rp, d), n_rings) if n_rings > 1 else np.array([d])
        prev_rho, prev_ang = None, 0.0
        for rho in radii:
            n = int(np.ceil(np.pi / np.arcsin(min(1.0, d / (2 * rho)))))
            if prev_rho is None:
                start = 0.0
            else:
                cos_gap = (prev_rho ** 2 + rho ** 2 - d ** 2) / (2 * prev_rho * rho)
                start = prev_ang + np.arccos(np.clip(cos_gap, -1, 1))
            for i in range(n):
                a = start + 2 * np.pi * i / n
                centers.append((rho * np.sin(a), rho * np.cos(a)))
            prev_rho, prev_ang = rho, start + 2 * np.pi * (n - 1) / n
    aps = [SmallCircular(center=(float(cy), float(cx)), radius=r, id=i)
           for i, (cy, cx) in enumerate(centers)]
    return ScanSequence(aps, overlap_fraction, Rp, d)


# ------------------------------------------------------------- rendering

def _render_pattern(pattern, half_width, N):
    K = pattern.shape[0]
    y, x = centered_grid(N)
    cell = 2 * half_width / K
    # closed box: pixels exactly on the far edge belong to the last cell
    iy = np.clip(np.floor((y + half_width) / cell).astype(int), 0, K - 1)
    ix = np.clip(np.floor((x + half_width) / cell).astype(int), 0, K - 1)
    ok = (np.abs(y) <= half_width) & (np.abs(x) <= half_width)
    out = np.zeros((N, N))
    out[ok] = pattern[iy[ok], ix[ok]]
    return out


def _rotate_nearest(mask, angle_deg):
    # counterclockwise as displayed (row index grows downward)
    N = mask.shape[0]
    y, x = centered_grid(N)
    t = np.deg2rad(angle_deg)
    ys = x * np.sin(t) + y * np.cos(t)
    xs = x * np.cos(t) - y * np.sin(t)
    iy = np.rint(ys).astype(int) + N // 2
    ix = np.rint(xs).astype(int) + N // 2
    ok = (iy >= 0) & (iy < N) & (ix >= 0) & (ix < N)
    out = np.zeros_like(mask)
    out[ok] = mask[iy[ok], ix[ok]]
    return (out >= 0.5).astype(float)


def render_mask(spec: ApertureSpec, N: int, pupil_radius_px: float) -> np.ndarray:
    """Rasterize an aperture onto the ``N x N`` pupil grid.

    Every mask is clipped to the pupil disk.  For coded apertures, 90 degree
    rotations are exact cell permutations; a residual 45 degrees is applied by
    nearest-neighbor resampling of the rendered mask and re-binarization.
    """
    if pupil_radius_px > N / 2:
        raise DimensionError("pupil does not fit in the grid")
    pupil = circular_support(pupil_radius_px, N)
    if isinstance(spec, FullCircular):
        if spec.radius > N / 2:
            raise DimensionError("aperture does not fit in the grid")
        return circular_support(spec.radius, N) * pupil
    if isinstance(spec, SmallCircular):
        cy, cx = spec.center
        # the mask is clipped to the pupil, so only the center has to be on the grid
        if max(abs(cy), abs(cx)) > N / 2 - 1:
            raise DimensionError("aperture center lies off the grid")
        return circular_support(spec.radius, N, center=(cy, cx)) * pupil
    if isinstance(spec, Coded):
        half = spec.diameter / 2
        if half > N / 2 or half <= 0:
            raise DimensionError("coded aperture diameter does not fit in the grid")
        k90, rest = divmod(spec.rotation_deg, 90)
        mask = _render_pattern(np.rot90(spec.pattern, k90), half, N)
        if rest:
            mask = _rotate_nearest(mask, rest)
        return mask * pupil
    raise ParameterError(f"unknown aperture spec {type(spec).__name__}")


def rotate_coded(spec: Coded, angle_deg: int) -> Coded:
    """Return ``spec`` rotated by one of 0, 45, 90 or 135 degrees about its center."""
    if angle_deg not in ALLOWED_ROTATIONS:
        raise ParameterError(f"unsupported rotation {angle_deg}")
    return replace(spec, rotation_deg=(spec.rotation_deg + angle_deg) % 360)


# ------------------------------------------------------------- GA search

def _otf_modulus(mask, phase):
    h = np.abs(fft2(mask * np.exp(1j * phase))) ** 2
    H = fft2(h)
    c = H.shape[0] // 2
    return np.abs(H / H[c, c])


def pattern_fitness(pattern, noise_level=1e-3, N=128, radius=30.0,
                    defocus=(0.0, 1.5, 3.0), band_frac=0.95) -> float:
    """Worst-case in-band OTF strength of a cell pattern over a defocus ensemble.

    For each defocus value (radians RMS of Noll term 4) the in-band OTF
    modulus ``|H|`` is reduced to a soft minimum
    ``1 / sqrt(mean(1 / (|H|^2 + noise_level^2)))``; the fitness is the
    smallest of these.  With ``noise_level = 0`` the soft minimum becomes
    the plain minimum of ``|H|``.
    """
    pattern = np.asarray(pattern, dtype=float)
    mask = _render_pattern(pattern, radius, N) * circular_support(radius, N)
    if mask.sum() == 0:
        return 0.0
    y, x = centered_grid(N)
    band = np.hypot(y, x) <= band_frac * 2 * radius
    vals = []
    for d in defocus:
        A = _otf_modulus(mask, zernike_phase({4: d}, radius, N))[band]
        if noise_level > 0:
            vals.append(1 / np.sqrt(np.mean(1 / (A ** 2 + noise_level ** 2))))
        else:
            vals.append(A.min())
    return float(min(vals))


def coded_aperture_search(cells: int = 11, noise_level: float = 1e-3, generations: int = 60,
                          population: int = 40, rng_seed: int = 0, N: int = 128,
                          radius: float = 30.0, defocus=(0.0, 1.5, 3.0),
                          return_history: bool = False):
    """Genetic search for a binary pattern whose OTF avoids nulls.

    Tournament selection (size 3), single-point crossover on the flattened
    cell grid, per-cell mutation probability ``1/K^2`` and elitism of one.

    Returns
    -------
    ndarray or (ndarray, list of float)
        Best ``K x K`` pattern (uint8), plus the best fitness per generation
        when ``return_history`` is set.  The first history entry is the
        initial population's best.
    """
    K = int(cells)
    if K < 5:
        raise ParameterError("need at least 5x5 cells")
    if population < 8:
        raise ParameterError("population must be at least 8")
    rng = np.random.default_rng(rng_seed)
    n = K * K

    def fit(p):
        return pattern_fitness(p.reshape(K, K), noise_level, N, radius, defocus)

    pop = (rng.random((population, n)) < 0.5).astype(np.uint8)
    scores = np.array([fit(p) for p in pop])
    history = [float(scores.max())]

    def tournament():
        idx = rng.integers(0, population, 3)
        return pop[idx[np.argmax(scores[idx])]]

    for _ in range(generations):
        elite = pop[np.argmax(scores)].copy()
        children = [elite]
        while len(children) < population:
            a, b = tournament(), tournament()
            cut = rng.integers(1, n)
            child = np.concatenate([a[:cut], b[cut:]])
            flip = rng.random(n) < 1.0 / n
            child[flip] = 1 - child[flip]
            children.append(child)
        pop = np.array(children)
        scores = np.array([fit(p) for p in pop])
        history.append(float(scores.max()))
    best = pop[np.argmax(scores)].reshape(K, K)
    return (best, history) if return_history else best


# ------------------------------------------------------------- serialization

def spec_to_dict(spec: ApertureSpec) -> dict:
    if isinstance(spec, SmallCircular):
        return {"kind": "small", "id": spec.id, "center": list(spec.center), "radius": spec.radius}
    if isinstance(spec, FullCircular):
        return {"kind": "full", "id": spec.id, "radius": spec.radius}
    if isinstance(spec, Coded):
        return {"kind": "coded", "id": spec.id, "cells": spec.pattern.tolist(),
                "rotation_deg": spec.rotation_deg, "diameter": spec.diameter}
    raise ParameterError(f"unknown aperture spec {type(spec).__name__}")


def spec_from_dict(d: dict) -> ApertureSpec:
    kind = d.get("kind")
    if kind == "small":
        return SmallCircular(tuple(d["center"]), float(d["radius"]), int(d.get("id", 0)))
    if kind == "full":
        return FullCircular(float(d["radius"]), int(d.get("id", 0)))
    if kind == "coded":
        return Coded(np.array(d["cells"]), int(d.get("rotation_deg", 0)),
                     float(d["diameter"]), int(d.get("id", 0)))
    raise ParameterError(f"unknown aperture kind {kind!r}")


def pattern_to_dict(pattern, provenance) -> dict:
    """JSON form ``{K, cells, provenance}`` of a cell pattern."""
    p = np.asarray(pattern).astype(int)
    return {"K": int(p.shape[0]), "cells": p.ravel().tolist(), "provenance": provenance}


def pattern_from_dict(d: dict) -> np.ndarray:
    K = int(d["K"])
    cells = np.asarray(d["cells"], dtype=int)
    if cells.size != K * K:
        raise ParameterError("cell count does not match K")
    return cells.reshape(K, K).astype(np.uint8)


def coverage(seq: Sequence, N: int) -> float:
    """Fraction of pupil pixels inside at least one rendered aperture."""
    pupil = circular_support(seq.pupil_radius, N)
    union = np.zeros((N, N), bool)
    for spec in seq:
        union |= render_mask(spec, N, seq.pupil_radius) > 0
    return float(union[pupil > 0].mean())
