"""End-to-end orchestration: simulate or load captures, then per tile estimate
local PSFs, synthesize the pupil and deconvolve, and finally stitch the tiles."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .aperture import (Coded, FullCircular, ScanSequence, coded_aperture_search,
                       render_mask, spiral_small_apertures)
from .blur import BlurParams, estimate_blur
from .deconvolution import (DeconvParams, build_big_mask_set, combined_otf_coverage, deconvolve,
                            in_band_error)
from .errors import ConfigError, DataIOError, NonConvergenceError, PupilReconError
from .fields import circular_support, fft2
from .registration import average_frames, radiometric_calibrate, register_frames
from .simulator import (DEFAULT_FOCAL_LENGTH, DEFAULT_WAVELENGTH, CaptureEntry, CaptureSet,
                        NoiseModel, PupilFunction, capture_image, make_pupil, measure_snr,
                        photon_scale_for_snr, psf_from_masked_pupil, siemens_star)
from .synthesis import SynthesisParams, normalize_pupil, psf_match_error, synthesize_pupil
from .tiles import TileGrid, merge_tiles, split_tiles

ACCEPTANCE_ABERRATION = {4: 3.0, 7: 1.5, 8: -2.0, 11: 1.0}
DEFAULT_CODED = {"cells": 11, "noise_level": 1e-3, "generations": 60, "population": 40, "seed": 0}
# Wiener-quotient kernels with almost no regularization: pupil synthesis is
# sensitive to the faint kernel tails that stronger damping removes.  Noisy
# captures need a larger delta0.
PIPELINE_BLUR = {"window_frac": 0.75, "max_iter": 0, "delta0": 1e-10}


# ------------------------------------------------------------- simulation

def coded_pattern(spec: dict) -> np.ndarray:
    """Coded-aperture cell pattern from a file (``{"file": ...}``) or a seeded search."""
    spec = {**DEFAULT_CODED, **(spec or {})}
    if "file" in spec:
        return io.read_pattern(spec["file"])
    return coded_aperture_search(spec["cells"], spec["noise_level"], spec["generations"],
                                 spec["population"], spec["seed"])


@dataclass
class SimulationRecipe:
    """Synthetic acquisition: a row of ``n_tiles`` square tiles, each a Siemens
    star seen through its own pupil.

    ``small_radius`` defaults to ``pupil_radius / 2.75``.  ``snr`` is the SNR
    of a flat unit-intensity region in the full-aperture capture; None gives
    noiseless captures.
    """

    tile_size: int = 256
    n_tiles: int = 1
    pupil_radius: float = 60.0
    small_radius: float = None
    overlap_fraction: float = 0.4
    aberrations: list = None
    star_radius: float = 24.0
    spokes: int = 36
    snr: float = None
    read_noise: float = 0.0
    frames: int = 1
    seed: int = 0
    coded: dict = field(default_factory=dict)
    wavelength: float = DEFAULT_WAVELENGTH
    focal_length: float = DEFAULT_FOCAL_LENGTH
    pupil_pitch: float = 5.5e-3 / 120

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationRecipe":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        r = cls(**d)
        if r.aberrations is not None:
            r.aberrations = [{int(k): float(v) for k, v in a.items()} for a in r.aberrations]
        return r


@dataclass
class GroundTruthScene:
    """Simulated scene with everything needed to score a reconstruction."""

    image: np.ndarray
    pupils: list
    captures: CaptureSet
    grid: TileGrid
    scan: ScanSequence
    big_masks: list


def simulate_scene(recipe: SimulationRecipe) -> GroundTruthScene:
    """Render the scene and capture it through every small and big aperture.

    Each tile is imaged with its own pupil (isoplanatic within the tile),
    and the tile captures are placed side by side.
    """
    r = recipe
    T, R = r.tile_size, r.pupil_radius
    ab = r.aberrations or [ACCEPTANCE_ABERRATION] * r.n_tiles
    if len(ab) != r.n_tiles:
        raise ConfigError("one aberration set per tile is required")
    kw = dict(wavelength=r.wavelength, focal_length=r.focal_length, pitch=r.pupil_pitch)
    pupils = [make_pupil(T, R, a, **kw) for a in ab]
    scan = spiral_small_apertures(R, r.small_radius or R / 2.75, r.overlap_fraction)
    pattern = coded_pattern(r.coded)
    big = build_big_mask_set(Coded(pattern, 0, 2 * R), R)
    specs = list(scan) + big
    tile_scene = siemens_star(T, r.star_radius, r.spokes)
    image = np.tile(tile_scene, (1, r.n_tiles))
    noise = None
    if r.snr is not None:
        area = pupils[0].support().sum()
        noise = NoiseModel(photon_scale_for_snr(r.snr, area, r.read_noise), r.read_noise, 0.0, r.seed)
    entries = []
    for i, spec in enumerate(specs):
        img = np.zeros(image.shape)
        for t, P in enumerate(pupils):
            rng = None if noise is None else np.random.default_rng([r.seed, i, t])
            img[:, t * T:(t + 1) * T] = capture_image(tile_scene, P, spec, noise, r.frames, rng=rng)
        entries.append(CaptureEntry(spec, img, r.frames))
    meta = {"wavelength": r.wavelength, "focal_length": r.focal_length,
            "pupil_pitch": r.pupil_pitch, "pupil_radius": R, "tile_size": T, "tile_overlap": 0,
            "intensity_scale": r.frames * (1.0 if noise is None else noise.photon_scale),
            "recipe": asdict(r)}
    grid = TileGrid(image.shape, T, 0)
    return GroundTruthScene(image, pupils, CaptureSet(entries, meta), grid, scan, big)


# ------------------------------------------------------------- per tile

@dataclass
class PipelineParams:
    blur: BlurParams = field(default_factory=lambda: BlurParams(**PIPELINE_BLUR))
    synthesis: SynthesisParams = field(default_factory=lambda: SynthesisParams(max_sweeps=80))
    deconvolution: DeconvParams = field(default_factory=DeconvParams)
    compare_full_only: bool = True

    @classmethod
    def from_config(cls, cfg: dict) -> "PipelineParams":
        def build(kind, key, base):
            over = cfg.get(key, {}) or {}
            names = {f.name for f in fields(kind)}
            bad = set(over) - names
            if bad:
                raise ConfigError(f"unknown {key} parameters: {sorted(bad)}")
            return replace(base, **over)

        p = cls()
        return cls(build(BlurParams, "blur", p.blur),
                   build(SynthesisParams, "synthesis", p.synthesis),
                   build(DeconvParams, "deconvolution", p.deconvolution),
                   bool(cfg.get("compare_full_only", True)))


@dataclass
class TileResult:
    """Outputs of one tile: deconvolved image, pupil, kernels and diagnostics."""

    tile_id: int
    image: np.ndarray
    pupil: PupilFunction
    kernels: list
    fp_errors: list
    residual_curve: list
    otf_coverage: dict
    full_only_image: np.ndarray = None
    warnings: list = field(default_factory=list)


class StageError(PupilReconError):
    """Failure of one pipeline stage, tagged with the stage name and tile id."""

    def __init__(self, stage, tile, cause):
        super().__init__(f"{stage} failed on tile {tile}: {cause}")
        self.stage, self.tile, self.cause = stage, tile, cause
        self.exit_code = getattr(cause, "exit_code", 1)


def reference_index(specs) -> int:
    """Index of the small aperture closest to the pupil center."""
    return int(np.argmin([np.hypot(*s.center) for s in specs]))


def center_spot(spec, N: int, pupil_radius: float) -> np.ndarray:
    """Aberration-free PSF of one small aperture."""
    sup = circular_support(pupil_radius, N)
    return np.abs(fft2(render_mask(spec, N, pupil_radius) * sup)) ** 2


def reconstruct_tile(tile_id, small_images, small_specs, big_images, big_specs,
                     pupil_radius, params: PipelineParams, template: PupilFunction = None):
    """Run blur estimation, pupil synthesis and deconvolution on one tile.

    The local kernel of aperture ``m`` is estimated from the center-aperture
    capture and capture ``m`` re-blurred by the aberration-free center spot,
    so that it approximates the full local PSF; kernels are scaled to the
    center spot's energy before pupil synthesis.
    """
    N = small_images[0].shape[0]
    notes = []
    ref = reference_index(small_specs)
    seq = ScanSequence(list(small_specs), float("nan"), pupil_radius)
    spot = center_spot(small_specs[ref], N, pupil_radius)
    kernels = []
    for m, img in enumerate(small_images):
        try:
            est = estimate_blur(small_images[ref], img, params.blur, reference_psf=spot)
        except NonConvergenceError as e:
            est = e.best
            notes.append(f"estimate_blur: aperture {m} diverged, best iterate kept")
        except PupilReconError as e:
            raise StageError("estimate_blur", tile_id, e) from e
        kernels.append(np.maximum(est.kernel, 0.0) * spot.sum())
    try:
        P, state = synthesize_pupil(kernels, seq, N, params.synthesis, template=template)
        P = normalize_pupil(P)
    except PupilReconError as e:
        raise StageError("synthesize_pupil", tile_id, e) from e
    try:
        cov = combined_otf_coverage(P, big_specs)
        res = deconvolve(big_images, P, big_specs, params.deconvolution)
        full = None
        if params.compare_full_only:
            i_full = [i for i, s in enumerate(big_specs) if isinstance(s, FullCircular)]
            if i_full:
                k = i_full[0]
                full = deconvolve([big_images[k]], P, [big_specs[k]], params.deconvolution).image
    except PupilReconError as e:
        raise StageError("deconvolve", tile_id, e) from e
    return TileResult(tile_id, res.image, P, kernels, state.mean_errors, res.residual_history,
                      cov, full, notes)


# ------------------------------------------------------------- orchestration

def worker_count(n_jobs: int, requested=None) -> int:
    """Pool size: requested (or CPU count), capped by ``CACAO_THREADS`` and the job count."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("CACAO_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as e:
            raise ConfigError("CACAO_THREADS must be an integer") from e
    return max(1, min(n, n_jobs))


def psf_similarity(a, b) -> float:
    """Peak normalized cross-correlation over all circular shifts."""
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    d = np.sqrt((a * a).sum() * (b * b).sum())
    if d == 0:
        return 0.0
    return float(np.real(np.fft.ifft2(np.fft.fft2(a) * np.conj(np.fft.fft2(b)))).max() / d)


def _load_captures(cfg, errors):
    """CaptureSet and ground truth (if simulated) from the config."""
    if "simulate" in cfg:
        truth = simulate_scene(SimulationRecipe.from_dict(cfg["simulate"] or {}))
        return truth.captures, truth
    if "captures" not in cfg:
        raise ConfigError("config needs 'captures' (directory) or 'simulate' (recipe)")
    man = io.read_capture_manifest(cfg["captures"])
    cal = cfg.get("calibration")
    dark = ref = None
    if cal:
        dark, ref = io.read_pfm(cal["dark"]), io.read_pfm(cal["reference"])
    frames, grouping = [], []
    for e in man["entries"]:
        for f in e["frames"]:
            if cal:
                f, dead = radiometric_calibrate(f, dark, ref)
                if dead.any():
                    errors.append({"stage": "calibrate", "tile": None, "type": "warning",
                                   "message": f"{int(dead.sum())} dead pixels set to 0"})
            frames.append(f)
            grouping.append(e["spec"])
    transforms = None
    if cfg.get("register"):
        transforms = [None] * len(frames)
        for spec in {id(s): s for s in grouping}.values():
            idx = [i for i, s in enumerate(grouping) if s is spec]
            if len(idx) > 1:
                for i, t in zip(idx, register_frames([frames[i] for i in idx])):
                    transforms[i] = t
                    if not t.registered:
                        errors.append({"stage": "register", "tile": None, "type": "warning",
                                       "message": f"frame {i} unregistrable (ncc {t.score:.3f})"})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cs = average_frames(frames, transforms, grouping, man["metadata"])
    for w in caught:
        errors.append({"stage": "average", "tile": None, "type": "warning", "message": str(w.message)})
    if not cal and not cfg.get("register"):
        # entries already hold summed images; keep their recorded frame counts
        for e, m in zip(cs.entries, man["entries"]):
            e.frame_count = m["frame_count"]
    return cs, None


def run_pipeline(config: dict, output_dir=None) -> dict:
    """Run the full reconstruction described by ``config`` and return the report.

    Config keys
    -----------
    captures : str
        CaptureSet directory (alternative to ``simulate``).
    simulate : dict
        :class:`SimulationRecipe` fields; the report then includes errors
        against the known scene and pupils.
    calibration : dict, optional
        ``{"dark": path, "reference": path}`` PFM files.
    register : bool
        Register and average repeated frames per aperture.
    tile_size, tile_overlap : int
        Default to the capture metadata, else 128 and 16.
    pupil_radius : float
        Defaults to the capture metadata.
    blur, synthesis, deconvolution : dict
        Parameter overrides.
    compare_full_only : bool
        Also deconvolve the full-aperture capture alone.
    flat_region : [row, col, height, width]
        Tile-local region used for the per-tile SNR estimate.
    threads : int
        Pool size request, capped by ``CACAO_THREADS``.
    """
    cfg = dict(config)
    params = PipelineParams.from_config(cfg)
    errors = []
    cs, truth = _load_captures(cfg, errors)
    meta = cs.metadata
    try:
        R = float(cfg.get("pupil_radius", meta.get("pupil_radius")))
    except TypeError as e:
        raise ConfigError("pupil_radius is neither configured nor in the capture metadata") from e
    scale = float(meta.get("intensity_scale", 1.0))
    small_specs = cs.specs("SmallCircular")
    big_specs = cs.specs("FullCircular") + cs.specs("Coded")
    if not small_specs or not big_specs:
        raise ConfigError("captures need small apertures and at least one big mask")
    smalls = [np.asarray(i) / scale for i in cs.images("SmallCircular")]
    bigs = [np.asarray(i) / scale for i in cs.images("FullCircular") + cs.images("Coded")]
    shape = smalls[0].shape
    grid = TileGrid(shape, int(cfg.get("tile_size", meta.get("tile_size", 128))),
                    int(cfg.get("tile_overlap", meta.get("tile_overlap", 16))))
    small_tiles = [split_tiles(i, grid) for i in smalls]
    big_tiles = [split_tiles(i, grid) for i in bigs]
    template = PupilFunction(np.zeros((grid.tile_size,) * 2), R,
                             meta.get("wavelength", DEFAULT_WAVELENGTH),
                             meta.get("focal_length", DEFAULT_FOCAL_LENGTH),
                             meta.get("pupil_pitch", 5.5e-3 / 120))

    def job(t):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return reconstruct_tile(t, [s[t] for s in small_tiles], small_specs,
                                        [b[t] for b in big_tiles], big_specs, R, params, template)
        except StageError as e:
            return e
        except Exception as e:  # isolate unexpected tile failures too
            return StageError("tile", t, e)

    n = worker_count(len(grid), cfg.get("threads"))
    with ThreadPoolExecutor(max_workers=n) as pool:
        results = list(pool.map(job, range(len(grid))))

    tiles_out, merged_in, full_in = [], [], []
    for t, r in enumerate(results):
        entry = {"id": t, "origin": list(grid.origins[t])}
        if isinstance(r, StageError):
            errors.append({"stage": r.stage, "tile": t, "type": type(r.cause).__name__,
                           "message": str(r.cause), "exit_code": r.exit_code})
            entry["status"] = "failed"
            merged_in.append(np.zeros((grid.tile_size,) * 2))
            full_in.append(np.zeros((grid.tile_size,) * 2))
            tiles_out.append(entry)
            continue
        for w in r.warnings:
            errors.append({"stage": w.split(":")[0], "tile": t, "type": "warning", "message": w})
        entry.update({"status": "ok", "fp_sweeps": len(r.fp_errors),
                      "fp_error": r.fp_errors[-1] if r.fp_errors else None,
                      "residual_curve": r.residual_curve, "otf_coverage": r.otf_coverage})
        if "flat_region" in cfg:
            entry["snr"] = measure_snr(big_tiles[0][t] * scale, cfg["flat_region"])
        merged_in.append(r.image)
        full_in.append(r.full_only_image if r.full_only_image is not None else r.image)
        if truth is not None:
            o_t = split_tiles(truth.image, truth.grid)[t] if truth.grid.origins == grid.origins else None
            masks = [render_mask(s, grid.tile_size, R) for s in big_specs]
            entry["psf_error"] = psf_match_error(r.pupil, truth.pupils[t], masks, subpixel=True)[0]
            if o_t is not None:
                entry["in_band_error"] = in_band_error(r.image, o_t, R)
                if r.full_only_image is not None:
                    entry["full_only_in_band_error"] = in_band_error(r.full_only_image, o_t, R)
        tiles_out.append(entry)

    ok = [r for r in results if not isinstance(r, StageError)]
    image = merge_tiles(merged_in, grid)
    report = {
        "status": "ok" if len(ok) == len(results) else ("partial" if ok else "failed"),
        "n_tiles": len(grid),
        "tile_size": grid.tile_size,
        "tile_overlap": grid.overlap,
        "pupil_radius": R,
        "parameters": {"blur": asdict(params.blur), "synthesis": asdict(params.synthesis),
                       "deconvolution": asdict(params.deconvolution)},
        "tiles": tiles_out,
        "errors": errors,
    }
    if len(ok) > 1:
        psfs = [psf_from_masked_pupil(r.pupil, r.pupil.support()) for r in ok]
        report["psf_similarity"] = [[psf_similarity(a, b) for b in psfs] for a in psfs]
    if truth is not None:
        vals = [e["in_band_error"] for e in tiles_out if "in_band_error" in e]
        full = [e["full_only_in_band_error"] for e in tiles_out if "full_only_in_band_error" in e]
        report["in_band_relative_error"] = max(vals) if vals and len(vals) == len(grid) else None
        report["full_only_in_band_relative_error"] = max(full) if full else None
        report["psf_error"] = max((e["psf_error"] for e in tiles_out if "psf_error" in e),
                                  default=None)
    out = output_dir or cfg.get("output")
    if out:
        _write_outputs(Path(out), image, merge_tiles(full_in, grid), results, report)
    report["_image"] = image
    return report


def _write_outputs(d: Path, image, full_image, results, report):
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {d}: {e}") from e
    io.write_pfm(d / "reconstruction.pfm", image)
    io.write_png(d / "reconstruction.png", image)
    io.write_pfm(d / "full_aperture_only.pfm", full_image)
    for r in results:
        if isinstance(r, StageError):
            continue
        io.write_pupil(d / f"tile_{r.tile_id:02d}_pupil", r.pupil)
        io.write_pfm(d / f"tile_{r.tile_id:02d}_psf.pfm",
                     psf_from_masked_pupil(r.pupil, r.pupil.support()))
    io.write_json(d / "report.json", {k: v for k, v in report.items() if not k.startswith("_")})
