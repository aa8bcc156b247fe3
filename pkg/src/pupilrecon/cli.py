"""Command-line interface.

Exit codes: 0 success, 2 configuration or parameter error, 3 numerical
non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .aperture import ScanSequence, spec_from_dict, spec_to_dict
from .blur import BlurParams, estimate_blur
from .deconvolution import DeconvParams, deconvolve
from .errors import ConfigError, DataIOError, PupilReconError
from .pipeline import (PIPELINE_BLUR, SimulationRecipe, center_spot, reference_index,
                       run_pipeline, simulate_scene)
from .registration import register_frames, radiometric_calibrate
from .resolution import resolution_report
from .synthesis import SynthesisParams, normalize_pupil, synthesize_pupil


def _json_arg(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_sets(cfg, sets):
    """Apply ``key.sub=value`` overrides (values parsed as JSON when possible)."""
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-object {p!r}")
        node[parts[-1]] = _json_arg(val)
    return cfg


def _params(kind, over):
    try:
        return kind(**over)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _load_config(path):
    if path is None:
        return {}
    try:
        return io.read_json(path)
    except DataIOError as e:
        if Path(path).exists():
            raise ConfigError(str(e)) from e
        raise


def cmd_simulate(a):
    recipe = _apply_sets(_load_config(a.recipe), a.set)
    truth = simulate_scene(SimulationRecipe.from_dict(recipe))
    out = io.write_capture_set(a.out, truth.captures)
    io.write_pfm(out / "ground_truth.pfm", truth.image)
    for t, P in enumerate(truth.pupils):
        io.write_pupil(out / f"true_pupil_{t:02d}", P)
    print(f"wrote {len(truth.captures.entries)} captures to {out}")


def cmd_calibrate(a):
    img, dead = radiometric_calibrate(io.read_pfm(a.image), io.read_pfm(a.dark),
                                      io.read_pfm(a.reference))
    io.write_pfm(a.out, img)
    print(f"dead pixels: {int(dead.sum())}")


def cmd_register(a):
    frames = [io.read_pfm(f) for f in a.frames]
    ts = register_frames(frames, a.reference_index)
    rows = [dict(asdict(t), frame=str(f)) for t, f in zip(ts, a.frames)]
    io.write_json(a.out, rows)
    print(f"{sum(t.registered for t in ts)}/{len(ts)} frames registered")


def cmd_estimate_blur(a):
    over = _apply_sets({}, a.set)
    if a.captures:
        params = _params(BlurParams, {**PIPELINE_BLUR, **over})
        cs = io.read_capture_set(a.captures)
        smalls = cs.images("SmallCircular")
        specs = cs.specs("SmallCircular")
        ref = reference_index(specs)
        try:
            R = float(cs.metadata["pupil_radius"])
        except KeyError as e:
            raise DataIOError("capture metadata lacks pupil_radius") from e
        spot = (io.read_pfm(a.reference_psf) if a.reference_psf
                else center_spot(specs[ref], smalls[ref].shape[0], R))
        out = Path(a.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for m, img in enumerate(smalls):
            est = estimate_blur(smalls[ref], img, params, reference_psf=spot)
            name = f"kernel_{m:03d}.pfm"
            k = np.maximum(est.kernel, 0.0) * spot.sum()
            io.write_pfm(out / name, k)
            rows.append({"spec": spec_to_dict(specs[m]), "file": name,
                         "centroid": est.centroid, "residual": est.residual,
                         "iterations": est.iterations_used})
        io.write_json(out / "kernels.json", {"pupil_radius": R, "kernels": rows})
        print(f"wrote {len(rows)} kernels to {out}")
        return
    if not (a.reference and a.blurred):
        raise ConfigError("give --captures, or both --reference and --blurred")
    params = _params(BlurParams, over)
    spot = io.read_pfm(a.reference_psf) if a.reference_psf else None
    est = estimate_blur(io.read_pfm(a.reference), io.read_pfm(a.blurred), params, spot)
    io.write_pfm(a.out, est.kernel)
    print(json.dumps({"centroid": est.centroid, "residual": est.residual,
                      "iterations": est.iterations_used}))


def cmd_synthesize(a):
    d = Path(a.kernels)
    man = io.read_json(d / "kernels.json")
    try:
        specs = [spec_from_dict(k["spec"]) for k in man["kernels"]]
        kernels = [np.maximum(io.read_pfm(d / k["file"]), 0.0) for k in man["kernels"]]
        R = float(a.pupil_radius or man["pupil_radius"])
    except (KeyError, TypeError) as e:
        raise DataIOError(f"incomplete kernels.json: {e}") from e
    params = _params(SynthesisParams, _apply_sets({}, a.set))
    P, state = synthesize_pupil(kernels, ScanSequence(specs, float("nan"), R),
                                kernels[0].shape[0], params)
    io.write_pupil(a.out, normalize_pupil(P))
    print(f"sweeps: {state.sweep_count}, final mean error: {state.mean_errors[-1]:.3e}")


def cmd_deconvolve(a):
    cs = io.read_capture_set(a.captures)
    P = io.read_pupil(a.pupil)
    specs = cs.specs("FullCircular") + cs.specs("Coded")
    imgs = cs.images("FullCircular") + cs.images("Coded")
    if not imgs:
        raise ConfigError("capture set has no big-mask captures")
    scale = float(cs.metadata.get("intensity_scale", 1.0))
    res = deconvolve([i / scale for i in imgs], P, specs,
                     _params(DeconvParams, _apply_sets({}, a.set)))
    io.write_pfm(a.out, res.image)
    io.write_png(Path(a.out).with_suffix(".png"), res.image)
    print(f"iterations: {res.iterations_used}, residual: {res.residual_history[-1]:.3e}")


def cmd_pipeline(a):
    cfg = _apply_sets(_load_config(a.config), a.set)
    if a.threads:
        cfg["threads"] = a.threads
    if a.out:
        cfg["output"] = a.out
    rep = run_pipeline(cfg)
    rep.pop("_image", None)
    summary = {k: rep.get(k) for k in ("status", "n_tiles", "in_band_relative_error",
                                      "full_only_in_band_relative_error", "psf_error")}
    print(json.dumps(summary))
    for e in rep["errors"]:
        print(f"[{e['stage']}] tile {e['tile']}: {e['message']}", file=sys.stderr)
    codes = [e["exit_code"] for e in rep["errors"] if "exit_code" in e]
    return max(codes) if codes else 0


def cmd_report(a):
    out = {"resolution": resolution_report(a.diameter, a.focal_length, a.wavelength)}
    if a.report:
        rep = io.read_json(a.report)
        out["pipeline"] = {k: rep.get(k) for k in
                           ("status", "n_tiles", "in_band_relative_error",
                            "full_only_in_band_relative_error", "psf_error", "errors")}
    print(json.dumps(out, indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="pupilrecon", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.set_defaults(func=fn)
        return s

    def sets(s):
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="parameter override; may repeat")

    s = add("simulate", cmd_simulate, "write a synthetic capture set")
    s.add_argument("--recipe", help="JSON simulation recipe")
    s.add_argument("--out", required=True)
    sets(s)

    s = add("calibrate", cmd_calibrate, "two-point radiometric calibration")
    s.add_argument("--image", required=True)
    s.add_argument("--dark", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--out", required=True)

    s = add("register", cmd_register, "register frames for rotation and translation")
    s.add_argument("frames", nargs="+")
    s.add_argument("--reference-index", type=int, default=0)
    s.add_argument("--out", required=True)

    s = add("estimate-blur", cmd_estimate_blur, "estimate local PSF kernels")
    s.add_argument("--captures", help="capture-set directory (all small apertures)")
    s.add_argument("--reference")
    s.add_argument("--blurred")
    s.add_argument("--reference-psf")
    s.add_argument("--out", required=True)
    sets(s)

    s = add("synthesize-pupil", cmd_synthesize, "stitch kernels into a pupil")
    s.add_argument("--kernels", required=True, help="directory written by estimate-blur")
    s.add_argument("--pupil-radius", type=float)
    s.add_argument("--out", required=True, help="output stem")
    sets(s)

    s = add("deconvolve", cmd_deconvolve, "deconvolve big-mask captures with a pupil")
    s.add_argument("--captures", required=True)
    s.add_argument("--pupil", required=True, help="pupil stem")
    s.add_argument("--out", required=True)
    sets(s)

    s = add("pipeline", cmd_pipeline, "run the full reconstruction")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--out")
    s.add_argument("--threads", type=int)
    sets(s)

    s = add("report", cmd_report, "resolution limits and pipeline report summary")
    s.add_argument("--report", help="report.json from a pipeline run")
    s.add_argument("--diameter", type=float, default=5.5e-3)
    s.add_argument("--focal-length", type=float, default=0.167)
    s.add_argument("--wavelength", type=float, default=520e-9)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except PupilReconError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
