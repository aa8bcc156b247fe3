"""On-disk formats: PFM images, complex fields, capture-set directories, JSON."""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .aperture import pattern_from_dict, pattern_to_dict, spec_from_dict, spec_to_dict
from .errors import DataIOError, ParameterError
from .fields import circular_support
from .simulator import CaptureEntry, CaptureSet, PupilFunction

MANIFEST = "manifest.json"


def write_pfm(path, image) -> None:
    """Write a grayscale float32 little-endian PFM (rows stored bottom-up)."""
    a = np.asarray(image, dtype="<f4")
    if a.ndim != 2:
        raise ParameterError("PFM export needs a 2D array")
    try:
        with open(path, "wb") as f:
            f.write(f"Pf\n{a.shape[1]} {a.shape[0]}\n-1.0\n".encode("ascii"))
            f.write(np.ascontiguousarray(a[::-1]).tobytes())
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM; returns float64 with row 0 at the top."""
    try:
        with open(path, "rb") as f:
            kind = f.readline().strip()
            dims = f.readline().split()
            scale = float(f.readline())
            data = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    except ValueError as e:
        raise DataIOError(f"malformed PFM header in {path}") from e
    if kind != b"Pf" or len(dims) != 2:
        raise DataIOError(f"{path} is not a grayscale PFM")
    w, h = int(dims[0]), int(dims[1])
    dt = "<f4" if scale < 0 else ">f4"
    if len(data) != 4 * w * h:
        raise DataIOError(f"{path}: expected {w * h} samples")
    return np.frombuffer(data, dtype=dt).reshape(h, w)[::-1].astype(float)


def write_png(path, image) -> None:
    """16-bit grayscale PNG preview, linearly scaled to the image range."""
    a = np.asarray(image, dtype=float)
    if a.ndim != 2:
        raise ParameterError("PNG export needs a 2D array")
    lo, hi = float(a.min()), float(a.max())
    u16 = np.zeros(a.shape) if hi <= lo else np.round(65535 * (a - lo) / (hi - lo))
    u16 = u16.astype(">u2")
    raw = b"".join(b"\x00" + row.tobytes() for row in u16)

    def chunk(tag, body):
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body))

    ihdr = struct.pack(">IIBBBBB", a.shape[1], a.shape[0], 16, 0, 0, 0, 0)
    try:
        with open(path, "wb") as f:
            f.write(b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
                    + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b""))
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataIOError(f"{path} is not valid JSON: {e}") from e


def write_json(path, obj) -> None:
    try:
        with open(path, "w") as f:
            json.dump(obj, f, indent=2, default=_jsonable)
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def write_pupil(stem, P: PupilFunction) -> None:
    """Store a pupil as ``stem.re.pfm``, ``stem.im.pfm`` and a ``stem.json`` sidecar."""
    stem = Path(stem)
    write_pfm(stem.with_suffix(".re.pfm"), P.field.real)
    write_pfm(stem.with_suffix(".im.pfm"), P.field.imag)
    write_json(stem.with_suffix(".json"), {
        "support_radius": P.support_radius, "wavelength": P.wavelength,
        "focal_length": P.focal_length, "pitch": P.pitch, "plane": "pupil"})


def read_pupil(stem) -> PupilFunction:
    stem = Path(stem)
    meta = read_json(stem.with_suffix(".json"))
    f = read_pfm(stem.with_suffix(".re.pfm")) + 1j * read_pfm(stem.with_suffix(".im.pfm"))
    sup = circular_support(meta["support_radius"], f.shape[0])
    return PupilFunction(f * sup, meta["support_radius"], meta["wavelength"],
                         meta["focal_length"], meta["pitch"])


def write_capture_set(directory, cs: CaptureSet) -> Path:
    """Write one PFM per entry plus ``manifest.json`` describing apertures and metadata."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {d}: {e}") from e
    entries = []
    for i, e in enumerate(cs.entries):
        name = f"capture_{i:03d}.pfm"
        write_pfm(d / name, e.image)
        entries.append({"spec": spec_to_dict(e.spec), "file": name, "frame_count": e.frame_count})
    write_json(d / MANIFEST, {"metadata": cs.metadata, "entries": entries})
    return d


def read_capture_manifest(directory) -> dict:
    """Manifest with every entry's images loaded.

    Each entry carries ``spec``, ``frame_count`` and ``frames`` (list of
    arrays); an entry may list raw ``frames`` files instead of one ``file``.
    """
    d = Path(directory)
    man = read_json(d / MANIFEST)
    if "entries" not in man:
        raise DataIOError(f"{d / MANIFEST} has no entries")
    out = []
    for e in man["entries"]:
        try:
            spec = spec_from_dict(e["spec"])
            files = e["frames"] if "frames" in e else [e["file"]]
        except KeyError as k:
            raise DataIOError(f"manifest entry lacks {k}") from k
        except ParameterError as err:
            raise DataIOError(f"bad aperture in manifest: {err}") from err
        out.append({"spec": spec, "frames": [read_pfm(d / f) for f in files],
                    "frame_count": int(e.get("frame_count", len(files)))})
    return {"metadata": man.get("metadata", {}), "entries": out}


def read_capture_set(directory) -> CaptureSet:
    """Capture set from a directory whose entries hold one (summed) image each."""
    man = read_capture_manifest(directory)
    entries = []
    for e in man["entries"]:
        img = e["frames"][0] if len(e["frames"]) == 1 else sum(e["frames"])
        entries.append(CaptureEntry(e["spec"], np.maximum(img, 0.0), e["frame_count"]))
    return CaptureSet(entries, man["metadata"])


def write_pattern(path, pattern, provenance: dict) -> None:
    write_json(path, pattern_to_dict(pattern, provenance))


def read_pattern(path) -> np.ndarray:
    try:
        return pattern_from_dict(read_json(path))
    except KeyError as k:
        raise DataIOError(f"pattern file lacks {k}") from k
