import zlib

import numpy as np
import pytest

from pupilrecon import io
from pupilrecon.aperture import Coded, FullCircular, SmallCircular
from pupilrecon.errors import DataIOError, ParameterError
from pupilrecon.simulator import CaptureEntry, CaptureSet, make_pupil


def test_pfm_round_trip(tmp_path, rng):
    x = rng.random((7, 11)).astype(np.float32)
    io.write_pfm(tmp_path / "a.pfm", x)
    y = io.read_pfm(tmp_path / "a.pfm")
    assert y.dtype == np.float64 and np.array_equal(y, x)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n11 7\n-1.0\n")
    # bottom row stored first
    assert np.frombuffer(raw[-44:], "<f4")[0] == x[0, 0]
    assert np.frombuffer(raw[13:17], "<f4")[0] == x[-1, 0]


def test_pfm_errors(tmp_path):
    with pytest.raises(DataIOError):
        io.read_pfm(tmp_path / "missing.pfm")
    (tmp_path / "bad.pfm").write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 48)
    with pytest.raises(DataIOError):
        io.read_pfm(tmp_path / "bad.pfm")
    (tmp_path / "short.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + b"\0" * 8)
    with pytest.raises(DataIOError):
        io.read_pfm(tmp_path / "short.pfm")
    with pytest.raises(ParameterError):
        io.write_pfm(tmp_path / "x.pfm", np.zeros(3))


def test_png_is_16_bit_and_scaled(tmp_path, rng):
    x = rng.random((5, 9))
    io.write_png(tmp_path / "a.png", x)
    raw = (tmp_path / "a.png").read_bytes()
    assert raw[:8] == b"\x89PNG\r\n\x1a\n"
    assert int.from_bytes(raw[16:20], "big") == 9
    assert int.from_bytes(raw[20:24], "big") == 5
    assert raw[24] == 16
    n = int.from_bytes(raw[33:37], "big")
    assert raw[37:41] == b"IDAT"
    rows = zlib.decompress(raw[41:41 + n])
    px = np.frombuffer(rows, np.uint8).reshape(5, 1 + 18)[:, 1:].copy().view(">u2")
    assert px.max() == 65535 and px.min() == 0
    assert np.allclose(px / 65535, (x - x.min()) / np.ptp(x), atol=1e-4)
    io.write_png(tmp_path / "flat.png", np.ones((3, 3)))


def test_json_handles_arrays(tmp_path):
    io.write_json(tmp_path / "a.json", {"a": np.arange(3), "b": np.float64(2.5), "p": tmp_path})
    d = io.read_json(tmp_path / "a.json")
    assert d["a"] == [0, 1, 2] and d["b"] == 2.5
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(DataIOError):
        io.read_json(tmp_path / "bad.json")


def test_pupil_round_trip(tmp_path):
    P = make_pupil(64, 20, {4: 1.0, 9: -0.5}, wavelength=600e-9)
    io.write_pupil(tmp_path / "p", P)
    Q = io.read_pupil(tmp_path / "p")
    assert Q.support_radius == 20 and Q.wavelength == 600e-9
    assert np.allclose(Q.field, P.field, atol=1e-6)


def test_capture_set_round_trip(tmp_path, rng):
    pat = rng.random((5, 5)) > 0.5
    specs = [SmallCircular((1.5, -2.0), 4.0, id=3), FullCircular(20.0, id=0), Coded(pat, 45, 40.0, id=2)]
    cs = CaptureSet([CaptureEntry(s, rng.random((16, 16)), 4) for s in specs],
                    {"pupil_radius": 20.0, "arr": np.ones(2)})
    io.write_capture_set(tmp_path / "cs", cs)
    back = io.read_capture_set(tmp_path / "cs")
    assert back.metadata["pupil_radius"] == 20.0
    for a, b in zip(cs.entries, back.entries):
        assert type(a.spec) is type(b.spec) and a.frame_count == b.frame_count
        assert np.allclose(a.image, b.image, rtol=1e-6)
    assert back.entries[0].spec.center == (1.5, -2.0)
    assert np.array_equal(back.entries[2].spec.pattern, pat)
    assert back.entries[2].spec.rotation_deg == 45


def test_manifest_with_raw_frames(tmp_path, rng):
    frames = [rng.random((8, 8)) for _ in range(3)]
    for i, f in enumerate(frames):
        io.write_pfm(tmp_path / f"f{i}.pfm", f)
    io.write_json(tmp_path / "manifest.json", {"entries": [
        {"spec": {"kind": "full", "radius": 10.0, "id": 0},
         "frames": ["f0.pfm", "f1.pfm", "f2.pfm"]}]})
    man = io.read_capture_manifest(tmp_path)
    assert man["entries"][0]["frame_count"] == 3
    cs = io.read_capture_set(tmp_path)
    assert np.allclose(cs.entries[0].image, np.maximum(sum(frames), 0), rtol=1e-6)
    io.write_json(tmp_path / "manifest.json", {"entries": [{"file": "f0.pfm"}]})
    with pytest.raises(DataIOError):
        io.read_capture_manifest(tmp_path)
    io.write_json(tmp_path / "manifest.json", {"entries": [{"spec": {"kind": "hexagon"}, "file": "f0.pfm"}]})
    with pytest.raises(DataIOError):
        io.read_capture_manifest(tmp_path)
    io.write_json(tmp_path / "manifest.json", {})
    with pytest.raises(DataIOError):
        io.read_capture_manifest(tmp_path)


def test_pattern_round_trip(tmp_path, rng):
    pat = rng.random((11, 11)) > 0.5
    io.write_pattern(tmp_path / "pat.json", pat, {"seed": 0})
    assert np.array_equal(io.read_pattern(tmp_path / "pat.json"), pat)
    io.write_json(tmp_path / "bad.json", {"seed": 0})
    with pytest.raises(DataIOError):
        io.read_pattern(tmp_path / "bad.json")
