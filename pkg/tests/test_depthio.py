import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from depthkit.depthio import (CapacityError, DepthFormatError, DepthSample, ManifestEntry,
                              ManifestError, load_depth, read_manifest, read_pfm, validity_mask,
                              write_depth, write_manifest, write_pfm)


def entry(path, fmt, scale=1.0):
    return ManifestEntry("x", path, fmt, depth_scale=scale)


def test_png16_scaling(tmp_path):
    p = tmp_path / "d.png"
    Image.fromarray(np.full((3, 4), 5000, dtype=np.uint16)).save(p)
    s = load_depth(entry(p, "png16", 1000.0))
    assert s.depth.dtype == np.float32
    assert np.all(s.depth == 5.0) and s.valid.all()


def test_pfm_infinity_is_invalid(tmp_path):
    d = np.ones((4, 5), np.float32)
    d[1, 2] = np.inf
    d[3, 0] = np.nan
    write_pfm(tmp_path / "d.pfm", d)
    s = load_depth(entry(tmp_path / "d.pfm", "pfm"))
    assert not s.valid[1, 2] and not s.valid[3, 0]
    assert s.valid.sum() == 18


def test_beyond_far_plane(tmp_path):
    write_pfm(tmp_path / "d.pfm", np.full((6, 6), 150.0, np.float32))
    assert load_depth(entry(tmp_path / "d.pfm", "pfm"), far_plane=100).valid_ratio == 0.0


def test_validity_predicate():
    d = np.array([[0.0, -1.0, 1e-6, 100.0], [100.0001, np.inf, -np.inf, np.nan]])
    assert validity_mask(d, 100).tolist() == [[False, False, True, True],
                                             [False, False, False, False]]


def test_pfm_rows_bottom_to_top(tmp_path):
    d = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_pfm(tmp_path / "d.pfm", d)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    payload = np.frombuffer(raw[len(b"Pf\n3 2\n-1.0\n"):], "<f4")
    assert payload.tolist() == [3, 4, 5, 0, 1, 2]
    assert np.array_equal(read_pfm(tmp_path / "d.pfm"), d)


def test_pfm_big_endian(tmp_path):
    d = np.array([[1.5, 2.5], [3.5, 4.5]], np.float32)
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 2\n1.0\n" + np.flipud(d).astype(">f4").tobytes())
    assert np.array_equal(read_pfm(tmp_path / "b.pfm"), d)


def test_pfm_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    d = rng.uniform(0.1, 99, (16, 16)).astype(np.float32)
    s = DepthSample.from_depth("a", d)
    write_depth(s, tmp_path / "a.pfm", "pfm")
    back = load_depth(entry(tmp_path / "a.pfm", "pfm"))
    assert back.depth.tobytes() == d.tobytes()


def test_png16_roundtrip_quantization(tmp_path):
    rng = np.random.default_rng(1)
    d = rng.uniform(0.01, 60, (16, 16)).astype(np.float32)
    s = DepthSample.from_depth("a", d, depth_scale=1000.0)
    write_depth(s, tmp_path / "a.png", "png16")
    back = load_depth(entry(tmp_path / "a.png", "png16", 1000.0))
    assert back.valid.all()
    assert np.abs(back.depth - d).max() <= 0.0005 + 1e-6


def test_png16_is_16bit_gray(tmp_path):
    s = DepthSample.from_depth("a", np.full((2, 2), 3.0), depth_scale=256)
    write_depth(s, tmp_path / "a.png", "png16")
    with Image.open(tmp_path / "a.png") as im:
        assert im.mode.startswith("I;16")
        assert np.array(im).tolist() == [[768, 768], [768, 768]]


def test_png16_overflow_rejected(tmp_path):
    s = DepthSample.from_depth("a", np.full((2, 2), 90.0), depth_scale=1000)
    with pytest.raises(ValueError):
        write_depth(s, tmp_path / "a.png", "png16")


@pytest.mark.parametrize("fmt,scale", [("pfm", 1.0), ("png16", 100.0)])
def test_invalid_written_as_zero(tmp_path, fmt, scale):
    d = np.full((3, 3), 7.0)
    d[1, 1] = np.nan
    d[0, 2] = 500.0
    s = DepthSample.from_depth("a", d, depth_scale=scale)
    p = write_depth(s, tmp_path / f"a.{fmt}", fmt)
    back = load_depth(entry(p, fmt, scale))
    assert back.valid.tolist() == s.valid.tolist()
    assert back.depth[1, 1] == 0 and back.depth[0, 2] == 0


def test_malformed_pfm(tmp_path):
    (tmp_path / "a.pfm").write_bytes(b"PF\n2 2\n-1\n" + bytes(48))
    with pytest.raises(DepthFormatError):
        read_pfm(tmp_path / "a.pfm")
    (tmp_path / "b.pfm").write_bytes(b"Pf\ntwo 2\n-1\n")
    with pytest.raises(DepthFormatError):
        read_pfm(tmp_path / "b.pfm")


def test_pfm_capacity(tmp_path):
    (tmp_path / "a.pfm").write_bytes(b"Pf\n100000 100000\n-1\n")
    with pytest.raises(CapacityError):
        read_pfm(tmp_path / "a.pfm")
    (tmp_path / "b.pfm").write_bytes(b"Pf\n4 4\n-1\n" + bytes(12))
    with pytest.raises(CapacityError):
        read_pfm(tmp_path / "b.pfm")


def test_png_wrong_mode(tmp_path):
    Image.new("RGB", (2, 2)).save(tmp_path / "rgb.png")
    with pytest.raises(DepthFormatError):
        load_depth(entry(tmp_path / "rgb.png", "png16"))


def test_sample_shape_checks():
    with pytest.raises(ValueError):
        DepthSample("a", np.zeros((2, 2)), np.zeros((2, 3), bool))
    with pytest.raises(ValueError):
        DepthSample("a", np.zeros(4), np.zeros(4, bool))


def _write_lines(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


def test_manifest_order_and_paths(tmp_path):
    recs = [{"id": f"s{i}", "depth_path": f"d{i}.pfm", "format": "pfm", "extra_key": i}
            for i in (2, 0, 1)]
    out = read_manifest(_write_lines(tmp_path / "m.jsonl", recs))
    assert [e.id for e in out] == ["s2", "s0", "s1"]
    assert out[0].depth_path == tmp_path / "d2.pfm"
    assert out[0].extra == {"extra_key": 2}


def test_manifest_bad_format_names_line(tmp_path):
    recs = [{"id": "a", "depth_path": "a.pfm", "format": "pfm"},
            {"id": "b", "depth_path": "b.exr", "format": "exr"}]
    with pytest.raises(ManifestError, match=r"m\.jsonl:2"):
        read_manifest(_write_lines(tmp_path / "m.jsonl", recs))


def test_manifest_duplicate_id(tmp_path):
    recs = [{"id": "a", "depth_path": "a.pfm", "format": "pfm"}] * 2
    with pytest.raises(ManifestError, match="duplicate"):
        read_manifest(_write_lines(tmp_path / "m.jsonl", recs))


def test_manifest_empty(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert read_manifest(tmp_path / "m.jsonl") == []


def test_manifest_roundtrip(tmp_path):
    recs = [{"id": "a", "depth_path": "a.png", "format": "png16", "depth_scale": 256,
             "dataset": "x", "rgb_path": "a.jpg", "kind": "good"}]
    first = read_manifest(_write_lines(tmp_path / "m.jsonl", recs))
    write_manifest(first, tmp_path / "n.jsonl")
    assert read_manifest(tmp_path / "n.jsonl") == first


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-10, 200, width=32) | st.just(np.inf) | st.just(np.nan)))
def test_pfm_roundtrip_property(tmp_path_factory, d):
    path = tmp_path_factory.mktemp("rt") / "a.pfm"
    s = DepthSample.from_depth("a", d)
    write_depth(s, path, "pfm")
    back = load_depth(entry(path, "pfm"))
    assert np.array_equal(back.valid, s.valid)
    assert np.array_equal(back.depth[back.valid], d[s.valid])
