import json

import numpy as np
import pytest

from cadx.volume import (
    PAD_VALUE,
    NoduleRef,
    Volume,
    VolumeMetadataError,
    VolumeSizeError,
    crop_cube,
    load_nodule_cube,
    load_volume,
    read_manifest,
    resample_isotropic,
    write_manifest,
    write_volume,
)


def test_zero_volume_loads(tmp_path):
    d = tmp_path / "v"
    d.mkdir()
    (d / "meta.json").write_text(json.dumps({"dims": [2, 2, 2], "spacing": [1, 1, 1]}))
    (d / "data.raw").write_bytes(np.zeros(8, dtype="<f4").tobytes())
    vol = load_volume(d)
    assert vol.dims == (2, 2, 2)
    assert np.array_equal(vol.data, np.zeros((2, 2, 2)))


def test_size_mismatch(tmp_path):
    d = tmp_path / "v"
    d.mkdir()
    (d / "meta.json").write_text(json.dumps({"dims": [4, 4, 4], "spacing": [1, 1, 1]}))
    (d / "data.raw").write_bytes(np.zeros(63, dtype="<f4").tobytes())
    with pytest.raises(VolumeSizeError):
        load_volume(d)


def test_missing_and_malformed(tmp_path):
    d = tmp_path / "v"
    d.mkdir()
    with pytest.raises(FileNotFoundError):
        load_volume(d)
    (d / "meta.json").write_text("{not json")
    (d / "data.raw").write_bytes(b"")
    with pytest.raises(VolumeMetadataError):
        load_volume(d)
    (d / "meta.json").write_text(json.dumps({"dims": [2, 2, 2], "spacing": [1, 0, 1]}))
    with pytest.raises(VolumeMetadataError):
        load_volume(d)


def test_x_fastest_layout(tmp_path):
    # data.raw index = x + nx*(y + ny*z)
    d = tmp_path / "v"
    d.mkdir()
    (d / "meta.json").write_text(json.dumps({"dims": [3, 2, 1], "spacing": [1, 1, 1]}))
    (d / "data.raw").write_bytes(np.arange(6, dtype="<f4").tobytes())
    vol = load_volume(d)
    assert vol.data[0, 1, 2] == 5.0
    assert vol.data[0, 0, 1] == 1.0


def test_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    for k in range(20):
        shape = tuple(rng.integers(1, 7, size=3))
        data = rng.normal(scale=500, size=shape).astype(np.float32).astype(np.float64)
        spacing = tuple(float(s) for s in rng.uniform(0.3, 3.0, size=3))
        vol = Volume(data, spacing)
        write_volume(vol, tmp_path / f"v{k}")
        back = load_volume(tmp_path / f"v{k}")
        assert back == vol
        assert back.spacing == vol.spacing


def test_volume_validation():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1, -1, 1))
    with pytest.raises(ValueError):
        NoduleRef("a", (0, 0, 0), 2)


def test_resample_identity():
    vol = Volume(np.random.default_rng(1).random((4, 5, 6)))
    out = resample_isotropic(vol)
    assert out.dims == vol.dims and np.array_equal(out.data, vol.data)


def test_resample_ramp():
    # I(x) = x mm sampled every 2 mm; output at 1 mm steps, clamped past x = 6
    data = np.array([0.0, 2.0, 4.0, 6.0]).reshape(1, 1, 4)
    out = resample_isotropic(Volume(data, (2.0, 1.0, 1.0)))
    assert out.dims == (8, 1, 1)
    x = np.arange(8.0)
    assert np.max(np.abs(out.data.ravel() - np.minimum(x, 6.0))) < 1e-6


def test_resample_dims_round_half_up():
    out = resample_isotropic(Volume(np.ones((2, 3, 5)), (0.5, 1.5, 2.5)))
    # nx = round(5*0.5)=3 (2.5 rounds up), ny = round(3*1.5)=5 (4.5 up), nz = round(2*2.5)=5
    assert out.dims == (3, 5, 5)


def test_resample_constant():
    out = resample_isotropic(Volume(np.full((3, 4, 5), 7.5), (0.7, 1.3, 2.2)))
    assert np.all(out.data == 7.5)
    assert out.spacing == (1.0, 1.0, 1.0)


def test_crop_inside_is_copy():
    data = np.random.default_rng(2).random((128, 128, 128))
    out = crop_cube(Volume(data), (64, 64, 64), 64)
    assert out.dims == (64, 64, 64)
    assert np.array_equal(out.data, data[32:96, 32:96, 32:96])


def test_crop_corner_padding():
    data = np.random.default_rng(3).random((40, 40, 40))
    out = crop_cube(Volume(data), (0, 0, 0), 64)
    # source indices -32..31 per axis, 32 of them valid
    assert np.sum(out.data == PAD_VALUE) == 64**3 - 32**3
    assert np.array_equal(out.data[32:, 32:, 32:], data[:32, :32, :32])


def test_crop_single_voxel():
    data = np.random.default_rng(4).random((5, 6, 7))
    out = crop_cube(Volume(data), (3, 2, 1), 1)
    assert out.dims == (1, 1, 1)
    assert out.data[0, 0, 0] == data[1, 2, 3]


def test_crop_requires_isotropic():
    with pytest.raises(ValueError):
        crop_cube(Volume(np.zeros((3, 3, 3)), (2, 1, 1)), (1, 1, 1), 2)


def test_manifest_round_trip_and_duplicates(tmp_path):
    refs = [NoduleRef("a", (1, 2, 3), 0), NoduleRef("b", (4, 5, 6), 1), NoduleRef("a", (7, 8, 9), 1)]
    write_manifest(refs, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "volume_id,cx,cy,cz,label"
    back = read_manifest(tmp_path / "m.csv")
    assert [r.center for r in back] == [r.center for r in refs]
    assert [r.nodule_id for r in back] == ["a#0", "b", "a#1"]


def test_load_nodule_cube(tmp_path):
    data = np.random.default_rng(5).random((10, 12, 14)).astype(np.float32).astype(np.float64)
    write_volume(Volume(data), tmp_path / "volumes" / "v1")
    cube = load_nodule_cube(tmp_path, NoduleRef("v1", (7, 6, 5), 1), side=4)
    assert np.array_equal(cube.data, data[3:7, 4:8, 5:9])
