import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cortimorph.volume_io import (
    DT_FLOAT32,
    DT_INT16,
    DT_INT32,
    DT_UINT8,
    ImageVolume,
    LabelMap,
    NiftiError,
    VoxelGrid,
    physical_to_voxel,
    read_volume,
    voxel_to_physical,
    write_volume,
)


def _raw_nifti(data, endian="<", pixdim=(1.0, 1.0, 1.0), sform=None, qform=None,
               magic=b"n+1", sizeof_hdr=348, datatype=None, extra=b""):  # fmt: skip
    """Hand-packed single-file NIfTI-1, independent of the package writer."""
    codes = {np.dtype("u1"): 2, np.dtype("i2"): 4, np.dtype("i4"): 8, np.dtype("f4"): 16}
    data = np.asarray(data)
    code = datatype if datatype is not None else codes[data.dtype]
    hdr = bytearray(348)
    e = endian
    struct.pack_into(e + "i", hdr, 0, sizeof_hdr)
    struct.pack_into(e + "8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into(e + "h", hdr, 70, code)
    struct.pack_into(e + "h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into(e + "8f", hdr, 76, 1.0, *pixdim, 1, 1, 1, 1)
    struct.pack_into(e + "f", hdr, 108, 352.0)
    if qform is not None:
        b, c, d, ox, oy, oz = qform
        struct.pack_into(e + "h", hdr, 252, 1)
        struct.pack_into(e + "6f", hdr, 256, b, c, d, ox, oy, oz)
    if sform is not None:
        struct.pack_into(e + "h", hdr, 254, 1)
        struct.pack_into(e + "12f", hdr, 280, *np.asarray(sform)[:3].ravel())
    hdr[344:348] = magic.ljust(4, b"\x00")
    return bytes(hdr) + b"\x00" * 4 + data.astype(data.dtype.newbyteorder(e)).tobytes(order="F") + extra


def _grid(dims=(4, 5, 6), spacing=(0.3, 0.5, 0.7)):
    return VoxelGrid.from_spacing(dims, spacing, origin=(-1.25, 3.5, 10.0))


# --- round trips -------------------------------------------------------------


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
@pytest.mark.parametrize(
    "code,max_label", [(DT_UINT8, 255), (DT_INT16, 32767), (DT_INT32, 2**31 - 1), (DT_FLOAT32, 4000)]
)
def test_label_roundtrip_bit_exact(tmp_path, suffix, code, max_label):
    rng = np.random.default_rng(code)
    grid = _grid()
    labels = rng.integers(0, max_label, grid.dims, endpoint=True, dtype=np.int64)
    labels.flat[0] = max_label
    names = {int(i): f"r{i}" for i in np.unique(labels) if i}
    lm = LabelMap(grid, labels, names)
    path = tmp_path / f"v{suffix}"
    write_volume(lm, path, datatype=code)
    back = read_volume(path, as_labels=True)
    assert np.array_equal(back.labels, labels)
    assert back.dictionary == names
    assert np.array_equal(back.grid.affine, grid.affine)
    assert back.grid.spacing == grid.spacing
    if suffix == ".nii.gz":
        assert path.read_bytes()[:2] == b"\x1f\x8b"


def test_label_datatype_selection(tmp_path):
    grid = _grid((2, 2, 2))
    for top, size in ((200, 1), (30000, 2), (70000, 4)):
        labels = np.zeros(grid.dims, np.int64)
        labels[0, 0, 0] = top
        write_volume(LabelMap(grid, labels, {top: "x"}), tmp_path / "a.nii")
        raw = (tmp_path / "a.nii").read_bytes()
        assert struct.unpack_from("<h", raw, 72)[0] == size * 8
    with pytest.raises(NiftiError):
        write_volume(LabelMap(grid, labels, {70000: "x"}), tmp_path / "b.nii", allow_int32=False)


def test_image_roundtrip_float32(tmp_path):
    rng = np.random.default_rng(0)
    grid = _grid()
    data = rng.normal(size=grid.dims).astype(np.float32)
    write_volume(ImageVolume(grid, data), tmp_path / "i.nii.gz")
    back = read_volume(tmp_path / "i.nii.gz")
    assert np.array_equal(back.data, data)


def test_gzip_output_is_deterministic(tmp_path):
    lm = LabelMap(_grid(), np.ones((4, 5, 6), np.uint8), {1: "GM"})
    write_volume(lm, tmp_path / "a.nii.gz")
    write_volume(lm, tmp_path / "b.nii.gz")
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()


# --- foreign files -----------------------------------------------------------


@pytest.mark.parametrize("endian", ["<", ">"])
def test_reads_both_endiannesses(tmp_path, endian):
    data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    (tmp_path / "e.nii").write_bytes(_raw_nifti(data, endian, pixdim=(0.5, 0.5, 2.0)))
    back = read_volume(tmp_path / "e.nii", as_labels=True)
    assert np.array_equal(back.labels, data)
    assert back.grid.spacing == (0.5, 0.5, 2.0)
    assert back.dictionary[5] == "label_5"


def test_fortran_order_on_disk(tmp_path):
    data = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    (tmp_path / "f.nii").write_bytes(_raw_nifti(data))
    back = read_volume(tmp_path / "f.nii")
    # x varies fastest in the file
    assert back.data[1, 0, 0] == data[1, 0, 0]
    raw = (tmp_path / "f.nii").read_bytes()[352:]
    assert raw[1] == data[1, 0, 0] and raw[2] == data[0, 1, 0]


def test_sform_preferred_over_qform(tmp_path):
    sform = np.array([[0, -2.0, 0, 5.0], [1.0, 0, 0, -3.0], [0, 0, 3.0, 1.0], [0, 0, 0, 1]])
    data = np.zeros((3, 3, 3), np.uint8)
    raw = _raw_nifti(data, pixdim=(1.0, 2.0, 3.0), sform=sform, qform=(0, 0, 0, 9, 9, 9))
    (tmp_path / "s.nii").write_bytes(raw)
    assert np.allclose(read_volume(tmp_path / "s.nii").grid.affine, sform)


def test_qform_used_without_sform(tmp_path):
    # 90 degree rotation about z: quaternion (cos45, 0, 0, sin45)
    s = np.sqrt(0.5)
    data = np.zeros((3, 3, 3), np.uint8)
    (tmp_path / "q.nii").write_bytes(_raw_nifti(data, pixdim=(2.0, 2.0, 2.0), qform=(0, 0, s, 1, 2, 3)))
    g = read_volume(tmp_path / "q.nii").grid
    assert np.allclose(voxel_to_physical(g, [1, 0, 0]), [1, 4, 3], atol=1e-6)


def test_gzip_detected_from_content(tmp_path):
    data = np.ones((2, 2, 2), np.uint8)
    (tmp_path / "plain_name.nii").write_bytes(gzip.compress(_raw_nifti(data)))
    assert read_volume(tmp_path / "plain_name.nii").data.sum() == 8


# --- errors ------------------------------------------------------------------


def test_error_cases(tmp_path):
    data = np.ones((2, 2, 2), np.uint8)
    cases = {
        "ni1": (_raw_nifti(data, magic=b"ni1"), "two-file"),
        "nifti2": (_raw_nifti(data, sizeof_hdr=540), "NIfTI-2"),
        "dtype": (_raw_nifti(data, datatype=64), "datatype"),
        "short": (_raw_nifti(data)[:-1], "data length"),
        "long": (_raw_nifti(data, extra=b"\x00"), "data length"),
        "junk": (b"\x00" * 400, "header size"),
    }
    for name, (blob, msg) in cases.items():
        (tmp_path / f"{name}.nii").write_bytes(blob)
        with pytest.raises(NiftiError, match=msg):
            read_volume(tmp_path / f"{name}.nii")
    with pytest.raises(FileNotFoundError):
        read_volume(tmp_path / "missing.nii")


def test_non_integer_float_cannot_be_labels(tmp_path):
    data = np.full((2, 2, 2), 1.5, np.float32)
    (tmp_path / "f.nii").write_bytes(_raw_nifti(data))
    with pytest.raises(NiftiError, match="integer"):
        read_volume(tmp_path / "f.nii", as_labels=True)


def test_domain_type_validation():
    grid = _grid((2, 2, 2))
    with pytest.raises(ValueError):
        LabelMap(grid, np.ones((2, 2, 2), np.int16), {})
    with pytest.raises(ValueError):
        LabelMap(grid, np.ones((2, 2, 2), np.int16), {0: "bg", 1: "x"})
    with pytest.raises(ValueError):
        ImageVolume(grid, np.full((2, 2, 2), np.nan))
    with pytest.raises(ValueError):
        VoxelGrid((2, 2, 2), (1.0, 1.0, 1.0), np.diag([1.0, 1.0, 2.0, 1.0]))


# --- geometry ----------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.1, 3.0), min_size=3, max_size=3),
    st.lists(st.floats(-200, 200), min_size=3, max_size=3),
    st.floats(-np.pi, np.pi),
)
def test_voxel_physical_roundtrip(spacing, origin, angle):
    rot = np.array([[np.cos(angle), -np.sin(angle), 0], [np.sin(angle), np.cos(angle), 0], [0, 0, 1]])
    aff = np.eye(4)
    aff[:3, :3] = rot * np.asarray(spacing)
    aff[:3, 3] = origin
    grid = VoxelGrid((10, 10, 10), tuple(spacing), aff)
    idx = np.random.default_rng(0).uniform(-5, 15, (20, 3))
    assert np.allclose(physical_to_voxel(grid, voxel_to_physical(grid, idx)), idx, atol=1e-6)
