"""NIfTI-1 volume I/O and voxel grid geometry.

Volumes are held as numpy arrays indexed ``[i, j, k]`` with ``i`` the
fastest-varying axis on disk (x-fastest). Only single-file NIfTI-1
(``.nii`` / ``.nii.gz``) is supported.
"""
from __future__ import annotations

import gzip
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "NiftiError",
    "VoxelGrid",
    "ImageVolume",
    "LabelMap",
    "read_volume",
    "write_volume",
    "voxel_to_physical",
    "physical_to_voxel",
]

SPACING_TOL = 1e-4

DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8
DT_FLOAT32 = 16

_DTYPES = {
    DT_UINT8: np.dtype("u1"),
    DT_INT16: np.dtype("i2"),
    DT_INT32: np.dtype("i4"),
    DT_FLOAT32: np.dtype("f4"),
}

NIFTI_ECODE_COMMENT = 6
_SIDECAR_TAG = "cortimorph/1"

# fmt: off
_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"), ("data_type", "S10"), ("db_name", "S18"),
    ("extents", "i4"), ("session_error", "i2"), ("regular", "S1"),
    ("dim_info", "u1"), ("dim", "i2", (8,)), ("intent_p1", "f4"),
    ("intent_p2", "f4"), ("intent_p3", "f4"), ("intent_code", "i2"),
    ("datatype", "i2"), ("bitpix", "i2"), ("slice_start", "i2"),
    ("pixdim", "f4", (8,)), ("vox_offset", "f4"), ("scl_slope", "f4"),
    ("scl_inter", "f4"), ("slice_end", "i2"), ("slice_code", "u1"),
    ("xyzt_units", "u1"), ("cal_max", "f4"), ("cal_min", "f4"),
    ("slice_duration", "f4"), ("toffset", "f4"), ("glmax", "i4"),
    ("glmin", "i4"), ("descrip", "S80"), ("aux_file", "S24"),
    ("qform_code", "i2"), ("sform_code", "i2"), ("quatern_b", "f4"),
    ("quatern_c", "f4"), ("quatern_d", "f4"), ("qoffset_x", "f4"),
    ("qoffset_y", "f4"), ("qoffset_z", "f4"), ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)), ("srow_z", "f4", (4,)), ("intent_name", "S16"),
    ("magic", "S4"),
]
# fmt: on


def _header_dtype(endian: str) -> np.dtype:
    dt = np.dtype(_HEADER_FIELDS)
    return dt.newbyteorder(endian) if endian == ">" else dt


class NiftiError(ValueError):
    """Raised for malformed or unsupported NIfTI input."""


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Grid geometry: voxel counts, spacing in mm and the voxel-to-mm affine."""

    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    affine: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        affine = np.array(self.affine, dtype=np.float64)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        if affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValueError("non-invertible affine")
        norms = np.linalg.norm(affine[:3, :3], axis=0)
        if not np.allclose(norms, spacing, rtol=0, atol=SPACING_TOL):
            raise ValueError(
                f"affine column norms {norms.tolist()} disagree with spacing {spacing}"
            )
        affine.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @classmethod
    def from_spacing(cls, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        """Axis-aligned grid with the given spacing and translation."""
        affine = np.diag([*map(float, spacing), 1.0])
        affine[:3, 3] = origin
        return cls(tuple(dims), tuple(spacing), affine)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @property
    def mean_spacing(self) -> float:
        return float(np.mean(self.spacing))

    def same_as(self, other: "VoxelGrid", atol: float = 1e-6) -> bool:
        return self.dims == other.dims and np.allclose(
            self.affine, other.affine, rtol=0, atol=atol
        )


@dataclass(frozen=True, eq=False)
class ImageVolume:
    """Real-valued scalar field on a grid."""

    grid: VoxelGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.grid.dims:
            raise ValueError(f"data shape {data.shape} != grid dims {self.grid.dims}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains NaN or Inf")
        data = data.copy() if data.flags.writeable else data
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer label field with an id -> name dictionary. Label 0 is background."""

    grid: VoxelGrid
    labels: np.ndarray = field(repr=False)
    dictionary: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.grid.dims:
            raise ValueError(f"label shape {labels.shape} != grid dims {self.grid.dims}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must have an integer dtype")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        dictionary = {int(k): str(v) for k, v in dict(self.dictionary).items()}
        if 0 in dictionary:
            raise ValueError("label 0 is reserved for background")
        present = set(np.unique(labels).tolist()) - {0}
        missing = sorted(present - set(dictionary))
        if missing:
            raise ValueError(f"label ids {missing} missing from dictionary")
        labels = labels.copy() if labels.flags.writeable else labels
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dictionary", dictionary)

    def mask(self, label_id: int) -> np.ndarray:
        return self.labels == label_id

    def id_of(self, name: str) -> int:
        for k, v in self.dictionary.items():
            if v.lower() == name.lower():
                return k
        raise KeyError(f"no label named {name!r}")


Volume = Union[ImageVolume, LabelMap]


def voxel_to_physical(grid: VoxelGrid, index) -> np.ndarray:
    """Map voxel indices (shape ``(3,)`` or ``(n, 3)``) to mm coordinates."""
    idx = np.asarray(index, dtype=np.float64)
    return idx @ grid.affine[:3, :3].T + grid.affine[:3, 3]


def physical_to_voxel(grid: VoxelGrid, point) -> np.ndarray:
    """Inverse of :func:`voxel_to_physical`; returns continuous voxel coordinates."""
    pt = np.asarray(point, dtype=np.float64)
    inv = np.linalg.inv(grid.affine)
    return pt @ inv[:3, :3].T + inv[:3, 3]


# --------------------------------------------------------------------------
# reading


def _open_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _quaternion_affine(hdr) -> np.ndarray:
    b, c, d = (float(hdr[k]) for k in ("quatern_b", "quatern_c", "quatern_d"))
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        norm = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    pix = np.asarray(hdr["pixdim"], dtype=np.float64)
    qfac = -1.0 if pix[0] < 0 else 1.0
    scale = np.array([pix[1], pix[2], pix[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * scale
    aff[:3, 3] = [float(hdr[k]) for k in ("qoffset_x", "qoffset_y", "qoffset_z")]
    return aff


def _header_affine(hdr) -> np.ndarray:
    if int(hdr["sform_code"]) > 0:
        aff = np.eye(4)
        aff[0] = hdr["srow_x"]
        aff[1] = hdr["srow_y"]
        aff[2] = hdr["srow_z"]
        return aff
    if int(hdr["qform_code"]) > 0:
        return _quaternion_affine(hdr)
    return np.diag([*np.asarray(hdr["pixdim"][1:4], dtype=np.float64), 1.0])


def _read_extensions(raw: bytes, endian: str, vox_offset: int) -> list:
    exts = []
    if len(raw) < 352 or raw[348] == 0:
        return exts
    pos = 352
    while pos + 8 <= vox_offset:
        esize, ecode = np.frombuffer(raw, dtype=endian + "i4", count=2, offset=pos)
        if esize < 8 or pos + esize > vox_offset:
            break
        exts.append((int(ecode), raw[pos + 8 : pos + int(esize)]))
        pos += int(esize)
    return exts


def _sidecar(exts) -> dict:
    # JSON comment extension written by write_volume: exact geometry + label names
    for code, payload in exts:
        if code != NIFTI_ECODE_COMMENT:
            continue
        try:
            obj = json.loads(payload.rstrip(b"\x00").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            continue
        if isinstance(obj, dict) and obj.get("format") == _SIDECAR_TAG:
            return obj
    return {}


def _exact_geometry(side: dict, affine: np.ndarray, pixdim):
    """Float64 geometry from the sidecar when it agrees with the float32 header."""
    try:
        aff = np.asarray(side["affine"], dtype=np.float64).reshape(4, 4)
        spacing = [float(s) for s in side["spacing"]]
    except (KeyError, TypeError, ValueError):
        return affine, pixdim
    if np.allclose(aff, affine, rtol=1e-6, atol=1e-5) and np.allclose(
        spacing, pixdim, rtol=1e-6, atol=1e-6
    ):
        return aff, spacing
    return affine, pixdim


def read_volume(
    path,
    as_labels: bool = False,
    dictionary: Optional[Mapping[int, str]] = None,
) -> Volume:
    """Read a single-file NIfTI-1 volume.

    Parameters
    ----------
    path : str or path-like
        ``.nii`` or ``.nii.gz`` file; gzip is detected from the content.
    as_labels : bool
        Return a :class:`LabelMap` instead of an :class:`ImageVolume`. The
        stored values must be non-negative integers.
    dictionary : mapping, optional
        Label names for a label map. Defaults to the dictionary stored in
        the file by :func:`write_volume`, else generic ``label_<id>`` names.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such volume: {path}")
    raw = _open_bytes(path)
    if len(raw) < 348:
        raise NiftiError("file too short for a NIfTI-1 header")

    size_le = int(np.frombuffer(raw, "<i4", count=1)[0])
    size_be = int(np.frombuffer(raw, ">i4", count=1)[0])
    if size_le == 348:
        endian = "<"
    elif size_be == 348:
        endian = ">"
    elif 540 in (size_le, size_be):
        raise NiftiError("unsupported NIfTI-2 file")
    else:
        raise NiftiError("bad header size; not a NIfTI-1 file")

    hdr = np.frombuffer(raw, _header_dtype(endian), count=1)[0]
    magic = bytes(hdr["magic"])
    if magic == b"ni1":
        raise NiftiError("unsupported two-file NIfTI (magic 'ni1')")
    if magic != b"n+1":
        raise NiftiError(f"bad magic {magic!r}")

    datatype = int(hdr["datatype"])
    if datatype not in _DTYPES:
        raise NiftiError(f"unsupported datatype code {datatype}")
    dim = [int(d) for d in hdr["dim"]]
    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise NiftiError(f"invalid dim[0] = {ndim}")
    shape = [dim[i] if i <= ndim else 1 for i in (1, 2, 3)]
    if any(d > 1 for d in dim[4 : ndim + 1]):
        raise NiftiError("only 3D volumes are supported")
    if min(shape) < 1:
        raise NiftiError(f"non-positive dimensions {shape}")
    pixdim = [float(p) for p in hdr["pixdim"][1:4]]
    pixdim = [p if i < ndim else (p if p > 0 else 1.0) for i, p in enumerate(pixdim)]
    if not all(p > 0 for p in pixdim):
        raise NiftiError(f"non-positive pixdim {pixdim}")

    offset = int(hdr["vox_offset"])
    dtype = _DTYPES[datatype].newbyteorder(endian)
    count = int(np.prod(shape))
    if len(raw) - offset != count * dtype.itemsize:
        raise NiftiError(
            f"data length {len(raw) - offset} bytes does not match dims {shape} "
            f"of {dtype.itemsize}-byte voxels"
        )
    data = np.frombuffer(raw, dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(dtype.newbyteorder("="))

    affine = _header_affine(hdr)
    side = _sidecar(_read_extensions(raw, endian, offset))
    affine, pixdim = _exact_geometry(side, affine, pixdim)
    if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise NiftiError("non-invertible affine")
    try:
        grid = VoxelGrid(tuple(shape), tuple(pixdim), affine)
    except ValueError as exc:
        raise NiftiError(str(exc)) from exc

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data.astype(np.float64) * slope + inter

    if not as_labels:
        if not np.all(np.isfinite(data)):
            raise NiftiError("image contains NaN or Inf")
        return ImageVolume(grid, data)

    if np.issubdtype(data.dtype, np.floating):
        if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
            raise NiftiError("volume values are not integer-valued; cannot load as labels")
        data = data.astype(np.int64)
    if data.size and data.min() < 0:
        raise NiftiError("negative values cannot be loaded as labels")
    if dictionary is None and isinstance(side.get("labels"), dict):
        dictionary = {int(k): str(v) for k, v in side["labels"].items()}
    present = sorted(set(np.unique(data).tolist()) - {0})
    names = dict(dictionary or {})
    for lab in present:
        names.setdefault(lab, f"label_{lab}")
    return LabelMap(grid, data, names)


# --------------------------------------------------------------------------
# writing


def _label_datatype(max_label: int, allow_int32: bool) -> int:
    if max_label <= np.iinfo(np.uint8).max:
        return DT_UINT8
    if max_label <= np.iinfo(np.int16).max:
        return DT_INT16
    if allow_int32 and max_label <= np.iinfo(np.int32).max:
        return DT_INT32
    raise NiftiError(f"label id {max_label} exceeds the writable integer range")


def write_volume(volume: Volume, path, allow_int32: bool = True, datatype: Optional[int] = None):
    """Write a volume as single-file NIfTI-1; gzip when ``path`` ends in ``.gz``.

    Images are stored as float32. Label maps use uint8 or int16 depending on
    the largest id, and int32 above that unless ``allow_int32`` is False.
    ``datatype`` forces a specific NIfTI datatype code for label maps.
    """
    grid = volume.grid
    side = {
        "format": _SIDECAR_TAG,
        "affine": grid.affine.tolist(),
        "spacing": list(grid.spacing),
    }
    if isinstance(volume, LabelMap):
        max_label = int(volume.labels.max()) if volume.labels.size else 0
        code = datatype if datatype is not None else _label_datatype(max_label, allow_int32)
        if code not in _DTYPES:
            raise NiftiError(f"unsupported datatype code {code}")
        if code != DT_FLOAT32 and max_label > np.iinfo(_DTYPES[code]).max:
            raise NiftiError(f"label id {max_label} does not fit datatype {code}")
        data = volume.labels
        side["labels"] = {str(k): v for k, v in sorted(volume.dictionary.items())}
    else:
        code = DT_FLOAT32
        data = volume.data
    payload = json.dumps(side, sort_keys=True).encode("utf-8")
    esize = -(-(len(payload) + 8) // 16) * 16
    ext = np.array([esize, NIFTI_ECODE_COMMENT], "<i4").tobytes() + payload.ljust(
        esize - 8, b"\x00"
    )
    dtype = _DTYPES[code].newbyteorder("<")

    hdr = np.zeros(1, _header_dtype("<"))[0]
    hdr["sizeof_hdr"] = 348
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *grid.dims, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *grid.spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = 352 + len(ext)
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # mm
    hdr["sform_code"] = 1
    hdr["srow_x"] = grid.affine[0]
    hdr["srow_y"] = grid.affine[1]
    hdr["srow_z"] = grid.affine[2]
    hdr["magic"] = b"n+1"

    blob = (
        hdr.tobytes()
        + b"\x01\x00\x00\x00"
        + ext
        + np.asarray(data).astype(dtype).tobytes(order="F")
    )
    path = os.fspath(path)
    if path.endswith(".gz"):
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)
