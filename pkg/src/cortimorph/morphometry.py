"""Geometric measurement over label maps.

Distance transform, landmark thickness from the maximal inscribed sphere,
regional volumes and connected components.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numba
import numpy as np
from scipy import ndimage

from .volume_io import LabelMap, VoxelGrid, physical_to_voxel, voxel_to_physical

__all__ = [
    "LANDMARK_NAMES",
    "LandmarkSet",
    "LandmarkOutsideError",
    "ThicknessResult",
    "VolumeResult",
    "distance_transform",
    "inscribed_sphere_thickness",
    "region_volume",
    "normalized_wmh_volume",
    "connected_components",
    "largest_component",
    "impute_icv",
    "read_landmarks",
    "write_landmarks",
]

LANDMARK_NAMES = (
    "visual",
    "motor",
    "posterior_cingulate",
    "midfrontal",
    "anterior_cingulate",
    "orbitofrontal",
    "superior_temporal",
    "inferior_frontal",
    "anterior_insula",
    "anterior_temporal",
    "ventrolateral_temporal",
    "superior_parietal",
    "angular_gyrus",
    "entorhinal_cortex",
    "ba35",
    "parahippocampal",
)

DEFAULT_SEARCH_RADIUS = 20.0
DEFAULT_SNAP_TOLERANCE = 1.0

# upper bound on voxel centres refined on the half-voxel lattice per landmark
_MAX_REFINE = 4096


class LandmarkOutsideError(ValueError):
    """The landmark is farther than the snap tolerance from any foreground voxel."""


@dataclass
class LandmarkSet:
    """Named landmark points in physical mm, in insertion order."""

    entries: List[Tuple[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        entries = [(str(n), np.asarray(p, dtype=np.float64).reshape(3)) for n, p in self.entries]
        names = [n for n, _ in entries]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate landmark names: {dup}")
        for n, p in entries:
            if not np.all(np.isfinite(p)):
                raise ValueError(f"landmark {n!r} has non-finite coordinates")
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, name):
        return any(n == name for n, _ in self.entries)

    def __getitem__(self, name) -> np.ndarray:
        for n, p in self.entries:
            if n == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> List[str]:
        return [n for n, _ in self.entries]


def read_landmarks(path) -> LandmarkSet:
    """Read a ``name,x_mm,y_mm,z_mm`` CSV file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"name", "x_mm", "y_mm", "z_mm"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: landmark CSV needs columns {sorted(need)}")
        entries = [
            (row["name"].strip(), [float(row[k]) for k in ("x_mm", "y_mm", "z_mm")])
            for row in reader
        ]
    return LandmarkSet(entries)


def write_landmarks(landmarks: LandmarkSet, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "x_mm", "y_mm", "z_mm"])
        for name, p in landmarks:
            w.writerow([name, *(repr(float(c)) for c in p)])


# --------------------------------------------------------------------------
# exact Euclidean distance transform


@numba.njit(cache=True)
def _envelope_line(f, out, sp, v, z):
    """Lower envelope of parabolas ``f[p] + ((q - p) * sp)**2`` on one scanline.

    Infinite entries of ``f`` contribute no parabola. The value written at
    ``q`` is the minimum over the envelope parabola and its two neighbours,
    evaluated with the same arithmetic as a direct minimum.
    """
    n = f.shape[0]
    sp2 = sp * sp
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        x = 0.0
        while k >= 0:
            p = v[k]
            x = ((fq - f[p]) / sp2 + (q * q - p * p)) / (2.0 * (q - p))
            if x <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = -np.inf if k == 0 else x
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        lo = j - 1 if j > 0 else 0
        hi = j + 1 if j < k else k
        best = np.inf
        for m in range(lo, hi + 1):
            t = (q - v[m]) * sp
            val = f[v[m]] + t * t
            if val < best:
                best = val
        out[q] = best


@numba.njit(parallel=True, cache=True)
def _envelope_pass(lines, sp):
    nlines, n = lines.shape
    out = np.empty_like(lines)
    for i in numba.prange(nlines):
        v = np.empty(n, dtype=np.int64)
        z = np.empty(n + 1, dtype=np.float64)
        _envelope_line(lines[i], out[i], sp, v, z)
    return out


def squared_distance_transform(mask: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Squared mm distance from each voxel centre to the nearest background centre.

    Background voxels are 0; foreground voxels on a grid with no background
    are ``inf``. Passes run over axes 0, 1, 2 in order, so the sum of the
    per-axis terms is accumulated as ``(t0 + t1) + t2``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3 or mask.size == 0:
        raise ValueError("mask must be a nonempty 3D array")
    spacing = [float(s) for s in spacing]
    f = np.where(mask, np.inf, 0.0)
    for axis in range(3):
        moved = np.moveaxis(f, axis, -1)
        shape = moved.shape
        lines = np.ascontiguousarray(moved).reshape(-1, shape[-1])
        f = np.moveaxis(_envelope_pass(lines, spacing[axis]).reshape(shape), -1, axis)
    return np.ascontiguousarray(f)


def distance_transform(mask: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> np.ndarray:
    """Exact Euclidean distance (mm) from foreground voxels to the nearest background voxel.

    Background maps to 0. If the grid holds no background at all, foreground
    voxels are ``inf`` (unbounded); check with ``np.isinf``.
    """
    return np.sqrt(squared_distance_transform(mask, spacing))


# --------------------------------------------------------------------------
# maximal inscribed sphere thickness


@dataclass
class ThicknessResult:
    landmark: str
    thickness: float
    sphere_center: np.ndarray
    sphere_radius: float
    snapped: bool = False
    snap_distance: float = 0.0
    flag: str = ""


def _snap_landmark(mask, grid, point, tol):
    """Return (voxel index, snapped, snap distance) for a landmark point."""
    dims = np.array(grid.dims)
    u = physical_to_voxel(grid, point)
    idx = np.rint(u).astype(np.int64)
    if np.all(idx >= 0) and np.all(idx < dims) and mask[tuple(idx)]:
        return idx, False, 0.0
    reach = np.ceil(tol / min(grid.spacing)).astype(int) + 1
    lo = np.maximum(idx - reach, 0)
    hi = np.minimum(idx + reach + 1, dims)
    if np.any(lo >= hi):
        raise LandmarkOutsideError("landmark outside segmentation")
    sub = mask[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    # Fortran order so ties resolve to the smallest x-fastest linear index
    fg = np.argwhere(sub.T)[:, ::-1] + lo
    if fg.size == 0:
        raise LandmarkOutsideError("landmark outside segmentation")
    d = np.linalg.norm(voxel_to_physical(grid, fg) - point, axis=1)
    best = int(np.argmin(d))
    if d[best] > tol:
        raise LandmarkOutsideError("landmark outside segmentation")
    return fg[best], True, float(d[best])


def _window(center_idx, reach, dims):
    lo = np.maximum(np.asarray(center_idx) - reach, 0)
    hi = np.minimum(np.asarray(center_idx) + reach + 1, np.asarray(dims))
    return lo, hi


_HALF_STEPS = np.array(
    [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)],
    dtype=np.int64,
)


def _refine(mask, grid, dist, vox, point, r_vox, reach_mm):
    """Best half-voxel-lattice centre around ``vox``: (radius, centre index) or None.

    The radius at a lattice point is its distance to the nearest background
    voxel cube, which for voxel centres never exceeds the corrected
    distance-transform radius.
    """
    spacing = np.asarray(grid.spacing)
    dims = np.asarray(grid.dims)
    step = 0.5 * np.linalg.norm(spacing)
    reach = np.ceil((dist[tuple(vox)] + step) / spacing).astype(int) + 1
    lo, hi = _window(vox, reach, dims)
    sub = mask[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    bg = np.argwhere(~sub) + lo
    if bg.size == 0:
        return None
    best = None
    for d in _HALF_STEPS:
        # voxels whose closed cube contains the half-lattice point must all be foreground
        corners = np.unique(np.array([vox + np.array(e) * d for e in np.ndindex(2, 2, 2)]), axis=0)
        if np.any(corners < 0) or np.any(corners >= dims):
            continue
        if not np.all(mask[tuple(corners.T)]):
            continue
        c = vox + 0.5 * d
        gap = np.maximum(np.abs(bg - c) - 0.5, 0.0) * spacing
        r = math.sqrt(float(np.min(np.einsum("ij,ij->i", gap, gap))))
        if r <= r_vox:
            continue
        off = np.linalg.norm(voxel_to_physical(grid, c) - point)
        if off > r + 1e-9 or off > reach_mm:
            continue
        if best is None or r > best[0]:
            best = (r, c)
    return best


def inscribed_sphere_thickness(
    gm_mask: np.ndarray,
    grid: VoxelGrid,
    landmark,
    search_radius: float = DEFAULT_SEARCH_RADIUS,
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
    name: str = "",
    distance: Optional[np.ndarray] = None,
) -> ThicknessResult:
    """Thickness at a landmark as the diameter of the maximal inscribed sphere containing it.

    Sphere radii are centre-to-boundary: the distance transform value minus
    half the mean voxel spacing. Candidate centres are voxel centres within
    ``search_radius`` mm of the landmark whose sphere covers the landmark;
    the best few are then refined on the half-voxel lattice so that slabs
    with an even voxel count are measured without a one-voxel deficit.

    Parameters
    ----------
    gm_mask : ndarray of bool
        Foreground (cortex) mask on ``grid``.
    landmark : array-like
        Physical point in mm.
    distance : ndarray, optional
        Precomputed ``distance_transform(gm_mask, grid.spacing)``, reused
        across landmarks of the same subject.

    Raises
    ------
    LandmarkOutsideError
        No foreground voxel within ``snap_tolerance`` mm of the landmark.
    """
    mask = np.asarray(gm_mask, dtype=bool)
    if mask.shape != grid.dims:
        raise ValueError(f"mask shape {mask.shape} != grid dims {grid.dims}")
    if not mask.any():
        raise ValueError("empty foreground mask")
    if search_radius <= 0:
        raise ValueError("search_radius must be positive")
    if distance is None:
        distance = distance_transform(mask, grid.spacing)
    point = np.asarray(landmark, dtype=np.float64).reshape(3)
    half_s = 0.5 * grid.mean_spacing

    lm_idx, snapped, snap_d = _snap_landmark(mask, grid, point, snap_tolerance)
    if snapped:
        point = voxel_to_physical(grid, lm_idx)

    reach = np.ceil(search_radius / min(grid.spacing)).astype(int) + 1
    lo, hi = _window(lm_idx, reach, grid.dims)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub_mask = mask[sl]
    sub_r = np.maximum(distance[sl] - half_s, 0.0)
    idx = np.argwhere(sub_mask) + lo
    pos = voxel_to_physical(grid, idx)
    off = np.linalg.norm(pos - point, axis=1)
    r = sub_r[tuple((idx - lo).T)]
    ok = (off <= search_radius) & (off <= r + 1e-9)

    if not ok.any():
        r0 = float(max(distance[tuple(lm_idx)] - half_s, 0.0))
        return ThicknessResult(
            name, 2.0 * r0, voxel_to_physical(grid, lm_idx), r0, snapped, snap_d, "thin-region"
        )

    idx, off, r = idx[ok], off[ok], r[ok]
    order = np.lexsort((off, -r))
    best_r = float(r[order[0]])
    best_c = idx[order[0]].astype(np.float64)
    flag = ""
    if np.isinf(best_r):
        flag = "unbounded"
    else:
        # a half-lattice point gains at most half a voxel diagonal over its voxel
        slack = 0.5 * float(np.linalg.norm(grid.spacing)) + half_s - 0.5 * min(grid.spacing)
        pool = order[r[order] >= best_r - slack][:_MAX_REFINE]
        for i in pool:
            found = _refine(mask, grid, distance, idx[i], point, float(r[i]), search_radius)
            if found is not None and found[0] > best_r:
                best_r, best_c = found
    return ThicknessResult(
        name,
        2.0 * best_r,
        voxel_to_physical(grid, best_c),
        best_r,
        snapped,
        snap_d,
        flag,
    )


# --------------------------------------------------------------------------
# volumes


@dataclass
class VolumeResult:
    label: str
    voxel_count: int
    volume: float
    icv: Optional[float] = None
    icv_adjusted: Optional[float] = None


def region_volume(label_map: LabelMap, label_id: int, icv: Optional[float] = None) -> VolumeResult:
    """Voxel count and mm^3 volume of one label, optionally divided by ICV."""
    if label_id not in label_map.dictionary:
        raise KeyError(f"unknown label id {label_id}")
    count = int(np.count_nonzero(label_map.labels == label_id))
    vol = count * label_map.grid.voxel_volume
    adj = None
    if icv is not None:
        if not icv > 0:
            raise ValueError("icv must be positive")
        adj = vol / icv
    return VolumeResult(label_map.dictionary[label_id], count, vol, icv, adj)


def _resolve_label(label_map: LabelMap, label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return label_map.id_of(label)


def normalized_wmh_volume(label_map: LabelMap, wmh="WMH", wm="WM") -> float:
    """WMH volume divided by WM volume. Labels may be given by id or name."""
    wm_count = np.count_nonzero(label_map.labels == _resolve_label(label_map, wm))
    if wm_count == 0:
        raise ValueError("undefined normalization: WM volume is zero")
    try:
        wmh_id = _resolve_label(label_map, wmh)
    except KeyError:
        return 0.0
    wmh_count = np.count_nonzero(label_map.labels == wmh_id)
    # spacing product cancels
    return float(wmh_count) / float(wm_count)


# --------------------------------------------------------------------------
# connected components


def _structure(connectivity: int) -> np.ndarray:
    rank = {6: 1, 18: 2, 26: 3}.get(connectivity)
    if rank is None:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, rank)


def connected_components(mask: np.ndarray, connectivity: int = 26):
    """Label connected components of a binary mask.

    Components are numbered 1..K by decreasing size; equal sizes are ordered
    by their smallest x-fastest linear voxel index.

    Returns
    -------
    labels : ndarray of int32
    sizes : ndarray of int64
        ``sizes[i]`` is the voxel count of component ``i + 1``.
    """
    mask = np.asarray(mask, dtype=bool)
    raw, k = ndimage.label(mask, structure=_structure(connectivity))
    if k == 0:
        return np.zeros(mask.shape, dtype=np.int32), np.zeros(0, dtype=np.int64)
    flat = raw.ravel(order="F")
    ids, first = np.unique(flat, return_index=True)
    first = first[ids > 0]
    sizes = np.bincount(flat, minlength=k + 1)[1:]
    order = np.lexsort((first, -sizes))
    remap = np.zeros(k + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, k + 1, dtype=np.int32)
    return remap[raw], sizes[order].astype(np.int64)


def largest_component(mask: np.ndarray, connectivity: int = 26) -> np.ndarray:
    labels, sizes = connected_components(mask, connectivity)
    if sizes.size == 0:
        return np.zeros(labels.shape, dtype=bool)
    return labels == 1


def impute_icv(per_subject_icv: Iterable[Optional[float]]) -> List[float]:
    """Replace missing ICV entries (None or NaN) with the mean of the present ones."""
    values = list(per_subject_icv)
    present = [float(v) for v in values if v is not None and not math.isnan(v)]
    if not present:
        raise ValueError("cannot impute ICV: all values missing")
    mean = math.fsum(present) / len(present)
    return [mean if v is None or math.isnan(v) else float(v) for v in values]
