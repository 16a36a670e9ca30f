"""Synthetic label-map phantoms with analytic ground truth."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .volume_io import LabelMap, VoxelGrid, voxel_to_physical

__all__ = ["PhantomSpec", "GroundTruth", "generate", "DEFAULT_LABELS", "KINDS"]

KINDS = ("slab", "spherical_shell", "cube", "two_cubes", "multilabel_hemisphere_toy")

DEFAULT_LABELS = {
    1: "GM",
    2: "WM",
    3: "WMH",
    4: "caudate",
    5: "putamen",
    6: "globus_pallidus",
    7: "thalamus",
}

PAD = 2


@dataclass
class PhantomSpec:
    """Phantom parameters; lengths are in voxels.

    ``slab``: ``thickness`` voxels along the third axis over a
    ``size`` x ``size`` face. ``spherical_shell``: voxels whose centre lies
    at distance ``r_in <= rho < r_out`` from the grid centre. ``cube``:
    ``size``^3 block. ``two_cubes``: two ``size``^3 blocks whose corners
    are offset by ``separation`` voxels along each axis in ``offset_axes``.
    ``multilabel_hemisphere_toy``: GM shell over a WM ball with WMH and
    subcortical blobs, for end-to-end pipeline tests.
    """

    kind: str = "slab"
    thickness: int = 5
    size: int = 12
    r_in: int = 10
    r_out: int = 14
    separation: int = 14
    offset_axes: Tuple[int, ...] = (0,)
    spacing: float = 0.3
    label: int = 1
    pad: int = PAD
    seed: int = 0
    wmh_fraction: float = 0.1

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.pad < 2:
            raise ValueError("phantoms need at least 2 voxels of padding")
        if self.label < 1:
            raise ValueError("label must be a positive id")
        for name in ("thickness", "size", "r_in", "r_out", "separation"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.kind == "spherical_shell" and self.r_out <= self.r_in:
            raise ValueError("r_out must exceed r_in")
        if not 0 <= self.wmh_fraction < 1:
            raise ValueError("wmh_fraction must be in [0, 1)")
        if self.kind == "two_cubes" and self.separation < self.size:
            raise ValueError("cubes overlap: separation must be at least size")


@dataclass
class GroundTruth:
    thickness_mm: Optional[float]
    label_counts: Dict[int, int]
    component_count: int
    landmark_mm: Tuple[float, float, float]

    def to_json(self) -> str:
        d = asdict(self)
        d["label_counts"] = {str(k): v for k, v in sorted(self.label_counts.items())}
        return json.dumps(d, indent=2, sort_keys=True)


def _grid(dims, spacing):
    return VoxelGrid.from_spacing(tuple(int(d) for d in dims), (spacing,) * 3)


def _centred_radius(dims):
    c = (np.asarray(dims) - 1) / 2.0
    ii, jj, kk = np.indices(dims, dtype=np.float64)
    return np.sqrt((ii - c[0]) ** 2 + (jj - c[1]) ** 2 + (kk - c[2]) ** 2), c


def generate(spec: PhantomSpec) -> Tuple[LabelMap, GroundTruth]:
    """Build the phantom label map and its ground-truth record."""
    spec.validate()
    p = spec.pad
    s = spec.spacing
    lab = spec.label

    if spec.kind == "slab":
        dims = [spec.size + 2 * p] * 3
        dims[2] = spec.thickness + 2 * p
        data = np.zeros(dims, dtype=np.uint8)
        data[p:-p, p:-p, p : p + spec.thickness] = lab
        mid = (dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0, p + (spec.thickness - 1) / 2.0
        grid = _grid(dims, s)
        truth = GroundTruth(
            spec.thickness * s,
            {lab: spec.size * spec.size * spec.thickness},
            1,
            tuple(voxel_to_physical(grid, mid).tolist()),
        )
    elif spec.kind == "spherical_shell":
        n = 2 * (spec.r_out + p) + 1
        dims = (n, n, n)
        rho, c = _centred_radius(dims)
        inside = (rho >= spec.r_in) & (rho < spec.r_out)
        data = np.where(inside, lab, 0).astype(np.uint8)
        grid = _grid(dims, s)
        mid_r = 0.5 * (spec.r_in + spec.r_out)
        truth = GroundTruth(
            (spec.r_out - spec.r_in) * s,
            {lab: _shell_count(spec.r_in, spec.r_out)},
            1,
            tuple(voxel_to_physical(grid, c + [mid_r, 0.0, 0.0]).tolist()),
        )
    elif spec.kind == "cube":
        n = spec.size + 2 * p
        dims = (n, n, n)
        data = np.zeros(dims, dtype=np.uint8)
        data[p : p + spec.size, p : p + spec.size, p : p + spec.size] = lab
        grid = _grid(dims, s)
        c = p + (spec.size - 1) / 2.0
        truth = GroundTruth(None, {lab: spec.size**3}, 1, tuple(voxel_to_physical(grid, [c] * 3).tolist()))
    elif spec.kind == "two_cubes":
        shift = np.zeros(3, dtype=int)
        shift[list(spec.offset_axes)] = spec.separation
        dims = tuple(int(spec.size + shift[i] + 2 * p) for i in range(3))
        data = np.zeros(dims, dtype=np.uint8)
        a = np.array([p, p, p])
        b = a + shift
        for o in (a, b):
            data[o[0] : o[0] + spec.size, o[1] : o[1] + spec.size, o[2] : o[2] + spec.size] = lab
        grid = _grid(dims, s)
        count = int(np.count_nonzero(data))
        # face, edge or corner contact joins them under 26-connectivity
        touching = bool(np.all(shift <= spec.size))
        truth = GroundTruth(None, {lab: count}, 1 if touching else 2, tuple(voxel_to_physical(grid, a).tolist()))
    else:
        data, truth, grid = _hemisphere_toy(spec)

    if spec.kind == "multilabel_hemisphere_toy":
        dictionary = dict(DEFAULT_LABELS)
    else:
        dictionary = {lab: DEFAULT_LABELS.get(lab, f"label_{lab}")}
    return LabelMap(grid, data, dictionary), truth


def _shell_count(r_in: int, r_out: int) -> int:
    """Count integer offsets with r_in <= |offset| < r_out (squared-integer test)."""
    lim = r_out
    ax = np.arange(-lim, lim + 1)
    sq = ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    return int(np.count_nonzero((sq >= r_in * r_in) & (sq < r_out * r_out)))


def _hemisphere_toy(spec: PhantomSpec):
    """GM shell (thickness ``r_out - r_in``) around a WM ball with embedded structures."""
    rng = np.random.default_rng(spec.seed)
    p = spec.pad
    n = 2 * (spec.r_out + p) + 1
    dims = (n, n, n)
    rho, c = _centred_radius(dims)
    data = np.zeros(dims, dtype=np.uint8)
    data[(rho >= spec.r_in) & (rho < spec.r_out)] = 1
    wm = rho < spec.r_in
    data[wm] = 2
    # four subcortical blobs on the axes, radius r_in/5
    rb = max(1.0, spec.r_in / 5.0)
    ii, jj, kk = np.indices(dims, dtype=np.float64)
    for lab, (dx, dy) in zip((4, 5, 6, 7), ((1, 0), (-1, 0), (0, 1), (0, -1))):
        cx, cy = c[0] + dx * spec.r_in / 2.0, c[1] + dy * spec.r_in / 2.0
        blob = (ii - cx) ** 2 + (jj - cy) ** 2 + (kk - c[2]) ** 2 < rb * rb
        data[blob & wm] = lab
    wm_idx = np.flatnonzero(data.ravel(order="F") == 2)
    nwmh = int(round(spec.wmh_fraction * wm_idx.size))
    pick = rng.choice(wm_idx, size=nwmh, replace=False) if nwmh else np.zeros(0, dtype=np.int64)
    flat = data.ravel(order="F").copy()
    flat[pick] = 3
    data = flat.reshape(dims, order="F")
    grid = _grid(dims, spec.spacing)
    counts = {lab: int(np.count_nonzero(data == lab)) for lab in DEFAULT_LABELS}
    mid_r = 0.5 * (spec.r_in + spec.r_out)
    truth = GroundTruth(
        (spec.r_out - spec.r_in) * spec.spacing,
        counts,
        1,
        tuple(voxel_to_physical(grid, c + [mid_r, 0.0, 0.0]).tolist()),
    )
    return data, truth, grid
