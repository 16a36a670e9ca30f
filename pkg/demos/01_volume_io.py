# %% [markdown]
# # Reading and writing label maps
#
# Segmentations travel as single-file NIfTI-1 volumes. Here we build a small
# label map by hand, write it with and without gzip, and read it back.

# %%
import tempfile
from pathlib import Path

import numpy as np

from cortimorph import LabelMap, VoxelGrid, read_volume, write_volume
from cortimorph import physical_to_voxel, voxel_to_physical

workdir = Path(tempfile.mkdtemp(prefix="cortimorph-io-"))

# %%
# A 0.3 mm isotropic grid, shifted so voxel (0, 0, 0) sits at (-10, 5, 2) mm.
grid = VoxelGrid.from_spacing((20, 24, 16), (0.3, 0.3, 0.3), origin=(-10.0, 5.0, 2.0))
labels = np.zeros(grid.dims, dtype=np.uint8)
labels[4:16, 4:20, 6:10] = 1  # a block of "GM"
labels[8:12, 8:16, 7:9] = 2   # with a "WM" core
seg = LabelMap(grid, labels, {1: "GM", 2: "WM"})

# %%
for name in ("seg.nii", "seg.nii.gz"):
    write_volume(seg, workdir / name)
    back = read_volume(workdir / name, as_labels=True)
    print(name, (workdir / name).stat().st_size, "bytes",
          "identical:", np.array_equal(back.labels, seg.labels), back.dictionary)

# %% [markdown]
# Label names and the float64 geometry survive the round trip, so the grid
# read back is identical to the one written.

# %%
print(back.grid.spacing, np.array_equal(back.grid.affine, grid.affine))

# %%
# voxel <-> mm
p = voxel_to_physical(grid, [10, 12, 8])
print("voxel (10, 12, 8) ->", p, "->", physical_to_voxel(grid, p))
