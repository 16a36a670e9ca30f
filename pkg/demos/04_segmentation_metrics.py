# %% [markdown]
# # Comparing a segmentation against a reference
#
# Dice for overlap, HD95 for how far the boundaries stray.

# %%
import numpy as np
from scipy import ndimage

from cortimorph import PhantomSpec, dice, evaluate_labels, generate, hd95
from cortimorph.volume_io import LabelMap

reference, _ = generate(PhantomSpec("multilabel_hemisphere_toy", seed=0))

# %%
# Simulate a segmentation that is one voxel too thin everywhere.
gm = reference.mask(1)
thin = ndimage.binary_erosion(gm, ndimage.generate_binary_structure(3, 1))
print("Dice", round(dice(thin, gm), 3))
print("HD95", hd95(thin, gm, reference.grid.spacing), "mm  (spacing 0.3 mm)")

# %%
# Shift the whole map by two voxels instead.
shifted = np.roll(reference.labels, 2, axis=0)
candidate = LabelMap(reference.grid, shifted, reference.dictionary)
report = evaluate_labels(candidate, reference, [1, 2, 3, 4])
for r in report.records:
    print(f"{r.label:10s} dsc={r.dsc:.3f} hd95={r.hd95}")
print(report.summary())
