# %% [markdown]
# # Regional volumes, WMH burden and connected components

# %%
import numpy as np

from cortimorph import (
    PhantomSpec,
    connected_components,
    generate,
    impute_icv,
    largest_component,
    normalized_wmh_volume,
    region_volume,
)

# %%
seg, truth = generate(PhantomSpec("multilabel_hemisphere_toy", seed=1))
for label_id, name in sorted(seg.dictionary.items()):
    v = region_volume(seg, label_id, icv=1500.0)
    print(f"{name:16s} {v.voxel_count:6d} voxels {v.volume:8.3f} mm^3  /ICV {v.icv_adjusted:.5f}")

# WMH volume as a fraction of the white matter it sits in
print("normalized WMH:", round(normalized_wmh_volume(seg), 4))

# %% [markdown]
# Subjects without an intracranial volume get the cohort mean.

# %%
print(impute_icv([1450.0, None, 1390.0, 1510.0]))

# %% [markdown]
# ## Components
# Two cubes that only touch at a corner are one object under 26-connectivity
# but two under 6-connectivity.

# %%
cubes, truth = generate(PhantomSpec("two_cubes", size=4, separation=4, offset_axes=(0, 1, 2)))
for conn in (6, 18, 26):
    _, sizes = connected_components(cubes.labels > 0, conn)
    print(conn, "->", [int(s) for s in sizes])

# Keep only the largest blob, e.g. to drop stray voxels from a segmentation
noisy = cubes.labels > 0
noisy[0, 0, 0] = True
print(noisy.sum(), "->", largest_component(noisy).sum())
