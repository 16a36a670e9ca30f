"""Volumetric morphometry and structure-pathology statistics for ex vivo brain MRI."""
import os

# prefer OpenMP/workqueue over an outdated TBB for the distance-transform kernels
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

from .volume_io import (  # noqa: E402
    ImageVolume,
    LabelMap,
    NiftiError,
    VoxelGrid,
    physical_to_voxel,
    read_volume,
    voxel_to_physical,
    write_volume,
)
from .morphometry import (  # noqa: E402
    LandmarkSet,
    connected_components,
    distance_transform,
    impute_icv,
    inscribed_sphere_thickness,
    largest_component,
    normalized_wmh_volume,
    region_volume,
)
from .metrics import dice, evaluate_labels, hd95  # noqa: E402
from .phantom import PhantomSpec, generate  # noqa: E402

__version__ = "0.1.0"
