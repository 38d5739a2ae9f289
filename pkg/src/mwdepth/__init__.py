"""Manhattan-world structural refinement of monocular depth maps."""
__version__ = "0.1.0"

from .geometry import (CameraIntrinsics, DegenerateGeometryError, DepthMap, DominantDirections,
                       InputError, LineSegment, NormalMap, backproject, compute_normals,
                       estimate_dominant_directions, normals_from_depth)
from .manhattan import ThresholdSchedule, adaptive_threshold, align_normals, manhattan_mask
from .metrics import depth_metrics, normal_metrics
from .optimize import RefineConfig, RefineInputs, refine_depth, total_loss
from .photometric import Pose
from .plane import fit_plane
from .segmentation import SegmentationParams, graph_segment, segment_planes

__all__ = [name for name in dir() if not name.startswith("_")]
