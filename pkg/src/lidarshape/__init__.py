"""Joint vehicle pose and shape estimation from partial LiDAR scans.

Desk-scale pipeline: procedural vehicle meshes, a simulated spinning
LiDAR, a shared-encoder completion + pose network with its sequential
baseline, staged training, and an evaluation harness.
"""

__version__ = "0.1.0"

from .geometry import (Frame, PlanarPose, PointCloud, TriMesh, compose_pose,
                       heading_error, inverse_pose, transform_cloud,
                       translation_error)

__all__ = [
    "Frame", "PlanarPose", "PointCloud", "TriMesh", "compose_pose",
    "heading_error", "inverse_pose", "transform_cloud", "translation_error",
    "__version__",
]
