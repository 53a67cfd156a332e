"""Core 3D types: point clouds, planar (yaw + xy) poses, triangle meshes.

Conventions used throughout the package:
  - z-up everywhere; coordinates in meters.
  - Sensor frame: origin on the ground directly beneath the sensor axis,
    the spinning head sits at (0, 0, height).
  - Canonical frame: vehicle centered at the xy-centroid of its bounding
    box, bottom at z=0, nose facing +x.
  - A pose maps Canonical coordinates into the Sensor frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

TWO_PI = 2.0 * math.pi


class Frame(Enum):
    SENSOR = "sensor"
    CANONICAL = "canonical"


@dataclass
class PointCloud:
    """Ordered set of 3D points (n,3) tagged with the frame they live in."""

    points: np.ndarray
    frame: Frame = Frame.SENSOR

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64) if not isinstance(
            self.points, np.ndarray) else self.points
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"point cloud must be (n,3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class PlanarPose:
    """Yaw about z plus translation; pitch/roll are zero, height is known.

    Yaw is normalized into [0, 2*pi) on construction.
    """

    yaw: float
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "tx", "ty", "tz"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite pose field {name}")
        object.__setattr__(self, "yaw", float(self.yaw) % TWO_PI)

    @property
    def translation(self):
        return np.array([self.tx, self.ty, self.tz])


IDENTITY_POSE = PlanarPose(0.0)


def rot_z(yaw):
    """3x3 rotation about the z axis."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform_cloud(cloud, pose, out_frame=None):
    """Apply a rigid planar transform pointwise: p -> Rz(yaw) p + t.

    Length and order are preserved; the output frame defaults to the
    input's unless overridden.
    """
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    pts = cloud.points @ rot_z(pose.yaw).T + pose.translation
    return PointCloud(pts, out_frame if out_frame is not None else cloud.frame)


def transform_points(points, pose):
    """transform_cloud for a bare (n,3) array."""
    return np.asarray(points, dtype=np.float64) @ rot_z(pose.yaw).T + pose.translation


def inverse_pose(pose):
    """Pose q with compose_pose(pose, q) == identity."""
    inv_yaw = -pose.yaw
    t = -(rot_z(inv_yaw) @ pose.translation)
    return PlanarPose(inv_yaw, t[0], t[1], t[2])


def compose_pose(a, b):
    """Pose equivalent to applying b first, then a."""
    t = rot_z(a.yaw) @ b.translation + a.translation
    return PlanarPose(a.yaw + b.yaw, t[0], t[1], t[2])


def heading_error(est, gt):
    """Smallest absolute yaw difference, in degrees (range [0, 180])."""
    delta = (est - gt) % TWO_PI
    return math.degrees(min(delta, TWO_PI - delta))


def translation_error(est, gt):
    """Euclidean distance between the xy translations, in meters."""
    return math.hypot(est.tx - gt.tx, est.ty - gt.ty)


@dataclass
class TriMesh:
    """Indexed triangle mesh. Triangles are (t,3) vertex indices."""

    vertices: np.ndarray
    triangles: np.ndarray
    _areas: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must be (v,3), got {verts.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must be (t,3), got {tris.shape}")
        if not np.all(np.isfinite(verts)):
            raise ValueError("mesh contains non-finite vertices")
        if len(tris) and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle index out of range")
        self.vertices, self.triangles = verts, tris
        self._areas = _triangle_areas(verts, tris)
        if len(tris) and self._areas.min() <= 1e-12:
            raise ValueError("mesh contains degenerate (zero-area) triangles")

    def triangle_areas(self):
        return self._areas

    def area(self):
        return float(self._areas.sum())

    def bounds(self):
        """(min_xyz, max_xyz) of the vertex set."""
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def transformed(self, pose):
        """Mesh with vertices mapped by the pose (same triangles)."""
        return TriMesh(transform_points(self.vertices, pose), self.triangles.copy())


def _triangle_areas(verts, tris):
    if len(tris) == 0:
        return np.zeros(0)
    a = verts[tris[:, 0]]
    cross = np.cross(verts[tris[:, 1]] - a, verts[tris[:, 2]] - a)
    return 0.5 * np.linalg.norm(cross, axis=1)


def merge_meshes(meshes):
    """Concatenate meshes into one (vertex indices offset per part)."""
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris))
