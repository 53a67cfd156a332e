"""Synthetic data generation: vehicle meshes, LiDAR scans, surface samples.

Vehicles are procedural unions of boxes and wedge prisms (body, cabin,
wheels), built directly in the Canonical frame. Scans come from a 32-ring
spinning-LiDAR model: one ray per (ring, azimuth), sensor head at
(0, 0, height) in the Sensor frame, only vehicle returns kept. Complete
ground truth is an area-weighted surface sampling filtered to exterior
surfaces by visibility probes from a far enclosing sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import PlanarPose, PointCloud, Frame, TriMesh, merge_meshes

VEHICLE_CLASSES = ("sedan", "suv", "truck", "van", "bus")

# per-class (low, high) ranges for length, width, height, cabin fraction,
# wheel radius; loosely matched to street vehicles
_CLASS_RANGES = {
    "sedan": ((4.2, 4.9), (1.70, 1.90), (1.40, 1.50), (0.45, 0.55), (0.28, 0.34)),
    "suv":   ((4.4, 5.0), (1.80, 2.00), (1.60, 1.90), (0.55, 0.65), (0.33, 0.40)),
    "truck": ((5.0, 7.0), (2.00, 2.40), (2.40, 3.30), (0.25, 0.35), (0.40, 0.50)),
    "van":   ((4.5, 5.8), (1.80, 2.00), (1.90, 2.40), (0.70, 0.80), (0.30, 0.38)),
    "bus":   ((8.0, 12.0), (2.40, 2.60), (2.90, 3.40), (0.90, 0.95), (0.45, 0.55)),
}

_DEFAULT_RING_COUNT = 32
_ELEVATION_TOP_DEG = 10.67
_ELEVATION_BOTTOM_DEG = -30.67

EXTERIOR_PROBE_COUNT = 64
EXTERIOR_SPHERE_FACTOR = 3.0


def default_ring_elevations(count=_DEFAULT_RING_COUNT):
    """Uniform ring elevations in degrees, top ring first."""
    return tuple(np.linspace(_ELEVATION_TOP_DEG, _ELEVATION_BOTTOM_DEG, count))


@dataclass(frozen=True)
class SensorConfig:
    """Spinning-LiDAR model. azimuth_step_deg=0.2 matches the hardware;
    the desk-scale default of 1.0 keeps scans in the hundreds of points."""

    height: float = 2.0
    ring_elevations_deg: tuple = field(default_factory=default_ring_elevations)
    azimuth_step_deg: float = 1.0
    max_range: float = 70.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        n = len(self.ring_elevations_deg)
        if not 1 <= n <= 64:
            raise ValueError(f"ring count must be in [1, 64], got {n}")
        steps = 360.0 / self.azimuth_step_deg
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(
                f"azimuth step {self.azimuth_step_deg} must divide 360 evenly")

    def ray_directions(self):
        """(rings*azimuths, 3) unit directions, ring-major order."""
        elev = np.radians(np.asarray(self.ring_elevations_deg))
        azim = np.radians(np.arange(0.0, 360.0, self.azimuth_step_deg))
        ce, se = np.cos(elev), np.sin(elev)
        ca, sa = np.cos(azim), np.sin(azim)
        dirs = np.empty((len(elev) * len(azim), 3))
        dirs[:, 0] = np.outer(ce, ca).ravel()
        dirs[:, 1] = np.outer(ce, sa).ravel()
        dirs[:, 2] = np.repeat(se, len(azim))
        return dirs

    def to_kv(self):
        return {
            "sensor.height": repr(self.height),
            "sensor.ring_elevations_deg": ",".join(repr(e) for e in self.ring_elevations_deg),
            "sensor.azimuth_step_deg": repr(self.azimuth_step_deg),
            "sensor.max_range": repr(self.max_range),
            "sensor.noise_sigma": repr(self.noise_sigma),
        }

    @classmethod
    def from_kv(cls, kv):
        base = cls()
        rings = kv.get("sensor.ring_elevations_deg")
        return cls(
            height=float(kv.get("sensor.height", base.height)),
            ring_elevations_deg=tuple(float(t) for t in rings.split(","))
            if rings else base.ring_elevations_deg,
            azimuth_step_deg=float(kv.get("sensor.azimuth_step_deg", base.azimuth_step_deg)),
            max_range=float(kv.get("sensor.max_range", base.max_range)),
            noise_sigma=float(kv.get("sensor.noise_sigma", base.noise_sigma)),
        )


@dataclass(frozen=True)
class VehicleSpec:
    """Dimension parameters for one procedural vehicle."""

    vehicle_class: str
    length: float
    width: float
    height: float
    cabin_frac: float
    wheel_radius: float
    seed: int = 0

    def __post_init__(self):
        if self.vehicle_class not in VEHICLE_CLASSES:
            raise ValueError(f"unknown vehicle class {self.vehicle_class!r}")
        for name in ("length", "width", "height", "cabin_frac", "wheel_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"vehicle {name} must be positive")
        if self.length <= self.width:
            raise ValueError("vehicle length must exceed width")

    @classmethod
    def random(cls, vehicle_class, seed):
        """Draw dimensions uniformly within the class ranges."""
        rng = np.random.default_rng(seed)
        ranges = _CLASS_RANGES[vehicle_class]
        dims = [rng.uniform(lo, hi) for lo, hi in ranges]
        return cls(vehicle_class, *dims, seed=seed)

    @classmethod
    def class_ranges(cls, vehicle_class):
        return _CLASS_RANGES[vehicle_class]

    def to_kv(self):
        return {
            "vehicle.class": self.vehicle_class,
            "vehicle.length": repr(self.length),
            "vehicle.width": repr(self.width),
            "vehicle.height": repr(self.height),
            "vehicle.cabin_frac": repr(self.cabin_frac),
            "vehicle.wheel_radius": repr(self.wheel_radius),
            "vehicle.seed": str(self.seed),
        }

    @classmethod
    def from_kv(cls, kv):
        return cls(
            vehicle_class=kv["vehicle.class"],
            length=float(kv["vehicle.length"]),
            width=float(kv["vehicle.width"]),
            height=float(kv["vehicle.height"]),
            cabin_frac=float(kv["vehicle.cabin_frac"]),
            wheel_radius=float(kv["vehicle.wheel_radius"]),
            seed=int(kv.get("vehicle.seed", 0)),
        )


@dataclass(frozen=True)
class ScenePlacement:
    """Vehicle pose in the Sensor frame plus the sampled range/heading."""

    pose: PlanarPose
    range_m: float
    heading: float


def random_placement(rng, range_min=5.0, range_max=35.0):
    """Uniform range, bearing, and heading around the sensor."""
    r = rng.uniform(range_min, range_max)
    bearing = rng.uniform(0.0, 2.0 * math.pi)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    pose = PlanarPose(heading, r * math.cos(bearing), r * math.sin(bearing), 0.0)
    if not range_min <= math.hypot(pose.tx, pose.ty) <= range_max + 1e-9:
        raise ValueError("placement distance outside configured range")
    return ScenePlacement(pose, r, heading)


# ---------------------------------------------------------------------------
# procedural meshes


def _prism(x0, x1, xt0, xt1, y0, y1, z0, z1):
    """Closed hexahedron: bottom rectangle [x0,x1], top rectangle [xt0,xt1]
    (slanted front/back faces when they differ), shared y/z extents."""
    verts = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [xt0, y0, z1], [xt1, y0, z1], [xt1, y1, z1], [xt0, y1, z1],
    ])
    quads = [
        (3, 2, 1, 0),  # bottom (z-)
        (4, 5, 6, 7),  # top (z+)
        (0, 1, 5, 4),  # y- side
        (2, 3, 7, 6),  # y+ side
        (1, 2, 6, 5),  # x+ (front)
        (3, 0, 4, 7),  # x- (back)
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append([a, b, c])
        tris.append([a, c, d])
    return TriMesh(verts, np.array(tris))


def _box(x0, x1, y0, y1, z0, z1):
    return _prism(x0, x1, x0, x1, y0, y1, z0, z1)


def gen_vehicle_mesh(spec):
    """Watertight-per-part union of boxes/wedges in the Canonical frame.

    Deterministic in the spec fields; the bounding box is exactly
    length x width x height with the bottom at z=0 and the nose at +x.
    """
    L, W, H = spec.length, spec.width, spec.height
    r = spec.wheel_radius
    clearance = 0.6 * r
    hx = L / 2.0
    hy = W / 2.0
    parts = []

    if spec.vehicle_class == "truck":
        cab_len = spec.cabin_frac * L
        parts.append(_box(hx - cab_len, hx, -hy, hy, clearance, H))
        parts.append(_box(-hx, hx - cab_len - 0.15, -hy, hy, clearance, 0.92 * H))
    elif spec.vehicle_class == "bus":
        parts.append(_prism(-hx, hx, -hx, hx - 0.12, -hy, hy, clearance, H))
    elif spec.vehicle_class == "van":
        hood_len = 0.55 * (1.0 - spec.cabin_frac) * L
        parts.append(_prism(-hx, hx - hood_len, -hx, hx - hood_len - 0.25,
                            -hy, hy, clearance, H))
        parts.append(_box(hx - hood_len - 1e-3, hx, -hy, hy, clearance, 0.45 * H))
    else:  # sedan, suv: body slab + greenhouse wedge
        body_top = clearance + 0.52 * (H - clearance)
        parts.append(_box(-hx, hx, -hy, hy, clearance, body_top))
        cab_len = spec.cabin_frac * L
        cab_rear = -0.45 * L
        cab_front = cab_rear + cab_len
        windshield = 0.30 * cab_len
        backlight = 0.20 * cab_len
        parts.append(_prism(cab_rear, cab_front,
                            cab_rear + backlight, cab_front - windshield,
                            -0.92 * hy, 0.92 * hy, body_top, H))

    # four wheel boxes, bottoms on the ground plane
    wheel_x = hx - 1.6 * r
    wheel_w = 0.24
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            cy = sy * (hy - wheel_w / 2.0 - 0.02)
            parts.append(_box(sx * wheel_x - r, sx * wheel_x + r,
                              cy - wheel_w / 2.0, cy + wheel_w / 2.0,
                              0.0, clearance + 0.4 * r))

    mesh = merge_meshes(parts)
    lo, hi = mesh.bounds()
    shift = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, lo[2]])
    return TriMesh(mesh.vertices - shift, mesh.triangles)


# ---------------------------------------------------------------------------
# scanning


def ray_triangle_intersect(origin, direction, triangle, t_min=1e-6):
    """Distance to one triangle (3,3) along a unit ray, or None on miss."""
    origin = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    direction = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    verts = np.asarray(triangle, dtype=np.float64)
    t, tri = kernels.ray_mesh_first_hit(origin, direction, verts,
                                        np.array([[0, 1, 2]]), t_min)
    return float(t[0]) if tri[0] >= 0 else None


def scan(mesh, placement, sensor, rng=None):
    """Simulate one revolution: one ray per (ring, azimuth), vehicle-only
    returns, points in the Sensor frame. Empty output is a valid outcome."""
    if len(mesh.triangles) == 0:
        raise ValueError("cannot scan an empty mesh")
    world = mesh.transformed(placement.pose)
    origin = np.array([0.0, 0.0, sensor.height])
    dirs = sensor.ray_directions()

    # exact broad phase: rays that miss the bounding sphere cannot hit
    lo, hi = world.bounds()
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(hi - lo)) / 2.0
    oc = center - origin
    along = dirs @ oc
    perp_sq = float(oc @ oc) - along ** 2
    candidates = np.nonzero((perp_sq <= radius ** 2) & (along > -radius))[0]
    if len(candidates) == 0:
        return PointCloud(np.empty((0, 3)), Frame.SENSOR)

    sub = dirs[candidates]
    origins = np.broadcast_to(origin, sub.shape)
    t, tri = kernels.ray_mesh_first_hit(origins, sub, world.vertices, world.triangles)
    hit = np.isfinite(t) & (t <= sensor.max_range)
    t = t[hit]
    sub = sub[hit]
    if sensor.noise_sigma > 0.0:
        if rng is None:
            raise ValueError("range noise requires an rng")
        t = t + rng.normal(0.0, sensor.noise_sigma, size=t.shape)
    return PointCloud(origin + t[:, None] * sub, Frame.SENSOR)


# ---------------------------------------------------------------------------
# complete ground truth


def _fibonacci_sphere(count):
    k = np.arange(count) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    z = 1.0 - 2.0 * k / count
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


_PROBE_DIRECTIONS = _fibonacci_sphere(EXTERIOR_PROBE_COUNT)


def _exterior_mask(points, mesh, center, sphere_radius):
    """True where a point is reachable, unoccluded, from at least one of
    the fixed probe origins on the enclosing sphere."""
    visible = np.zeros(len(points), dtype=bool)
    for probe in _PROBE_DIRECTIONS:
        todo = np.nonzero(~visible)[0]
        if len(todo) == 0:
            break
        origin = center + sphere_radius * probe
        delta = points[todo] - origin
        dist = np.linalg.norm(delta, axis=1)
        dirs = delta / dist[:, None]
        origins = np.broadcast_to(origin, dirs.shape)
        t, _ = kernels.ray_mesh_first_hit(origins, dirs, mesh.vertices, mesh.triangles)
        visible[todo[t >= dist - 1e-6 * (1.0 + dist)]] = True
    return visible


def uniform_surface_sample(mesh, n, seed=0):
    """Exactly n area-weighted surface points on exterior surfaces.

    Triangle choice is area-weighted, position uniform via folded
    barycentric coordinates; interior points (hidden from every probe)
    are rejected and redrawn. Deterministic per seed.
    """
    if n < 1:
        raise ValueError("sample count must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero surface area")
    weights = areas / total
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2.0
    sphere_radius = EXTERIOR_SPHERE_FACTOR * mesh.diagonal()

    rng = np.random.default_rng(seed)
    kept = []
    kept_count = 0
    for _ in range(64):
        draw = max(2 * (n - kept_count), 64)
        tri_idx = rng.choice(len(areas), size=draw, p=weights)
        u = rng.random(draw)
        v = rng.random(draw)
        fold = u + v > 1.0
        u[fold] = 1.0 - u[fold]
        v[fold] = 1.0 - v[fold]
        corners = mesh.vertices[mesh.triangles[tri_idx]]
        pts = (corners[:, 0]
               + u[:, None] * (corners[:, 1] - corners[:, 0])
               + v[:, None] * (corners[:, 2] - corners[:, 0]))
        exterior = _exterior_mask(pts, mesh, center, sphere_radius)
        kept.append(pts[exterior])
        kept_count += int(exterior.sum())
        if kept_count >= n:
            break
    else:
        raise RuntimeError(f"could not collect {n} exterior samples")
    return PointCloud(np.vstack(kept)[:n], Frame.CANONICAL)


# ---------------------------------------------------------------------------
# point-to-mesh distance (used by invariants and tests)


def point_mesh_distance(points, mesh):
    """Exact distance from each point to the nearest triangle of the mesh."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = math.sqrt(_point_triangles_dist_sq(p, a, b, c).min())
    return out


def _point_triangles_dist_sq(p, a, b, c):
    """Squared distance from one point to each triangle (Ericson regions)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(a)
    remaining = np.ones(len(a), dtype=bool)

    def assign(mask, value):
        nonlocal remaining
        take = remaining & mask
        closest[take] = value[take]
        remaining = remaining & ~mask

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    assign((d6 >= 0) & (d5 <= d6), c)

    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab)

    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac)

    va = d3 * d6 - d5 * d4
    e1 = d4 - d3
    e2 = d5 - d6
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = np.where(e1 + e2 != 0, e1 / (e1 + e2), 0.0)
    assign((va <= 0) & (e1 >= 0) & (e2 >= 0), b + t_bc[:, None] * (c - b))

    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(denom != 0, 1.0 / denom, 0.0)
    closest[remaining] = (a + (vb * inv)[:, None] * ab + (vc * inv)[:, None] * ac)[remaining]

    diff = closest - p
    return np.einsum("ij,ij->i", diff, diff)
