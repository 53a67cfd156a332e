# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: brute-force nearest neighbors and ray casting.

Semantics must match lidarshape.kernels.numpy_backend exactly; the test
suite compares both against independent oracles.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()


def nearest_neighbors(double[:, ::1] a, double[:, ::1] b):
    """For each point in `a` (n,3), distance and index of its nearest point in `b` (m,3).

    Ties resolve to the lowest index. Returns (distances (n,), indices (n,)).
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    dist = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    cdef double[::1] dist_v = dist
    cdef long long[::1] idx_v = idx
    cdef Py_ssize_t i, j, best_j
    cdef double best, d, dx, dy, dz
    for i in range(n):
        best = INFINITY
        best_j = 0
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
                best_j = j
        dist_v[i] = sqrt(best)
        idx_v[i] = best_j
    return dist, idx


def ray_mesh_first_hit(double[:, ::1] origins, double[:, ::1] dirs,
                       double[:, ::1] vertices, long long[:, ::1] triangles,
                       double t_min=1e-6):
    """First intersection of each ray with a triangle mesh (Moller-Trumbore).

    origins/dirs are (r,3) with unit directions. Returns (t (r,), tri (r,));
    misses get t=inf and tri=-1. A hit requires t > t_min.
    """
    cdef Py_ssize_t n_rays = origins.shape[0]
    cdef Py_ssize_t n_tris = triangles.shape[0]

    # unpack triangles once; inner loop stays allocation-free
    v0 = np.empty((n_tris, 3), dtype=np.float64)
    e1 = np.empty((n_tris, 3), dtype=np.float64)
    e2 = np.empty((n_tris, 3), dtype=np.float64)
    cdef double[:, ::1] v0_v = v0
    cdef double[:, ::1] e1_v = e1
    cdef double[:, ::1] e2_v = e2
    cdef Py_ssize_t i, j, k, ia, ib, ic
    for j in range(n_tris):
        ia = triangles[j, 0]
        ib = triangles[j, 1]
        ic = triangles[j, 2]
        for k in range(3):
            v0_v[j, k] = vertices[ia, k]
            e1_v[j, k] = vertices[ib, k] - vertices[ia, k]
            e2_v[j, k] = vertices[ic, k] - vertices[ia, k]

    t_out = np.full(n_rays, np.inf, dtype=np.float64)
    tri_out = np.full(n_rays, -1, dtype=np.int64)
    cdef double[::1] t_v = t_out
    cdef long long[::1] tri_v = tri_out

    cdef double ox, oy, oz, dx, dy, dz
    cdef double px, py, pz, tx, ty, tz, qx, qy, qz
    cdef double det, inv_det, u, v, t, best
    cdef Py_ssize_t best_j
    for i in range(n_rays):
        ox = origins[i, 0]
        oy = origins[i, 1]
        oz = origins[i, 2]
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        best = INFINITY
        best_j = -1
        for j in range(n_tris):
            px = dy * e2_v[j, 2] - dz * e2_v[j, 1]
            py = dz * e2_v[j, 0] - dx * e2_v[j, 2]
            pz = dx * e2_v[j, 1] - dy * e2_v[j, 0]
            det = e1_v[j, 0] * px + e1_v[j, 1] * py + e1_v[j, 2] * pz
            if fabs(det) < 1e-12:
                continue
            inv_det = 1.0 / det
            tx = ox - v0_v[j, 0]
            ty = oy - v0_v[j, 1]
            tz = oz - v0_v[j, 2]
            u = (tx * px + ty * py + tz * pz) * inv_det
            if u < 0.0 or u > 1.0:
                continue
            qx = ty * e1_v[j, 2] - tz * e1_v[j, 1]
            qy = tz * e1_v[j, 0] - tx * e1_v[j, 2]
            qz = tx * e1_v[j, 1] - ty * e1_v[j, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv_det
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2_v[j, 0] * qx + e2_v[j, 1] * qy + e2_v[j, 2] * qz) * inv_det
            if t > t_min and t < best:
                best = t
                best_j = j
        if best_j >= 0:
            t_v[i] = best
            tri_v[i] = best_j
    return t_out, tri_out
