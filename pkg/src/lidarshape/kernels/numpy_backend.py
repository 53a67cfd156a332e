"""Pure-numpy fallback for the compiled kernels.

Same contracts as lidarshape.kernels._core: nearest neighbors with
lowest-index tie breaking, Moller-Trumbore first hit with t > t_min.
"""

import numpy as np

# cap on pairwise-distance scratch memory (floats)
_CHUNK_BUDGET = 4_000_000


def nearest_neighbors(a, b):
    """For each point in `a` (n,3), distance and index of its nearest point in `b` (m,3)."""
    n, m = a.shape[0], b.shape[0]
    dist = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    step = max(1, _CHUNK_BUDGET // max(m, 1))
    for s in range(0, n, step):
        chunk = a[s:s + step]
        delta = chunk[:, None, :] - b[None, :, :]
        d2 = (delta * delta).sum(axis=2)
        j = d2.argmin(axis=1)
        idx[s:s + step] = j
        dist[s:s + step] = np.sqrt(d2[np.arange(len(chunk)), j])
    return dist, idx


def ray_mesh_first_hit(origins, dirs, vertices, triangles, t_min=1e-6):
    """First intersection of each ray with a triangle mesh (Moller-Trumbore).

    Returns (t (r,), tri (r,)); misses get t=inf and tri=-1.
    """
    n_rays = origins.shape[0]
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    n_tris = len(triangles)

    t_out = np.full(n_rays, np.inf, dtype=np.float64)
    tri_out = np.full(n_rays, -1, dtype=np.int64)
    if n_tris == 0:
        return t_out, tri_out

    step = max(1, _CHUNK_BUDGET // max(n_tris, 1))
    for s in range(0, n_rays, step):
        o = origins[s:s + step][:, None, :]
        d = dirs[s:s + step][:, None, :]
        p = np.cross(d, e2[None, :, :])
        det = (e1[None, :, :] * p).sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = np.where(np.abs(det) < 1e-12, np.nan, 1.0 / det)
            tv = o - v0[None, :, :]
            u = (tv * p).sum(axis=2) * inv_det
            q = np.cross(tv, e1[None, :, :])
            v = (d * q).sum(axis=2) * inv_det
            t = (e2[None, :, :] * q).sum(axis=2) * inv_det
        valid = (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
        t = np.where(valid, t, np.inf)
        j = t.argmin(axis=1)
        rows = np.arange(t.shape[0])
        best = t[rows, j]
        hit = np.isfinite(best)
        t_out[s:s + step][hit] = best[hit]
        tri_out[s:s + step][hit] = j[hit]
    return t_out, tri_out
