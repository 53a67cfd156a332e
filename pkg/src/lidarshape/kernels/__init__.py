"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set LIDARSHAPE_KERNELS=numpy to force the fallback (used by the kernel
benchmark and the backend-agreement tests).
"""

import os

import numpy as np

from . import numpy_backend

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

if os.environ.get("LIDARSHAPE_KERNELS", "").lower() == "numpy" or _compiled is None:
    _active = numpy_backend
    BACKEND = "numpy"
else:
    _active = _compiled
    BACKEND = "compiled"


def backend_name():
    """Name of the kernel backend selected at import ("compiled" or "numpy")."""
    return BACKEND


def _c3(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def nearest_neighbors(a, b, impl=None):
    """Nearest point in `b` for every point of `a`: (distances (n,), indices (n,))."""
    impl = impl or _active
    return impl.nearest_neighbors(_c3(a), _c3(b))


def ray_mesh_first_hit(origins, dirs, vertices, triangles, t_min=1e-6, impl=None):
    """First-hit parameter t and triangle index per ray; t=inf / index=-1 on miss."""
    impl = impl or _active
    tris = np.ascontiguousarray(triangles, dtype=np.int64)
    return impl.ray_mesh_first_hit(_c3(origins), _c3(dirs), _c3(vertices), tris, t_min)


def implementations():
    """Mapping of available backend name -> module (for benchmarks/tests)."""
    impls = {"numpy": numpy_backend}
    if _compiled is not None:
        impls["compiled"] = _compiled
    return impls
