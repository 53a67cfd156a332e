"""The three training losses, differentiable through the autodiff tape.

- chamfer: symmetric mean nearest-neighbor distance (unsquared 2-norms).
- pose_loss: mean squared disagreement of two rigid planar transforms
  measured by their action on a reference cloud.
- joint_loss: uncertainty-weighted combination of the two, with learned
  log-variances.

chamfer and pose_loss are fused tape ops with hand-written pullbacks; the
nearest-neighbor search is delegated to the kernel backend. Both have
brute-force oracles in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .autodiff import Tensor, add, exp, make_node, mul, scale
from .geometry import PlanarPose, PointCloud, rot_z


def _points_of(x, name):
    if isinstance(x, PointCloud):
        t = Tensor(x.points)
    elif isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(x))
    if len(t.data) == 0:
        raise ValueError("empty cloud")
    if t.data.ndim != 2 or t.data.shape[1] != 3:
        raise ValueError(f"{name}: expected (n,3) points, got {t.data.shape}")
    return t


def chamfer(est, gt):
    """Chamfer distance between two clouds: mean of nearest-neighbor
    distances from est to gt plus the same from gt to est.

    Accepts PointCloud, ndarray, or Tensor operands; the result carries
    gradients for any Tensor operand. The subgradient at coincident points
    (distance exactly 0) is defined as 0.
    """
    a = _points_of(est, "est")
    b = _points_of(gt, "gt")
    ad = a.data
    bd = b.data
    dist_ab, idx_ab = kernels.nearest_neighbors(ad, bd)
    dist_ba, idx_ba = kernels.nearest_neighbors(bd, ad)

    # recompute distances in the operands' dtype so float32 training and
    # float64 checking both see arithmetic consistent with their inputs
    diff_ab = ad - bd[idx_ab]
    d_ab = np.sqrt(np.einsum("ij,ij->i", diff_ab, diff_ab))
    diff_ba = bd - ad[idx_ba]
    d_ba = np.sqrt(np.einsum("ij,ij->i", diff_ba, diff_ba))
    value = d_ab.mean() + d_ba.mean()

    n, m = len(ad), len(bd)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit_ab = np.where(d_ab[:, None] > 0, diff_ab / d_ab[:, None], 0.0)
        unit_ba = np.where(d_ba[:, None] > 0, diff_ba / d_ba[:, None], 0.0)

    def pullback(g):
        ga = gb = None
        if a.tape is not None:
            ga = unit_ab / n
            scatter = np.zeros_like(ad)
            np.add.at(scatter, idx_ba, unit_ba)
            ga = (ga - scatter / m) * g
        if b.tape is not None:
            gb = unit_ba / m
            scatter = np.zeros_like(bd)
            np.add.at(scatter, idx_ab, unit_ab)
            gb = (gb - scatter / n) * g
        return (ga, gb)

    return make_node(np.asarray(value), (a, b), pullback)


def chamfer_value(est, gt):
    """chamfer() as a plain float (no tape involvement)."""
    return float(chamfer(est, gt).data)


def pose_loss(gt, est, points):
    """Mean squared distance between the two transforms' images of `points`.

    `gt` is a PlanarPose. `est` may be a PlanarPose (returns float) or a
    raw (3,) Tensor (theta, x, y) as produced by the pose decoder (returns
    a scalar Tensor; the estimated height is taken from gt.tz, which is
    assumed known).
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError("empty cloud" if len(pts) == 0 else f"bad points shape {pts.shape}")
    gt_image = pts @ rot_z(gt.yaw).T + gt.translation

    if isinstance(est, PlanarPose):
        est_image = pts @ rot_z(est.yaw).T + est.translation
        delta = gt_image - est_image
        return float(np.einsum("ij,ij->i", delta, delta).mean())

    if not isinstance(est, Tensor) or est.data.shape != (3,):
        raise ValueError("est must be a PlanarPose or a (3,) tensor")
    theta, tx, ty = (float(v) for v in est.data)
    c, s = math.cos(theta), math.sin(theta)
    x, y = pts[:, 0], pts[:, 1]
    ex = c * x - s * y + tx
    ey = s * x + c * y + ty
    dx = gt_image[:, 0].astype(est.data.dtype) - ex.astype(est.data.dtype)
    dy = gt_image[:, 1].astype(est.data.dtype) - ey.astype(est.data.dtype)
    # z rows cancel: both transforms are yaw-only and share the known height
    value = (dx * dx + dy * dy).mean()
    n = len(pts)

    def pullback(g):
        # d(est image)/dtheta per point
        rx = -s * x - c * y
        ry = c * x - s * y
        g_theta = (-2.0 / n) * (dx * rx + dy * ry).sum()
        g_tx = (-2.0 / n) * dx.sum()
        g_ty = (-2.0 / n) * dy.sum()
        return (np.array([g_theta, g_tx, g_ty], dtype=est.data.dtype) * g,)

    return make_node(np.asarray(value), (est,), pullback)


def joint_loss(cd, pl, s_cd, s_p):
    """Uncertainty-weighted multi-task loss.

    With s = log(sigma^2): exp(-s_cd)/2 * cd + exp(-s_p)/2 * pl
    + (s_cd + s_p)/2. All four arguments are scalars (Tensor or float).
    """
    cd = cd if isinstance(cd, Tensor) else Tensor(np.asarray(cd))
    pl = pl if isinstance(pl, Tensor) else Tensor(np.asarray(pl))
    s_cd = s_cd if isinstance(s_cd, Tensor) else Tensor(np.asarray(s_cd))
    s_p = s_p if isinstance(s_p, Tensor) else Tensor(np.asarray(s_p))
    weighted = add(scale(mul(exp(scale(s_cd, -1.0)), cd), 0.5),
                   scale(mul(exp(scale(s_p, -1.0)), pl), 0.5))
    return add(weighted, scale(add(s_cd, s_p), 0.5))
