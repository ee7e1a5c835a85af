"""Closed-form least-squares alignment of an estimate onto ground truth.

Solves ``min sum ||gt_i - (s R est_i + tr)||^2`` by centroid subtraction and
an SVD of the cross-covariance (Horn/Umeyama), in three flavours:

``rigid``       R in SO(3), s = 1 (default)
``similarity``  R in SO(3), free positive scale
``yaw2d``       R restricted to rotations about world z, s = 1
"""

from dataclasses import dataclass, field

import numpy as np

from vioflight import rotations
from vioflight.trajectory import Trajectory

MODES = ("rigid", "similarity", "yaw2d")
_ALIASES = {"sim3": "similarity", "se3": "rigid"}

# relative singular-value threshold for degeneracy checks
_RANK_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentTransform:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    tr: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        tr = np.asarray(self.tr, dtype=float).reshape(3)
        if not self.s > 0:
            raise ValueError("scale must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("R is not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "tr", tr)
        object.__setattr__(self, "s", float(self.s))

    def apply_points(self, pts):
        return self.s * np.asarray(pts, dtype=float) @ self.R.T + self.tr

    def matrix(self):
        """4x4 homogeneous form."""
        T = np.eye(4)
        T[:3, :3] = self.s * self.R
        T[:3, 3] = self.tr
        return T


def resolve_mode(mode):
    mode = _ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown alignment mode {mode!r}; expected one of {MODES + tuple(_ALIASES)}")
    return mode


def _check_rank(centered, needed, label):
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or (needed > 1 and sv[needed - 1] <= _RANK_TOL * sv[0]):
        kind = "coincident" if sv[0] == 0 else "collinear"
        raise DegenerateGeometryError(f"{label} points are {kind}; need spread in {needed} dimensions")


def compute_alignment(gt, est, mode="rigid"):
    """Least-squares transform mapping ``est`` positions onto ``gt``.

    ``gt`` and ``est`` are matched ``(n, 3)`` position arrays.
    """
    mode = resolve_mode(mode)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    if len(gt) != len(est):
        raise ValueError("gt and est must have the same number of points")
    if mode == "yaw2d":
        return _align_yaw(gt, est)

    if len(gt) < 3:
        raise DegenerateGeometryError(f"{mode} alignment needs at least 3 point pairs, got {len(gt)}")
    mu_gt = gt.mean(axis=0)
    mu_est = est.mean(axis=0)
    gc = gt - mu_gt
    ec = est - mu_est
    _check_rank(ec, 2, "estimate")
    _check_rank(gc, 2, "ground-truth")

    cov = gc.T @ ec / len(gt)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if mode == "similarity":
        var_est = (ec**2).sum() / len(est)
        s = float(np.trace(np.diag(D) @ S) / var_est)
    else:
        s = 1.0
    tr = mu_gt - s * R @ mu_est
    return AlignmentTransform(R, tr, s)


def _align_yaw(gt, est):
    if len(gt) < 2:
        raise DegenerateGeometryError(f"yaw2d alignment needs at least 2 point pairs, got {len(gt)}")
    mu_gt = gt.mean(axis=0)
    mu_est = est.mean(axis=0)
    gc = gt[:, :2] - mu_gt[:2]
    ec = est[:, :2] - mu_est[:2]
    if not np.any(np.linalg.norm(ec, axis=1) > 0) or not np.any(np.linalg.norm(gc, axis=1) > 0):
        raise DegenerateGeometryError("yaw2d alignment needs horizontally non-coincident points")
    # maximize sum gt . R(yaw) est in the horizontal plane
    c = np.sum(ec[:, 0] * gc[:, 0] + ec[:, 1] * gc[:, 1])
    s = np.sum(ec[:, 0] * gc[:, 1] - ec[:, 1] * gc[:, 0])
    if c == 0 and s == 0:
        raise DegenerateGeometryError("yaw2d alignment is ambiguous for this point set")
    yaw = np.arctan2(s, c)
    R = np.array([[np.cos(yaw), -np.sin(yaw), 0.0], [np.sin(yaw), np.cos(yaw), 0.0], [0.0, 0.0, 1.0]])
    tr = mu_gt - R @ mu_est
    return AlignmentTransform(R, tr, 1.0)


def apply_alignment(S, traj):
    """Map positions through ``s R p + tr`` and pre-rotate orientations by R."""
    p = S.apply_points(traj.p)
    qR = rotations.from_matrix(S.R)
    q = rotations.multiply(np.broadcast_to(qR, traj.q.shape), traj.q)
    return Trajectory(traj.t, p, q, frame_id=traj.frame_id)


def residual(S, gt, est):
    """Sum of squared alignment residuals."""
    d = np.asarray(gt, dtype=float) - S.apply_points(est)
    return float((d**2).sum())
