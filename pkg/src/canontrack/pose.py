"""Closed-form similarity alignment of corresponded point sets, plus
symmetry-aware rotation error and pose loss formulas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import SimilarityTransform, yaw_rotation

SYMMETRY_KINDS = ("none", "two_fold", "four_fold", "cylindrical")

# Canonical up axis is +z; all symmetry groups rotate about it.
UP_AXIS = 2


class DegenerateCorrespondences(ValueError):
    """Raised when correspondences are collinear/coincident; the caller is
    expected to fall back (e.g. to the previous-frame pose)."""


@dataclass
class CorrespondenceSet:
    canonical: np.ndarray  # (N, 3) points in [0,1]^3
    observed: np.ndarray  # (N, 3) frame-space points, meters

    def __post_init__(self):
        self.canonical = np.asarray(self.canonical, dtype=np.float64).reshape(-1, 3)
        self.observed = np.asarray(self.observed, dtype=np.float64).reshape(-1, 3)
        if len(self.canonical) != len(self.observed):
            raise ValueError("point lists must have equal length")
        if len(self.canonical) < 3:
            raise ValueError("need at least 3 correspondences")


@dataclass
class SymmetryClass:
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in SYMMETRY_KINDS:
            raise ValueError(f"unknown symmetry kind {self.kind!r}")

    def group(self) -> list:
        """Discrete rotations leaving the canonical shape invariant.

        Cylindrical symmetry is continuous and handled analytically by the
        error/loss functions; here it degenerates to the identity.
        """
        if self.kind == "two_fold":
            return [yaw_rotation(0.0), yaw_rotation(np.pi)]
        if self.kind == "four_fold":
            return [yaw_rotation(k * np.pi / 2) for k in range(4)]
        return [np.eye(3)]


def umeyama_solve(corr: CorrespondenceSet, eps: float = 1e-9) -> SimilarityTransform:
    """Least-squares scale/rotation/translation mapping canonical points onto
    observed points.

    Uses the SVD of the cross-covariance with the determinant correction
    diag(1, 1, det(UV^T)), so the returned rotation is always proper.
    Planar point sets are fine; collinear or coincident ones raise
    DegenerateCorrespondences.
    """
    pn = corr.canonical
    po = corr.observed
    n = len(pn)

    mu_n = pn.mean(axis=0)
    mu_o = po.mean(axis=0)
    qn = pn - mu_n
    qo = po - mu_o

    var_n = (qn ** 2).sum() / n
    if var_n <= eps:
        raise DegenerateCorrespondences("canonical points are coincident")

    cov = qo.T @ qn / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= eps:
        raise DegenerateCorrespondences("correspondences are collinear")

    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0

    rot = u @ np.diag(s) @ vt
    scale = float((d * s).sum() / var_n)
    if scale <= eps:
        raise DegenerateCorrespondences("non-positive recovered scale")
    trans = mu_o - scale * rot @ mu_n
    return SimilarityTransform(scale, rot, trans)


def solve_pose(canonical: np.ndarray, observed: np.ndarray) -> SimilarityTransform:
    return umeyama_solve(CorrespondenceSet(canonical, observed))


def _geodesic_angle_deg(relative: np.ndarray) -> float:
    cos = np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def _best_cylindrical_trace(m: np.ndarray) -> float:
    """max over yaw theta of trace(Rz(-theta) @ m)."""
    a = m[0, 0] + m[1, 1]
    b = m[1, 0] - m[0, 1]
    return float(np.hypot(a, b) + m[2, 2])


def rotation_error(pred: np.ndarray, target: np.ndarray,
                   sym: SymmetryClass | str = "none") -> float:
    """Geodesic rotation error in degrees, minimized over the symmetry group."""
    if isinstance(sym, str):
        sym = SymmetryClass(sym)
    if sym.kind == "cylindrical":
        # angle(pred, target @ Rz(theta)) minimized analytically over theta
        m = target.T @ pred
        cos = np.clip((_best_cylindrical_trace(m) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(cos)))
    return min(
        _geodesic_angle_deg((target @ g).T @ pred) for g in sym.group()
    )


def pose_losses(pred: SimilarityTransform, target: SimilarityTransform,
                sym: SymmetryClass | str = "none") -> tuple:
    """(rotation Frobenius loss, scale l1 loss, translation l2 loss).

    The rotation term is minimized over the symmetry group, mirroring
    rotation_error.
    """
    if isinstance(sym, str):
        sym = SymmetryClass(sym)
    if sym.kind == "cylindrical":
        # ||Rp - Rt Rz(theta)||_F^2 = 6 - 2 tr(Rz(-theta) Rt^T Rp)
        m = target.rotation.T @ pred.rotation
        rot_loss = float(np.sqrt(max(0.0, 6.0 - 2.0 * _best_cylindrical_trace(m))))
    else:
        rot_loss = min(
            float(np.linalg.norm(pred.rotation - target.rotation @ g))
            for g in sym.group()
        )
    scale_loss = abs(pred.scale - target.scale)
    trans_loss = float(np.linalg.norm(pred.translation - target.translation))
    return rot_loss, scale_loss, trans_loss
