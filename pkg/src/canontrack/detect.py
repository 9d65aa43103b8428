"""Object proposal extraction from per-voxel prediction fields.

The learned detection backbone is replaced by an oracle that derives the
prediction fields from ground truth, with degradation knobs (objectness
flips, center/extent jitter, class confusion) to sweep detector quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geom import Box3
from .voxel import SparseSurfaceGrid

EPS = 1e-12


@dataclass
class PredictionFields:
    """Per-surface-voxel detector outputs, in voxel units."""

    voxels: np.ndarray  # (N, 3) int surface voxel coords
    objectness: np.ndarray  # (N,) in [0, 1]
    center_offset: np.ndarray  # (N, 3) offset to object center, voxels
    extents: np.ndarray  # (N, 3) full box extents, voxels
    class_scores: np.ndarray  # (N, C), rows sum to 1
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    voxel_size: float = 1.0

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
        n = len(self.voxels)
        self.objectness = np.asarray(self.objectness, dtype=np.float64).reshape(n)
        self.center_offset = np.asarray(self.center_offset, dtype=np.float64).reshape(n, 3)
        self.extents = np.asarray(self.extents, dtype=np.float64).reshape(n, 3)
        self.class_scores = np.asarray(self.class_scores, dtype=np.float64).reshape(n, -1)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if n and np.abs(self.class_scores.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("class scores must sum to 1 per voxel")


@dataclass
class DetectionTargets:
    """Ground-truth fields; center/extent/class targets are only meaningful
    where object_mask is set."""

    objectness: np.ndarray  # (N,) binary
    object_mask: np.ndarray  # (N,) bool
    center_offset: np.ndarray  # (N, 3) voxels
    extents: np.ndarray  # (N, 3) voxels
    class_id: np.ndarray  # (N,) int
    owner: np.ndarray  # (N,) index of owning ground-truth object, -1 if none


@dataclass
class Proposal:
    box: Box3
    class_id: int
    member_voxels: np.ndarray  # (M, 3) int
    mean_objectness: float
    member_indices: np.ndarray = None  # (M,) indices into the input fields


def smooth_l1(x) -> np.ndarray:
    """Quadratic (x^2 / 2) for |x| <= 0.5, linear (|x| - 1/2) beyond."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a <= 0.5, 0.5 * a ** 2, a - 0.5)


def binary_cross_entropy(pred, target) -> float:
    p = np.clip(np.asarray(pred, dtype=np.float64), EPS, 1.0 - EPS)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-t * np.log(p) - (1.0 - t) * np.log(1.0 - p)))


def detection_losses(pred: PredictionFields, target: DetectionTargets) -> tuple:
    """(L_o, L_c, L_d, L_s): objectness BCE over all surface voxels, smooth-l1
    center/extent losses and class cross-entropy over target-object voxels.
    All terms are means over their support."""
    if len(pred.voxels) != len(target.objectness):
        raise ValueError("prediction and target fields are misaligned")
    l_o = binary_cross_entropy(pred.objectness, target.objectness)
    m = target.object_mask
    if m.any():
        l_c = float(np.mean(smooth_l1(pred.center_offset[m] - target.center_offset[m])))
        l_d = float(np.mean(smooth_l1(pred.extents[m] - target.extents[m])))
        probs = np.clip(pred.class_scores[m], EPS, 1.0)
        l_s = float(np.mean(-np.log(probs[np.arange(m.sum()), target.class_id[m]])))
    else:
        l_c = l_d = l_s = 0.0
    return l_o, l_c, l_d, l_s


def _mean_shift_modes(votes: np.ndarray, radius: float, steps: int) -> np.ndarray:
    """Converged position for each seed (seeds are the unique vote voxels)."""
    seeds = np.unique(np.round(votes), axis=0)
    tree = cKDTree(votes)
    pts = seeds.astype(np.float64)
    for _ in range(steps):
        neighborhoods = tree.query_ball_point(pts, radius)
        lens = np.array([len(nb) for nb in neighborhoods])
        keep = lens > 0
        if not keep.any():
            break
        flat = np.concatenate([neighborhoods[i] for i in np.nonzero(keep)[0]])
        starts = np.zeros(keep.sum(), dtype=np.int64)
        starts[1:] = np.cumsum(lens[keep])[:-1]
        sums = np.add.reduceat(votes[flat], starts, axis=0)
        pts[keep] = sums / lens[keep, None]
    return pts


def mean_shift_proposals(
    fields: PredictionFields,
    *,
    steps: int = 20,
    radius: float = 8.0,
    merge_radius: float | None = None,
    min_members: int = 50,
    objectness_threshold: float = 0.5,
) -> list:
    """Cluster center votes into box proposals.

    Voxels with objectness >= threshold vote at voxel + center_offset.  After
    `steps` flat-kernel mean-shift iterations, modes within merge_radius are
    merged (strongest support wins); votes attach to the nearest surviving
    mode within the kernel radius; clusters smaller than min_members are
    dropped.  Extents are average-pooled over members, the class is a
    majority vote of per-voxel argmax classes, and the box center is the
    converged mode.
    """
    if merge_radius is None:
        merge_radius = radius
    sel = fields.objectness >= objectness_threshold
    if not sel.any():
        return []
    idx = np.nonzero(sel)[0]
    votes = fields.voxels[sel] + fields.center_offset[sel]
    modes = _mean_shift_modes(votes, radius, steps)

    # Support of each candidate mode = votes within the kernel radius.
    tree = cKDTree(votes)
    support = np.array([len(nb) for nb in tree.query_ball_point(modes, radius)])

    # Greedy merge: strongest mode absorbs everything within merge_radius.
    order = np.lexsort((modes[:, 2], modes[:, 1], modes[:, 0], -support))
    alive = np.ones(len(modes), dtype=bool)
    survivors = []
    for i in order:
        if not alive[i]:
            continue
        survivors.append(i)
        d = np.linalg.norm(modes - modes[i], axis=1)
        alive &= d > merge_radius
    centers = modes[survivors]

    # Assign votes to the nearest surviving mode within the kernel radius.
    d = np.linalg.norm(votes[:, None, :] - centers[None, :, :], axis=2)
    nearest = np.argmin(d, axis=1)
    within = d[np.arange(len(votes)), nearest] <= radius

    proposals = []
    for mi in range(len(centers)):
        members = np.nonzero(within & (nearest == mi))[0]
        if len(members) < min_members:
            continue
        gi = idx[members]
        extents_vox = fields.extents[gi].mean(axis=0)
        cls = np.argmax(fields.class_scores[gi], axis=1)
        class_id = int(np.bincount(cls).argmax())
        center_world = fields.origin + (centers[mi] + 0.5) * fields.voxel_size
        box = Box3(center_world, np.maximum(extents_vox, 1e-6) * fields.voxel_size)
        proposals.append(
            Proposal(
                box=box,
                class_id=class_id,
                member_voxels=fields.voxels[gi],
                mean_objectness=float(fields.objectness[gi].mean()),
                member_indices=gi,
            )
        )
    return proposals


@dataclass
class DetectorKnobs:
    """Degradation of the oracle detector fields."""

    objectness_flip_rate: float = 0.0
    center_jitter: float = 0.0  # sigma, voxels
    extent_jitter: float = 0.0  # sigma, voxels
    class_confusion: float = 0.0


_DILATED_CACHE: dict = {}


def _dilated_occupancy(template) -> np.ndarray:
    key = id(template)
    if key not in _DILATED_CACHE:
        _DILATED_CACHE[key] = ndimage.binary_dilation(
            template.canonical_occupancy.bits, iterations=2
        )
    return _DILATED_CACHE[key]


def make_oracle_fields(
    surface: SparseSurfaceGrid,
    gt_objects,
    num_classes: int,
    knobs: DetectorKnobs = DetectorKnobs(),
    rng: np.random.Generator | None = None,
) -> tuple:
    """Build (PredictionFields, DetectionTargets) from ground truth.

    `gt_objects` is a sequence of objects with .box, .pose, .class_id and
    .template attributes (see synth.GroundTruthObject).  A surface voxel is
    owned by the first object whose dilated canonical occupancy contains it.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    centers = surface.centers()
    n = len(surface)
    owner = np.full(n, -1, dtype=np.int64)
    c_t = np.zeros((n, 3))
    d_t = np.ones((n, 3))
    class_t = np.zeros(n, dtype=np.int64)
    for oi, obj in enumerate(gt_objects):
        free = owner < 0
        if not free.any():
            break
        canon = obj.pose.inverse().apply(centers[free])
        res = obj.template.canonical_occupancy.dims[0]
        ci = np.floor(canon * res).astype(np.int64)
        inside = np.all((ci >= 0) & (ci < res), axis=1)
        hit = np.zeros(inside.shape, dtype=bool)
        occ = _dilated_occupancy(obj.template)
        ii = ci[inside]
        hit[inside] = occ[ii[:, 0], ii[:, 1], ii[:, 2]]
        gidx = np.nonzero(free)[0][hit]
        owner[gidx] = oi
        c_t[gidx] = (obj.box.center - centers[gidx]) / surface.voxel_size
        d_t[gidx] = obj.box.extents / surface.voxel_size
        class_t[gidx] = obj.class_id

    mask = owner >= 0
    o_t = mask.astype(np.float64)

    o = o_t.copy()
    flips = rng.random(n) < knobs.objectness_flip_rate
    o[flips] = 1.0 - o[flips]
    c = c_t + (rng.normal(0.0, knobs.center_jitter, (n, 3))
               if knobs.center_jitter > 0 else 0.0)
    d = np.maximum(
        d_t + (rng.normal(0.0, knobs.extent_jitter, (n, 3))
               if knobs.extent_jitter > 0 else 0.0),
        0.1,
    )
    cls = class_t.copy()
    confused = rng.random(n) < knobs.class_confusion
    if confused.any():
        shift = rng.integers(1, num_classes, confused.sum())
        cls[confused] = (cls[confused] + shift) % num_classes
    scores = np.zeros((n, num_classes))
    scores[np.arange(n), cls] = 1.0

    pred = PredictionFields(
        voxels=surface.coords,
        objectness=o,
        center_offset=c,
        extents=d,
        class_scores=scores,
        origin=surface.origin,
        voxel_size=surface.voxel_size,
    )
    target = DetectionTargets(
        objectness=o_t,
        object_mask=mask,
        center_offset=c_t,
        extents=d_t,
        class_id=class_t,
        owner=owner,
    )
    return pred, target
