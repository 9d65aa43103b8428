"""Completion and correspondence oracle.

Stands in for the learned completion network: produces each detection's
completed occupancy and NOC grid from ground truth under a visibility model,
with degradation knobs (completion fraction, occupancy flips, NOC noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Box3, SimilarityTransform
from .voxel import NocGrid, OccupancyGrid, binarize

EPS = 1e-12


@dataclass
class DegradationKnobs:
    """completion_fraction interpolates between the visible-only ablation
    (0.0) and the full completed geometry (1.0) by random inclusion of
    hidden voxels."""

    completion_fraction: float = 1.0
    occupancy_flip_rate: float = 0.0
    noc_noise: float = 0.0  # sigma, canonical units


@dataclass
class CompletionOutput:
    occupancy_prob: np.ndarray  # (R, R, R) in [0, 1]
    noc: NocGrid
    crop: Box3  # cube the 64^3 grids cover, world space

    def occupancy(self, threshold: float = 0.5) -> OccupancyGrid:
        return binarize(self.occupancy_prob, threshold)


def detection_rng(base_seed: int, sequence_id: int, frame_id: int,
                  object_id: int) -> np.random.Generator:
    """Per-detection generator so degradation is reproducible regardless of
    processing order."""
    return np.random.default_rng(
        np.random.SeedSequence((base_seed, sequence_id, frame_id, object_id))
    )


def _visible_mask(visible_voxels: np.ndarray, resolution: int) -> np.ndarray:
    mask = np.zeros((resolution,) * 3, dtype=bool)
    if len(visible_voxels):
        vv = np.asarray(visible_voxels, dtype=np.int64)
        mask[vv[:, 0], vv[:, 1], vv[:, 2]] = True
    return mask


def oracle_complete(
    detection_box: Box3,
    template,
    pose: SimilarityTransform,
    visible_voxels: np.ndarray,
    knobs: DegradationKnobs = DegradationKnobs(),
    rng: np.random.Generator | None = None,
    resolution: int = 64,
) -> CompletionOutput:
    """Completed occupancy and NOC grid for one detection.

    The grids cover the cubified detection box.  Occupancy support is the
    full posed ground-truth geometry at completion_fraction 1, the visible
    set at 0, and a random interpolation in between; NOC values are the
    ground-truth canonical coordinates with optional truncated Gaussian
    noise.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    cube = detection_box.cubified()
    bits = template.canonical_occupancy.bits
    res_t = bits.shape[0]

    idx = np.stack(np.meshgrid(*[np.arange(resolution)] * 3, indexing="ij"), axis=-1)
    centers = cube.min_corner + (idx.reshape(-1, 3) + 0.5) / resolution * cube.extents
    canon = pose.inverse().apply(centers)
    ci = np.floor(canon * res_t).astype(np.int64)
    inside = np.all((ci >= 0) & (ci < res_t), axis=1)
    if not inside.any():
        raise ValueError("detection box does not overlap the object")

    full = np.zeros(len(canon), dtype=bool)
    ii = ci[inside]
    full[inside] = bits[ii[:, 0], ii[:, 1], ii[:, 2]]

    vis_mask = _visible_mask(visible_voxels, res_t)
    visible = np.zeros(len(canon), dtype=bool)
    visible[inside] = vis_mask[ii[:, 0], ii[:, 1], ii[:, 2]]
    visible &= full

    f = float(knobs.completion_fraction)
    if f >= 1.0:
        support = full
    elif f <= 0.0:
        support = visible
    else:
        hidden = full & ~visible
        support = visible | (hidden & (rng.random(len(canon)) < f))

    occ = support.copy()
    if knobs.occupancy_flip_rate > 0:
        flips = rng.random(len(canon)) < knobs.occupancy_flip_rate
        occ = occ ^ flips

    coords = np.clip(canon, 0.0, 1.0)
    if knobs.noc_noise > 0:
        coords = np.clip(coords + rng.normal(0.0, knobs.noc_noise, coords.shape),
                         0.0, 1.0)
    valid = occ & full  # NOC only where target geometry exists and is kept
    coords[~valid] = 0.0

    shape = (resolution,) * 3
    return CompletionOutput(
        occupancy_prob=occ.astype(np.float64).reshape(shape),
        noc=NocGrid(coords.reshape(shape + (3,)), valid.reshape(shape)),
        crop=cube,
    )


def completion_loss(pred_prob: np.ndarray, target: OccupancyGrid) -> float:
    """Mean binary cross-entropy over all voxels."""
    p = np.asarray(pred_prob, dtype=np.float64)
    t = np.asarray(getattr(target, "bits", target), dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"grid dims mismatch: {p.shape} vs {t.shape}")
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(np.mean(-t * np.log(p) - (1.0 - t) * np.log(1.0 - p)))


def correspondence_loss(pred: NocGrid, target: NocGrid,
                        support: OccupancyGrid) -> float:
    """Mean (over support voxels) of the per-voxel l1 coordinate error."""
    sup = np.asarray(support.bits, dtype=bool)
    if pred.dims != target.dims or pred.dims != sup.shape:
        raise ValueError("grid dims mismatch")
    if not sup.any():
        raise ValueError("empty support")
    err = np.abs(pred.coords[sup] - target.coords[sup]).sum(axis=-1)
    return float(err.mean())
