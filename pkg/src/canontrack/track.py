"""Tracklet management: Hungarian association on box IoU, running-average
canonical reconstruction, and the second-pass canonical-IoU rescue matching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geom import Box3, SimilarityTransform, box_iou_3d, volumetric_iou
from .voxel import binarize

ASSOCIATION_IOU = 0.3
RESCUE_IOU = 0.3
BINARIZE_THRESHOLD = 0.5
RUNNING_AVERAGE_OLD_WEIGHT = 0.8  # the 4:1 running mean


@dataclass
class Detection:
    """One per-frame object proposal entering the tracker."""

    box: Box3
    class_id: int
    canonical: np.ndarray  # (R, R, R) canonical occupancy in [0, 1]
    pose: SimilarityTransform | None = None
    score: float = 1.0


@dataclass
class Tracklet:
    id: int
    class_id: int
    last_box: Box3
    canonical_avg: np.ndarray
    pose_history: list = field(default_factory=list)  # (frame, SimilarityTransform|None)
    box_history: list = field(default_factory=list)  # (frame, Box3)
    active: bool = True
    first_frame: int = 0

    def frames(self) -> set:
        return {f for f, _ in self.box_history}


@dataclass
class AssignmentResult:
    matches: list  # (tracklet id, detection index, score)
    unmatched_tracklets: list  # tracklet ids
    unmatched_detections: list  # detection indices


def hungarian(cost: np.ndarray) -> list:
    """Minimal-cost assignment over all maximal matchings of a rectangular
    cost matrix; returns (row, col) pairs sorted lexicographically."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def associate_frame(tracklets: list, detections: list,
                    iou_threshold: float = ASSOCIATION_IOU,
                    class_gated: bool = False) -> AssignmentResult:
    """Match detections to tracklets by Hungarian on 1 - box IoU, rejecting
    matches under the IoU threshold."""
    if not tracklets or not detections:
        return AssignmentResult([], [t.id for t in tracklets],
                                list(range(len(detections))))
    iou = np.zeros((len(tracklets), len(detections)))
    for i, t in enumerate(tracklets):
        for j, d in enumerate(detections):
            if class_gated and t.class_id != d.class_id:
                continue
            iou[i, j] = box_iou_3d(t.last_box, d.box)
    matches = []
    matched_t, matched_d = set(), set()
    for i, j in hungarian(1.0 - iou):
        if iou[i, j] >= iou_threshold:
            matches.append((tracklets[i].id, j, float(iou[i, j])))
            matched_t.add(i)
            matched_d.add(j)
    return AssignmentResult(
        matches=matches,
        unmatched_tracklets=[t.id for i, t in enumerate(tracklets)
                             if i not in matched_t],
        unmatched_detections=[j for j in range(len(detections))
                              if j not in matched_d],
    )


def update_canonical(tracklet: Tracklet, new_canonical: np.ndarray,
                     old_weight: float = RUNNING_AVERAGE_OLD_WEIGHT) -> None:
    """Running mean: avg <- old_weight * avg + (1 - old_weight) * new."""
    new_canonical = np.asarray(new_canonical, dtype=np.float64)
    if new_canonical.shape != tracklet.canonical_avg.shape:
        raise ValueError("canonical grid dims mismatch")
    tracklet.canonical_avg = (
        old_weight * tracklet.canonical_avg + (1.0 - old_weight) * new_canonical
    )


def rescue_match(tracklets: list, orphans: list,
                 iou_threshold: float = RESCUE_IOU,
                 threshold: float = BINARIZE_THRESHOLD) -> AssignmentResult:
    """Second-pass matching of orphans to tracklets on binarized canonical
    volumetric IoU; entries are any objects carrying a `canonical_avg` (or
    `canonical`) grid."""
    def grid(x):
        g = getattr(x, "canonical_avg", None)
        if g is None:
            g = x.canonical
        return binarize(g, threshold)

    if not tracklets or not orphans:
        return AssignmentResult([], [t.id for t in tracklets],
                                list(range(len(orphans))))
    t_bits = [grid(t) for t in tracklets]
    o_bits = [grid(o) for o in orphans]
    iou = np.zeros((len(tracklets), len(orphans)))
    for i in range(len(tracklets)):
        for j in range(len(orphans)):
            iou[i, j] = volumetric_iou(t_bits[i], o_bits[j])
    matches = []
    matched_t, matched_o = set(), set()
    for i, j in hungarian(1.0 - iou):
        if iou[i, j] >= iou_threshold:
            matches.append((tracklets[i].id, j, float(iou[i, j])))
            matched_t.add(i)
            matched_o.add(j)
    return AssignmentResult(
        matches=matches,
        unmatched_tracklets=[t.id for i, t in enumerate(tracklets)
                             if i not in matched_t],
        unmatched_detections=[j for j in range(len(orphans))
                              if j not in matched_o],
    )


class Tracker:
    """Sequential frame-by-frame tracker with a post-hoc rescue pass.

    Must be driven by a single owner; `step` per frame in order, then
    `finish` once.
    """

    def __init__(self, association_iou: float = ASSOCIATION_IOU,
                 rescue_iou: float = RESCUE_IOU,
                 enable_rescue: bool = True,
                 class_gated: bool = False):
        self.association_iou = association_iou
        self.rescue_iou = rescue_iou
        self.enable_rescue = enable_rescue
        self.class_gated = class_gated
        self.tracklets: list = []
        self._next_id = 0
        self._frame = 0

    def _new_tracklet(self, det: Detection, frame: int) -> Tracklet:
        t = Tracklet(
            id=self._next_id,
            class_id=det.class_id,
            last_box=det.box,
            canonical_avg=np.asarray(det.canonical, dtype=np.float64).copy(),
            pose_history=[(frame, det.pose)],
            box_history=[(frame, det.box)],
            first_frame=frame,
        )
        self._next_id += 1
        self.tracklets.append(t)
        return t

    def step(self, detections: list) -> AssignmentResult:
        frame = self._frame
        result = associate_frame(self.tracklets, detections,
                                 self.association_iou, self.class_gated)
        by_id = {t.id: t for t in self.tracklets}
        for tid, j, _ in result.matches:
            t = by_id[tid]
            det = detections[j]
            t.last_box = det.box
            t.box_history.append((frame, det.box))
            t.pose_history.append((frame, det.pose))
            update_canonical(t, det.canonical)
        for j in result.unmatched_detections:
            self._new_tracklet(detections[j], frame)
        self._frame += 1
        return result

    def finish(self) -> list:
        """Run the rescue pass (if enabled) and return the final tracklets.

        Tracklets born mid-sequence are treated as orphans and merged into
        temporally disjoint earlier tracklets when their binarized canonical
        reconstructions overlap; merging rewrites the orphan's identity
        across its whole history.  The pass repeats until no merge applies.
        """
        if not self.enable_rescue:
            return self.tracklets
        while True:
            merged_any = False
            # Re-derive candidates each round: merges change the orphan set.
            candidates = sorted(self.tracklets, key=lambda t: t.first_frame)
            orphan_list = [t for t in candidates if t.first_frame > 0]
            base_list = candidates
            if not orphan_list:
                break
            pairs = []
            iou = np.zeros((len(base_list), len(orphan_list)))
            for i, b in enumerate(base_list):
                bf = b.frames()
                for j, o in enumerate(orphan_list):
                    if b is o or b.first_frame >= o.first_frame:
                        continue
                    if bf & o.frames():
                        continue  # coexisting tracklets are distinct objects
                    iou[i, j] = volumetric_iou(
                        binarize(b.canonical_avg, BINARIZE_THRESHOLD),
                        binarize(o.canonical_avg, BINARIZE_THRESHOLD),
                    )
            for i, j in hungarian(1.0 - iou):
                if iou[i, j] >= self.rescue_iou:
                    pairs.append((base_list[i], orphan_list[j]))
            # Apply non-conflicting merges (a base absorbed this round cannot
            # also be merged away).
            absorbed = set()
            for base, orphan in pairs:
                if id(base) in absorbed or id(orphan) in absorbed:
                    continue
                self._merge(base, orphan)
                absorbed.add(id(orphan))
                merged_any = True
            if not merged_any:
                break
        return self.tracklets

    def _merge(self, base: Tracklet, orphan: Tracklet) -> None:
        base.box_history = sorted(base.box_history + orphan.box_history,
                                  key=lambda x: x[0])
        base.pose_history = sorted(
            base.pose_history + orphan.pose_history, key=lambda x: x[0]
        )
        last_frame, last_box = max(base.box_history, key=lambda x: x[0])
        base.last_box = last_box
        update_canonical(base, orphan.canonical_avg)
        self.tracklets.remove(orphan)

    def dump(self) -> dict:
        """Per-sequence tracklet dump: the interchange format for evaluation
        and plotting."""
        return {
            "version": 1,
            "frame_count": self._frame,
            "tracklets": [
                {
                    "id": t.id,
                    "class_id": t.class_id,
                    "frames": [
                        {
                            "frame": f,
                            "box": box.to_dict(),
                            "pose": pose.to_dict() if pose is not None else None,
                        }
                        for (f, box), (_, pose) in zip(t.box_history, t.pose_history)
                    ],
                }
                for t in sorted(self.tracklets, key=lambda t: t.id)
            ],
        }
