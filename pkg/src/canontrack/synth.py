"""Synthetic dynamic desk-scale scenes: procedural voxel objects on scripted
planar trajectories, an orbiting depth camera, and full ground truth (boxes,
poses, visible-voxel sets, NOC grids).

Depth rendering casts one ray per pixel, intersects it with each object's
canonical occupancy (marched at half-voxel steps, then bisected to the
occupancy boundary) and z-buffers the results together with an optional
ground plane.  Depth is the camera-frame z coordinate; 0 marks invalid
pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Box3, SimilarityTransform, yaw_rotation
from .voxel import CameraIntrinsics, NocGrid, OccupancyGrid

CANONICAL_RESOLUTION = 64

# kind -> (class id, symmetry, square footprint required)
TEMPLATE_KINDS = {
    "cube": (0, "four_fold", True),
    "box": (1, "two_fold", False),
    "l_shape": (2, "none", False),
    "table": (3, "two_fold", False),
    "chair": (4, "none", False),
    "cylinder": (5, "cylindrical", True),
    "u_shape": (6, "none", False),
    "tower": (7, "four_fold", True),
    "cross": (8, "four_fold", True),
    "ring": (9, "cylindrical", True),
}

NUM_CLASSES = len(TEMPLATE_KINDS)


@dataclass
class ObjectTemplate:
    """A rigid object normalized into [0,1]^3, longest extent spanning the
    unit cube; z is the canonical up axis."""

    id: str
    kind: str
    canonical_occupancy: OccupancyGrid
    class_id: int
    symmetry: str
    physical_scale: np.ndarray  # full extents, meters

    def __post_init__(self):
        self.physical_scale = np.asarray(self.physical_scale, dtype=np.float64).reshape(3)
        if not self.canonical_occupancy.bits.any():
            raise ValueError("canonical occupancy must be nonempty")
        if not np.all(self.physical_scale > 0):
            raise ValueError("physical scale must be positive")

    @property
    def pose_scale(self) -> float:
        """Similarity scale placing the canonical cube at physical size."""
        return float(self.physical_scale.max())

    def canonical_bbox(self) -> tuple:
        """(lo, hi) canonical-space AABB of the occupied voxels."""
        occ = np.argwhere(self.canonical_occupancy.bits)
        res = self.canonical_occupancy.dims[0]
        lo = occ.min(axis=0) / res
        hi = (occ.max(axis=0) + 1) / res
        return lo, hi

    def surface_voxels(self) -> np.ndarray:
        """Occupied voxels with at least one empty 6-neighbor (or on the
        grid border)."""
        bits = self.canonical_occupancy.bits
        interior = np.zeros_like(bits)
        interior[1:-1, 1:-1, 1:-1] = (
            bits[1:-1, 1:-1, 1:-1]
            & bits[:-2, 1:-1, 1:-1] & bits[2:, 1:-1, 1:-1]
            & bits[1:-1, :-2, 1:-1] & bits[1:-1, 2:, 1:-1]
            & bits[1:-1, 1:-1, :-2] & bits[1:-1, 1:-1, 2:]
        )
        return np.argwhere(bits & ~interior)


def _shape_mask(kind: str, u: np.ndarray) -> np.ndarray:
    """Occupancy predicate in shape-local coordinates u in [-1,1]^3."""
    ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
    inside = np.all(np.abs(u) <= 1.0, axis=-1)
    if kind in ("cube", "box"):
        return inside
    if kind == "l_shape":
        return inside & ~((ux > 0.0) & (uy > 0.0))
    if kind == "table":
        top = uz > 0.5
        legs = (np.abs(ux) > 0.55) & (np.abs(uy) > 0.55)
        return inside & (top | legs)
    if kind == "chair":
        seat = (uz > -0.25) & (uz < 0.1)
        back = (uy > 0.55) & (uz >= 0.1)
        legs = (np.abs(ux) > 0.55) & (np.abs(uy) > 0.55) & (uz <= -0.25)
        return inside & (seat | back | legs)
    if kind == "cylinder":
        return inside & (ux ** 2 + uy ** 2 <= 1.0)
    if kind == "u_shape":
        slot = (np.abs(ux) < 0.4) & (uy > -0.2)
        return inside & ~slot
    if kind == "tower":
        base = uz <= 0.0
        top = (uz > 0.0) & (np.abs(ux) <= 0.5) & (np.abs(uy) <= 0.5)
        return inside & (base | top)
    if kind == "cross":
        return inside & ((np.abs(ux) <= 0.35) | (np.abs(uy) <= 0.35))
    if kind == "ring":
        r2 = ux ** 2 + uy ** 2
        return inside & (r2 <= 1.0) & (r2 >= 0.45 ** 2)
    raise ValueError(f"unknown template kind {kind!r}")


def make_template(kind: str, physical_scale, template_id: str | None = None,
                  resolution: int = CANONICAL_RESOLUTION) -> ObjectTemplate:
    """Build a procedural template of the given kind and physical size."""
    if kind not in TEMPLATE_KINDS:
        raise ValueError(f"unknown template kind {kind!r}")
    class_id, symmetry, square = TEMPLATE_KINDS[kind]
    scale = np.asarray(physical_scale, dtype=np.float64).reshape(3).copy()
    if square:
        scale[0] = scale[1] = max(scale[0], scale[1])
    frac = scale / scale.max()  # occupied fraction of the unit cube per axis

    idx = np.stack(np.meshgrid(*[np.arange(resolution)] * 3, indexing="ij"), axis=-1)
    cc = (idx + 0.5) / resolution  # canonical voxel centers
    u = (cc - 0.5) / (0.5 * frac)
    bits = _shape_mask(kind, u)
    return ObjectTemplate(
        id=template_id or kind,
        kind=kind,
        canonical_occupancy=OccupancyGrid(bits),
        class_id=class_id,
        symmetry=symmetry,
        physical_scale=scale,
    )


def object_pose(template: ObjectTemplate, center_xy, yaw: float,
                bottom_z: float = 0.0) -> SimilarityTransform:
    """Pose placing the template at a planar position with its occupied
    geometry resting on z = bottom_z."""
    lo, hi = template.canonical_bbox()
    c = template.pose_scale
    rot = yaw_rotation(yaw)
    # canonical occupied center, mapped to (cx, cy, *) in world
    mid = 0.5 * (lo + hi)
    tz = bottom_z - c * lo[2]
    txy = np.asarray(center_xy, dtype=np.float64) - c * (rot @ mid)[:2]
    return SimilarityTransform(c, rot, np.array([txy[0], txy[1], tz]))


def posed_bbox(template: ObjectTemplate, pose: SimilarityTransform) -> Box3:
    """World-space AABB of the posed canonical occupied region."""
    lo, hi = template.canonical_bbox()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    w = pose.apply(corners)
    mn, mx = w.min(axis=0), w.max(axis=0)
    return Box3(0.5 * (mn + mx), np.maximum(mx - mn, 1e-6))


@dataclass
class GroundTruthObject:
    object_id: int
    class_id: int
    template: ObjectTemplate
    pose: SimilarityTransform
    box: Box3
    symmetry: str
    visible_voxels: np.ndarray  # (M, 3) int canonical indices


@dataclass
class GroundTruthFrame:
    index: int
    camera_pose: SimilarityTransform
    objects: list


@dataclass
class SceneScript:
    """Everything needed to render a sequence deterministically."""

    templates: list  # ObjectTemplate per object
    object_poses: list  # [frame][object] -> SimilarityTransform
    camera_poses: list  # [frame] -> SimilarityTransform (camera-to-world)
    intrinsics: CameraIntrinsics
    scene_bounds: Box3
    include_floor: bool = True
    floor_half_extent: float = 3.0

    def __post_init__(self):
        if len(self.object_poses) < 1:
            raise ValueError("need at least one frame")
        if len(self.camera_poses) != len(self.object_poses):
            raise ValueError("camera and object pose counts differ")

    @property
    def frame_count(self) -> int:
        return len(self.object_poses)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "intrinsics": self.intrinsics.to_dict(),
            "scene_bounds": self.scene_bounds.to_dict(),
            "include_floor": self.include_floor,
            "floor_half_extent": self.floor_half_extent,
            "camera_poses": [p.to_dict() for p in self.camera_poses],
            "objects": [
                {
                    "id": t.id,
                    "kind": t.kind,
                    "physical_scale": t.physical_scale.tolist(),
                    "poses": [self.object_poses[f][i].to_dict()
                              for f in range(self.frame_count)],
                }
                for i, t in enumerate(self.templates)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        if d.get("version") != 1:
            raise ValueError(f"unsupported scene script version {d.get('version')}")
        templates = [
            make_template(o["kind"], o["physical_scale"], o["id"])
            for o in d["objects"]
        ]
        n_frames = len(d["camera_poses"])
        object_poses = [
            [SimilarityTransform.from_dict(o["poses"][f]) for o in d["objects"]]
            for f in range(n_frames)
        ]
        return cls(
            templates=templates,
            object_poses=object_poses,
            camera_poses=[SimilarityTransform.from_dict(p) for p in d["camera_poses"]],
            intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
            scene_bounds=Box3.from_dict(d["scene_bounds"]),
            include_floor=d.get("include_floor", True),
            floor_half_extent=d.get("floor_half_extent", 3.0),
        )


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SimilarityTransform:
    """Camera-to-world pose: camera z forward, x right, y down."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f = f / np.linalg.norm(f)
    r = np.cross(f, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(r)
    if nr < 1e-9:
        raise ValueError("camera forward is parallel to up")
    r = r / nr
    d = np.cross(f, r)
    rot = np.stack([r, d, f], axis=1)
    return SimilarityTransform(1.0, rot, eye)


def default_intrinsics(width: int = 240, height: int = 180,
                       fov_deg: float = 60.0) -> CameraIntrinsics:
    f = width / (2.0 * np.tan(np.radians(fov_deg) / 2.0))
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)


def _pixel_rays(intrinsics: CameraIntrinsics, camera_pose: SimilarityTransform):
    u = np.arange(intrinsics.width) + 0.5
    v = np.arange(intrinsics.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack(
        [(uu - intrinsics.cx) / intrinsics.fx,
         (vv - intrinsics.cy) / intrinsics.fy,
         np.ones_like(uu)],
        axis=-1,
    )
    dirs_world = dirs_cam @ camera_pose.rotation.T
    return dirs_world.reshape(-1, 3)


def _ray_box(o, d, lo, hi):
    """Slab intersection; returns (s_enter, s_exit) with s_exit < s_enter when
    the ray misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1)).max(axis=-1)
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1)).min(axis=-1)
    # Axis-parallel rays starting outside the slab never enter it.
    par = np.abs(d) < 1e-15
    outside = par & ((o < lo) | (o > hi))
    tmax = np.where(outside.any(axis=-1), -np.inf, tmax)
    return tmin, tmax


def _occupied_at(bits: np.ndarray, points: np.ndarray) -> np.ndarray:
    res = bits.shape[0]
    idx = np.floor(points * res).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < res), axis=-1)
    out = np.zeros(points.shape[:-1], dtype=bool)
    ii = idx[ok]
    out[ok] = bits[ii[:, 0], ii[:, 1], ii[:, 2]]
    return out


def _raycast_object(origin_c, dirs_c, bits, lo, hi, step_c: float,
                    refine_iters: int = 40) -> np.ndarray:
    """First-hit ray parameter against a canonical occupancy, inf for misses.

    The parameter is shared with the world-space ray, so the result is
    directly the camera z-depth.
    """
    n = len(dirs_c)
    hit = np.full(n, np.inf)
    norm = np.linalg.norm(dirs_c, axis=1)
    s0, s1 = _ray_box(origin_c, dirs_c, lo, hi)
    s0 = np.maximum(s0, 1e-9)
    cand = np.nonzero(s1 > s0)[0]
    if len(cand) == 0:
        return hit

    d_cand = dirs_c[cand]
    s0c, s1c = s0[cand], s1[cand]
    ds = step_c / norm[cand]
    steps = np.ceil((s1c - s0c) / ds).astype(np.int64)
    active = np.arange(len(cand))
    found = np.full(len(cand), np.inf)
    for k in range(int(steps.max())):
        active = active[k < steps[active]]
        if len(active) == 0:
            break
        s = np.minimum(s0c[active] + (k + 0.5) * ds[active], s1c[active])
        p = origin_c[None, :] + s[:, None] * d_cand[active]
        occ = _occupied_at(bits, p)
        if occ.any():
            found[active[occ]] = s[occ]
            active = active[~occ]

    got = np.isfinite(found)
    if got.any():
        gi = np.nonzero(got)[0]
        lo_s = np.maximum(found[gi] - ds[gi], s0c[gi])
        hi_s = found[gi]
        d_g = d_cand[gi]
        for _ in range(refine_iters):
            mid = 0.5 * (lo_s + hi_s)
            occ = _occupied_at(bits, origin_c[None, :] + mid[:, None] * d_g)
            hi_s = np.where(occ, mid, hi_s)
            lo_s = np.where(occ, lo_s, mid)
        hit[cand[gi]] = hi_s
    return hit


def render_frame(script: SceneScript, frame_idx: int,
                 visibility_band: float = 0.15) -> tuple:
    """Render one frame: (depth image, GroundTruthFrame).

    Depth is camera-frame z in meters, 0 where nothing was hit.  Each
    ground-truth object carries the canonical indices of its template surface
    voxels whose depth agrees with the rendered depth within
    `visibility_band`.
    """
    intr = script.intrinsics
    cam = script.camera_poses[frame_idx]
    dirs = _pixel_rays(intr, cam)
    o = cam.translation
    n = len(dirs)

    zbuf = np.full(n, np.inf)
    if script.include_floor:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -o[2] / dz
        px = o[0] + s * dirs[:, 0]
        py = o[1] + s * dirs[:, 1]
        ok = (dz < -1e-12) & (s > 0) & (np.abs(px) <= script.floor_half_extent) \
            & (np.abs(py) <= script.floor_half_extent)
        zbuf[ok] = s[ok]

    for oi, template in enumerate(script.templates):
        pose = script.object_poses[frame_idx][oi]
        inv = pose.inverse()
        o_c = inv.apply(o)
        d_c = dirs @ (inv.scale * inv.rotation).T
        lo, hi = template.canonical_bbox()
        res = template.canonical_occupancy.dims[0]
        hit = _raycast_object(o_c, d_c, template.canonical_occupancy.bits,
                              lo, hi, step_c=0.5 / res)
        closer = hit < zbuf
        zbuf[closer] = hit[closer]

    depth = np.where(np.isfinite(zbuf), zbuf, 0.0).reshape(intr.height, intr.width)

    objects = []
    for oi, template in enumerate(script.templates):
        pose = script.object_poses[frame_idx][oi]
        surf = template.surface_voxels()
        res = template.canonical_occupancy.dims[0]
        centers_c = (surf + 0.5) / res
        w = pose.apply(centers_c)
        pc = cam.inverse().apply(w)
        z = pc[:, 2]
        vis = np.zeros(len(surf), dtype=bool)
        front = z > 1e-6
        u = np.floor(intr.fx * pc[front, 0] / z[front] + intr.cx).astype(np.int64)
        v = np.floor(intr.fy * pc[front, 1] / z[front] + intr.cy).astype(np.int64)
        ok = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        d_px = np.zeros(ok.shape)
        d_px[ok] = depth[v[ok], u[ok]]
        vis_front = ok & (d_px > 0) & (np.abs(d_px - z[front]) < visibility_band)
        vis[np.nonzero(front)[0][vis_front]] = True
        objects.append(
            GroundTruthObject(
                object_id=oi,
                class_id=template.class_id,
                template=template,
                pose=pose,
                box=posed_bbox(template, pose),
                symmetry=template.symmetry,
                visible_voxels=surf[vis],
            )
        )
    return depth, GroundTruthFrame(frame_idx, cam, objects)


def render_sequence(script: SceneScript, visibility_band: float = 0.15):
    """Yield (depth, GroundTruthFrame) per frame."""
    for f in range(script.frame_count):
        yield render_frame(script, f, visibility_band)


def ground_truth_noc(template: ObjectTemplate, pose: SimilarityTransform,
                     box: Box3 | None = None,
                     resolution: int = CANONICAL_RESOLUTION) -> NocGrid:
    """Exact canonical coordinates over the cubified crop of the posed box.

    Each crop voxel center maps through the inverse pose; a voxel is valid
    where the template occupies the resulting canonical point.
    """
    if box is None:
        box = posed_bbox(template, pose)
    cube = box.cubified()
    idx = np.stack(np.meshgrid(*[np.arange(resolution)] * 3, indexing="ij"), axis=-1)
    centers = cube.min_corner + (idx + 0.5) / resolution * cube.extents
    canon = pose.inverse().apply(centers.reshape(-1, 3))
    valid = _occupied_at(template.canonical_occupancy.bits, canon)
    coords = np.clip(canon, 0.0, 1.0)
    coords[~valid] = 0.0
    return NocGrid(coords.reshape((resolution,) * 3 + (3,)),
                   valid.reshape((resolution,) * 3))


def visible_overlap_fraction_low(gt_frames, voxel_size: float = 0.05,
                                 iou_threshold: float = 0.3) -> float:
    """Fraction of frame transitions where some object's visible geometry
    (posed visible voxels, quantized to a world lattice) overlaps the
    previous frame's with IoU below the threshold."""
    low = 0
    total = 0
    for prev, cur in zip(gt_frames, gt_frames[1:]):
        frame_low = False
        for po, co in zip(prev.objects, cur.objects):
            sets = []
            for o in (po, co):
                res = o.template.canonical_occupancy.dims[0]
                w = o.pose.apply((o.visible_voxels + 0.5) / res)
                q = np.unique(np.floor(w / voxel_size).astype(np.int64), axis=0)
                sets.append({tuple(r) for r in q})
            a, b = sets
            union = len(a | b)
            iou = len(a & b) / union if union else 0.0
            if iou < iou_threshold:
                frame_low = True
        total += 1
        if frame_low:
            low += 1
    return low / total if total else 0.0


def make_random_script(
    seed: int,
    n_objects: int = 2,
    n_frames: int = 24,
    motion: str = "slow",
    intrinsics: CameraIntrinsics | None = None,
    jump_period: int = 4,
    include_floor: bool = True,
) -> SceneScript:
    """Random desk-scale scene.

    motion="slow": small per-frame drift and yaw; motion="fast": every
    `jump_period` frames objects jump 0.6-0.9 m and yaw 90-180 degrees,
    which forces low inter-frame overlap of the visible geometry.
    """
    if motion not in ("slow", "fast"):
        raise ValueError("motion must be 'slow' or 'fast'")
    rng = np.random.default_rng(seed)
    if intrinsics is None:
        intrinsics = default_intrinsics()

    kinds = list(TEMPLATE_KINDS)
    templates = []
    for i in range(n_objects):
        kind = kinds[int(rng.integers(len(kinds)))]
        size = np.array([
            rng.uniform(0.5, 0.9),
            rng.uniform(0.5, 0.9),
            rng.uniform(0.45, 0.85),
        ])
        templates.append(make_template(kind, size, f"obj{i}_{kind}"))

    placement_radius = 1.0
    min_separation = 0.95

    def sample_position(others):
        for _ in range(200):
            p = rng.uniform(-placement_radius, placement_radius, 2)
            if np.linalg.norm(p) > placement_radius:
                continue
            if all(np.linalg.norm(p - q) >= min_separation for q in others):
                return p
        raise RuntimeError("could not place object; scene too crowded")

    positions = []
    yaws = []
    for i in range(n_objects):
        positions.append(sample_position(positions[:i]))
        yaws.append(rng.uniform(0, 2 * np.pi))
    positions = [np.array(p) for p in positions]

    object_poses = []
    for f in range(n_frames):
        if f > 0:
            for i in range(n_objects):
                if motion == "fast" and f % jump_period == 0:
                    others = [positions[j] for j in range(n_objects) if j != i]
                    for _ in range(200):
                        ang = rng.uniform(0, 2 * np.pi)
                        dist = rng.uniform(0.6, 0.9)
                        p = positions[i] + dist * np.array([np.cos(ang), np.sin(ang)])
                        if np.linalg.norm(p) <= placement_radius and all(
                            np.linalg.norm(p - q) >= min_separation for q in others
                        ):
                            positions[i] = p
                            break
                    yaws[i] += rng.uniform(np.pi / 2, np.pi) * rng.choice([-1, 1])
                else:
                    step = 0.015 if motion == "slow" else 0.01
                    ang = rng.uniform(0, 2 * np.pi)
                    p = positions[i] + step * np.array([np.cos(ang), np.sin(ang)])
                    if np.linalg.norm(p) <= placement_radius:
                        positions[i] = p
                    yaws[i] += rng.uniform(-0.03, 0.03)
        object_poses.append([
            object_pose(templates[i], positions[i], yaws[i])
            for i in range(n_objects)
        ])

    camera_poses = []
    orbit_radius = rng.uniform(2.6, 3.0)
    height = rng.uniform(1.7, 2.1)
    phase = rng.uniform(0, 2 * np.pi)
    step = np.radians(1.0 if motion == "slow" else 6.0)
    for f in range(n_frames):
        a = phase + f * step
        eye = np.array([orbit_radius * np.cos(a), orbit_radius * np.sin(a), height])
        camera_poses.append(look_at(eye, np.array([0.0, 0.0, 0.35])))

    margin = 0.4
    all_boxes = [posed_bbox(templates[i], object_poses[f][i])
                 for f in range(n_frames) for i in range(n_objects)]
    mn = np.min([b.min_corner for b in all_boxes], axis=0) - margin
    mx = np.max([b.max_corner for b in all_boxes], axis=0) + margin
    mn[2] = min(mn[2], -0.05)
    scene_bounds = Box3(0.5 * (mn + mx), mx - mn)

    return SceneScript(
        templates=templates,
        object_poses=object_poses,
        camera_poses=camera_poses,
        intrinsics=intrinsics,
        scene_bounds=scene_bounds,
        include_floor=include_floor,
    )
