import numpy as np
import pytest

from canontrack import synth
from canontrack.geom import Box3, SimilarityTransform
from canontrack.pose import solve_pose
from canontrack.synth import (SceneScript, default_intrinsics, ground_truth_noc,
                              look_at, make_random_script, make_template,
                              object_pose, posed_bbox, render_frame)


def single_object_script(kind="cube", size=(0.6, 0.6, 0.6), yaw=0.0,
                         eye=(0.0, -2.0, 0.3), n_frames=1,
                         include_floor=False):
    template = make_template(kind, size)
    pose = object_pose(template, [0.0, 0.0], yaw)
    cam = look_at(eye, [0.0, 0.0, 0.3])
    return SceneScript(
        templates=[template],
        object_poses=[[pose]] * n_frames,
        camera_poses=[cam] * n_frames,
        intrinsics=default_intrinsics(),
        scene_bounds=Box3([0, 0, 0.3], [2.0, 2.0, 1.2]),
        include_floor=include_floor,
    )


class TestTemplates:
    def test_all_kinds_build(self):
        for kind in synth.TEMPLATE_KINDS:
            t = make_template(kind, [0.6, 0.5, 0.4])
            assert t.canonical_occupancy.bits.any()
            assert t.class_id == synth.TEMPLATE_KINDS[kind][0]
            assert t.symmetry == synth.TEMPLATE_KINDS[kind][1]

    def test_cube_fills_requested_extent(self):
        t = make_template("cube", [0.6, 0.6, 0.6])
        lo, hi = t.canonical_bbox()
        # equal extents: occupied region spans the whole unit cube
        assert np.allclose(lo, 0.0, atol=2 / 64)
        assert np.allclose(hi, 1.0, atol=2 / 64)

    def test_nonuniform_box_occupies_fraction(self):
        t = make_template("box", [0.8, 0.4, 0.8])
        lo, hi = t.canonical_bbox()
        # y extent is half the longest, centered in the unit cube
        assert hi[1] - lo[1] == pytest.approx(0.5, abs=2 / 64)
        assert hi[0] - lo[0] == pytest.approx(1.0, abs=2 / 64)

    def test_surface_voxels_are_thin(self):
        t = make_template("cube", [0.6, 0.6, 0.6])
        n_total = t.canonical_occupancy.count()
        n_surf = len(t.surface_voxels())
        assert 0 < n_surf < n_total
        # cube of side s voxels: surface is ~6 s^2 of s^3 voxels
        s = round(n_total ** (1 / 3))
        assert n_surf == s ** 3 - (s - 2) ** 3

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_template("sphere", [0.5, 0.5, 0.5])


class TestObjectPose:
    def test_rests_on_floor(self):
        for kind in ("cube", "table", "cylinder"):
            t = make_template(kind, [0.6, 0.5, 0.7])
            pose = object_pose(t, [0.3, -0.2], 0.5)
            box = posed_bbox(t, pose)
            assert box.min_corner[2] == pytest.approx(0.0, abs=1e-9)
            assert box.center[:2] == pytest.approx([0.3, -0.2], abs=1e-9)

    def test_posed_bbox_matches_physical_scale(self):
        t = make_template("cube", [0.6, 0.6, 0.6])
        box = posed_bbox(t, object_pose(t, [0.0, 0.0], 0.0))
        assert np.allclose(box.extents, 0.6, atol=0.02)


class TestRenderFrame:
    def test_cube_front_face_depth_analytic(self):
        """The camera looks straight at a cube face; the central pixel's
        depth is exactly the distance to that face."""
        script = single_object_script()
        depth, gt = render_frame(script, 0)
        intr = script.intrinsics
        # cube spans y in [-0.3, 0.3]; camera at y=-2 -> face distance 1.7
        center = depth[intr.height // 2, intr.width // 2]
        assert center == pytest.approx(1.7, abs=1e-6)

    def test_empty_scene_renders_zero(self):
        script = single_object_script()
        script.object_poses = [[SimilarityTransform(
            1.0, np.eye(3), [50.0, 50.0, 0.0])]]
        depth, _ = render_frame(script, 0)
        assert not depth.any()

    def test_floor_depth_analytic(self):
        script = single_object_script(include_floor=True)
        script.object_poses = [[SimilarityTransform(
            1.0, np.eye(3), [50.0, 50.0, 0.0])]]
        cam = script.camera_poses[0]
        depth, _ = render_frame(script, 0)
        hit = depth > 0
        assert hit.any()
        # all floor hits reproject to z = 0
        intr = script.intrinsics
        vv, uu = np.nonzero(hit)
        dirs = np.stack([(uu + 0.5 - intr.cx) / intr.fx,
                         (vv + 0.5 - intr.cy) / intr.fy,
                         np.ones(len(uu))], axis=-1)
        world = cam.apply(dirs * depth[hit][:, None])
        assert np.abs(world[:, 2]).max() < 1e-6

    def test_occlusion(self):
        # the near cube hides the far one along the view axis
        t = make_template("cube", [0.6, 0.6, 0.6])
        near = object_pose(t, [0.0, 0.0], 0.0)
        far = object_pose(t, [0.0, 1.5], 0.0)
        cam = look_at([0.0, -2.0, 0.3], [0.0, 0.0, 0.3])
        script = SceneScript(
            templates=[t, t],
            object_poses=[[near, far]],
            camera_poses=[cam],
            intrinsics=default_intrinsics(),
            scene_bounds=Box3([0, 0.75, 0.3], [2.0, 3.5, 1.2]),
            include_floor=False,
        )
        depth, gt = render_frame(script, 0)
        intr = script.intrinsics
        assert depth[intr.height // 2, intr.width // 2] == \
            pytest.approx(1.7, abs=1e-6)
        # the far object has no visible voxels facing the camera
        assert len(gt.objects[0].visible_voxels) > 0
        assert len(gt.objects[1].visible_voxels) == 0

    def test_visible_voxels_subset_of_surface(self):
        script = single_object_script(yaw=0.4)
        _, gt = render_frame(script, 0)
        surf = {tuple(v) for v in gt.objects[0].template.surface_voxels()}
        vis = {tuple(v) for v in gt.objects[0].visible_voxels}
        assert vis and vis <= surf

    def test_depth_matches_box_distance_everywhere(self):
        # every rendered object hit lies on the posed cube's boundary
        script = single_object_script(yaw=0.31)
        depth, gt = render_frame(script, 0)
        cam = script.camera_poses[0]
        intr = script.intrinsics
        vv, uu = np.nonzero(depth > 0)
        dirs = np.stack([(uu + 0.5 - intr.cx) / intr.fx,
                         (vv + 0.5 - intr.cy) / intr.fy,
                         np.ones(len(uu))], axis=-1)
        world = cam.apply(dirs * depth[depth > 0][:, None])
        canon = gt.objects[0].pose.inverse().apply(world)
        lo, hi = gt.objects[0].template.canonical_bbox()
        # on the boundary: inside the AABB, near some face
        inside = np.all((canon > lo - 1e-6) & (canon < hi + 1e-6), axis=1)
        face = np.minimum(np.abs(canon - lo), np.abs(canon - hi)).min(axis=1)
        assert inside.all()
        assert face.max() < 1e-6


class TestGroundTruthNoc:
    def test_pose_round_trip(self):
        """Solving the pose from the exact NOC correspondences recovers the
        generating pose to numerical precision."""
        t = make_template("l_shape", [0.7, 0.5, 0.6])
        pose = object_pose(t, [0.2, -0.1], 1.1)
        box = posed_bbox(t, pose)
        noc = ground_truth_noc(t, pose, box)
        cube = box.cubified()
        res = noc.dims[0]
        idx = np.stack(np.meshgrid(*[np.arange(res)] * 3, indexing="ij"),
                       axis=-1)
        centers = cube.min_corner + (idx + 0.5) / res * cube.extents
        sel = noc.valid
        est = solve_pose(noc.coords[sel], centers[sel])
        assert abs(est.scale - pose.scale) < 1e-9
        assert np.abs(est.rotation - pose.rotation).max() < 1e-9
        assert np.abs(est.translation - pose.translation).max() < 1e-9

    def test_valid_matches_template_occupancy(self):
        t = make_template("cube", [0.6, 0.6, 0.6])
        pose = object_pose(t, [0.0, 0.0], 0.0)
        noc = ground_truth_noc(t, pose)
        # crop of the posed cube: most voxels map into occupied space
        assert noc.valid.mean() > 0.9
        assert noc.coords[noc.valid].min() >= 0.0
        assert noc.coords[noc.valid].max() <= 1.0


class TestSceneScript:
    def test_json_round_trip(self):
        script = make_random_script(seed=7, n_objects=2, n_frames=3)
        back = SceneScript.from_dict(script.to_dict())
        assert back.frame_count == script.frame_count
        for f in range(script.frame_count):
            for a, b in zip(script.object_poses[f], back.object_poses[f]):
                assert np.allclose(a.matrix(), b.matrix())
            assert np.allclose(script.camera_poses[f].matrix(),
                               back.camera_poses[f].matrix())
        assert [t.kind for t in back.templates] == \
            [t.kind for t in script.templates]

    def test_version_check(self):
        d = make_random_script(seed=7, n_frames=2).to_dict()
        d["version"] = 99
        with pytest.raises(ValueError):
            SceneScript.from_dict(d)

    def test_deterministic_generation(self):
        a = make_random_script(seed=11, n_frames=4).to_dict()
        b = make_random_script(seed=11, n_frames=4).to_dict()
        assert a == b

    def test_seed_changes_scene(self):
        a = make_random_script(seed=1, n_frames=2).to_dict()
        b = make_random_script(seed=2, n_frames=2).to_dict()
        assert a != b

    def test_fast_motion_forces_low_overlap(self):
        # 20 frames, jumps every 3rd: 6 of 19 transitions are jumps
        script = make_random_script(seed=0, n_objects=2, n_frames=20,
                                    motion="fast", jump_period=3)
        gt_frames = [render_frame(script, f)[1]
                     for f in range(script.frame_count)]
        frac = synth.visible_overlap_fraction_low(gt_frames)
        assert frac >= 0.3

    def test_slow_motion_keeps_high_overlap(self):
        script = make_random_script(seed=0, n_objects=2, n_frames=8,
                                    motion="slow")
        boxes = [
            [posed_bbox(script.templates[i], script.object_poses[f][i])
             for i in range(2)]
            for f in range(script.frame_count)
        ]
        from canontrack.geom import box_iou_3d
        for prev, cur in zip(boxes, boxes[1:]):
            for a, b in zip(prev, cur):
                assert box_iou_3d(a, b) > 0.7
