import numpy as np
import pytest

from rgbdyn.geometry import Intrinsics, PixelObs, Pose, backproject, project
from rgbdyn.inpaint import inpaint_frame, splat
from rgbdyn.tracking import Keyframe

K = Intrinsics(fx=100.0, fy=100.0, cx=47.5, cy=39.5, width=96, height=80)


def keyframe_from(synth_frame, idx, with_mask=True):
    return Keyframe(
        frame_id=idx,
        timestamp=synth_frame.timestamp,
        pose=synth_frame.gt_pose,
        keypoints=[],
        kp_depths=np.zeros(0),
        mappoint_ids=[],
        rgb=synth_frame.rgb,
        depth=synth_frame.depth,
        dynamic_mask=synth_frame.gt_dynamic_mask if with_mask else None,
    )


class FakeFrame:
    def __init__(self, rgb, depth, intrinsics=K, timestamp=0.0):
        self.rgb = rgb
        self.depth = depth
        self.intrinsics = intrinsics
        self.timestamp = timestamp


class TestSplat:
    def test_identity_pose_same_pixel(self):
        out = splat(PixelObs(20.0, 30.0, None), 2.0, Pose.identity(), Pose.identity(), K)
        assert out is not None
        assert (out.u, out.v) == (20.0, 30.0)
        assert out.depth == pytest.approx(2.0)

    def test_planar_scene_uniform_shift(self):
        # 10 cm x-translation, fronto-parallel plane at 2 m: du = fx*0.1/2
        src = Pose.identity()
        dst = Pose(t=[0.1, 0.0, 0.0])
        expected_du = K.fx * 0.1 / 2.0
        for u, v in [(20.0, 10.0), (60.0, 40.0), (47.0, 70.0)]:
            out = splat(PixelObs(u, v, None), 2.0, src, dst, K)
            assert out is not None
            assert out.u == pytest.approx(u - expected_du, abs=0.5 + 1e-9)
            assert out.v == pytest.approx(v, abs=0.5 + 1e-9)
            assert out.depth == pytest.approx(2.0)

    def test_behind_camera_discarded(self):
        dst = Pose(t=[0.0, 0.0, 5.0])  # destination ahead of the point
        assert splat(PixelObs(47.0, 39.0, None), 2.0, Pose.identity(), dst, K) is None


def flat_frame(color=(50, 100, 150), depth=2.0, h=80, w=96):
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    rgb[:] = color
    return rgb, np.full((h, w), float(depth))


class TestInpaintFrame:
    def test_empty_mask_identity(self):
        rgb, depth = flat_frame()
        frame = FakeFrame(rgb, depth)
        kf = Keyframe(0, 0.0, Pose.identity(), [], np.zeros(0), [], rgb.copy(), depth.copy())
        res = inpaint_frame(frame, np.zeros((80, 96), bool), [kf], Pose.identity(), K)
        assert np.array_equal(res.rgb, rgb)
        assert np.array_equal(res.depth, depth)
        assert not res.coverage.any()

    def test_empty_keyframes_blanks_mask(self):
        rgb, depth = flat_frame()
        mask = np.zeros((80, 96), bool)
        mask[10:20, 10:20] = True
        res = inpaint_frame(FakeFrame(rgb, depth), mask, [], Pose.identity(), K)
        assert not res.coverage.any()
        assert (res.rgb[mask] == 0).all()
        assert (res.depth[mask] == 0).all()
        assert np.array_equal(res.rgb[~mask], rgb[~mask])

    def test_identity_keyframe_fills_mask_exactly(self):
        rgb, depth = flat_frame()
        src_rgb = rgb.copy()
        src_rgb[:, :, 0] = 77  # distinguish source colors
        mask = np.zeros((80, 96), bool)
        mask[30:40, 30:50] = True
        kf = Keyframe(0, 0.0, Pose.identity(), [], np.zeros(0), [], src_rgb, depth.copy())
        res = inpaint_frame(FakeFrame(rgb, depth), mask, [kf], Pose.identity(), K)
        assert res.coverage[mask].all()
        assert (res.rgb[mask][:, 0] == 77).all()
        assert np.array_equal(res.rgb[~mask], rgb[~mask])
        assert np.allclose(res.depth[mask], 2.0)

    def test_occluded_in_every_source_stays_blank(self):
        rgb, depth = flat_frame()
        mask = np.zeros((80, 96), bool)
        mask[20:40, 20:40] = True
        # keyframes identical to the frame and masked in the same region
        kfs = [
            Keyframe(i, float(i), Pose.identity(), [], np.zeros(0), [],
                     rgb.copy(), depth.copy(), dynamic_mask=mask.copy())
            for i in range(3)
        ]
        res = inpaint_frame(FakeFrame(rgb, depth), mask, kfs, Pose.identity(), K)
        assert not res.coverage[mask].any()
        assert (res.rgb[mask] == 0).all()

    def test_nearer_surface_wins_zbuffer(self):
        rgb, depth = flat_frame()
        mask = np.zeros((80, 96), bool)
        mask[35:45, 40:56] = True
        far_rgb, far_depth = flat_frame(color=(200, 0, 0), depth=3.0)
        near_rgb, near_depth = flat_frame(color=(0, 200, 0), depth=1.5)
        # the far keyframe is more recent (appended last) but the older one
        # carries a clearly nearer surface: z-buffer overrules recency
        kf_near = Keyframe(0, 0.0, Pose.identity(), [], np.zeros(0), [], near_rgb, near_depth)
        kf_far = Keyframe(1, 1.0, Pose.identity(), [], np.zeros(0), [], far_rgb, far_depth)
        res = inpaint_frame(FakeFrame(rgb, depth), mask, [kf_near, kf_far], Pose.identity(), K)
        assert (res.rgb[mask][:, 1] == 200).all()
        assert np.allclose(res.depth[mask], 1.5)

    def test_same_surface_keeps_most_recent(self):
        rgb, depth = flat_frame()
        mask = np.zeros((80, 96), bool)
        mask[35:45, 40:56] = True
        old_rgb, old_depth = flat_frame(color=(200, 0, 0), depth=2.0)
        new_rgb, new_depth = flat_frame(color=(0, 200, 0), depth=2.02)  # within 0.05
        kf_old = Keyframe(0, 0.0, Pose.identity(), [], np.zeros(0), [], old_rgb, old_depth)
        kf_new = Keyframe(1, 1.0, Pose.identity(), [], np.zeros(0), [], new_rgb, new_depth)
        res = inpaint_frame(FakeFrame(rgb, depth), mask, [kf_old, kf_new], Pose.identity(), K)
        assert (res.rgb[mask][:, 1] == 200).all()  # the newer sample stays

    def test_mask_size_mismatch(self):
        rgb, depth = flat_frame()
        with pytest.raises(ValueError):
            inpaint_frame(FakeFrame(rgb, depth), np.zeros((4, 4), bool), [], Pose.identity(), K)


@pytest.fixture(scope="module")
def mover_with_background(mover_scene):
    spec, frames = mover_scene
    return spec, frames


class TestOnSyntheticScene:
    def test_static_background_recovered(self, mover_scene):
        spec, frames = mover_scene
        k = spec.intrinsics
        target = frames[25]
        kfs = [keyframe_from(frames[j], j) for j in range(1, 25, 2)]
        frame = FakeFrame(target.rgb, target.depth, k, target.timestamp)
        res = inpaint_frame(frame, target.gt_dynamic_mask, kfs, target.gt_pose, k)
        m = target.gt_dynamic_mask
        assert res.coverage[m].mean() >= 0.9
        covered = m & res.coverage
        err = np.abs(
            res.rgb[covered].astype(float) - target.gt_background_rgb[covered].astype(float)
        )
        assert err.mean() <= 3.0
        off = ~m
        assert np.array_equal(res.rgb[off], target.rgb[off])
        assert np.array_equal(res.depth[off], target.depth[off])

    def test_monotone_coverage_in_keyframe_count(self, mover_scene):
        spec, frames = mover_scene
        k = spec.intrinsics
        target = frames[25]
        kfs = [keyframe_from(frames[j], j) for j in range(1, 25)]
        frame = FakeFrame(target.rgb, target.depth, k, target.timestamp)
        small = inpaint_frame(frame, target.gt_dynamic_mask, kfs, target.gt_pose, k, max_keyframes=5)
        large = inpaint_frame(frame, target.gt_dynamic_mask, kfs, target.gt_pose, k, max_keyframes=20)
        assert (small.coverage <= large.coverage).all()

    def test_depth_round_trip_to_source(self, mover_scene):
        spec, frames = mover_scene
        k = spec.intrinsics
        target = frames[20]
        window = [keyframe_from(frames[j], j) for j in range(1, 20, 2)][-20:]
        frame = FakeFrame(target.rgb, target.depth, k, target.timestamp)
        res = inpaint_frame(frame, target.gt_dynamic_mask, window, target.gt_pose, k)
        vs, us = np.nonzero(res.coverage)
        rng = np.random.default_rng(0)
        picks = rng.choice(len(vs), min(300, len(vs)), replace=False)
        for idx in picks:
            v, u = int(vs[idx]), int(us[idx])
            src_kf = window[res.source_index[v, u]]
            X = target.gt_pose.apply(backproject(PixelObs(float(u), float(v), res.depth[v, u]), k))
            obs = project(src_kf.pose.apply_inverse(X), k)
            assert obs is not None
            # the reprojection must land within 2 px of a source pixel that
            # could have produced this sample
            su, sv = int(round(obs.u)), int(round(obs.v))
            assert 0 <= su < k.width and 0 <= sv < k.height
            patch = src_kf.depth[
                max(0, sv - 2) : sv + 3, max(0, su - 2) : su + 3
            ]
            assert (np.abs(patch - obs.depth) < 0.05).any()
