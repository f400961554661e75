import numpy as np
import pytest

from icsc_pose.geometry import (
    CameraIntrinsics,
    CylinderModel,
    Pose,
    icsc_hit,
    pixel_ray,
    quat_from_yaw_tilt,
)
from icsc_pose.renderer import (
    FUSELAGE,
    GROUND,
    SKY,
    SURFACE_NAMES,
    WALL,
    Bounds,
    RandomizationSpec,
    SceneGeometry,
    SurfaceParams,
    _pixel_dirs,
    _trace,
    center_hit_in_view,
    cylinder_mask,
    label_pose,
    render,
    render_overlay,
    sample_spec,
)


def default_spec(position=(7.0, -7.25, 6.75), pan=20.0, tilt=-18.0):
    return RandomizationSpec(
        camera_position=position, pan_deg=pan, tilt_deg=tilt,
        surfaces={name: SurfaceParams() for name in SURFACE_NAMES})


@pytest.fixture(scope="module")
def geo():
    return SceneGeometry()


@pytest.fixture(scope="module")
def intr():
    return CameraIntrinsics()


class TestSceneGeometry:
    def test_y_span(self, geo):
        lo, hi = geo.y_span
        assert (lo, hi) == (-17.25, 2.75)

    def test_wall_must_clear_fuselage(self):
        with pytest.raises(ValueError, match="wall"):
            SceneGeometry(wall_x=-1.0)


class TestSampleSpec:
    def test_within_bounds(self):
        rng = np.random.default_rng(20)
        bounds = Bounds()
        for _ in range(50):
            spec = sample_spec(rng, bounds)
            pos = np.asarray(spec.camera_position)
            assert np.all(pos >= bounds.position_min)
            assert np.all(pos <= bounds.position_max)
            assert bounds.pan_deg[0] <= spec.pan_deg <= bounds.pan_deg[1]
            assert bounds.tilt_deg[0] <= spec.tilt_deg <= bounds.tilt_deg[1]
            for params in spec.surfaces.values():
                assert all(0.0 <= v <= 8.0 for v in params.translation)
                assert all(0.5 <= v <= 2.0 for v in params.scale)
                assert all(0.25 <= v <= 1.0 for v in params.ambient_rgb)
                assert all(0.0 <= v <= 0.5 for v in params.specular_rgb)

    def test_deterministic(self):
        a = sample_spec(np.random.default_rng(21), Bounds())
        b = sample_spec(np.random.default_rng(21), Bounds())
        assert a == b

    def test_values_rounded_to_9dp(self):
        spec = sample_spec(np.random.default_rng(22), Bounds())
        for v in (*spec.camera_position, spec.pan_deg, spec.tilt_deg):
            assert v == round(v, 9)

    def test_dict_round_trip(self):
        spec = sample_spec(np.random.default_rng(23), Bounds())
        assert RandomizationSpec.from_dict(spec.to_dict()) == spec

    def test_bounds_dict_round_trip(self):
        b = Bounds()
        assert Bounds.from_dict(b.to_dict()) == b


class TestPixelDirs:
    def test_matches_pixel_ray(self, intr):
        pose = Pose([7, -7, 6.75], quat_from_yaw_tilt(17.0, -18.0))
        dirs = _pixel_dirs(pose, intr)
        w, h = intr.resolution
        rng = np.random.default_rng(24)
        for _ in range(20):
            u = int(rng.integers(0, w))
            v = int(rng.integers(0, h))
            ray = pixel_ray(pose, intr, u, v)
            np.testing.assert_allclose(dirs[v, u], ray.direction, atol=1e-12)

    def test_unit_norm(self, intr):
        pose = Pose([7, -7, 6.75], quat_from_yaw_tilt(20.0, -18.0))
        dirs = _pixel_dirs(pose, intr)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)


class TestTrace:
    def test_center_pixel_matches_scalar_hit(self, geo):
        # 1x1 render resolves the exact center ray; its fuselage hit must
        # agree with the scene-coordinate function used for labels
        one = CameraIntrinsics(61.6, 16.0 / 9.0, (1, 1))
        rng = np.random.default_rng(25)
        bounds = Bounds()
        checked = 0
        while checked < 25:
            spec = sample_spec(rng, bounds)
            pose = label_pose(spec)
            hit, visible = center_hit_in_view(pose, geo)
            if not visible:
                continue
            surf, t, points, _, _, is_cap = _trace(pose, one, geo)
            assert surf[0, 0] == FUSELAGE
            assert not is_cap[0, 0]
            np.testing.assert_allclose(points[0, 0], hit.point, atol=1e-9)
            assert abs(t[0, 0] - hit.t) < 1e-9
            checked += 1

    def test_surfaces_present(self, intr, geo):
        surf = _trace(label_pose(default_spec()), intr, geo)[0]
        present = set(np.unique(surf))
        assert {FUSELAGE, GROUND, WALL} <= present

    def test_sky_away_from_wall(self, geo):
        # panned past the wall plane and pitched up: only sky in frame
        pose = Pose([7, -7.25, 6.75], quat_from_yaw_tilt(150.0, 40.0))
        surf = _trace(pose, CameraIntrinsics(61.6, 16 / 9, (16, 9)), geo)[0]
        assert np.all(surf == SKY)

    def test_body_normals_unit_radial(self, intr, geo):
        surf, _, points, normals, _, is_cap = _trace(label_pose(default_spec()),
                                                     intr, geo)
        body = (surf == FUSELAGE) & ~is_cap
        assert body.any()
        np.testing.assert_allclose(np.linalg.norm(normals[body], axis=-1), 1.0,
                                   atol=1e-12)
        assert np.all(normals[body][:, 1] == 0.0)


class TestRender:
    def test_shape_dtype_and_label(self, intr, geo):
        spec = default_spec()
        img, pose = render(spec, intr, geo)
        assert img.shape == (72, 128, 3)
        assert img.dtype == np.uint8
        np.testing.assert_array_equal(pose.position, spec.camera_position)
        q = quat_from_yaw_tilt(spec.pan_deg, spec.tilt_deg)
        np.testing.assert_array_equal(pose.orientation,
                                      np.round(q, 9))

    def test_deterministic(self, intr, geo):
        a, _ = render(default_spec(), intr, geo)
        b, _ = render(default_spec(), intr, geo)
        np.testing.assert_array_equal(a, b)

    def test_textured_not_flat(self, intr, geo):
        img, _ = render(default_spec(), intr, geo)
        assert len(np.unique(img.reshape(-1, 3), axis=0)) > 500

    def test_supersample_smooths(self, intr, geo):
        spec = default_spec()
        img, _ = render(spec, intr, geo)
        img_ss, _ = render(spec, intr, geo, supersample=True)
        assert img_ss.shape == img.shape
        assert not np.array_equal(img_ss, img)

    def test_camera_inside_cylinder_raises(self, intr, geo):
        with pytest.raises(ValueError, match="inside"):
            render(default_spec(position=(0.5, -7.25, 3.5)), intr, geo)

    def test_camera_below_ground_raises(self, intr, geo):
        with pytest.raises(ValueError, match="inside"):
            render(default_spec(position=(7.0, -7.25, -1.0)), intr, geo)

    def test_camera_behind_wall_raises(self, intr, geo):
        with pytest.raises(ValueError, match="inside"):
            render(default_spec(position=(-8.0, -7.25, 6.75)), intr, geo)


class TestMaskAndOverlay:
    def test_mask_nonempty_for_bound_poses(self, intr, geo):
        rng = np.random.default_rng(26)
        for _ in range(10):
            spec = sample_spec(rng, Bounds())
            mask = cylinder_mask(label_pose(spec), intr, geo)
            assert mask.any()

    def test_mask_changes_under_y_offset(self, intr, geo):
        # axis-aligned shifts only alter the silhouette when a fuselage end
        # is in frame, so aim near the clipped end
        pose = label_pose(default_spec(position=(5.0, -9.25, 6.75), pan=29.0))
        mask = cylinder_mask(pose, intr, geo)
        shifted = Pose(pose.position + np.array([0.0, 0.5, 0.0]), pose.orientation)
        mask2 = cylinder_mask(shifted, intr, geo)
        inter = np.logical_and(mask, mask2).sum()
        union = np.logical_or(mask, mask2).sum()
        assert inter < union

    def test_mask_invariant_without_end_cue(self, intr, geo):
        # with both fuselage ends out of frame the y-shift is unobservable
        pose = label_pose(default_spec())
        mask = cylinder_mask(pose, intr, geo)
        shifted = Pose(pose.position + np.array([0.0, 0.5, 0.0]), pose.orientation)
        np.testing.assert_array_equal(cylinder_mask(shifted, intr, geo), mask)

    def test_overlay_tints_only_mask(self, intr, geo):
        img, pose = render(default_spec(), intr, geo)
        out = render_overlay(img, pose, intr, geo, alpha=0.55)
        mask = cylinder_mask(pose, intr, geo)
        np.testing.assert_array_equal(out[~mask], img[~mask])
        expected_r = (0.45 * img[mask][:, 0] + 0.55 * 255.0 + 0.5).astype(np.uint8)
        np.testing.assert_array_equal(out[mask][:, 0], expected_r)

    def test_overlay_resizes_base(self, intr, geo):
        img, pose = render(default_spec(), intr, geo)
        big = np.repeat(np.repeat(img, 4, axis=0), 4, axis=1)
        out = render_overlay(big, pose, intr, geo)
        assert out.shape == img.shape


class TestCenterHit:
    def test_visible_for_centered_pose(self, geo):
        pose = label_pose(default_spec())
        hit, visible = center_hit_in_view(pose, geo)
        assert hit.hit and visible

    def test_looking_up_misses(self, geo):
        pose = Pose([7, -7.25, 6.75], quat_from_yaw_tilt(20.0, 40.0))
        hit, visible = center_hit_in_view(pose, geo)
        assert not visible

    def test_outside_span_not_visible(self):
        # short fuselage: the center ray hits the infinite cylinder beyond it
        geo = SceneGeometry(cylinder=CylinderModel(), visible_length=2.0,
                            visible_center_y=-16.0)
        pose = Pose([7, -7.25, 6.75], quat_from_yaw_tilt(20.0, -18.0))
        hit, visible = center_hit_in_view(pose, geo)
        assert hit.hit and not visible
