"""Scene-oracle, camera, dataset, and pose-JSON tests."""

import os

import numpy as np
import pytest

from raysac.ppm import read_ppm, write_ppm
from raysac.render import reference_render_batch
from raysac.scenes import (
    Camera, SceneOracle, ViewDataset, generate_rays, load_pose_json,
    look_at, make_preset, make_preset_cameras, oracle_query,
    synthesize_dataset, write_pose_json,
)


class TestOracleQuery:
    def test_outside_everything(self):
        oracle = make_preset("spheres")
        sigma, _ = oracle_query(oracle, [10.0, 10.0, 10.0])
        assert sigma == 0.0

    def test_inside_single_sphere(self):
        oracle = SceneOracle([{"kind": "sphere", "center": [0, 0, 0], "radius": 1.0,
                               "sigma": 2.0, "color": [1.0, 0.0, 0.0]}],
                             bounds=(0.0, 4.0))
        sigma, color = oracle_query(oracle, [0.1, 0.0, 0.0])
        assert sigma == 2.0
        np.testing.assert_array_equal(color, [1.0, 0.0, 0.0])

    def test_overlap_sums_density_averages_color(self):
        prims = [
            {"kind": "sphere", "center": [0, 0, 0], "radius": 1.0, "sigma": 3.0,
             "color": [1.0, 0.0, 0.0]},
            {"kind": "box", "min": [-1, -1, -1], "max": [1, 1, 1], "sigma": 3.0,
             "color": [0.0, 1.0, 0.0]},
        ]
        sigma, color = oracle_query(SceneOracle(prims, (0, 1)), [0.0, 0.0, 0.0])
        assert sigma == 6.0
        np.testing.assert_allclose(color, [0.5, 0.5, 0.0])

    def test_invalid_primitives_rejected(self):
        with pytest.raises(ValueError):
            SceneOracle([{"kind": "sphere", "center": [0, 0, 0], "radius": -1,
                          "sigma": 1, "color": [0, 0, 0]}], (0, 1))
        with pytest.raises(ValueError):
            SceneOracle([{"kind": "wedge", "sigma": 1, "color": [0, 0, 0]}], (0, 1))
        with pytest.raises(ValueError):
            SceneOracle([], (1.0, 1.0))

    def test_sphere_chord_classification(self):
        # along a ray through one sphere, sigma > 0 exactly on the analytic
        # chord, probed at 10^4 points with 1e-6 boundary margin
        oracle = SceneOracle([{"kind": "sphere", "center": [0.2, -0.1, 3.0],
                               "radius": 0.7, "sigma": 2.0, "color": [1, 1, 1]}],
                             bounds=(0.0, 6.0))
        o = np.array([0.0, 0.0, 0.0])
        d = np.array([0.05, -0.02, 1.0])
        d = d / np.linalg.norm(d)
        # analytic chord: |o + t d - c|^2 = r^2
        oc = o - np.array([0.2, -0.1, 3.0])
        b = 2 * np.dot(oc, d)
        c0 = np.dot(oc, oc) - 0.7 ** 2
        disc = b * b - 4 * c0
        assert disc > 0
        t_in = (-b - np.sqrt(disc)) / 2
        t_out = (-b + np.sqrt(disc)) / 2
        t = np.linspace(0.0, 6.0, 10_000)
        pts = o[None] + t[:, None] * d[None]
        sigma, _ = oracle.sample(pts)
        inside_analytic = (t >= t_in) & (t <= t_out)
        margin = (np.abs(t - t_in) > 1e-6) & (np.abs(t - t_out) > 1e-6)
        np.testing.assert_array_equal((sigma > 0)[margin], inside_analytic[margin])

    def test_json_round_trip(self):
        oracle = make_preset("boxes")
        again = SceneOracle.from_json(oracle.to_json())
        assert again.t_near == oracle.t_near and again.t_far == oracle.t_far
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (100, 3))
        s1, c1 = oracle.sample(pts)
        s2, c2 = again.sample(pts)
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(c1, c2)


class TestCameraRays:
    def test_center_pixel_is_optical_axis(self):
        # odd resolution puts a pixel center exactly on the axis
        cam = Camera(np.array([0.0, 0.0, 5.0]), np.eye(3), 60.0, 5, 5)
        rays = generate_rays(cam)
        center = rays.dirs[2 * 5 + 2]
        np.testing.assert_allclose(center, [0.0, 0.0, -1.0], atol=1e-12)

    def test_directions_unit_norm(self):
        cam = Camera(np.array([1.0, 2.0, 3.0]), look_at([1, 2, 3], [0, 0, 0]),
                     40.0, 8, 8)
        rays = generate_rays(cam)
        np.testing.assert_allclose(np.linalg.norm(rays.dirs, axis=1), 1.0, atol=1e-6)

    def test_uv_grid_4x4(self):
        cam = Camera(np.zeros(3), np.eye(3), 10.0, 4, 4)
        rays = generate_rays(cam)
        assert len(rays) == 16
        want = {0.125, 0.375, 0.625, 0.875}
        assert set(np.round(rays.uv[:, 0], 6)) == want
        assert set(np.round(rays.uv[:, 1], 6)) == want

    def test_origins_equal_camera_position(self):
        pos = np.array([0.3, -1.0, 2.5])
        cam = Camera(pos, look_at(pos, [0, 0, 0]), 32.0, 6, 4)
        rays = generate_rays(cam)
        assert np.all(rays.origins == pos)

    def test_rotation_validated(self):
        with pytest.raises(ValueError):
            Camera(np.zeros(3), np.eye(3) * 1.1, 10.0, 4, 4)


class TestDatasets:
    def test_empty_scene_background_images(self):
        oracle = SceneOracle([], bounds=(1.0, 2.0), background=(0.2, 0.4, 0.6))
        cam = Camera(np.array([0.0, 0.0, 5.0]), np.eye(3), 20.0, 12, 12)
        ds = synthesize_dataset(oracle, [cam], n_dense=512)
        want = np.broadcast_to([0.2, 0.4, 0.6], (12, 12, 3))
        np.testing.assert_allclose(ds.views[0][1], want, atol=1e-6)

    def test_slab_front_view_closed_form(self):
        oracle = make_preset("slab")
        _, test_cams = make_preset_cameras("slab", 32, 32)
        ds = synthesize_dataset(oracle, [test_cams[0]], n_dense=4096)
        img = ds.views[0][1]
        closed = (1 - np.exp(-1.0 * 0.4)) * np.array([0.85, 0.35, 0.25])
        assert np.abs(img - closed).max() < 1e-3

    def test_deterministic(self):
        oracle = make_preset("spheres")
        train, _ = make_preset_cameras("spheres", 16, 16)
        a = synthesize_dataset(oracle, train[:1], n_dense=512)
        b = synthesize_dataset(oracle, train[:1], n_dense=512)
        assert a.views[0][1].tobytes() == b.views[0][1].tobytes()

    def test_self_convergence_mean_under_1e3(self):
        # doubling the dense sample count changes a view by < 1e-3 on average
        for name in ("slab", "spheres", "boxes"):
            oracle = make_preset(name)
            train, _ = make_preset_cameras(name)
            rays = generate_rays(train[0], oracle.t_near, oracle.t_far)
            c512 = reference_render_batch(oracle, rays.origins, rays.dirs,
                                          oracle.t_near, oracle.t_far, 512)
            c1024 = reference_render_batch(oracle, rays.origins, rays.dirs,
                                           oracle.t_near, oracle.t_far, 1024)
            assert np.abs(c512 - c1024).mean() < 1e-3, name

    def test_resolution_mismatch_rejected(self):
        cam = Camera(np.zeros(3), np.eye(3), 10.0, 4, 4)
        with pytest.raises(ValueError):
            ViewDataset([(cam, np.zeros((5, 4, 3), dtype=np.float32))])


class TestPpm:
    def test_round_trip_exact_on_8bit_grid(self, tmp_path):
        rng = np.random.default_rng(0)
        img = np.round(rng.uniform(0, 1, (6, 5, 3)) * 255) / 255.0
        p = tmp_path / "img.ppm"
        write_ppm(p, img)
        back = read_ppm(p)
        np.testing.assert_allclose(back, img, atol=1e-7)

    def test_round_half_up(self, tmp_path):
        img = np.full((1, 1, 3), 0.5 / 255.0)  # rounds up to 1
        p = tmp_path / "h.ppm"
        write_ppm(p, img)
        raw = p.read_bytes()
        assert raw.endswith(bytes([1, 1, 1]))

    def test_rejects_non_p6(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError):
            read_ppm(p)


class TestPoseJson:
    def test_focal_from_angle(self, tmp_path):
        # identity transform, angle_x = pi/2 -> focal = W/2
        oracle = SceneOracle([], bounds=(0.5, 1.5))
        W = 16
        cam = Camera(np.zeros(3), np.eye(3), W / 2.0, W, W)
        ds = synthesize_dataset(oracle, [cam], n_dense=512, split="train")
        path = tmp_path / "transforms_train.json"
        write_pose_json(path, ds)
        back = load_pose_json(path)
        np.testing.assert_allclose(back.views[0][0].focal, W / 2.0, rtol=1e-6)

    def test_round_trip_cameras(self, tmp_path):
        oracle = make_preset("spheres")
        train, _ = make_preset_cameras("spheres", 16, 16)
        ds = synthesize_dataset(oracle, train[:3], n_dense=512, split="train")
        path = tmp_path / "transforms_train.json"
        write_pose_json(path, ds)
        back = load_pose_json(path, split="train")
        assert len(back.views) == 3
        for (c0, img0), (c1, img1) in zip(ds.views, back.views):
            np.testing.assert_allclose(c1.position, c0.position, atol=1e-5)
            np.testing.assert_allclose(c1.rotation, c0.rotation, atol=1e-5)
            np.testing.assert_allclose(c1.focal, c0.focal, rtol=1e-5)
            # images only quantized to 8 bits
            assert np.abs(img1 - img0).max() <= 0.5 / 255.0 + 1e-6

    def test_empty_frames_error(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text('{"camera_angle_x": 0.7, "frames": []}')
        with pytest.raises(ValueError, match="no views"):
            load_pose_json(p)

    def test_missing_file_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_pose_json(tmp_path / "absent.json")

    def test_malformed_json_error(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text("{nope")
        with pytest.raises(ValueError, match="malformed"):
            load_pose_json(p)

    def test_downsample(self, tmp_path):
        oracle = make_preset("boxes")
        train, _ = make_preset_cameras("boxes", 16, 16)
        ds = synthesize_dataset(oracle, train[:1], n_dense=512, split="train")
        path = tmp_path / "transforms_train.json"
        write_pose_json(path, ds)
        back = load_pose_json(path, downsample=2)
        cam, img = back.views[0]
        assert img.shape == (8, 8, 3)
        assert cam.width == 8 and cam.height == 8
        np.testing.assert_allclose(cam.focal, ds.views[0][0].focal / 2.0, rtol=1e-6)
