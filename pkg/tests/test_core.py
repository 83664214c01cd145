import numpy as np
import pytest

from bodyedit.core import (Camera, Heatmap, Image, Keypoints, Mask,
                           NonProjectableError, load_heatmap, load_image,
                           load_mask, project_point, project_points,
                           save_heatmap, save_image, save_mask)


class TestTypes:
    def test_image_bounds_checked(self):
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 3), 1.5))
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 2), 0.5))
        with pytest.raises(ValueError):
            Image(np.array([[[np.nan]]]))

    def test_image_immutable(self):
        img = Image(np.zeros((4, 4, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_mask_binarity_enforced(self):
        Mask(np.eye(4, dtype=np.uint8))
        with pytest.raises(ValueError):
            Mask(np.full((4, 4), 0.5))
        with pytest.raises(ValueError):
            Mask(np.full((4, 4), 2))

    def test_heatmap_resolution_fixed(self):
        Heatmap(np.zeros((3, 128, 128)))
        with pytest.raises(ValueError):
            Heatmap(np.zeros((3, 64, 64)))

    def test_keypoints_confidence(self):
        kp = Keypoints(np.zeros((5, 2)), np.array([1, 1, 0, 1, 0.5]))
        assert kp.present.tolist() == [True, True, False, True, True]
        assert len(kp) == 5


class TestProjection:
    def test_optical_axis_maps_to_principal_point(self):
        cam = Camera.identity(64, 64)
        x, y = project_point(cam, [0.0, 0.0, 1.0])
        assert x == pytest.approx(cam.cx)
        assert y == pytest.approx(cam.cy)

    def test_camera_center_not_projectable(self):
        cam = Camera.identity(64, 64)
        with pytest.raises(NonProjectableError):
            project_point(cam, [0.0, 0.0, 0.0])

    def test_behind_camera_not_projectable(self):
        cam = Camera.identity(64, 64)
        with pytest.raises(NonProjectableError):
            project_point(cam, [0.1, 0.2, -1.0])

    def test_matches_homogeneous_matrix_oracle(self, rng):
        # independent oracle: a literal 3x4 projection matrix in homogeneous
        # coordinates applied with a generic matrix multiply
        angles = rng.uniform(-0.5, 0.5, 3)
        cx_, sx = np.cos(angles[0]), np.sin(angles[0])
        cy_, sy = np.cos(angles[1]), np.sin(angles[1])
        cz_, sz = np.cos(angles[2]), np.sin(angles[2])
        rot = (np.array([[1, 0, 0], [0, cx_, -sx], [0, sx, cx_]])
               @ np.array([[cy_, 0, sy], [0, 1, 0], [-sy, 0, cy_]])
               @ np.array([[cz_, -sz, 0], [sz, cz_, 0], [0, 0, 1]]))
        tr = np.array([0.2, -0.1, 0.4])
        cam = Camera(fx=80.0, fy=75.0, cx=31.5, cy=30.5, rotation=rot,
                     translation=tr, width=64, height=62)

        intrinsics = np.array([[80.0, 0, 31.5], [0, 75.0, 30.5], [0, 0, 1.0]])
        pmat = intrinsics @ np.hstack([rot, tr[:, None]])

        for _ in range(50):
            p = rng.uniform(-2, 2, 3) + np.array([0, 0, 6.0])
            uvw = pmat @ np.append(p, 1.0)
            expect = uvw[:2] / uvw[2]
            got = project_point(cam, p)
            assert np.allclose(got, expect, atol=1e-9)

    def test_batch_matches_scalar(self, rng):
        cam = Camera.identity(48, 48)
        pts = rng.uniform(-1, 1, (20, 3)) + np.array([0, 0, 4.0])
        xy, depth, valid = project_points(cam, pts)
        assert valid.all()
        for i in range(20):
            assert np.allclose(xy[i], project_point(cam, pts[i]), atol=1e-12)


class TestIO:
    def test_png_round_trip_within_quantum(self, tmp_path, rng):
        img = Image(rng.random((17, 23, 3)))
        save_image(img, tmp_path / "x.png")
        back = load_image(tmp_path / "x.png")
        assert back.data.shape == img.data.shape
        assert np.abs(back.data - img.data).max() <= 1.0 / 255.0 + 1e-12

    def test_png_gray_round_trip(self, tmp_path, rng):
        img = Image(rng.random((9, 11, 1)))
        save_image(img, tmp_path / "g.png")
        back = load_image(tmp_path / "g.png")
        assert np.abs(back.data - img.data).max() <= 1.0 / 255.0 + 1e-12

    def test_mask_round_trip_exact(self, tmp_path, rng):
        mask = Mask((rng.random((13, 7)) < 0.4).astype(np.uint8))
        save_mask(mask, tmp_path / "m.png")
        assert np.array_equal(load_mask(tmp_path / "m.png").data, mask.data)

    def test_mask_png_rejects_gray_values(self, tmp_path):
        from PIL import Image as PILImage
        arr = np.full((4, 4), 128, dtype=np.uint8)
        PILImage.fromarray(arr, mode="L").save(tmp_path / "bad.png")
        with pytest.raises(ValueError):
            load_mask(tmp_path / "bad.png")

    def test_heatmap_container_round_trip(self, tmp_path, rng):
        heat = Heatmap(rng.random((5, 128, 128)))
        save_heatmap(heat, tmp_path / "h.npz")
        back = load_heatmap(tmp_path / "h.npz")
        assert np.array_equal(back.data, heat.data)
