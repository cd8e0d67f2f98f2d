import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevx import camera as C

K_EX = np.array([[2.0, 0.0, 3.0], [0.0, 2.0, 1.0], [0.0, 0.0, 1.0]])


def view(K=np.eye(3), R=np.eye(3), t=(0, 0, 0), size=(32, 64)):
    return C.CameraView(K, R, np.array(t, dtype=float), size)


class TestInvertIntrinsics:
    def test_identity(self):
        np.testing.assert_array_equal(C.invert_intrinsics(np.eye(3)), np.eye(3))

    def test_upper_triangular(self):
        np.testing.assert_allclose(C.invert_intrinsics(K_EX) @ [5.0, 3.0, 1.0], [1, 1, 1], atol=1e-12)

    def test_diagonal(self):
        np.testing.assert_allclose(C.invert_intrinsics(np.diag([4.0, 4.0, 1.0])), np.diag([0.25, 0.25, 1.0]))

    def test_singular(self):
        with pytest.raises(C.SingularMatrixError):
            C.invert_intrinsics(np.diag([1.0, 0.0, 1.0]))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(10, 2000), st.floats(10, 2000), st.floats(-500, 500), st.floats(-500, 500),
           st.floats(-5, 5))
    def test_product_is_identity(self, fx, fy, cx, cy, skew):
        K = np.array([[fx, skew, cx], [0, fy, cy], [0, 0, 1.0]])
        np.testing.assert_allclose(K @ C.invert_intrinsics(K), np.eye(3), atol=1e-9)


class TestPixelDirections:
    def test_identity_calibration(self):
        np.testing.assert_array_equal(C.pixel_direction_grid(view(), np.array([[0.0, 0.0]])), [[0, 0, 1]])

    def test_principal_point_offset(self):
        np.testing.assert_allclose(C.pixel_direction_grid(view(K=K_EX), np.array([5.0, 3.0])), [1, 1, 1])

    def test_half_turn_about_camera_vertical(self):
        # 180 degrees about the camera y (vertical) axis
        R = np.diag([-1.0, 1.0, -1.0])
        np.testing.assert_allclose(C.pixel_direction_grid(view(R=R), np.array([0.0, 0.0])), [0, 0, -1])

    def test_mounted_yaw_half_turn_looks_backward(self):
        v = view(R=C.mounted_rotation(np.pi))
        np.testing.assert_allclose(v.ray_directions(np.array([0.0, 0.0])), [-1, 0, 0], atol=1e-12)

    def test_identity_calibration_ignores_translation(self):
        grid = C.pixel_grid((2, 3), 4)
        np.testing.assert_array_equal(C.pixel_direction_grid(view(t=(1, 2, 3)), grid),
                                      C.pixel_direction_grid(view(), grid))

    def test_pixel_grid_stride(self):
        g = C.pixel_grid((2, 3), 8)
        assert g.shape == (2, 3, 2)
        np.testing.assert_array_equal(g[1, 2], [16, 8])


class TestFrustum:
    def setup_method(self):
        self.v = C.default_rig((32, 64), names=("front",), pitch=0.0)[0]

    def test_ahead(self):
        assert self.v.frustum_contains(self.v.translation + [5.0, 0, 0])

    def test_behind(self):
        assert not self.v.frustum_contains(self.v.translation + [-5.0, 0, 0])

    def test_outside_right_edge(self):
        h, w = self.v.image_size
        p = self.v.unproject(np.array([w + 10.0, h / 2]), 5.0)
        assert not self.v.frustum_contains(p)
        assert self.v.frustum_contains(self.v.unproject(np.array([w - 1.0, h / 2]), 5.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-0.5, 0.5), st.floats(0, 63), st.floats(0, 31),
       st.floats(0.1, 100), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 3))
def test_project_unproject_round_trip(yaw, pitch, u, v, depth, tx, ty, tz):
    cam = C.CameraView(C.intrinsics_from_fov(64, 32, 1.2), C.mounted_rotation(yaw, pitch),
                       np.array([tx, ty, tz]), (32, 64))
    pix, d = cam.project(cam.unproject(np.array([u, v]), depth))
    np.testing.assert_allclose(pix, [u, v], atol=1e-6)
    assert d == pytest.approx(depth)


class TestRig:
    def test_default_layout(self):
        rig = C.default_rig()
        assert len(rig) == 6
        assert rig.front_facing().tolist() == [True, True, True, False, False, False]
        for v in rig.views:
            assert np.linalg.det(v.rotation) == pytest.approx(1.0)

    def test_rotation_checks(self):
        with pytest.raises(C.CalibrationError):
            view(R=np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(C.CalibrationError):
            view(R=np.ones((3, 3)))

    def test_mismatched_image_sizes(self):
        with pytest.raises(C.CalibrationError):
            C.CameraRig((view(size=(32, 64)), view(size=(16, 64))))

    def test_rig_file_round_trip(self, tmp_path):
        rig = C.default_rig((32, 64))
        path = tmp_path / "rig.txt"
        C.save_rig(path, rig)
        text = path.read_text()
        assert text.startswith("RIG v1\nview ")
        back = C.load_rig(path)
        for a, b in zip(rig.views, back.views):
            np.testing.assert_array_equal(a.intrinsics, b.intrinsics)
            np.testing.assert_array_equal(a.rotation, b.rotation)
            np.testing.assert_array_equal(a.translation, b.translation)
            assert a.image_size == b.image_size

    def test_rig_file_errors(self):
        with pytest.raises(C.CalibrationError):
            C.parse_rig("RIG v2\n")
        with pytest.raises(C.CalibrationError):
            C.parse_rig("RIG v1\nview 1 2 3\n")
