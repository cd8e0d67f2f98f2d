import numpy as np
import pytest

from bevx import tensor as T
from bevx.camera import CameraRig, CameraView, default_rig
from bevx.embedding import (ProjectionHeads, bev_position_grid, embed_bev_queries,
                            embed_camera_keys, rig_directions)
from conftest import check_grad

K_EX = np.array([[2.0, 0.0, 3.0], [0.0, 2.0, 1.0], [0.0, 0.0, 1.0]])


def identity_view(t=(0.0, 0.0, 0.0), K=np.eye(3), size=(16, 16)):
    return CameraView(K, np.eye(3), np.array(t), size)


class TestPositionGrid:
    def test_full_scale_corners(self):
        g = bev_position_grid((200, 200), 50.0, 0.5)
        np.testing.assert_allclose(g.coords[0, 0], [49.75, 49.75])
        np.testing.assert_allclose(g.coords[-1, -1], [-49.75, -49.75])
        np.testing.assert_allclose(g.coords[0, -1], [49.75, -49.75])

    def test_single_cell(self):
        np.testing.assert_array_equal(bev_position_grid((1, 1), 0.5, 1.0).coords[0, 0], [0, 0])

    def test_two_by_two(self):
        c = bev_position_grid((2, 2), 1.0, 1.0).coords
        np.testing.assert_allclose(c.reshape(-1, 2), [[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5], [-0.5, -0.5]])

    def test_affine_in_index(self):
        c = bev_position_grid((7, 5), (3.5, 2.5), 1.0).coords
        np.testing.assert_allclose(np.diff(c[:, 0, 0]), -1.0)
        np.testing.assert_allclose(np.diff(c[0, :, 1]), -1.0)
        np.testing.assert_allclose(c[3, 2], [0, 0], atol=1.0)

    def test_inconsistent_resolution(self):
        with pytest.raises(ValueError, match="inconsistent"):
            bev_position_grid((10, 10), 5.0, 0.5)


class TestQueries:
    def test_zero_heads_replicate_bev(self, rng):
        rig = default_rig((16, 32), names=("front", "back"))
        heads = ProjectionHeads(4, 3, rng, zero=True)
        bev = rng.normal(size=(2, 3, 3, 4))
        out = embed_bev_queries(T.tensor(bev), bev_position_grid((3, 3), 1.5), rig, heads)
        assert out.shape == (2, 2, 9, 4)
        for v in range(2):
            np.testing.assert_array_equal(out.data[:, v], bev.reshape(2, 9, 4))

    def test_identical_translation_gives_identical_slices(self, rng):
        rig = CameraRig((identity_view((1, 2, 3)), identity_view((1, 2, 3))))
        heads = ProjectionHeads(4, 3, rng)
        out = embed_bev_queries(T.tensor(rng.normal(size=(2, 2, 4))), bev_position_grid((2, 2), 1.0), rig, heads)
        np.testing.assert_array_equal(out.data[0], out.data[1])

    def test_translation_difference_is_constant(self, rng):
        t1, t2 = np.array([1.0, 0.5, 1.5]), np.array([-0.5, 2.0, 1.0])
        rig = CameraRig((identity_view(t1), identity_view(t2)))
        heads = ProjectionHeads(4, 3, rng)
        out = embed_bev_queries(T.tensor(rng.normal(size=(3, 3, 4))), bev_position_grid((3, 3), 1.5), rig, heads)
        ft = lambda t: t @ heads.f_t.weight.data + heads.f_t.bias.data  # noqa: E731
        diff = out.data[0] - out.data[1]
        np.testing.assert_allclose(diff, np.broadcast_to(ft(t2) - ft(t1), diff.shape), atol=1e-12)

    def test_grid_mismatch(self, rng):
        with pytest.raises(T.ShapeError):
            embed_bev_queries(T.tensor(np.zeros((1, 3, 3, 4))), bev_position_grid((2, 2), 1.0),
                              default_rig((16, 32), names=("front",)), ProjectionHeads(4, 1, rng))


class TestKeys:
    def test_copy_head_returns_features(self, rng):
        heads = ProjectionHeads(3, 3, rng, zero=True)
        heads.f_f.weight.data = np.eye(3)
        rig = default_rig((16, 32), names=("front", "back_left"))
        feats = rng.normal(size=(2, 4, 8, 3))
        out = embed_camera_keys(T.tensor(feats), rig, heads, 4)
        np.testing.assert_array_equal(out.data, feats.reshape(2, 32, 3))

    def test_all_zero_heads_give_zero(self, rng):
        out = embed_camera_keys(T.tensor(rng.normal(size=(1, 2, 4, 3))), default_rig((16, 32), names=("front",)),
                                ProjectionHeads(5, 3, rng, zero=True), 8)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identical_calibration_and_features(self, rng):
        rig = CameraRig((identity_view((0, 1, 0)), identity_view((0, 1, 0))))
        f = rng.normal(size=(4, 4, 2))
        out = embed_camera_keys(T.tensor(np.stack([f, f])), rig, ProjectionHeads(4, 2, rng), 4)
        np.testing.assert_array_equal(out.data[0], out.data[1])

    def test_position_term_at_example_pixel(self, rng):
        # direction at (5, 3) for K_EX is (1, 1, 1); a summing head maps it to 3
        heads = ProjectionHeads(2, 1, rng, zero=True)
        heads.f_p_cam.weight.data = np.ones((3, 2))
        rig = CameraRig((identity_view(K=K_EX, size=(4, 6)),))
        out = embed_camera_keys(T.tensor(np.zeros((1, 4, 6, 1))), rig, heads, 1)
        # token index of pixel (u=5, v=3) in a row-major 4x6 map
        np.testing.assert_allclose(out.data[0, 3 * 6 + 5], [3.0, 3.0])

    def test_stride_must_tile_image(self, rng):
        with pytest.raises(ValueError, match="tile"):
            rig_directions(default_rig((16, 32), names=("front",)), (4, 4), 8)


def test_view_permutation_permutes_outputs(rng):
    rig = default_rig((16, 32))
    perm = [3, 0, 5, 1, 4, 2]
    heads = ProjectionHeads(4, 2, rng)
    grid = bev_position_grid((2, 2), 1.0)
    bev = T.tensor(rng.normal(size=(2, 2, 4)))
    feats = rng.normal(size=(6, 4, 8, 2))
    q = embed_bev_queries(bev, grid, rig, heads).data
    qp = embed_bev_queries(bev, grid, rig.subset(perm), heads).data
    np.testing.assert_array_equal(qp, q[perm])
    k = embed_camera_keys(T.tensor(feats), rig, heads, 4).data
    kp = embed_camera_keys(T.tensor(feats[perm]), rig.subset(perm), heads, 4).data
    np.testing.assert_array_equal(kp, k[perm])


def test_gradients_reach_every_head(rng):
    rig = default_rig((8, 16), names=("front", "back_left"))
    grid = bev_position_grid((2, 2), 1.0)
    heads = ProjectionHeads(3, 2, rng)
    names = ["f_p_bev", "f_p_cam", "f_t", "f_f"]
    bev = rng.normal(size=(2, 2, 3))
    feats = rng.normal(size=(2, 2, 4, 2))
    r = rng.normal(size=(2, 4, 3))
    r2 = rng.normal(size=(2, 8, 3))

    def build(*ws):
        for n, w in zip(names, ws):
            getattr(heads, n).weight = w
        q = embed_bev_queries(T.constant(bev), grid, rig, heads)
        k = embed_camera_keys(T.constant(feats), rig, heads, 4)
        return T.sum(T.tanh(q) * r) + T.sum(T.tanh(k) * r2)

    arrays = [getattr(heads, n).weight.data.copy() for n in names]
    assert check_grad(build, arrays) < 1e-5
