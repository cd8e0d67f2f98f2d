import numpy as np
import pytest

from bevx import tensor as T
from bevx.camera import CameraRig, CameraView, default_rig, intrinsics_from_fov, mounted_rotation
from bevx.decoder import (TINY_SCHEDULE, CrossScaleModel, ModelConfig, ScaleSchedule, aux_logits,
                          decode_step, drop_views, forward, toy_encode)
from bevx.objective import LossWeights, total_loss

MICRO = ScaleSchedule(((2, 2), (4, 4), (8, 8)), (4, 4, 4))


def micro_model(**kw):
    base = dict(schedule=MICRO, encoder_channels=(3, 3, 3), dim=4, heads=2, extent=4.0, seed=3)
    base.update(kw)
    return CrossScaleModel(ModelConfig(**base))


def tiny_model(**kw):
    base = dict(schedule=TINY_SCHEDULE, encoder_channels=(8, 8, 8), dim=16, heads=4, extent=8.0)
    base.update(kw)
    return CrossScaleModel(ModelConfig(**base))


class TestSchedule:
    def test_tiny_sizes(self):
        assert TINY_SCHEDULE.final_size == (32, 32)
        # the coarsest BEV level attends to the finest features
        assert [lvl[1] for lvl in TINY_SCHEDULE.levels] == [4, 8, 16]

    def test_desk_default_gives_200(self):
        assert ScaleSchedule(((24, 24), (48, 48), (100, 100)), (32, 32, 32)).final_size == (200, 200)

    @pytest.mark.parametrize("sizes", [((4, 4), (8, 8)), ((8, 8), (4, 4), (16, 16)), ((4, 4), (4, 4), (8, 8))])
    def test_invalid(self, sizes):
        with pytest.raises(ValueError):
            ScaleSchedule(sizes, (4,) * len(sizes))


class TestEncoder:
    def test_pyramid_shapes(self, rng):
        model = tiny_model()
        f0, f1, f2 = toy_encode(rng.normal(size=(1, 2, 32, 64, 1)), model.encoder)
        assert f0.shape[2:4] == (2, 4) and f1.shape[2:4] == (4, 8) and f2.shape[2:4] == (8, 16)

    def test_shared_weights(self, rng):
        img = rng.normal(size=(32, 64, 1))
        feats = toy_encode(np.stack([img, img])[None], tiny_model().encoder)
        for f in feats:
            np.testing.assert_array_equal(f.data[0, 0], f.data[0, 1])

    def test_macs_match_closed_form(self):
        enc = tiny_model().encoder
        with T.MACS.measure() as m:
            toy_encode(np.zeros((2, 3, 32, 64, 1)), enc)
        n = 6
        # stride-2 3x3 convs: (H/2^k)(W/2^k) outputs, 9*Cin*Cout MACs each
        expect = (n * 16 * 32 * 9 * 1 * 8 + n * 8 * 16 * 9 * 8 * 8
                  + n * 4 * 8 * 9 * 8 * 8 + n * 2 * 4 * 9 * 8 * 8)
        assert m.count == expect == enc.macs(n, 32, 64)

    def test_indivisible_size(self):
        with pytest.raises(ValueError):
            toy_encode(np.zeros((1, 1, 24, 64, 1)), tiny_model().encoder)


class TestDecodeStep:
    def setup_method(self):
        self.rig = default_rig((16, 32), names=("front", "back"))
        self.model = micro_model()
        imgs = np.random.default_rng(0).normal(size=(1, 2, 16, 32, 1))
        self.feats = toy_encode(imgs, self.model.encoder)
        self.bev = T.broadcast_to(self.model.bev0, (1, 2, 2, 4))

    def test_residual_off_uses_attention_only(self):
        lvl = self.model.levels[0]
        a, nxt, _ = decode_step(self.bev, self.feats[2], self.rig, self.model, 0, residual=False)
        np.testing.assert_allclose(nxt.data, T.resize_bilinear(lvl.res_a(a), (4, 4)).data, atol=1e-12)

    def test_zero_attention_leaves_residual_path(self):
        lvl = self.model.levels[0]
        lvl.attn.norm.gamma.data[:] = 0.0
        lvl.attn.norm.beta.data[:] = 0.0
        lvl.attn.mlp.fc2.bias.data[:] = 0.0
        a, nxt, _ = decode_step(self.bev, self.feats[2], self.rig, self.model, 0)
        np.testing.assert_array_equal(a.data, 0.0)
        base = T.resize_bilinear(lvl.res_a(a), (4, 4)).data  # bias-only contribution
        ref = T.resize_bilinear(lvl.res_b(self.bev), (4, 4)).data
        np.testing.assert_allclose(nxt.data - base, ref, atol=1e-12)

    def test_wrong_size(self):
        with pytest.raises(T.ShapeError):
            decode_step(self.bev, self.feats[1], self.rig, self.model, 1)


class TestForward:
    def test_tiny_shapes(self, rng):
        out = forward(rng.normal(size=(2, 2, 32, 64, 1)), default_rig((32, 64), names=("front", "back")),
                      tiny_model())
        assert out.logits.shape == (2, 32, 32, 1)
        assert [b.shape[1:3] for b in out.bev] == [(4, 4), (8, 8), (16, 16)]
        assert [w.shape for w in out.weights] == [(2, 4, 16, 2 * 128), (2, 4, 64, 2 * 32), (2, 4, 256, 2 * 8)]

    def test_view_permutation(self, rng):
        rig = default_rig((32, 64), names=("front_left", "front", "back"))
        imgs = rng.normal(size=(1, 3, 32, 64, 1))
        model = tiny_model()
        perm = [2, 0, 1]
        a = forward(imgs, rig, model).logits.data
        b = forward(imgs[:, perm], rig.subset(perm), model).logits.data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_keep_all_is_identity(self, rng):
        rig = default_rig((32, 64))
        imgs = rng.normal(size=(1, 6, 32, 64, 1))
        model = tiny_model()
        i2, r2 = drop_views(imgs, rig, np.ones(6, dtype=bool))
        np.testing.assert_array_equal(forward(imgs, rig, model).logits.data, forward(i2, r2, model).logits.data)

    def test_monocular(self, rng):
        rig = default_rig((32, 64))
        imgs = rng.normal(size=(2, 6, 32, 64, 1))
        keep = np.zeros(6, dtype=bool)
        keep[1] = True
        i2, r2 = drop_views(imgs, rig, keep)
        assert i2.shape == (2, 1, 32, 64, 1) and len(r2) == 1
        out = forward(i2, r2, tiny_model())
        assert np.isfinite(out.logits.data).all()
        for w in out.weights:
            np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)

    def test_drop_validation(self, rng):
        rig = default_rig((32, 64))
        with pytest.raises(ValueError):
            drop_views(np.zeros((1, 6, 32, 64, 1)), rig, np.zeros(6, dtype=bool))
        with pytest.raises(ValueError):
            drop_views(np.zeros((1, 6, 32, 64, 1)), rig, np.ones(5, dtype=bool))

    def test_rig_image_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(np.zeros((1, 2, 32, 64, 1)), default_rig((32, 64), names=("front",)), tiny_model())

    def test_random_calibrations_stay_finite(self):
        rng = np.random.default_rng(99)
        model = micro_model()
        for _ in range(100):
            views = []
            for _ in range(rng.integers(1, 4)):
                K = intrinsics_from_fov(32, 16, rng.uniform(0.3, 2.5))
                K[0, 2] += rng.uniform(-4, 4)
                R = mounted_rotation(rng.uniform(-np.pi, np.pi), rng.uniform(-0.4, 0.4))
                views.append(CameraView(K, R, rng.uniform(-2, 2, size=3), (16, 32)))
            rig = CameraRig(tuple(views))
            out = forward(rng.normal(size=(1, len(views), 16, 32, 1)), rig, model)
            for x in [out.logits] + out.bev + out.attended:
                assert np.isfinite(x.data).all()

    def test_off_mode_and_residual_flag(self, rng):
        rig = default_rig((32, 64), names=("front", "back"))
        imgs = rng.normal(size=(1, 2, 32, 64, 1))
        model = tiny_model(mode="off")
        a = forward(imgs, rig, model).logits.data
        b = forward(imgs, rig, model, residual=False).logits.data
        assert np.isfinite(a).all() and not np.allclose(a, b)


def test_end_to_end_gradient():
    """Directional and coordinate finite-difference checks over every parameter."""
    rng = np.random.default_rng(21)
    model = micro_model(xi=0.5)
    rig = default_rig((16, 32), names=("front", "back_right"))
    imgs = rng.normal(size=(2, 2, 16, 32, 1))
    target = (rng.random(size=(2, 16, 16, 1)) < 0.3).astype(float)
    weights = LossWeights()
    params = model.parameters()

    def loss():
        out = forward(imgs, rig, model)
        return total_loss(out, target, aux_logits(model, out.bev), weights)[0]

    model.zero_grad()
    loss().backward()
    grads = [p.grad.copy() for p in params]

    def shifted(direction, eps):
        for p, d in zip(params, direction):
            p.data = p.data + eps * d
        val = loss().item()
        for p, d in zip(params, direction):
            p.data = p.data - eps * d
        return val

    worst = 0.0
    for _ in range(3):
        direction = [rng.normal(size=p.shape) for p in params]
        analytic = sum(float(np.vdot(g, d)) for g, d in zip(grads, direction))
        numeric = (shifted(direction, 1e-5) - shifted(direction, -1e-5)) / 2e-5
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    # one coordinate in each parameter tensor with a visible gradient
    for j, (p, g) in enumerate(zip(params, grads)):
        idx = np.unravel_index(np.argmax(np.abs(g)), g.shape)
        if abs(g[idx]) < 1e-6:
            continue
        direction = [np.zeros(q.shape) for q in params]
        direction[j][idx] = 1.0
        numeric = (shifted(direction, 1e-5) - shifted(direction, -1e-5)) / 2e-5
        worst = max(worst, abs(g[idx] - numeric) / max(abs(g[idx]), abs(numeric)))
    assert worst < 1e-3
