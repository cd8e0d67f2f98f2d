import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevx import tensor as T
from bevx.objective import LossWeights, focal_loss, iou, total_loss
from conftest import check_grad


def bce(logits, target):
    p = 1 / (1 + np.exp(-logits))
    return float(np.mean(-(target * np.log(p) + (1 - target) * np.log(1 - p))))


class TestFocal:
    def test_half_probability_cell(self):
        # p_t = 0.5, gamma 2, alpha_t = 1: 0.25 * ln 2
        assert focal_loss(T.tensor([0.0]), np.array([1.0]), 2.0, 1.0).item() == pytest.approx(0.173287, abs=1e-6)

    def test_gamma_zero_is_half_bce(self, rng):
        x = rng.normal(scale=3, size=(4, 5))
        y = (rng.random(size=(4, 5)) < 0.4).astype(float)
        assert focal_loss(T.tensor(x), y, 0.0, 0.5).item() == pytest.approx(0.5 * bce(x, y), rel=1e-12)

    def test_confident_correct_prediction(self):
        y = np.array([1.0, 0.0, 1.0])
        assert focal_loss(T.tensor(40.0 * (2 * y - 1)), y).item() < 1e-30

    def test_extreme_logits_stay_finite(self):
        v = focal_loss(T.tensor([-800.0, 800.0]), np.array([1.0, 0.0])).item()
        assert np.isfinite(v) and v == pytest.approx(0.5 * (0.25 * 800 + 0.75 * 800))

    def test_non_binary_target(self):
        with pytest.raises(ValueError):
            focal_loss(T.tensor([0.0]), np.array([0.5]))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-8, 8), st.floats(0.01, 2), st.floats(0.1, 5), st.floats(0.05, 0.95))
    def test_decreasing_in_true_class_probability(self, x, dx, gamma, alpha):
        lo = focal_loss(T.tensor([x]), np.array([1.0]), gamma, alpha).item()
        hi = focal_loss(T.tensor([x + dx]), np.array([1.0]), gamma, alpha).item()
        assert lo >= 0 and hi >= 0 and hi < lo

    def test_gradient(self, rng):
        y = (rng.random(size=(3, 4)) < 0.5).astype(float)
        assert check_grad(lambda x: focal_loss(x, y), [rng.normal(size=(3, 4))]) < 1e-6


class TestTotal:
    def test_default_weights(self):
        assert LossWeights().lambdas == (1.0, 2.0, 2.0, 60.0)
        assert (LossWeights().focal_gamma, LossWeights().focal_alpha) == (2.0, 0.25)

    def test_equal_branches_give_65x(self, rng):
        x = rng.normal(size=(1, 4, 4, 1))
        y = (rng.random(size=x.shape) < 0.3).astype(float)
        total, parts = total_loss(T.tensor(x), y, [T.tensor(x)] * 3)
        assert total.item() == pytest.approx(65 * parts[3].item(), rel=1e-12)

    def test_final_only(self, rng):
        x, a = rng.normal(size=(2, 1, 4, 4, 1))
        y = (rng.random(size=x.shape) < 0.3).astype(float)
        total, _ = total_loss(T.tensor(x), y, [T.tensor(a)] * 3, LossWeights((0, 0, 0, 1)))
        assert total.item() == focal_loss(T.tensor(x), y).item()

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            LossWeights((1, 2, 3))
        with pytest.raises(ValueError):
            LossWeights((0, 0, 0, 0))

    def test_gradient_reaches_all_branches(self, rng):
        y = (rng.random(size=(1, 3, 3, 1)) < 0.5).astype(float)

        def build(m, a, b, c):
            return total_loss(m, y, [a, b, c])[0]

        assert check_grad(build, [rng.normal(size=(1, 3, 3, 1)) for _ in range(4)]) < 1e-6


class TestIoU:
    def test_identical(self):
        m = np.zeros((4, 4))
        m[1:3, 1:3] = 1
        assert iou(10 * (2 * m - 1), m) == 1.0

    def test_disjoint(self):
        a, b = np.zeros((4, 4)), np.zeros((4, 4))
        a[0], b[3] = 1, 1
        assert iou(10 * (2 * a - 1), b) == 0.0

    def test_left_half(self):
        gt = np.ones((4, 4))
        pred = np.full((4, 4), -5.0)
        pred[:, :2] = 5.0
        assert iou(pred, gt) == 0.5

    def test_all_background_predictor(self):
        gt = np.zeros((4, 4))
        gt[0, 0] = 1
        assert iou(np.full((4, 4), -3.0), gt) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 16 - 1))
    def test_symmetric_and_bounded(self, a, b):
        ma = np.array([(a >> i) & 1 for i in range(16)], dtype=float)
        mb = np.array([(b >> i) & 1 for i in range(16)], dtype=float)
        v = iou(5 * (2 * ma - 1), mb)
        assert 0 <= v <= 1
        assert v == iou(5 * (2 * mb - 1), ma)
