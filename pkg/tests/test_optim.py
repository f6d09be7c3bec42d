"""Adam, the decay schedule, losses, and weight penalties."""

import numpy as np
import pytest

from eegspat.engine import LayerSpec, Network, NetworkSpec, NodeSpec
from eegspat.errors import LabelError, TrainingError
from eegspat.optim import (
    AdamState,
    JointLossConfig,
    RegConfig,
    adam_step,
    binary_ce,
    categorical_ce,
    joint_loss,
    lr_schedule,
    reg_penalty,
)

from oracles import finite_diff_grad, rel_err


def named(arrs):
    return [(f"p{i}/weight", a) for i, a in enumerate(arrs)]


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0, 3.0])
        state = AdamState(named([p]))
        adam_step(named([p]), [("p0/weight", np.zeros(3))], state)
        np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])

    def test_first_step_hand_evaluated(self):
        # m_hat = v_hat = 1 at step 1, so the update is lr/(1 + eps)
        p = np.zeros(1)
        state = AdamState(named([p]), lr0=0.01)
        adam_step(named([p]), [("p0/weight", np.ones(1))], state)
        np.testing.assert_allclose(p, [-0.01], atol=1e-9)

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
    def test_first_step_magnitude_scale_free(self, scale):
        p = np.zeros(4)
        state = AdamState(named([p]), lr0=0.01)
        adam_step(named([p]), [("p0/weight", np.full(4, scale))], state)
        assert np.all(np.abs(np.abs(p) - 0.01) < 0.01 * 0.01)

    def test_nonfinite_gradient_names_parameter(self):
        p = np.zeros(2)
        state = AdamState(named([p]))
        with pytest.raises(TrainingError, match="p0/weight"):
            adam_step(named([p]), [("p0/weight", np.array([1.0, np.nan]))], state)

    def test_bit_identical_under_fixed_seed(self):
        def run():
            rng = np.random.default_rng(42)
            p = rng.normal(size=8)
            state = AdamState(named([p]), lr0=0.01)
            for _ in range(50):
                g = rng.normal(size=8)
                adam_step(named([p]), [("p0/weight", g)], state)
            return p

        a, b = run(), run()
        assert a.tobytes() == b.tobytes()

    def test_step_counter_increments(self):
        p = np.zeros(1)
        state = AdamState(named([p]))
        for t in range(1, 4):
            adam_step(named([p]), [("p0/weight", np.ones(1))], state)
            assert state.t == t


class TestLrSchedule:
    def test_epoch_zero_is_base_rate(self):
        assert lr_schedule(0.01, 0.001, 0) == 0.01

    def test_hyperbolic_decay_values(self):
        np.testing.assert_allclose(lr_schedule(0.01, 0.001, 1), 0.01 / 1.001)
        np.testing.assert_allclose(lr_schedule(0.01, 0.001, 1000), 0.005)


class TestLosses:
    def test_perfect_prediction_near_zero(self):
        target = np.array([[0.0, 1.0, 0.0, 0.0, 0.0]])
        loss, _ = categorical_ce(target.copy(), target)
        assert loss <= 1e-11

    def test_uniform_five_way_is_log5(self):
        probs = np.full((1, 5), 0.2)
        target = np.zeros((1, 5))
        target[0, 3] = 1
        loss, _ = categorical_ce(probs, target)
        np.testing.assert_allclose(loss, np.log(5.0), atol=1e-12)

    def test_two_unit_binary_ce_hand_value(self):
        scores = np.array([[0.9, 0.1]])
        target = np.array([[1.0, 0.0]])
        loss, _ = binary_ce(scores, target)
        np.testing.assert_allclose(loss, -(np.log(0.9) + np.log(0.9)) / 2, atol=1e-12)

    def test_non_onehot_rejected(self):
        with pytest.raises(LabelError):
            categorical_ce(np.full((1, 5), 0.2), np.array([[0.5, 0.5, 0, 0, 0]]))
        with pytest.raises(LabelError):
            binary_ce(np.array([[0.5, 0.5]]), np.array([[1.0, 1.0]]))

    def test_ce_gradients_match_fd(self):
        rng = np.random.default_rng(0)
        raw = rng.uniform(0.05, 1.0, size=(4, 5))
        probs = raw / raw.sum(axis=1, keepdims=True)
        target = np.zeros((4, 5))
        target[np.arange(4), rng.integers(0, 5, 4)] = 1
        _, grad = categorical_ce(probs, target)
        fd = finite_diff_grad(lambda p: categorical_ce(p, target)[0], probs)
        assert rel_err(grad, fd) < 1e-5

        scores = rng.uniform(0.1, 0.9, size=(4, 2))
        att = np.zeros((4, 2))
        att[np.arange(4), rng.integers(0, 2, 4)] = 1
        _, grad = binary_ce(scores, att)
        fd = finite_diff_grad(lambda s: binary_ce(s, att)[0], scores)
        assert rel_err(grad, fd) < 1e-5


class TestJointLoss:
    def test_weighted_combination(self):
        cfg = JointLossConfig(0.6, 0.4)
        np.testing.assert_allclose(joint_loss(1.0, 2.0, cfg), 1.4)

    def test_degenerate_weighting(self):
        assert joint_loss(3.25, 99.0, JointLossConfig(1.0, 0.0)) == 3.25

    def test_linear_in_losses(self):
        cfg = JointLossConfig(0.6, 0.4)
        for a in (0.5, 2.0, 7.0):
            np.testing.assert_allclose(
                joint_loss(a * 1.3, a * 0.7, cfg), a * joint_loss(1.3, 0.7, cfg)
            )

    def test_default_weights(self):
        cfg = JointLossConfig()
        assert (cfg.alpha1, cfg.alpha2) == (0.6, 0.4)

    def test_invalid_weights(self):
        with pytest.raises(TrainingError):
            JointLossConfig(0.0, 0.0)
        with pytest.raises(TrainingError):
            JointLossConfig(-0.1, 0.5)


class TestRegPenalty:
    def test_zero_weights_zero_penalty(self):
        penalty, grads = reg_penalty([("a/kernel", np.zeros(5))], RegConfig())
        assert penalty == 0.0
        np.testing.assert_array_equal(grads["a/kernel"], np.zeros(5))

    def test_single_weight_arithmetic(self):
        penalty, _ = reg_penalty(
            [("a/weight", np.array([2.0]))], RegConfig(0.001, 0.001)
        )
        np.testing.assert_allclose(penalty, 0.006)

    def test_only_kernels_and_dense_weights_penalized(self):
        params = [
            ("conv/kernel", np.ones(3)),
            ("conv/bias", np.ones(3)),
            ("bn/gamma", np.ones(1)),
            ("emb/table", np.ones(4)),
            ("out/weight", np.ones(2)),
        ]
        _, grads = reg_penalty(params, RegConfig(1.0, 0.0))
        assert set(grads) == {"conv/kernel", "out/weight"}

    def test_gradient_matches_fd_away_from_zero(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(4, 3)) + np.sign(rng.normal(size=(4, 3))) * 0.5
        cfg = RegConfig(0.01, 0.02)
        _, grads = reg_penalty([("a/kernel", w)], cfg)
        fd = finite_diff_grad(
            lambda v: reg_penalty([("a/kernel", v.reshape(w.shape))], cfg)[0], w
        )
        assert rel_err(grads["a/kernel"], fd) < 1e-5

    def test_subgradient_zero_at_zero(self):
        _, grads = reg_penalty([("a/kernel", np.zeros(3))], RegConfig(1.0, 1.0))
        np.testing.assert_array_equal(grads["a/kernel"], np.zeros(3))


def test_toy_network_overfits_separable_data():
    """Two dense layers drive cross-entropy below 0.01 on 10 separable
    points within 500 full-batch epochs."""
    spec = NetworkSpec(
        inputs={"x": {"shape": [2], "dtype": "float"}},
        nodes=[
            NodeSpec("h", LayerSpec("dense", {"units": 8}), ["x"]),
            NodeSpec("a", LayerSpec("elu", {}), ["h"]),
            NodeSpec("o", LayerSpec("dense", {"units": 2}), ["a"]),
            NodeSpec("p", LayerSpec("softmax", {}), ["o"]),
        ],
        outputs={"y": "p"},
    )
    net = Network(spec, seed=0)
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal((-2, 0), 0.3, size=(5, 2)), rng.normal((2, 0), 0.3, size=(5, 2))])
    target = np.zeros((10, 2))
    target[:5, 0] = 1
    target[5:, 1] = 1
    state = AdamState(net.named_params(), lr0=0.01)
    loss = np.inf
    for _ in range(500):
        out = net.forward({"x": x}, train=True)
        loss, grad = categorical_ce(out["y"], target)
        if loss < 0.01:
            break
        net.backward({"y": grad})
        adam_step(net.named_params(), net.named_grads(), state)
    assert loss < 0.01
