import json
import math

import numpy as np
import pytest

from bessopt import (
    BatteryParams,
    Icnn,
    Layer,
    TrainHyper,
    TrainingSet,
    adam_train,
    check_convexity,
    forward,
    generate_training_data,
    load_icnn,
    project_nonneg,
    rmse,
    save_icnn,
)
from bessopt.icnn import init_net, loss_and_grad, signed_fit_bias

PARAMS = BatteryParams()


def single_relu():
    # f(x) = max(0, x)
    return Icnn([Layer(np.array([[1.0]]), np.zeros((1, 1)), np.zeros(1))])


def two_layer_example():
    # layer 1: relu(x); layer 2: relu(2 z - x + 0.5)
    return Icnn(
        [
            Layer(np.array([[1.0]]), np.zeros((1, 1)), np.zeros(1)),
            Layer(np.array([[2.0]]), np.array([[-1.0]]), np.array([0.5])),
        ]
    )


class TestForward:
    def test_single_relu(self):
        net = single_relu()
        assert forward(net, 2.0) == 2.0
        assert forward(net, -1.0) == 0.0

    def test_two_layer_hand_values(self):
        net = two_layer_example()
        assert forward(net, 0.25) == pytest.approx(0.75, abs=1e-15)
        assert forward(net, -1.0) == pytest.approx(1.5, abs=1e-15)

    def test_vectorized_matches_scalar(self):
        net = two_layer_example()
        xs = np.linspace(-1, 2, 17)
        vec = forward(net, xs)
        assert vec == pytest.approx([forward(net, float(x)) for x in xs], abs=1e-14)

    def test_validate_rejects_negative_interlayer_weight(self):
        net = two_layer_example()
        net.layers[1].w[0, 0] = -0.5
        with pytest.raises(ValueError):
            net.validate()


class TestProjection:
    def test_nonnegative_net_unchanged(self):
        net = two_layer_example()
        out = project_nonneg(net)
        for a, b in zip(net.layers, out.layers):
            assert np.array_equal(a.w, b.w)

    def test_clamps_negative_entries(self):
        net = two_layer_example()
        net.layers[1].w = np.array([[-0.3]])
        assert project_nonneg(net).layers[1].w[0, 0] == 0.0

    def test_elementwise(self):
        net = Icnn(
            [
                Layer(np.ones((3, 1)), np.zeros((3, 1)), np.zeros(3)),
                Layer(np.array([[-1.0, 0.0, 2.0]]), np.zeros((1, 1)), np.zeros(1)),
            ]
        )
        out = project_nonneg(net)
        assert out.layers[1].w.tolist() == [[0.0, 0.0, 2.0]]
        # first layer input weights may stay negative
        assert np.array_equal(out.layers[0].w, net.layers[0].w)


class TestTrainingData:
    def test_charge_targets(self):
        data = generate_training_data(PARAMS, "charge", 101)
        assert data.inputs[0] == 0.0 and data.inputs[-1] == 1.0
        assert data.targets[0] == 0.0
        assert data.targets[-1] == pytest.approx(0.92 * (1.0 - math.exp(-10.0)), abs=1e-12)

    def test_discharge_targets(self):
        data = generate_training_data(PARAMS, "discharge", 3)
        assert data.targets[0] == 0.0
        assert data.targets[1] == pytest.approx(0.5 / (0.95 * (1.0 - math.exp(-5.0))), abs=1e-12)

    def test_bad_side(self):
        with pytest.raises(ValueError):
            generate_training_data(PARAMS, "idle", 4)

    def test_training_set_validation(self):
        with pytest.raises(ValueError):
            TrainingSet(inputs=[0.0, 2.0], targets=[0.0, 0.0])
        with pytest.raises(ValueError):
            TrainingSet(inputs=[0.0], targets=[0.0, 1.0])


class TestGradient:
    def test_matches_central_differences_off_kink(self):
        rng = np.random.default_rng(9)
        checked = 0
        attempts = 0
        while checked < 100 and attempts < 500:
            attempts += 1
            net = project_nonneg(init_net([4, 3, 1], seed=int(rng.integers(1 << 30))))
            x = rng.uniform(0.0, 1.0, size=12)
            y = rng.uniform(0.0, 1.0, size=12)
            if _near_kink(net, x):
                continue
            _, grads = loss_and_grad(net, x, y)
            for i, lyr in enumerate(net.layers):
                for j, param in enumerate((lyr.w, lyr.d, lyr.b)):
                    if i == 0 and j == 1:
                        continue
                    g_fd = _fd_param(net, x, y, i, j)
                    g = grads[i][j]
                    denom = np.maximum(np.maximum(np.abs(g), np.abs(g_fd)), 1e-6)
                    assert (np.abs(g - g_fd) / denom).max() < 1e-4
            checked += 1
        assert checked == 100

    def test_zero_loss_at_exact_fit(self):
        net = single_relu()
        loss, _ = loss_and_grad(net, np.array([0.2, 0.7]), np.array([0.2, 0.7]))
        assert loss == 0.0


def _near_kink(net, x, margin=1e-4):
    z = x[None, :]
    for lyr in net.layers:
        a = lyr.w @ z + lyr.d @ x[None, :] + lyr.b[:, None]
        if np.any(np.abs(a) < margin):
            return True
        z = np.maximum(0.0, a)
    return False


def _fd_param(net, x, y, i, j, step=1e-6):
    param = (net.layers[i].w, net.layers[i].d, net.layers[i].b)[j]
    out = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + step
        up, _ = loss_and_grad(net, x, y)
        param[idx] = orig - step
        dn, _ = loss_and_grad(net, x, y)
        param[idx] = orig
        out[idx] = (up - dn) / (2.0 * step)
        it.iternext()
    return out


class TestTraining:
    def test_trivial_single_point(self):
        data = TrainingSet(inputs=[0.0], targets=[0.0])
        net = adam_train(data, [4, 1], TrainHyper(epochs=50, seed=1))
        net.validate()

    def test_linear_target_high_accuracy(self):
        p = np.linspace(0.0, 1.0, 64)
        data = TrainingSet(inputs=p, targets=0.9 * p)
        net = adam_train(data, [8, 8, 1], TrainHyper(epochs=5000, seed=2))
        assert rmse(net, p, 0.9 * p) <= 1e-3

    def test_charge_curve_fit(self):
        data = generate_training_data(PARAMS, "charge", 256)
        net = adam_train(data, [8, 8, 1], TrainHyper(epochs=20000, seed=143))
        grid = np.linspace(0.0, 1.0, 512)
        from bessopt import charge_transfer

        assert rmse(net, grid, charge_transfer(grid, PARAMS)) <= 1e-2

    def test_projection_enforced_after_training(self):
        data = generate_training_data(PARAMS, "charge", 64)
        net = adam_train(data, [6, 6, 1], TrainHyper(epochs=500, seed=3))
        for lyr in net.layers[1:]:
            assert lyr.w.min() >= 0.0

    def test_deterministic_given_seed(self):
        data = generate_training_data(PARAMS, "discharge", 64)
        a = adam_train(data, [6, 1], TrainHyper(epochs=300, seed=11))
        b = adam_train(data, [6, 1], TrainHyper(epochs=300, seed=11))
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.w, lb.w)
            assert np.array_equal(la.d, lb.d)
            assert np.array_equal(la.b, lb.b)

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError):
            adam_train(TrainingSet(inputs=[], targets=[]), [4, 1], TrainHyper(epochs=1))


class TestConvexity:
    def test_valid_net_has_zero_violations(self):
        net = project_nonneg(init_net([8, 8, 1], seed=21))
        rep = check_convexity(net, 10000, seed=5)
        assert rep.violations == 0
        assert rep.max_violation <= 1e-9

    def test_single_relu_clean(self):
        rep = check_convexity(single_relu(), 10000, seed=6)
        assert rep.violations == 0

    def test_broken_net_detected(self):
        # relu(x) fed through weight -5 makes a concave kink at 0
        net = Icnn(
            [
                Layer(np.array([[1.0]]), np.zeros((1, 1)), np.zeros(1)),
                Layer(np.array([[-5.0]]), np.array([[1.0]]), np.array([2.0])),
            ]
        )
        rep = check_convexity(net, 2000, seed=7)
        assert rep.violations > 0
        assert rep.max_violation > 1e-6

    def test_random_projected_nets_stay_convex(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            net = project_nonneg(init_net([5, 4, 1], seed=int(rng.integers(1 << 30))))
            assert check_convexity(net, 500, seed=int(rng.integers(1 << 30))).violations == 0


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        net = adam_train(
            generate_training_data(PARAMS, "charge", 32), [4, 4, 1], TrainHyper(epochs=200, seed=8)
        )
        path = tmp_path / "model.json"
        save_icnn(net, path)
        back = load_icnn(path)
        xs = np.linspace(-0.5, 1.5, 101)
        assert np.array_equal(forward(net, xs), forward(back, xs))

    def test_schema_fields(self, tmp_path):
        net = single_relu()
        path = tmp_path / "m.json"
        save_icnn(net, path)
        doc = json.loads(path.read_text())
        assert doc["widths"] == [1]
        assert set(doc["layers"][0]) == {"W", "D", "b"}

    def test_fit_bias_report(self):
        # error signature on the two power bands is recorded, not asserted
        net = adam_train(
            generate_training_data(PARAMS, "charge", 128), [8, 8, 1], TrainHyper(epochs=4000, seed=9)
        )
        low = signed_fit_bias(net, PARAMS, "charge", 0.08, 0.25)
        mid = signed_fit_bias(net, PARAMS, "charge", 0.25, 0.8)
        print(f"charge surrogate signed bias: low-power {low:+.2e}, mid-power {mid:+.2e}")
        assert math.isfinite(low) and math.isfinite(mid)
