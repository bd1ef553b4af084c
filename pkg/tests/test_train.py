import numpy as np
import pytest

from sonovox.errors import ConfigError, DataError, DivergenceError, MetricError, ShapeError
from sonovox.gradcheck import max_rel_error, numerical_grad
from sonovox.metrics import compute_metrics, mse_loss, per_target_r2, r2_score
from sonovox.models import LayerSpec, Model, ModelSpec
from sonovox.optim import Adam, SGD
from sonovox.rng import seeded_rng
from sonovox.train import ArrayDataset, TrainConfig, evaluate, fit, history_to_csv


def toy_linear_dataset(seed=0, n=256, d=6, k=3, dtype=np.float64):
    rng = seeded_rng(seed)
    a = rng.standard_normal((d, k))
    b = rng.standard_normal(k)
    x = rng.standard_normal((n, d)).astype(dtype)
    y = (x @ a + b).astype(dtype)
    cut = int(0.8 * n)
    return ArrayDataset({
        "train": (x[:cut], y[:cut]),
        "dev": (x[cut:], y[cut:]),
    })


def dense_model(d=6, k=3, dtype=np.float64, seed=0):
    spec = ModelSpec("toy", [LayerSpec("dense", units=k)], input_shape=(d,))
    return Model.build(spec, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------

def test_mse_example_value():
    loss, _ = mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))
    assert loss == pytest.approx(2.5)


def test_mse_zero_at_equality(rng):
    x = rng.standard_normal((4, 5))
    loss, grad = mse_loss(x, x.copy())
    assert loss == 0.0
    assert not grad.any()


def test_mse_gradient_matches_finite_differences(rng):
    pred = rng.standard_normal((3, 4))
    target = rng.standard_normal((3, 4))
    _, grad = mse_loss(pred, target)
    numeric = numerical_grad(lambda: mse_loss(pred, target)[0], pred)
    assert max_rel_error(grad, numeric) < 1e-8


def test_r2_examples():
    assert r2_score(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0])) == 1.0
    target = np.array([1.0, 2.0, 3.0])
    assert r2_score(np.full(3, target.mean()), target) == pytest.approx(0.0)
    assert r2_score(np.array([1.0, 2.0, 4.0]), target) == pytest.approx(0.5)


def test_r2_zero_variance_raises():
    with pytest.raises(MetricError, match="variance"):
        r2_score(np.array([1.0, 2.0]), np.array([3.0, 3.0]))
    with pytest.raises(MetricError, match="column 1"):
        per_target_r2(np.zeros((3, 2)), np.column_stack([np.arange(3.0), np.ones(3)]))


def test_r2_reorder_invariance(rng):
    pred = rng.standard_normal(50)
    target = rng.standard_normal(50)
    base = r2_score(pred, target)
    perm = rng.permutation(50)
    assert r2_score(pred[perm], target[perm]) == pytest.approx(base, rel=1e-12)


def test_metrics_mean_is_arithmetic_mean(rng):
    pred = rng.standard_normal((40, 5))
    target = rng.standard_normal((40, 5))
    m = compute_metrics(pred, target)
    assert m.mean_r2 == pytest.approx(m.r2_per_target.mean())
    assert m.mse >= 0.0


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def test_adam_first_step_closed_form():
    p = {"w": np.zeros(1)}
    opt = Adam(p, lr=1e-3)
    opt.step({"w": np.ones(1)})
    assert p["w"][0] == pytest.approx(-0.0009999999900000003, abs=1e-15)


def test_adam_zero_grad_never_moves():
    p = {"w": np.full(3, 2.0)}
    opt = Adam(p, lr=0.1)
    for _ in range(5):
        opt.step({"w": np.zeros(3)})
    np.testing.assert_array_equal(p["w"], 2.0)


def test_adam_deterministic_trajectory():
    def run():
        rng = seeded_rng(3)
        p = {"w": rng.standard_normal(4)}
        opt = Adam(p, lr=0.01)
        for _ in range(10):
            opt.step({"w": rng.standard_normal(4)})
        return p["w"]
    np.testing.assert_array_equal(run(), run())


def test_sgd_step():
    p = {"w": np.array([1.0])}
    SGD(p, lr=0.1).step({"w": np.array([0.5])})
    assert p["w"][0] == pytest.approx(0.95)


def test_sgd_zero_grad():
    p = {"w": np.array([1.0])}
    SGD(p, lr=0.1).step({"w": np.zeros(1)})
    assert p["w"][0] == 1.0


def test_both_optimizers_descend():
    grad = {"w": np.array([2.0])}
    p1 = {"w": np.array([1.0])}
    p2 = {"w": np.array([1.0])}
    SGD(p1, lr=0.01).step(grad)
    Adam(p2, lr=0.01).step(grad)
    assert p1["w"][0] < 1.0 and p2["w"][0] < 1.0


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        Adam({}, lr=-1.0)
    with pytest.raises(ConfigError):
        Adam({}, beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")


# ---------------------------------------------------------------------------
# fit / evaluate
# ---------------------------------------------------------------------------

def test_fit_solves_linear_task():
    data = toy_linear_dataset()
    model = dense_model()
    cfg = TrainConfig(optimizer="adam", learning_rate=0.02, batch_size=32,
                      max_epochs=200, early_stop_patience=200, seed=1,
                      precision="f64")
    result = fit(model, data, cfg)
    assert result.history[-1].train_mse < 1e-3
    assert len(result.history) <= 200


def test_fit_first_epoch_deterministic():
    def first_epoch():
        data = toy_linear_dataset(seed=5)
        model = dense_model(seed=2)
        cfg = TrainConfig(max_epochs=1, seed=9, precision="f64")
        return fit(model, data, cfg).history[0].train_mse
    assert first_epoch() == first_epoch()


def test_single_batch_step_decreases_loss():
    rng = seeded_rng(0)
    x = rng.standard_normal((16, 6))
    y = rng.standard_normal((16, 3))
    data = ArrayDataset({"train": (x, y), "dev": (x, y)})
    model = dense_model(seed=3)
    cfg = TrainConfig(optimizer="sgd", learning_rate=1e-4, batch_size=16,
                      max_epochs=2, early_stop_patience=10, precision="f64")
    result = fit(model, data, cfg)
    assert result.history[1].train_mse < result.history[0].train_mse


def test_early_stopping_restores_best_weights():
    data = toy_linear_dataset(seed=7)
    model = dense_model(seed=4)
    cfg = TrainConfig(learning_rate=0.05, max_epochs=40,
                      early_stop_patience=3, seed=2, precision="f64")
    result = fit(model, data, cfg)
    dev_after = evaluate(model, data, "dev")
    assert dev_after.mse == pytest.approx(result.best_dev_mse, rel=1e-9)


def test_target_dev_r2_stops_early():
    data = toy_linear_dataset(seed=8)
    model = dense_model(seed=5)
    cfg = TrainConfig(learning_rate=0.05, max_epochs=200, early_stop_patience=200,
                      seed=2, precision="f64", target_dev_r2=0.5)
    result = fit(model, data, cfg)
    assert result.history[-1].dev_mean_r2 >= 0.5
    assert len(result.history) < 200


def test_evaluate_is_pure_and_batch_invariant():
    data = toy_linear_dataset(seed=9)
    model = dense_model(seed=6)
    m1 = evaluate(model, data, "dev", batch_size=16)
    m2 = evaluate(model, data, "dev", batch_size=64)
    m3 = evaluate(model, data, "dev", batch_size=16)
    assert m1.mse == pytest.approx(m2.mse, rel=1e-10)
    assert m1.mean_r2 == pytest.approx(m2.mean_r2, rel=1e-10)
    assert m1.mse == m3.mse and m1.mean_r2 == m3.mean_r2


def test_perfect_model_metrics():
    rng = seeded_rng(1)
    x = rng.standard_normal((32, 4)).astype(np.float64)
    w = rng.standard_normal((4, 2))
    y = x @ w
    data = ArrayDataset({"dev": (x, y)})
    spec = ModelSpec("p", [LayerSpec("dense", units=2)], input_shape=(4,))
    model = Model.build(spec, seed=0, dtype=np.float64)
    model.set_parameters({"00.dense.w": w, "00.dense.b": np.zeros(2)})
    m = evaluate(model, data, "dev")
    assert m.mse == pytest.approx(0.0, abs=1e-20)
    assert m.mean_r2 == pytest.approx(1.0)


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
def test_divergence_aborts():
    data = toy_linear_dataset(seed=3)
    model = dense_model(seed=1)
    cfg = TrainConfig(optimizer="sgd", learning_rate=1e12, max_epochs=5,
                      precision="f64")
    with pytest.raises(DivergenceError):
        fit(model, data, cfg)


def test_empty_split_rejected():
    x = np.zeros((4, 6))
    y = np.zeros((4, 3))
    data = ArrayDataset({"train": (x, y), "dev": (x[:0], y[:0])})
    with pytest.raises(DataError, match="dev"):
        fit(dense_model(), data, TrainConfig())


def test_history_csv_format():
    data = toy_linear_dataset()
    model = dense_model(seed=8)
    result = fit(model, data, TrainConfig(max_epochs=2, early_stop_patience=5,
                                          precision="f64"))
    csv = history_to_csv(result.history)
    lines = csv.strip().splitlines()
    assert lines[0] == "epoch,train_mse,dev_mse,dev_mean_r2"
    assert len(lines) == len(result.history) + 1
    assert lines[1].startswith("1,")
