import json

import numpy as np
import pytest

from tied_mixer import trainer
from tied_mixer.autograd import Rng, Tape, Tensor, backward
from tied_mixer.data import SplitSpec, prepare
from tied_mixer.errors import ConfigurationError, ContractError
from tied_mixer.metrics import linear_baseline
from tied_mixer.model import Forecaster
from tied_mixer.synthetic import sum_of_sinusoids
from tied_mixer.trainer import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    adam_step,
    clip_grad_norm,
    evaluate_loss,
    mse_loss,
    train,
)

from .utils import numeric_gradient, relative_error, tiny_config


@pytest.mark.parametrize(
    ["pred", "target", "expected"],
    [
        [[[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [3.0, 4.0]], 0.0],
        [[[3.0, 4.0], [5.0, 6.0]], [[1.0, 2.0], [3.0, 4.0]], 4.0],
    ],
)
def test_mse_loss_examples(pred, target, expected):
    assert mse_loss(pred, target).item() == expected


def test_mse_loss_gradient():
    rng = Rng(0)
    pred = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    target = rng.normal(size=(4, 3))
    with Tape() as tape:
        loss = mse_loss(pred, target)
    backward(loss, tape)
    np.testing.assert_allclose(pred.grad, 2 * (pred.data - target) / 12, rtol=1e-12)
    numeric = numeric_gradient(lambda: mse_loss(pred, target).item(), pred)
    assert relative_error(pred.grad, numeric) < 1e-6


def test_mse_loss_shape_mismatch():
    with pytest.raises(ContractError):
        mse_loss(np.zeros((4, 3)), np.zeros((3, 4)))


def test_adam_zero_gradient_is_a_fixed_point():
    w = Tensor([1.0, -2.0], requires_grad=True)
    state = AdamState.for_params([w])
    adam_step([w], [np.zeros(2)], state, 0.1)
    assert w.data.tolist() == [1.0, -2.0]


def test_adam_first_step_moves_by_learning_rate():
    w = Tensor([0.0, 0.0, 0.0], requires_grad=True)
    state = AdamState.for_params([w])
    adam_step([w], [np.array([3.0, -0.5, 100.0])], state, 0.01)
    np.testing.assert_allclose(w.data, [-0.01, 0.01, -0.01], atol=1e-6 * 0.01)


def test_adam_minimizes_a_parabola():
    w = Tensor([0.0], requires_grad=True)
    state = AdamState.for_params([w])
    for _ in range(2000):
        adam_step([w], [2 * (w.data - 3.0)], state, 0.01)
    assert abs(w.data[0] - 3.0) < 1e-3


def test_adam_shape_mismatch():
    w = Tensor([0.0, 0.0], requires_grad=True)
    with pytest.raises(ContractError):
        adam_step([w], [np.zeros(3)], AdamState.for_params([w]), 0.1)


def test_clip_grad_norm_leaves_small_gradients():
    grads = [np.array([0.3]), np.array([0.4])]
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(0.5)
    assert [g.tolist() for g in clipped] == [[0.3], [0.4]]


@pytest.mark.parametrize(
    ["losses", "stop_epoch", "best_epoch"],
    [
        [[0.5, 0.7], 2, 1],
        [[0.5, 0.4, 0.4, 0.3], None, 4],
        [[1.0, 0.9, 0.95, 0.96], 4, 2],
    ],
)
def test_early_stopping_rule(losses, stop_epoch, best_epoch):
    patience = 1 if stop_epoch == 2 else 2
    stopper = EarlyStopping(patience)
    stopped_at = None
    for epoch, loss in enumerate(losses, start=1):
        stopper.update(epoch, loss)
        if stopper.should_stop:
            stopped_at = epoch
            break
    assert stopped_at == stop_epoch
    assert stopper.best_epoch == best_epoch


def _sines(n=300, noise=0.0, periods=(24.0, 12.0)):
    series = sum_of_sinusoids(n, 3, periods=periods, noise=noise)
    return prepare(series, SplitSpec.default(), window_length=12)


def test_training_restores_the_best_epoch(monkeypatch):
    prepared = _sines()
    data = prepared.training_data(8, 4)
    model = Forecaster.initialize(tiny_config(), Rng(0))
    snapshots = []
    scripted = iter([0.5, 0.7, 0.9])

    def fake_evaluate_loss(model, dataset, batch_size=256):
        snapshots.append(model.params.snapshot())
        return next(scripted)

    monkeypatch.setattr(trainer, "evaluate_loss", fake_evaluate_loss)
    report = train(model, data, TrainConfig(patience=1, max_epochs=10, learning_rate=0.01))
    assert report.epochs == 2
    assert report.best_epoch == 1 and report.best_val_loss == 0.5
    assert report.stopped_early
    restored = model.params.snapshot()
    assert all(np.array_equal(restored[k], snapshots[0][k]) for k in restored)
    assert not all(np.array_equal(restored[k], snapshots[1][k]) for k in restored)


def test_training_is_deterministic(tmp_path):
    prepared = _sines(noise=0.1)
    config = TrainConfig(max_epochs=3, batch_size=16, seed=3)
    reports, params = [], []
    for run in range(2):
        model = Forecaster.initialize(tiny_config(dropout_rate=0.2), Rng(1).child("init"))
        reports.append(train(model, prepared.training_data(8, 4), config, tmp_path / f"log{run}.jsonl"))
        params.append(model.params.snapshot())
    assert reports[0] == reports[1]
    assert reports[0].train_losses[0] == reports[1].train_losses[0]
    assert all(np.array_equal(params[0][k], params[1][k]) for k in params[0])
    records = [json.loads(line) for line in (tmp_path / "log0.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert records[0]["val_loss"] == reports[0].val_losses[0]


def test_training_lowers_the_loss():
    prepared = _sines()
    model = Forecaster.initialize(tiny_config(), Rng(2))
    data = prepared.training_data(8, 4)
    before = evaluate_loss(model, data.val)
    report = train(model, data, TrainConfig(max_epochs=5, learning_rate=0.005, batch_size=16))
    assert report.best_val_loss < before
    assert evaluate_loss(model, data.val) == report.best_val_loss


def test_gradient_clipping_and_decay_run():
    prepared = _sines()
    model = Forecaster.initialize(tiny_config(), Rng(4))
    config = TrainConfig(max_epochs=2, max_grad_norm=0.1, lr_decay=0.5)
    report = train(model, prepared.training_data(8, 4), config)
    assert report.epochs == 2 and all(np.isfinite(report.train_losses))


@pytest.mark.parametrize(
    "kwargs",
    [{"learning_rate": 0}, {"batch_size": 0}, {"patience": 0}, {"lr_decay": 1.5}],
)
def test_invalid_train_config(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


def test_fixed_batch_loss_decreases_over_the_first_steps():
    inputs, targets = _sines().training_data(8, 4).train.batch(list(range(16)))
    model = Forecaster.initialize(tiny_config(), Rng(6).child("init"))
    params = model.params.tensors()
    state = AdamState.for_params(params)
    losses = []
    for _ in range(6):
        with Tape() as tape:
            loss = mse_loss(model(inputs, training=True), targets)
        backward(loss, tape)
        adam_step(params, [p.grad for p in params], state, 1e-3)
        losses.append(loss.item())
    assert all(before > after for before, after in zip(losses, losses[1:]))


@pytest.mark.slow
def test_learns_a_sum_of_sinusoids():
    prepared = prepare(sum_of_sinusoids(2000, 3), SplitSpec.default(), window_length=80)
    data = prepared.training_data(64, 16)
    model = Forecaster.initialize(tiny_config(lookback=64, horizon=16), Rng(5).child("init"))
    train(model, data, TrainConfig(max_epochs=100, patience=10, learning_rate=0.005))
    test = prepared.windows("test", 64, 16)
    assert evaluate_loss(model, test) < 0.05
    # three sines obey an order-6 linear recurrence: least squares is exact
    assert linear_baseline(data.train, test) < 1e-8
