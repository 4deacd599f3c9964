import json
import logging
import math
import time
from logging import warning
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import attr
import numpy as np

from tied_mixer.autograd import Rng, Tape, Tensor, as_tensor, backward
from tied_mixer.autograd.ops import mean_all, square, sub
from tied_mixer.data import TrainingData, WindowedDataset
from tied_mixer.defs import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
)
from tied_mixer.errors import ConfigurationError, ContractError
from tied_mixer.model import Forecaster
from tied_mixer.validators import (
    in_range,
    non_negative,
    optional_positive,
    positive,
    to_float,
    to_int,
    to_optional_float,
)


@attr.s(auto_attribs=True, frozen=True)
class TrainConfig:
    learning_rate: float = attr.ib(default=1e-3, converter=to_float, validator=positive)
    batch_size: int = attr.ib(default=32, converter=to_int, validator=positive)
    max_epochs: int = attr.ib(default=DEFAULT_MAX_EPOCHS, converter=to_int, validator=positive)
    patience: int = attr.ib(default=DEFAULT_PATIENCE, converter=to_int, validator=positive)
    seed: int = attr.ib(default=0, converter=to_int, validator=non_negative)
    max_grad_norm: Optional[float] = attr.ib(
        default=None, converter=to_optional_float, validator=optional_positive
    )
    lr_decay: float = attr.ib(default=1.0, converter=to_float, validator=in_range(1e-12, 1.0))
    eval_batch_size: int = attr.ib(default=256, converter=to_int, validator=positive)


@attr.s(auto_attribs=True, eq=False)
class AdamState:
    first: List[np.ndarray]
    second: List[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            first=[np.zeros_like(p.data) for p in params],
            second=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    learning_rate: float,
):
    """One bias-corrected Adam update, applied in place.

    >>> w = Tensor([1.0], requires_grad=True)
    >>> state = AdamState.for_params([w])
    >>> adam_step([w], [np.array([4.0])], state, 0.1)
    >>> round(float(w.data[0]), 6), state.step
    (0.9, 1)
    """
    if not len(params) == len(grads) == len(state.first):
        raise ContractError(
            f"{len(params)} parameters, {len(grads)} gradients, "
            f"{len(state.first)} moment buffers"
        )
    for p, g, m in zip(params, grads, state.first):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ContractError(
                f"{p.name or 'parameter'}: shape {p.shape}, gradient {np.shape(g)}, "
                f"moments {m.shape}"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.first[i] = b1 * state.first[i] + (1.0 - b1) * g
        state.second[i] = b2 * state.second[i] + (1.0 - b2) * g * g
        m_hat = state.first[i] / correction1
        v_hat = state.second[i] / correction2
        p.data -= learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared errors over every entry (batch included).

    >>> mse_loss([[3.0, 3.0]], [[1.0, 1.0]]).item()
    4.0
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ContractError(f"mse: prediction {pred.shape} vs target {target.shape}")
    return mean_all(square(sub(pred, target)))


def clip_grad_norm(
    grads: Sequence[np.ndarray], max_norm: float
) -> Tuple[List[np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most
    ``max_norm``. Returns the gradients and the norm before clipping.

    >>> clipped, norm = clip_grad_norm([np.array([3.0]), np.array([4.0])], 1.0)
    >>> norm, [round(float(g[0]), 6) for g in clipped]
    (5.0, [0.6, 0.8])
    """
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


@attr.s(auto_attribs=True)
class EarlyStopping:
    """Tracks the best validation loss. Stops once ``patience`` consecutive
    epochs fail to improve on it (strictly).

    >>> stopper = EarlyStopping(patience=1)
    >>> stopper.update(1, 0.5), stopper.update(2, 0.7), stopper.should_stop
    (True, False, True)
    >>> stopper.best_epoch
    1
    """

    patience: int
    best_loss: float = math.inf
    best_epoch: int = 0
    bad_epochs: int = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch``; True when it is a new best."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@attr.s(auto_attribs=True)
class TrainReport:
    train_losses: List[float] = attr.Factory(list)
    val_losses: List[float] = attr.Factory(list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False
    wall_time: float = attr.ib(default=0.0, eq=False)

    @property
    def epochs(self) -> int:
        return len(self.val_losses)

    def records(self) -> List[dict]:
        return [
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
            for epoch, (train_loss, val_loss) in enumerate(
                zip(self.train_losses, self.val_losses), start=1
            )
        ]


def write_train_log(report: TrainReport, path: Union[str, Path]):
    """One JSON record per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wt", encoding="utf8") as f:
        for record in report.records():
            f.write(json.dumps(record, sort_keys=True) + "\n")


def evaluate_loss(model: Forecaster, dataset: WindowedDataset, batch_size: int = 256) -> float:
    """MSE over every window of ``dataset`` in inference mode."""
    total, count = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        inputs, targets = dataset.batch(slice(start, start + batch_size))
        errors = model(inputs).data - targets
        total += float((errors * errors).sum())
        count += errors.size
    if count == 0:
        raise ConfigurationError("no windows to evaluate", field="split")
    return total / count


def _train_epoch(
    model: Forecaster,
    dataset: WindowedDataset,
    config: TrainConfig,
    state: AdamState,
    learning_rate: float,
    shuffle_rng: Rng,
    dropout_rng: Rng,
) -> float:
    params = model.params.tensors()
    order = shuffle_rng.permutation(len(dataset))
    total, count = 0.0, 0
    for start in range(0, len(order), config.batch_size):
        indices = order[start : start + config.batch_size]
        inputs, targets = dataset.batch(indices)
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            loss = mse_loss(model(inputs, training=True, rng=dropout_rng), targets)
        backward(loss, tape)
        grads = [p.grad for p in params]
        if config.max_grad_norm is not None:
            grads, _ = clip_grad_norm(grads, config.max_grad_norm)
        adam_step(params, grads, state, learning_rate)
        total += loss.item() * len(indices)
        count += len(indices)
    return total / count


def train(
    model: Forecaster,
    data: TrainingData,
    config: TrainConfig,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainReport:
    """Fit ``model`` in place with Adam on shuffled mini-batches.

    Validation MSE is computed after every epoch with dropout off. Training
    stops after ``patience`` epochs without improvement and the parameters
    of the best epoch are restored before returning.
    """
    if len(data.train) == 0 or len(data.val) == 0:
        raise ConfigurationError("train and val splits must hold windows", field="split")
    started = time.perf_counter()
    rng = Rng(config.seed)
    shuffle_rng, dropout_rng = rng.child("shuffle"), rng.child("dropout")
    state = AdamState.for_params(model.params.tensors())
    stopper = EarlyStopping(config.patience)
    report = TrainReport()
    best = model.params.snapshot()
    learning_rate = config.learning_rate

    for epoch in range(1, config.max_epochs + 1):
        train_loss = _train_epoch(
            model, data.train, config, state, learning_rate, shuffle_rng, dropout_rng
        )
        if not math.isfinite(train_loss):
            warning(f"Training loss diverged at epoch {epoch}; stopping")
            report.stopped_early = True
            break
        val_loss = evaluate_loss(model, data.val, config.eval_batch_size)
        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        logging.info(f"Epoch {epoch}: train loss {train_loss:.6f}, val loss {val_loss:.6f}")
        if stopper.update(epoch, val_loss):
            best = model.params.snapshot()
        if stopper.should_stop:
            logging.info(
                f"No improvement for {config.patience} epochs; "
                f"best val loss {stopper.best_loss:.6f} at epoch {stopper.best_epoch}"
            )
            report.stopped_early = True
            break
        learning_rate *= config.lr_decay

    model.params.restore(best)
    report.best_epoch = stopper.best_epoch
    report.best_val_loss = stopper.best_loss
    report.wall_time = time.perf_counter() - started
    if log_path is not None:
        write_train_log(report, log_path)
    return report
