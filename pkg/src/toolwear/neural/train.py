"""Mini-batch training loop with early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..dataset import WindowedDataset
from ..errors import DatasetError, NumericError
from .adam import Adam
from .model import (
    Hyperparameters,
    LstmModel,
    backward,
    forward_batch,
    loss,
    mae,
    predict_scaled,
)

log = logging.getLogger(__name__)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    wall_time_s: float = 0.0
    diverged: bool = False

    def to_dict(self, include_time: bool = True) -> dict:
        d = {
            "train_loss": [float(v) for v in self.train_loss],
            "val_loss": [float(v) for v in self.val_loss],
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "best_val_loss": float(self.best_val_loss),
            "diverged": self.diverged,
        }
        if include_time:
            d["wall_time_s"] = self.wall_time_s
        return d


class Trainer:
    """Holds the full training state so a run can be paused and resumed.

    Early stopping: an epoch counts as an improvement when the validation
    MAE beats the reference by more than ``min_delta``; after ``patience``
    epochs without one, training stops. The weights of the lowest
    validation loss seen are kept and restored by :meth:`finish`.
    """

    def __init__(self, model: LstmModel, train: WindowedDataset, val: WindowedDataset,
                 hp: Hyperparameters | None = None):
        if len(train) == 0 or len(val) == 0:
            raise DatasetError("training and validation sets must be non-empty")
        self.model = model
        self.hp = hp or model.hp
        self.train_set = train
        self.val_set = val
        self.optimizer = Adam(self.hp.learning_rate)
        self.rng = np.random.default_rng([self.hp.seed, 11])
        self.report = TrainReport()
        self.epoch = 0
        self.stopped = False
        self._best_params = model.copy_params()
        self._ref = float("inf")
        self._wait = 0

    def _epoch(self) -> float:
        x, y = self.train_set.inputs, self.train_set.targets
        n = y.size
        order = self.rng.permutation(n)
        bs = self.hp.batch_size
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            pred, cache = forward_batch(self.model, x[idx], training=True, rng=self.rng)
            total += loss(pred, y[idx], self.model) * idx.size
            grads = backward(self.model, y[idx], cache, pred)
            self.optimizer.step(self.model, grads)
        return total / n

    def validation_loss(self) -> float:
        return mae(predict_scaled(self.model, self.val_set.inputs), self.val_set.targets)

    def run(self, until_epoch: int | None = None, early_stopping: bool = True) -> TrainReport:
        """Train up to epoch ``until_epoch`` (default ``max_epochs``) unless stopped earlier."""
        until = min(until_epoch or self.hp.max_epochs, self.hp.max_epochs)
        t0 = time.perf_counter()
        while not self.stopped and self.epoch < until:
            tr = self._epoch()
            va = self.validation_loss()
            self.epoch += 1
            rep = self.report
            if not (np.isfinite(tr) and np.isfinite(va)):
                log.warning("non-finite loss at epoch %d; stopping", self.epoch)
                rep.diverged = True
                self.stopped = True
                rep.stopped_epoch = self.epoch
                break
            rep.train_loss.append(tr)
            rep.val_loss.append(va)
            if va < rep.best_val_loss:
                rep.best_val_loss = va
                rep.best_epoch = self.epoch
                self._best_params = self.model.copy_params()
            if va < self._ref - self.hp.min_delta:
                self._ref = va
                self._wait = 0
            else:
                self._wait += 1
            rep.stopped_epoch = self.epoch
            if early_stopping and self._wait >= self.hp.patience:
                self.stopped = True
        self.report.wall_time_s += time.perf_counter() - t0
        return self.report

    def rearm_early_stopping(self) -> None:
        """Restart the patience count from the best loss seen so far."""
        self._ref = self.report.best_val_loss
        self._wait = 0

    def finish(self) -> TrainReport:
        """Restore the best weights."""
        if self.report.best_epoch > 0:
            self.model.set_params(self._best_params)
        return self.report


def train(model: LstmModel, train_set: WindowedDataset, val_set: WindowedDataset,
          hp: Hyperparameters | None = None) -> TrainReport:
    """Train in place and return the report; raises NumericError if no epoch was finite."""
    trainer = Trainer(model, train_set, val_set, hp)
    trainer.run()
    report = trainer.finish()
    if report.best_epoch == 0:
        raise NumericError("training diverged before completing a finite epoch")
    model.metadata.update(seed=trainer.hp.seed, stopped_epoch=report.stopped_epoch,
                          best_epoch=report.best_epoch)
    return report
