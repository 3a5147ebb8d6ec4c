"""Random search with a single successive-halving bracket.

Every trial trains to the first rung; the best ``keep_fraction`` (by
validation loss, ties broken by trial index) continue to the next rung,
resuming from their saved training state. Intermediate rungs run their
full epoch increment; early stopping is armed, with a fresh patience
count, only in the final rung.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import WindowedDataset
from .errors import ConfigurationError
from .neural.model import Hyperparameters, init_model
from .neural.train import Trainer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    min_layers: int = 1
    max_layers: int = 10
    min_units: int = 16
    max_units: int = 128
    units_step: int = 16
    activations: tuple = ("relu", "tanh")
    max_dropout: float = 0.5
    max_recurrent_dropout: float = 0.5
    regularizers: tuple = ("L1", "L2")
    reg_factors: tuple = (1e-5, 1e-4, 1e-3, 1e-2)
    lr_min: float = 1e-4
    lr_max: float = 1e-2
    batch_size: int = 32
    patience: int = 10

    def validate(self) -> None:
        if not 1 <= self.min_layers <= self.max_layers <= 10:
            raise ConfigurationError("layer range must sit inside [1, 10]")
        if not 16 <= self.min_units <= self.max_units <= 128 or self.units_step < 1:
            raise ConfigurationError("unit range must sit inside [16, 128]")
        if not self.activations or set(self.activations) - {"relu", "tanh"}:
            raise ConfigurationError("activations must be drawn from relu/tanh")
        if not (0 <= self.max_dropout <= 0.5 and 0 <= self.max_recurrent_dropout <= 0.5):
            raise ConfigurationError("dropout ranges must sit inside [0, 0.5]")
        if not self.regularizers or set(self.regularizers) - {"L1", "L2"}:
            raise ConfigurationError("regularizers must be drawn from L1/L2")
        if not self.reg_factors or min(self.reg_factors) < 0:
            raise ConfigurationError("reg_factors must be a non-empty list of non-negative values")
        if not 1e-4 <= self.lr_min <= self.lr_max <= 1e-2:
            raise ConfigurationError("learning-rate range must sit inside [1e-4, 1e-2]")

    @property
    def unit_choices(self) -> np.ndarray:
        return np.arange(self.min_units, self.max_units + 1, self.units_step)


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


def sample_config(space: SearchSpace, rng_seed: int, max_epochs: int = 100) -> Hyperparameters:
    space.validate()
    rng = np.random.default_rng([rng_seed, 5])
    n_layers = int(rng.integers(space.min_layers, space.max_layers + 1))
    units = tuple(int(u) for u in rng.choice(space.unit_choices, size=n_layers))
    hp = Hyperparameters(
        n_layers=n_layers,
        units_per_layer=units,
        activation=str(space.activations[rng.integers(len(space.activations))]),
        dropout_rate=float(rng.uniform(0.0, space.max_dropout)),
        recurrent_dropout_rate=float(rng.uniform(0.0, space.max_recurrent_dropout)),
        regularizer=str(space.regularizers[rng.integers(len(space.regularizers))]),
        reg_factor=float(space.reg_factors[rng.integers(len(space.reg_factors))]),
        learning_rate=float(np.exp(rng.uniform(np.log(space.lr_min), np.log(space.lr_max)))),
        max_epochs=max_epochs,
        patience=space.patience,
        batch_size=space.batch_size,
        seed=int(rng_seed),
    )
    hp.validate()
    return hp


@dataclass
class TrialResult:
    trial: int
    config: Hyperparameters
    best_val_loss: float
    epochs_run: int
    wall_time_s: float
    rung_reached: int
    val_loss_at_rung: list = field(default_factory=list)
    diverged: bool = False

    def to_dict(self, include_time: bool = True) -> dict:
        d = {
            "trial": self.trial,
            "config": self.config.to_dict(),
            "best_val_loss": _num(self.best_val_loss),
            "epochs_run": self.epochs_run,
            "rung_reached": self.rung_reached,
            "val_loss_at_rung": [_num(v) for v in self.val_loss_at_rung],
            "diverged": self.diverged,
        }
        if include_time:
            d["wall_time_s"] = self.wall_time_s
        return d


def _num(v: float):
    return float(v) if math.isfinite(v) else None


@dataclass
class SearchResult:
    best: TrialResult
    trials: list
    rungs: tuple
    rung_sizes: list
    epochs_consumed: int
    epochs_budgeted: int
    best_trainer: Trainer | None = None

    def to_dict(self, include_time: bool = True) -> dict:
        return {
            "best_trial": self.best.trial,
            "best_config": self.best.config.to_dict(),
            "best_val_loss": _num(self.best.best_val_loss),
            "rungs": list(self.rungs),
            "rung_sizes": self.rung_sizes,
            "epochs_consumed": self.epochs_consumed,
            "epochs_budgeted": self.epochs_budgeted,
            "trials": [t.to_dict(include_time) for t in self.trials],
        }


def rung_sizes(n_trials: int, n_rungs: int, keep_fraction: float) -> list[int]:
    sizes = [n_trials]
    for _ in range(n_rungs - 1):
        sizes.append(max(1, math.ceil(sizes[-1] * keep_fraction)))
    return sizes


def budgeted_epochs(sizes, rungs) -> int:
    """Sum over rungs of (trials at rung x epoch increment of that rung)."""
    prev = 0
    total = 0
    for n, r in zip(sizes, rungs):
        total += n * (r - prev)
        prev = r
    return total


def _advance(args):
    trainer, until, early = args
    if early:
        trainer.rearm_early_stopping()
    trainer.run(until_epoch=until, early_stopping=early)
    return trainer


def _score(trainer: Trainer) -> float:
    rep = trainer.report
    if rep.best_epoch == 0:
        return math.inf
    return rep.best_val_loss


def run_search(space: SearchSpace, train: WindowedDataset, val: WindowedDataset,
               n_trials: int = 16, rungs=(5, 20, 100), keep_fraction: float = 0.5,
               master_seed: int = 0, n_jobs: int = 1) -> SearchResult:
    """Successive halving over ``n_trials`` sampled configurations.

    Returns the best trial (lowest validation loss among final-rung
    trials) and every trial's result in trial order. ``n_jobs > 1`` trains
    the trials of a rung in worker processes; results do not depend on it.
    """
    rungs = tuple(int(r) for r in rungs)
    if not rungs:
        raise ConfigurationError("rungs must be a non-empty increasing sequence of epoch budgets")
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    if any(r < 1 for r in rungs) or any(b <= a for a, b in zip(rungs, rungs[1:])):
        raise ConfigurationError(f"rungs must be positive and strictly increasing, got {rungs}")
    if not 0 < keep_fraction <= 1:
        raise ConfigurationError("keep_fraction must lie in (0, 1]")
    space.validate()

    trainers = []
    for i in range(n_trials):
        hp = sample_config(space, trial_seed(master_seed, i), max_epochs=rungs[-1])
        trainers.append(Trainer(init_model(hp, train.n_features), train, val, hp))

    sizes = rung_sizes(n_trials, len(rungs), keep_fraction)
    active = list(range(n_trials))
    reached = [0] * n_trials
    at_rung = [[] for _ in range(n_trials)]
    for r, budget in enumerate(rungs):
        active = active[:sizes[r]]
        final = r == len(rungs) - 1
        jobs = [(trainers[i], budget, final) for i in active]
        if n_jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                done = list(pool.map(_advance, jobs))
            for i, tr in zip(active, done):
                trainers[i] = tr
        else:
            for job in jobs:
                _advance(job)
        for i in active:
            reached[i] = r
            at_rung[i].append(_score(trainers[i]))
        log.info("rung %d (%d epochs): %d trials", r, budget, len(active))
        active = sorted(active, key=lambda i: (_score(trainers[i]), i))

    results = []
    for i, tr in enumerate(trainers):
        rep = tr.report
        results.append(TrialResult(trial=i, config=tr.hp, best_val_loss=_score(tr),
                                   epochs_run=tr.epoch, wall_time_s=rep.wall_time_s,
                                   rung_reached=reached[i], val_loss_at_rung=at_rung[i],
                                   diverged=rep.diverged))
    finalists = [t for t in results if t.rung_reached == len(rungs) - 1]
    best = min(finalists, key=lambda t: (t.best_val_loss, t.trial))
    best_trainer = trainers[best.trial]
    best_trainer.finish()
    return SearchResult(best=best, trials=results, rungs=rungs, rung_sizes=sizes,
                        epochs_consumed=sum(t.epochs_run for t in results),
                        epochs_budgeted=budgeted_epochs(sizes, rungs),
                        best_trainer=best_trainer)


def write_search_report(result: SearchResult, directory, include_time: bool = True) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "search_report.json").write_text(
        json.dumps(result.to_dict(include_time), indent=2, sort_keys=True) + "\n")
    with open(d / "leaderboard.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "val_loss", "epochs", "seconds"])
        for t in sorted(result.trials, key=lambda t: (t.best_val_loss, t.trial)):
            w.writerow([t.trial, repr(float(t.best_val_loss)), t.epochs_run, f"{t.wall_time_s:.3f}"])
    return d
