"""Training loop: geometric LR schedule, class re-sampling, best-epoch pick.

Works with any model exposing copy()/train_step()/predict() (the
reflection network and the grid CNN both do). The learning rate decays
geometrically from lr_start to lr_end across epochs, the training set is
re-balanced by integer duplication factors per class, and the returned
model is the parameter snapshot of the epoch with the best validation
accuracy (earliest epoch wins ties).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import nn

# re-sampling factors balancing the class skew of the reference scenario mix
DEFAULT_RESAMPLE = {"car": 1, "pedestrian": 2, "cyclist": 2, "non_obstacle": 4}

# full-scale reference settings: 256 epochs x 1024 steps x batch 512
PAPER_EPOCHS, PAPER_STEPS, PAPER_BATCH = 256, 1024, 512


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; pass the full-scale values explicitly if wanted."""

    epochs: int = 32
    steps_per_epoch: int = 64
    batch_size: int = 64
    lr_start: float = 0.01
    lr_end: float = 0.0001
    resample_factors: Dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_RESAMPLE)
    )
    seed: int = 0
    optimizer: str = "adam"
    # when True, steps_per_epoch is read as a total budget spread over epochs
    steps_are_total: bool = False

    def __post_init__(self):
        if not (self.lr_start > self.lr_end > 0):
            raise ValueError("need lr_start > lr_end > 0")
        if min(self.epochs, self.steps_per_epoch, self.batch_size) < 1:
            raise ValueError("epochs, steps and batch size must be >= 1")

    def steps_in_epoch(self) -> int:
        if self.steps_are_total:
            return max(1, self.steps_per_epoch // self.epochs)
        return self.steps_per_epoch


@dataclass
class TrainReport:
    epoch_losses: List[float]
    val_accuracies: List[float]
    best_epoch: int
    wall_time_s: float

    def core(self) -> dict:
        """The deterministic part of the report (everything but wall time)."""
        return {
            "epoch_losses": list(self.epoch_losses),
            "val_accuracies": list(self.val_accuracies),
            "best_epoch": self.best_epoch,
        }

    def to_json_dict(self) -> dict:
        out = self.core()
        out["wall_time_s"] = self.wall_time_s
        return out


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Geometric decay hitting lr_start at epoch 0 and lr_end at the last epoch."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch == 0:
        return config.lr_start
    if epoch == config.epochs - 1:
        return config.lr_end
    fraction = epoch / (config.epochs - 1)
    return config.lr_start * (config.lr_end / config.lr_start) ** fraction


def resample_indices(
    class_labels: Sequence[str], factors: Dict[str, int]
) -> np.ndarray:
    """Index multiset where sample i of class c appears factors[c] times."""
    out: List[int] = []
    for i, label in enumerate(class_labels):
        out.extend([i] * int(factors.get(label, 1)))
    return np.array(out, dtype=np.int64)


def _accuracy(model, inputs, labels: np.ndarray) -> float:
    correct = sum(
        1 for inp, label in zip(inputs, labels) if model.predict(inp).predicted == label
    )
    return correct / len(labels)


def train(
    model,
    train_inputs: Sequence,
    train_labels: np.ndarray,
    train_class_labels: Sequence[str],
    val_inputs: Sequence,
    val_labels: np.ndarray,
    config: TrainConfig = TrainConfig(),
) -> Tuple[object, TrainReport]:
    """Run the full schedule and return (best-epoch model, report).

    The passed model is not mutated; training happens on a copy.
    The validation set is evaluated after every epoch and never re-sampled.
    """
    started = time.perf_counter()
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    multiset = resample_indices(train_class_labels, config.resample_factors)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)

    opt_state = None
    epoch_losses: List[float] = []
    val_accuracies: List[float] = []
    best_epoch = 0
    best_accuracy = -1.0
    best_snapshot = None
    steps = config.steps_in_epoch()
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        losses = []
        for step in range(steps):
            draw = multiset[rng.integers(0, multiset.size, size=config.batch_size)]
            batch = [train_inputs[i] for i in draw]
            try:
                loss, opt_state = model.train_step(
                    batch, train_labels[draw], lr, opt_state, rng=rng,
                    optimizer=config.optimizer,
                )
            except nn.TrainingError as exc:
                raise nn.TrainingError(
                    f"epoch {epoch} step {step}: {exc}"
                ) from exc
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
        accuracy = _accuracy(model, val_inputs, val_labels)
        val_accuracies.append(accuracy)
        if accuracy > best_accuracy:  # strict: ties keep the earliest epoch
            best_accuracy = accuracy
            best_epoch = epoch
            best_snapshot = model.copy()

    report = TrainReport(
        epoch_losses=epoch_losses,
        val_accuracies=val_accuracies,
        best_epoch=best_epoch,
        wall_time_s=time.perf_counter() - started,
    )
    return best_snapshot, report
