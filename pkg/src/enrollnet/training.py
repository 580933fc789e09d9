"""Supervised training: validation carve-out, oversampling, epochs, early stop.

The validation set is the latest slice of the training records by completion
date (mirroring the leakage discipline of the train/test split) and is carved
out before oversampling, so no duplicated example can leak into it.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    AdamWConfig,
    AdamWState,
    ModelDims,
    ModelParams,
    adamw_step,
    batch_gradients,
    batch_loss,
    init_params,
)
from .ingest import parse_partial_date

DEFAULT_HIDDEN = 64
DEFAULT_ATTN = 32
DEFAULT_CROSS_LAYERS = 2


class SingleClassDataset(ValueError):
    pass


class TooFewRecords(ValueError):
    pass


class DivergedLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 5
    lr: float = 0.001
    weight_decay: float = 0.01
    seed: int = 42
    validation_fraction: float = 0.10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5)")

    @classmethod
    def from_json_file(cls, path: str) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "wall_time_s": self.wall_time_s,
        }


def _require_labels(bundles, context: str):
    labels = []
    for b in bundles:
        if b.label not in (0, 1):
            raise ValueError(f"{context}: bundle {b.nct_id} has no binary label")
        labels.append(float(b.label))
    return labels


def oversample_minority(train, seed: int):
    """Duplicate seeded-with-replacement minority examples until classes match.

    Originals are all retained; an already balanced input comes back as-is.
    """
    _require_labels(train, "oversample_minority")
    positives = [b for b in train if b.label == 1]
    negatives = [b for b in train if b.label == 0]
    if not positives or not negatives:
        raise SingleClassDataset("oversampling needs both classes present")
    if len(positives) == len(negatives):
        return list(train)
    minority, majority = sorted((positives, negatives), key=len)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(minority), size=len(majority) - len(minority))
    return list(train) + [minority[i] for i in picks]


def make_validation_split(train, fraction: float):
    """Latest `fraction` of the records by completion_date becomes validation.

    Records without a completion date sort earliest, so they can never land
    in the validation tail ahead of dated ones.
    """
    records = list(train)
    if len(records) < 10:
        raise TooFewRecords(f"validation split needs >= 10 records, got {len(records)}")
    if not 0.0 < fraction < 0.5:
        raise ValueError("fraction must be in (0, 0.5)")

    def date_key(bundle):
        if bundle.completion_date is None:
            return (0, "")
        return (1, parse_partial_date(bundle.completion_date).isoformat())

    ordered = sorted(records, key=date_key)
    n_val = max(1, int(round(len(records) * fraction)))
    return ordered[:-n_val], ordered[-n_val:]


@dataclass
class EarlyStopper:
    """Stop after `patience` consecutive epochs without improvement.

    Improvement means a validation loss lower than the best by at least
    `min_delta`; ties count as no improvement.
    """

    patience: int
    min_delta: float = 1e-6
    best_loss: float = float("inf")
    best_epoch: int = 0
    epochs_seen: int = 0
    bad_epochs: int = field(default=0)

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True when it improved the best."""
        self.epochs_seen += 1
        if val_loss <= self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = self.epochs_seen
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def infer_dims(
    bundles,
    hidden: int = DEFAULT_HIDDEN,
    attn: int = DEFAULT_ATTN,
    cross_layers: int = DEFAULT_CROSS_LAYERS,
    word_dim: int | None = None,
) -> ModelDims:
    cross_width = len(bundles[0].cross_input)
    if word_dim is None:
        for bundle in bundles:
            for matrices in (bundle.inclusion_words, bundle.exclusion_words):
                for m in matrices:
                    word_dim = m.shape[1]
                    break
                if word_dim is not None:
                    break
            if word_dim is not None:
                break
    if word_dim is None:
        raise ValueError("cannot infer word_dim: no bundle has criteria; pass word_dim")
    return ModelDims(
        word_dim=word_dim,
        hidden=hidden,
        attn=attn,
        cross_width=cross_width,
        cross_layers=cross_layers,
    )


def train(fit, val, cfg: TrainConfig, dims: ModelDims | None = None):
    """Run the training loop; returns (best-epoch parameters, epoch logs).

    Batches are reshuffled each epoch from one seeded generator, the last
    incomplete batch is kept, and the returned parameters are a snapshot from
    the epoch with the best validation loss.
    """
    if not fit or not val:
        raise TooFewRecords("train needs non-empty fit and validation sets")
    fit = list(fit)
    val = list(val)
    fit_labels = _require_labels(fit, "train fit set")
    val_labels = _require_labels(val, "train validation set")
    if dims is None:
        dims = infer_dims(fit + val)

    params = init_params(dims, seed=cfg.seed)
    optimizer = AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay)
    state = AdamWState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopper(patience=cfg.patience)
    best = params.copy()
    logs = []

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(fit))
        running = 0.0
        for lo in range(0, len(fit), cfg.batch_size):
            batch_idx = order[lo : lo + cfg.batch_size]
            batch = [fit[i] for i in batch_idx]
            labels = [fit_labels[i] for i in batch_idx]
            loss, grads = batch_gradients(params, batch, labels)
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite train loss {loss} at epoch {epoch}")
            adamw_step(params, grads, state, optimizer)
            running += loss * len(batch)
        train_loss = running / len(fit)
        val_loss = batch_loss(params, val, val_labels)
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"non-finite validation loss {val_loss} at epoch {epoch}")
        logs.append(EpochLog(epoch, train_loss, val_loss, time.perf_counter() - started))
        if stopper.update(val_loss):
            best = params.copy()
        if stopper.should_stop:
            break
    return best, logs


def write_epoch_logs(logs, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(json.dumps(log.to_dict()) + "\n")


def format_epoch_table(logs) -> str:
    lines = [f"{'epoch':>5}  {'train_loss':>12}  {'val_loss':>12}  {'seconds':>8}"]
    for log in logs:
        lines.append(
            f"{log.epoch:>5}  {log.train_loss:>12.6f}  {log.val_loss:>12.6f}  "
            f"{log.wall_time_s:>8.2f}"
        )
    return "\n".join(lines)
