"""Two-phase fine-tuning of an :class:`EstimatorModel`.

Phase one keeps the encoder frozen and trains only the regressor head at
``lr_frozen_phase``. Once ``frozen_steps`` optimizer steps have been taken,
every group trains at ``lr_unfrozen_phase``, encoder groups optionally scaled
by ``layerwise_decay ** depth`` counted from the top layer. After each epoch
the dev Pearson correlation decides which parameters are kept.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import QERecord
from .errors import ConfigError, UndefinedCorrelationError
from .estimator import EstimatorModel, normalize_score, predict_many, save_estimator
from .evaluation import pearson
from .optim import OptimizerState, optimizer_step

log = logging.getLogger(__name__)

EPOCH_LOG = "epochs.tsv"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr_frozen_phase: float = 3e-5
    lr_unfrozen_phase: float = 1e-5
    layerwise_decay: float | None = None
    frozen_epochs: float = 8.0
    batch_size: int = 4
    accumulated_batches: int = 2
    dropout: float = 0.15
    loss: str = "mse"
    hidden_units: tuple[int, int] = (64, 32)
    seed: int = 0
    max_epochs: int = 10
    weight_decay: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden_units", tuple(int(h) for h in self.hidden_units))
        if self.optimizer not in ("adam", "adamw"):
            raise ConfigError(f"optimizer must be adam or adamw, got {self.optimizer!r}")
        if self.loss != "mse":
            raise ConfigError(f"only the mse loss is supported, got {self.loss!r}")
        if not (self.lr_frozen_phase > 0 and self.lr_unfrozen_phase > 0):
            raise ConfigError("learning rates must be positive")
        if self.layerwise_decay is not None and not (0 < self.layerwise_decay <= 1):
            raise ConfigError("layerwise_decay must be in (0, 1]")
        if self.frozen_epochs < 0:
            raise ConfigError("frozen_epochs must be >= 0")
        if self.batch_size < 1 or self.accumulated_batches < 1:
            raise ConfigError("batch_size and accumulated_batches must be >= 1")
        if not (0 <= self.dropout < 1):
            raise ConfigError("dropout must be in [0, 1)")
        if len(self.hidden_units) != 2 or min(self.hidden_units) < 1:
            raise ConfigError("hidden_units must be two positive sizes")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    @classmethod
    def nonblind_preset(cls, **overrides) -> TrainConfig:
        """Reference-based setting: Adam, 3e-5 then 1e-5, 8 frozen epochs, batch 4 × 2."""
        base = cls(optimizer="adam", lr_frozen_phase=3e-5, lr_unfrozen_phase=1e-5, layerwise_decay=None,
                   frozen_epochs=8.0, batch_size=4, accumulated_batches=2, dropout=0.15,
                   hidden_units=(4096, 2048))
        return replace(base, **overrides)

    @classmethod
    def blind_preset(cls, **overrides) -> TrainConfig:
        """Reference-free setting: AdamW, 3.1e-5 then 1e-5, decay 0.95, 0.3 frozen epochs, batch 2 × 4."""
        base = cls(optimizer="adamw", lr_frozen_phase=3.1e-5, lr_unfrozen_phase=1e-5, layerwise_decay=0.95,
                   frozen_epochs=0.3, batch_size=2, accumulated_batches=4, dropout=0.15,
                   hidden_units=(2048, 1024))
        return replace(base, **overrides)

    def to_json(self) -> str:
        d = asdict(self)
        d["hidden_units"] = list(self.hidden_units)
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> TrainConfig:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str | Path) -> TrainConfig:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def lr_for_group(base_lr: float, decay: float, depth_from_top: int) -> float:
    return base_lr * decay**depth_from_top


def frozen_steps(frozen_epochs: float, steps_per_epoch: int) -> int:
    # round before ceil so that e.g. 0.3 * 1000 = 300.00000000000006 stays 300
    return int(math.ceil(round(frozen_epochs * steps_per_epoch, 9)))


def steps_per_epoch(n_records: int, batch_size: int, accumulated_batches: int) -> int:
    micro = -(-n_records // batch_size)
    return -(-micro // accumulated_batches)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    dev_pearson: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_checkpoint: str | None = None

    def log_lines(self) -> list[str]:
        return [format_epoch_line(i + 1, loss, r)
                for i, (loss, r) in enumerate(zip(self.train_loss, self.dev_pearson))]


def format_epoch_line(epoch: int, train_mse: float, dev_pearson: float) -> str:
    return f"{epoch}\t{train_mse:.6f}\t{dev_pearson:.6f}"


class Trainer:
    """Holds optimizer state and the phase schedule for one training run."""

    def __init__(self, model: EstimatorModel, config: TrainConfig, n_train: int):
        if model.head.hidden != config.hidden_units:
            raise ConfigError(f"model head {model.head.hidden} != config hidden_units {config.hidden_units}")
        self.model = model
        self.config = config
        self.steps_per_epoch = steps_per_epoch(n_train, config.batch_size, config.accumulated_batches)
        self.frozen_steps = frozen_steps(config.frozen_epochs, self.steps_per_epoch)
        self.state = OptimizerState()
        shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.dropout_rng = np.random.default_rng(dropout_seq) if config.dropout > 0 else None
        self.groups = model.param_groups()
        model.set_dropout(config.dropout)

    @property
    def encoder_frozen(self) -> bool:
        """Whether the next optimizer step belongs to the frozen phase."""
        return self.state.step < self.frozen_steps

    def group_lrs(self) -> list[float]:
        """Learning rate per group for the next step; 0.0 marks a frozen group."""
        cfg = self.config
        n_enc = len(self.groups) - 1
        if self.encoder_frozen:
            return [0.0] * n_enc + [cfg.lr_frozen_phase]
        decay = cfg.layerwise_decay if cfg.layerwise_decay is not None else 1.0
        lrs = [lr_for_group(cfg.lr_unfrozen_phase, decay, n_enc - 1 - i) for i in range(n_enc)]
        return lrs + [cfg.lr_unfrozen_phase]

    def _zero_grads(self) -> None:
        for g in self.groups:
            for p in g.params.values():
                p.grad = None

    def micro_batch(self, records: Sequence[QERecord]) -> float:
        """Forward/backward one micro-batch, accumulating gradients; returns its loss."""
        pred = self.model.forward(records, self.dropout_rng, encoder_grad=not self.encoder_frozen)
        target = T.Tensor(np.array([normalize_score(r.score) for r in records]), dtype=pred.dtype)
        loss = T.mse_loss(pred, target)
        T.backward(loss)
        return float(loss.data)

    def step(self, n_micro: int) -> None:
        """Average the accumulated gradients over ``n_micro`` micro-batches and update."""
        lrs = self.group_lrs()
        active = [(g, lr) for g, lr in zip(self.groups, lrs) if lr > 0]
        for g, _ in active:
            for p in g.params.values():
                if p.grad is not None and n_micro > 1:
                    p.grad /= n_micro
        optimizer_step(self.config.optimizer, [g for g, _ in active], [lr for _, lr in active],
                       self.state, self.config.weight_decay)
        for g, lr in zip(self.groups, lrs):
            self.state.group_lr[g.name] = lr
        self._zero_grads()

    def run_epoch(self, train_set: Sequence[QERecord],
                  on_step: Callable[[Trainer], None] | None = None) -> float:
        cfg = self.config
        order = self.shuffle_rng.permutation(len(train_set))
        batches = [[train_set[j] for j in order[i:i + cfg.batch_size]]
                   for i in range(0, len(order), cfg.batch_size)]
        total, pending = 0.0, 0
        self._zero_grads()
        for batch in batches:
            total += self.micro_batch(batch) * len(batch)
            pending += 1
            if pending == cfg.accumulated_batches:
                self.step(pending)
                pending = 0
                if on_step is not None:
                    on_step(self)
        if pending:
            self.step(pending)
            if on_step is not None:
                on_step(self)
        return total / len(train_set)


def dev_pearson(model: EstimatorModel, dev_set: Sequence[QERecord]) -> float:
    preds = predict_many(model, dev_set)
    try:
        return pearson(preds, [r.score for r in dev_set])
    except UndefinedCorrelationError:
        return float("nan")


def train(model: EstimatorModel, config: TrainConfig, train_set: Sequence[QERecord],
          dev_set: Sequence[QERecord], out_dir: str | Path | None = None,
          on_step: Callable[[Trainer], None] | None = None) -> tuple[TrainReport, EstimatorModel]:
    """Train in place; the returned model carries the best-dev-Pearson parameters.

    With ``out_dir`` the best model artifact and the per-epoch log
    (``epoch<TAB>train_mse<TAB>dev_pearson``) are written there.
    """
    if not train_set or not dev_set:
        raise ConfigError("training and dev sets must be non-empty")
    if len({r.score for r in dev_set}) < 2:
        raise ConfigError("dev set gold scores are constant; Pearson correlation is undefined")
    trainer = Trainer(model, config, len(train_set))
    report = TrainReport()
    best_r, best_params = -math.inf, None
    params = model.params
    for epoch in range(1, config.max_epochs + 1):
        loss = trainer.run_epoch(train_set, on_step)
        r = dev_pearson(model, dev_set)
        report.train_loss.append(loss)
        report.dev_pearson.append(r)
        log.info("epoch %d  train_mse %.6f  dev_pearson %.4f  step %d%s", epoch, loss, r,
                 trainer.state.step, "  (encoder frozen)" if trainer.encoder_frozen else "")
        if not math.isnan(r) and r > best_r:
            best_r, report.best_epoch = r, epoch
            best_params = {k: v.data.copy() for k, v in params.items()}
    if best_params is None:
        report.best_epoch = config.max_epochs
    else:
        for k, v in params.items():
            v.data[...] = best_params[k]
    if out_dir is not None:
        out = Path(out_dir)
        save_estimator(model, out)
        (out / EPOCH_LOG).write_text("".join(line + "\n" for line in report.log_lines()), encoding="utf-8")
        report.best_checkpoint = str(out)
    return report, model
