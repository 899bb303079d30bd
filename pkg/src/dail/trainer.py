"""Two-stage SGD training loop.

Before ``stage2_start_step`` the embedder and class head learn from the
classification loss alone while the dataset classifier trains on its own
loss. From that step on the reversed domain gradient also reaches the
embedder. Modes without GRL never build a dataset classifier.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import model
from .datagen import SyntheticCorpus
from .losses import MarginSpec
from .numerics import Prng
from .registry import ClassTable, all_ones_mask, crossing_dropout_mask, dataset_mask

logger = logging.getLogger(__name__)

LOSS_MODES = ("naive", "dataset_aware", "dataset_aware_grl", "dataset_aware_grl_cd")


@dataclass
class TrainConfig:
    loss_mode: str = "dataset_aware_grl"
    margin: MarginSpec = field(default_factory=lambda: MarginSpec(1.0, 0.5, 0.0, 64.0))
    lam: float = 0.1
    cd_p: float = 1e-4
    batch_size: int = 64
    total_steps: int = 2000
    stage2_start_step: int = 700
    base_lr: float = 0.05
    lr_decay_steps: tuple[int, ...] = (700, 1200)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    hidden: tuple[int, ...] = (32,)
    embed_dim: int = 16
    log_every: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"train.loss_mode must be one of {', '.join(LOSS_MODES)}")
        if self.stage2_start_step > self.total_steps:
            raise ValueError("train.stage2_start_step must not exceed train.total_steps")
        steps = list(self.lr_decay_steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("train.lr_decay_steps must be strictly increasing")
        if not self.lr_decay_factor > 0:
            raise ValueError("train.lr_decay_factor must be positive")
        if not 0.0 <= self.cd_p <= 1.0:
            raise ValueError("train.cd_p must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("train.lambda must be non-negative")
        if self.batch_size < 1 or self.total_steps < 0 or self.log_every < 1:
            raise ValueError("train.batch_size and train.log_every must be >= 1, train.total_steps >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("train.momentum must lie in [0, 1)")

    @property
    def uses_grl(self) -> bool:
        return self.loss_mode in ("dataset_aware_grl", "dataset_aware_grl_cd")


@dataclass
class TrainState:
    params: model.ModelParams
    buffers: dict[str, np.ndarray]
    step: int
    prng: Prng  # crossing-dropout draws


@dataclass
class TrainResult:
    params: model.ModelParams
    state: TrainState
    metrics: list[dict]
    loss_history: np.ndarray  # per-step L_cls


def lr_at(config: TrainConfig, step: int) -> float:
    crossed = sum(1 for b in config.lr_decay_steps if b <= step)
    return config.base_lr * config.lr_decay_factor**crossed


def stage_at(config: TrainConfig, step: int) -> int:
    return 2 if config.uses_grl and step >= config.stage2_start_step else 1


def init_state(config: TrainConfig, input_dim: int, table: ClassTable) -> TrainState:
    config.validate()
    params = model.init_params(
        Prng((config.seed, 0)),
        input_dim,
        config.hidden,
        config.embed_dim,
        table.num_classes,
        table.num_datasets if config.uses_grl else None,
        config.margin,
        config.lam,
    )
    buffers = {k: np.zeros_like(v) for k, v in params.named_arrays().items()}
    return TrainState(params, buffers, 0, Prng((config.seed, 2)))


def build_masks(config: TrainConfig, table: ClassTable, k, prng: Prng) -> np.ndarray:
    if config.loss_mode == "naive":
        return all_ones_mask(table, len(k))
    if config.loss_mode == "dataset_aware_grl_cd":
        return crossing_dropout_mask(table, k, config.cd_p, prng)
    return dataset_mask(table, k)


def train_step(state: TrainState, batch, config: TrainConfig, table: ClassTable) -> tuple[TrainState, dict]:
    """One forward/backward/momentum update. Mutates and returns ``state``."""
    X, y, k = batch
    step = state.step
    stage = stage_at(config, step)
    lr = lr_at(config, step)
    masks = build_masks(config, table, k, state.prng)
    trace = model.forward(state.params, X, y)
    res = model.backward(state.params, trace, y, k, masks, stage)

    arrays = state.params.named_arrays()
    for name, g in res.grads.items():
        buf = state.buffers[name]
        buf *= config.momentum
        buf += g
        arrays[name] -= lr * buf
    state.step = step + 1
    metrics = {"step": step, "stage": stage, "loss_cls": res.loss_cls, "loss_d": res.loss_d, "lr": lr}
    return state, metrics


def batch_indices(config: TrainConfig, n: int, step: int) -> np.ndarray:
    """Rows of the training split used at ``step``.

    Each epoch is a fresh seeded permutation, so the batch depends only on
    (seed, step) and a resumed run sees the same data as an unbroken one.
    """
    bs = min(config.batch_size, n)
    per_epoch = n // bs
    epoch, pos = divmod(step, per_epoch)
    perm = Prng((config.seed, 1, epoch)).permutation(n)
    return perm[pos * bs : (pos + 1) * bs]


def train(
    config: TrainConfig,
    corpus: SyntheticCorpus,
    state: TrainState | None = None,
    until_step: int | None = None,
    on_metrics: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on the corpus' training split.

    ``state`` resumes from a checkpoint; ``until_step`` stops early (used to
    produce intermediate checkpoints). Metrics are emitted every
    ``config.log_every`` steps and on the final step.
    """
    config.validate()
    data = corpus.train_split() if corpus.train_idx.size else corpus
    table = corpus.class_table
    if state is None:
        state = init_state(config, data.features.shape[1], table)
    p = state.params
    if p.class_w.shape[0] != table.num_classes or p.input_dim != data.features.shape[1]:
        raise ValueError("model shape does not match corpus (class count or input width)")
    if config.uses_grl and p.domain_w is not None and p.domain_w.shape[0] != table.num_datasets:
        raise ValueError("dataset classifier size does not match corpus dataset count")
    if len(data) == 0:
        raise ValueError("empty training split")

    end = config.total_steps if until_step is None else min(until_step, config.total_steps)
    metrics, history = [], []
    t0 = time.perf_counter()
    while state.step < end:
        idx = batch_indices(config, len(data), state.step)
        batch = (data.features[idx], data.local_class[idx], data.dataset_id[idx])
        state, m = train_step(state, batch, config, table)
        history.append(m["loss_cls"])
        if m["step"] % config.log_every == 0 or state.step == config.total_steps:
            m["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
            metrics.append(m)
            if on_metrics is not None:
                on_metrics(m)
    logger.debug("trained %s to step %d", config.loss_mode, state.step)
    return TrainResult(state.params, state, metrics, np.asarray(history))
