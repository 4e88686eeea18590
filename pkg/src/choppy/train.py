"""Expected-metric loss, Adam, and the mini-batch training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .metrics import F1
from .model import (
    CutDistribution,
    ModelConfig,
    ModelParams,
    batch_scores,
    check_params,
    forward_batch,
    init_params,
    predict_many,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """A loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    metric: str = F1
    # fraction of the training queries held out for early stopping; 0 disables it
    val_fraction: float = 0.0
    patience: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


def expected_metric_loss(o, c) -> Tensor:
    """-sum_i o_i C_i.

    ``o`` may be a :class:`CutDistribution`, a Tensor (the loss is then
    differentiable under a tape) or a plain array; ``c`` is a constant of the
    same shape. Batched inputs ``[B, n]`` give the mean of the per-example
    losses.
    """
    c = np.asarray(c, dtype=np.float64)
    if isinstance(o, CutDistribution):
        o = o.o[:o.valid_len]
    o_shape = o.shape if isinstance(o, Tensor) else np.shape(o)
    if tuple(o_shape) != c.shape:
        raise ValueError(f"distribution length {o_shape} != metric vector length {c.shape}")
    per_example = 1 if c.ndim < 2 else c.shape[0]
    return T.mul(T.total(T.mul(o, c)), -1.0 / per_example)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: ModelParams, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        # params hold fresh arrays after each step so earlier snapshots stay valid
        p.data = p.data - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def loss_and_grads(params: ModelParams, model_config: ModelConfig, score_lists: Sequence,
                   metric_vectors: Sequence) -> tuple[float, dict, np.ndarray]:
    """Batch-mean expected-metric loss, gradients by name, and the cut distributions."""
    S, mask = batch_scores(score_lists, model_config)
    C = np.zeros(S.shape)
    for b, c in enumerate(metric_vectors):
        C[b, :len(c)] = c
    for p in params.values():
        p.zero_grad()
    with T.GradientTape() as tape:
        o = forward_batch(S, mask, model_config, params)
        loss = expected_metric_loss(o, C)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    tape.backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for k, p in params.items()}
    return value, grads, o.data


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_metric: float
    val_metric: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in self.__dict__.items() if v is not None})


@dataclass
class TrainResult:
    params: ModelParams
    log: list
    steps: int


def _metric_at_argmax(o: np.ndarray, metric_vectors: Sequence) -> list:
    out = []
    for b, c in enumerate(metric_vectors):
        k = int(np.argmax(o[b, :len(c)]))
        out.append(float(c[k]))
    return out


def train(examples: Sequence, model_config: ModelConfig, train_config: TrainConfig,
          params: Optional[ModelParams] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None,
          max_steps: Optional[int] = None) -> TrainResult:
    """Fit the cut transformer on ``examples``.

    Each example needs ``scores`` and a ``metric(kind)`` method returning its
    cached metric vector. The example order is reshuffled every epoch with a
    generator seeded from ``train_config.seed``; the last short batch is kept.
    """
    if not examples:
        raise ValueError("cannot train on an empty dataset")
    if params is None:
        params = init_params(model_config)
    check_params(model_config, params)
    kind = train_config.metric
    rng = np.random.default_rng(train_config.seed)

    examples = list(examples)
    val: list = []
    if train_config.val_fraction > 0:
        order = rng.permutation(len(examples))
        n_val = max(1, int(round(train_config.val_fraction * len(examples))))
        if n_val >= len(examples):
            raise ValueError("validation split leaves no training examples")
        val = [examples[i] for i in order[:n_val]]
        examples = [examples[i] for i in order[n_val:]]

    scores = [ex.scores for ex in examples]
    cvecs = [ex.metric(kind) for ex in examples]
    state = AdamState.for_params(params)
    log: list[EpochRecord] = []
    best_val, best_params, stale = -math.inf, None, 0
    steps = 0
    bs = train_config.batch_size

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(examples))
        losses, hits, weights = [], [], []
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            value, grads, o = loss_and_grads(
                params, model_config, [scores[i] for i in idx], [cvecs[i] for i in idx])
            adam_step(params, grads, state, train_config)
            steps += 1
            losses.append(value)
            weights.append(len(idx))
            hits.extend(_metric_at_argmax(o, [cvecs[i] for i in idx]))
            if max_steps is not None and steps >= max_steps:
                break
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.average(losses, weights=weights)),
            train_metric=float(np.mean(hits)),
        )
        if val:
            record.val_metric = evaluate_metric(val, model_config, params, kind)
        log.append(record)
        logger.info("epoch %d loss %.6f train %s %.4f", epoch, record.loss, kind,
                    record.train_metric)
        if on_epoch is not None:
            on_epoch(record)
        if max_steps is not None and steps >= max_steps:
            break
        if val:
            if record.val_metric > best_val:
                best_val, stale = record.val_metric, 0
                best_params = {k: p.data.copy() for k, p in params.items()}
            else:
                stale += 1
                if stale >= train_config.patience:
                    logger.info("early stop after epoch %d", epoch)
                    break

    if best_params is not None:
        for k, arr in best_params.items():
            params[k].data = arr
    return TrainResult(params=params, log=log, steps=steps)


def evaluate_metric(examples: Sequence, model_config: ModelConfig, params: ModelParams,
                    kind: str, batch_size: int = 64) -> float:
    """Mean metric at the predicted cut over ``examples``."""
    dists = predict_many([ex.scores for ex in examples], model_config, params, batch_size)
    vals = [float(ex.metric(kind)[dist.argmax() - 1]) for ex, dist in zip(examples, dists)]
    return float(np.mean(vals))
