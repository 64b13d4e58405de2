"""Adam, early-stopped epoch loop and the chain-thaw fine-tuning schedule."""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import GROUPS, ModelConfig, Params, copy_params, model_backward, model_forward, predict_proba
from .numcore import ContractError, Rng, cross_entropy
from .textpipe import EncodedDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ContractError("max_epochs must be >= 0")


class Adam:
    """Adam with bias correction and per-group step counters.

    Only the groups passed to :meth:`step` are touched; moments and step
    counts of every other group stay exactly as they were.
    """

    def __init__(self, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.m: dict[str, dict[str, np.ndarray]] = {}
        self.v: dict[str, dict[str, np.ndarray]] = {}
        self.t: dict[str, int] = {}

    def step(self, params: Params, grads: Params, groups: Iterable[str]) -> None:
        for g in groups:
            if g not in grads:
                raise ContractError(f"no gradient for active group {g!r}")
            if g not in self.m:
                self.m[g] = {k: np.zeros_like(v) for k, v in params[g].items()}
                self.v[g] = {k: np.zeros_like(v) for k, v in params[g].items()}
                self.t[g] = 0
            self.t[g] += 1
            t = self.t[g]
            bc1 = 1.0 - self.beta1**t
            bc2 = 1.0 - self.beta2**t
            for k, w in params[g].items():
                grad = grads[g][k]
                if grad.shape != w.shape:
                    raise ContractError(f"gradient shape {grad.shape} != parameter shape {w.shape} for {g}.{k}")
                m, v = self.m[g][k], self.v[g][k]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * (grad * grad)
                w -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    train_loss: float
    val_accuracy: float
    reloaded: bool = False


def write_trace(path: str | Path, trace: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(asdict(rec)) + "\n")


def evaluate_accuracy(params: Params, config: ModelConfig, data: EncodedDataset, batch_size: int = 256) -> float:
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    if data.labels is None:
        raise ContractError("evaluation needs labels")
    pred = predict_proba(data, params, config, batch_size).argmax(axis=1)
    return float((pred == data.labels).mean())


def train_epoch(
    params: Params,
    config: ModelConfig,
    data: EncodedDataset,
    groups: Sequence[str],
    optimizer: Adam,
    batch_size: int,
    rng: Rng,
) -> float:
    """One shuffled pass; returns the mean training loss over batches."""
    order = rng.permutation(len(data))
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        _, probs, cache = model_forward(data.ids[idx], data.mask[idx], params, config, train=True, rng=rng)
        loss, grad_logits = cross_entropy(probs, data.labels[idx])
        grads = model_backward(cache, grad_logits, params, groups)
        optimizer.step(params, grads, groups)
        losses.append(loss)
    return float(np.mean(losses))


class EarlyStopping:
    """Tracks the best validation score; a strict improvement resets patience."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, score: float, epoch: int) -> bool:
        """Record a score; True when it is a new best."""
        if score > self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def fit_until_converged(
    params: Params,
    config: ModelConfig,
    train: EncodedDataset,
    val: EncodedDataset,
    groups: Sequence[str],
    train_config: TrainConfig,
    rng: Rng,
    phase: str = "",
    val_metric: Callable[[Params], float] | None = None,
) -> tuple[Params, list[EpochRecord]]:
    """Train ``groups`` until validation accuracy stops improving.

    Works on a copy of ``params`` and returns the snapshot from the best
    epoch. ``val_metric`` replaces validation accuracy when given.
    With ``max_epochs == 0`` the input parameters come back unchanged.
    """
    if len(train) == 0 or len(val) == 0:
        raise ContractError("train and val must be non-empty")
    groups = tuple(groups)
    if not set(groups) <= set(GROUPS):
        raise ContractError(f"unknown groups {sorted(set(groups) - set(GROUPS))}")
    if val_metric is None:
        val_metric = lambda p: evaluate_accuracy(p, config, val)
    work = copy_params(params)
    best = copy_params(params)
    optimizer = Adam(train_config)
    stopper = EarlyStopping(train_config.patience)
    trace: list[EpochRecord] = []
    for epoch in range(1, train_config.max_epochs + 1):
        loss = train_epoch(work, config, train, groups, optimizer, train_config.batch_size, rng)
        acc = float(val_metric(work))
        trace.append(EpochRecord(phase, epoch, loss, acc))
        log.debug("phase %s epoch %d loss %.4f val_acc %.4f", phase, epoch, loss, acc)
        if stopper.update(acc, epoch):
            best = copy_params(work)
        if stopper.should_stop:
            break
    if trace:
        trace[stopper.best_epoch - 1].reloaded = True
    return best, trace


@dataclass(frozen=True)
class Phase:
    label: str
    groups: frozenset[str] = field(default_factory=frozenset)


def chain_thaw_plan(groups: Sequence[str] = GROUPS) -> list[Phase]:
    """New output layer first, each layer alone from the input side, then everything."""
    groups = tuple(groups)
    if groups != GROUPS:
        raise ContractError(f"expected groups in network order {GROUPS}, got {groups}")
    new_layer = groups[-1]
    plan = [Phase(f"new:{new_layer}", frozenset([new_layer]))]
    plan += [Phase(f"layer:{g}", frozenset([g])) for g in groups]
    plan.append(Phase("all", frozenset(groups)))
    return plan


def chain_thaw_train(
    params: Params,
    config: ModelConfig,
    train: EncodedDataset,
    val: EncodedDataset,
    train_config: TrainConfig,
    rng: Rng,
    plan: Sequence[Phase] | None = None,
    on_phase_end: Callable[[Phase, Params], None] | None = None,
) -> tuple[Params, list[EpochRecord]]:
    """Run :func:`fit_until_converged` once per phase, carrying the best weights.

    Each phase gets a fresh optimizer and its own derived random stream.
    """
    plan = chain_thaw_plan() if plan is None else plan
    trace: list[EpochRecord] = []
    current = params
    for i, phase in enumerate(plan):
        active = [g for g in GROUPS if g in phase.groups]
        current, phase_trace = fit_until_converged(
            current, config, train, val, active, train_config, rng.derive(f"phase{i}"), phase.label
        )
        trace.extend(phase_trace)
        if phase_trace:
            best = max(r.val_accuracy for r in phase_trace)
            log.info("chain-thaw %s: %d epochs, best val acc %.4f", phase.label, len(phase_trace), best)
        if on_phase_end is not None:
            on_phase_end(phase, current)
    return current, trace
