"""Mini-batch training with adaptive moment estimation."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DataError, DivergenceError
from .features import (
    TrainingInstance,
    Vocabulary,
    build_vocabularies,
    encode_instance,
    encode_items,
)
from .model import FitNet, ModelConfig
from .sampling import ItemPool, SamplingPolicy, negative_positions, positive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Adam:
    """Adaptive moment estimation.

    Parameters whose gradient came only from row lookups (embedding tables)
    are updated lazily: only the rows that were looked up in this step have
    their moments and values changed.
    """

    def __init__(self, params: Mapping[str, T.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        if self.lr == 0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr / (1.0 - b1**self.t)
        root_c2 = math.sqrt(1.0 - b2**self.t)
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            rows = p.grad_rows
            if rows is None:
                self.m[k], self.v[k], delta = _moments(self.m[k], self.v[k], g, b1, b2, root_c2, self.eps)
                p.data -= step * delta
            else:
                m, v, delta = _moments(self.m[k][rows], self.v[k][rows], g[rows], b1, b2, root_c2, self.eps)
                self.m[k][rows], self.v[k][rows] = m, v
                p.data[rows] -= step * delta


def _moments(m, v, g, b1, b2, root_c2, eps):
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * (g * g)
    return m, v, m / (np.sqrt(v) / root_c2 + eps)


@dataclass
class UserGroup:
    """Positives that share one user side (profile, itinerary, behaviour)."""

    encoded: object
    positive_indices: list[int] = field(default_factory=list)


def _user_key(inst: TrainingInstance):
    return (
        inst.user_id,
        tuple(sorted(inst.profile.items())),
        inst.itinerary,
        inst.behavior,
        inst.label_intent,
    )


def group_positives(corpus: Sequence[TrainingInstance], vocabs: Mapping[str, Vocabulary]) -> list[UserGroup]:
    groups: dict = {}
    for i, inst in enumerate(corpus):
        key = _user_key(inst)
        if key not in groups:
            groups[key] = UserGroup(encode_instance(inst.with_target(None), vocabs))
        groups[key].positive_indices.append(i)
    return list(groups.values())


@dataclass
class TrainResult:
    model: FitNet
    history: list[float]
    epochs_run: int


class Trainer:
    """Holds the prepared data for one training run."""

    def __init__(
        self,
        corpus: Sequence[TrainingInstance],
        pool: ItemPool,
        model: FitNet,
        policy: SamplingPolicy,
        config: TrainConfig,
    ):
        if not corpus:
            raise DataError("training corpus is empty")
        for inst in corpus:
            if inst.target is None or inst.label_click != 1:
                raise DataError(f"user {inst.user_id}: training corpus must hold positive instances with targets")
        self.corpus = list(corpus)
        self.pool = pool
        self.model = model
        self.policy = policy
        self.config = config
        self.pool_codes = encode_items(pool.items, model.vocabs)
        self.positive_codes = encode_items([inst.target for inst in self.corpus], model.vocabs)
        self.groups = group_positives(self.corpus, model.vocabs)
        self.optimizer = Adam(
            model.named_parameters(), config.learning_rate, config.beta1, config.beta2, config.eps
        )

    def sample_epoch(self, epoch: int) -> list[tuple[UserGroup, np.ndarray, np.ndarray]]:
        """Expand every group with fresh negatives: (group, target codes, click labels)."""
        out = []
        r = self.policy.ratio
        for g in self.groups:
            codes, labels = [], []
            for idx in g.positive_indices:
                neg = negative_positions(self.corpus[idx], self.pool, self.policy, positive_rng(self.policy, epoch, idx))
                codes.append(self.positive_codes[idx][None, :])
                codes.append(self.pool_codes[neg])
                labels.append(np.concatenate([[1.0], np.zeros(r)]))
            out.append((g, np.concatenate(codes), np.concatenate(labels)))
        return out

    def batches(self, epoch: int):
        """Exactly ``batch_size`` instances per batch (the last may be short).

        Users are shuffled, not instances, so a user's instances stay adjacent
        and share one user-tower pass; a user straddling a batch boundary is
        split into two pieces.
        """
        expanded = self.sample_epoch(epoch)
        order = np.random.default_rng(np.random.SeedSequence([self.config.seed, epoch])).permutation(len(expanded))
        size = self.config.batch_size
        batch, room = [], size
        for gi in order:
            group, codes, labels = expanded[gi]
            start = 0
            while start < len(labels):
                take = min(room, len(labels) - start)
                batch.append((group, codes[start : start + take], labels[start : start + take]))
                start += take
                room -= take
                if room == 0:
                    yield batch
                    batch, room = [], size
        if batch:
            yield batch

    def batch_loss(self, batch) -> tuple[T.Tensor, int]:
        n = sum(len(labels) for _, _, labels in batch)
        parts = [self.model.group_loss(g.encoded, codes, labels) for g, codes, labels in batch]
        total = parts[0]
        for p in parts[1:]:
            total = T.add(total, p)
        return T.scale(total, 1.0 / n), n

    def step(self, batch) -> tuple[float, int]:
        self.optimizer.zero_grad()
        loss, n = self.batch_loss(batch)
        T.backward(loss)
        self.optimizer.step()
        return loss.item(), n

    def run(self, on_epoch: Callable[[int, float], None] | None = None) -> list[float]:
        history = []
        for epoch in range(self.config.epochs):
            total, count = 0.0, 0
            for b, batch in enumerate(self.batches(epoch)):
                value, n = self.step(batch)
                if not math.isfinite(value):
                    raise DivergenceError(b, epoch, value)
                for p in self.optimizer.params.values():
                    # a sum is non-finite whenever any entry is (or on overflow, which is divergence too)
                    if not math.isfinite(float(p.data.sum())):
                        raise DivergenceError(b, epoch, float("nan"))
                total += value * n
                count += n
            history.append(total / count)
            logger.info("epoch %d mean loss %.6f", epoch + 1, history[-1])
            if on_epoch is not None:
                on_epoch(epoch + 1, history[-1])
        return history


def train(
    corpus: Sequence[TrainingInstance],
    pool: ItemPool,
    model_config: ModelConfig,
    sampling_policy: SamplingPolicy,
    train_config: TrainConfig,
    vocabs: Mapping[str, Vocabulary] | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train a fresh model; returns the model and the per-epoch mean loss history."""
    if not corpus:
        raise DataError("training corpus is empty")
    if vocabs is None:
        vocabs = build_vocabularies(corpus, pool.items)
    model = FitNet(model_config, vocabs)
    trainer = Trainer(corpus, pool, model, sampling_policy, train_config)
    history = trainer.run(on_epoch)
    if train_config.checkpoint_path:
        from .checkpoint import save_checkpoint

        save_checkpoint(model, train_config.checkpoint_path, {"epoch": len(history), "final_loss": history[-1], "history": history})
    return TrainResult(model, history, len(history))
