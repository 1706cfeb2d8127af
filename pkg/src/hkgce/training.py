"""Composite loss and minibatch training loop for the HRQE estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .augment import AugmentedExample, augment_queryset
from .autodiff import ParamStore, Tensor
from .evaluate import evaluate, hrqe_estimator
from .hrqe import Hrqe
from .query import Query
from .store import Hkg


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    n_add: int = 2
    n_remove: int = 2
    train_fraction: float = 0.6
    init_decoder_bias: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")


def split_queryset(queries: Sequence[Query], rng: np.random.Generator,
                   fraction: float = 0.6) -> tuple[list[Query], list[Query]]:
    order = rng.permutation(len(queries))
    cut = int(round(fraction * len(queries)))
    return [queries[i] for i in order[:cut]], [queries[i] for i in order[cut:]]


def training_loss(model: Hrqe, batch: Sequence[AugmentedExample],
                  params: Optional[ParamStore] = None) -> Tensor:
    """Mean over the batch of squared log error plus the two ranking hinges.

    Per query: ``(t - pred)^2 + mean_add relu(pred' - t) + mean_rm relu(t - pred')``
    with ``t = ln card``; an empty variant set contributes 0.
    """
    if not batch:
        raise ValueError("empty batch")
    graphs = [ex.query for ex in batch]
    add_owner, rm_owner = [], []
    for i, ex in enumerate(batch):
        graphs.extend(ex.adds)
        add_owner.extend([i] * len(ex.adds))
    for i, ex in enumerate(batch):
        graphs.extend(ex.removes)
        rm_owner.extend([i] * len(ex.removes))
    pred = model.forward(graphs, params)
    n = len(batch)
    target = np.array([ex.target for ex in batch])

    err = ad.sub(ad.take_rows(pred, np.arange(n)), target)
    total = ad.sum(ad.square(err))
    if add_owner:
        owner = np.array(add_owner)
        idx = n + np.arange(len(owner))
        w = np.array([1.0 / len(batch[i].adds) for i in owner])
        over = ad.relu(ad.sub(ad.take_rows(pred, idx), target[owner]))
        total = ad.add(total, ad.sum(ad.mul(over, w)))
    if rm_owner:
        owner = np.array(rm_owner)
        idx = n + len(add_owner) + np.arange(len(owner))
        w = np.array([1.0 / len(batch[i].removes) for i in owner])
        under = ad.relu(ad.sub(target[owner], ad.take_rows(pred, idx)))
        total = ad.add(total, ad.sum(ad.mul(under, w)))
    return ad.mul(total, 1.0 / n)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    test_q_error: list[float] = field(default_factory=list)
    steps: int = 0


def holdout_q_error(model: Hrqe, queries: Sequence[Query]) -> float:
    if not queries:
        return float("nan")
    return evaluate(queries, hrqe_estimator(model, queries), group_by=()).mean_q_error


def fit(model: Hrqe, examples: Sequence[AugmentedExample], test: Sequence[Query],
        config: TrainConfig, rng: np.random.Generator) -> History:
    if not examples:
        raise ValueError("no training queries")
    if config.init_decoder_bias:
        last = ad.mlp_layers(model.params, "dec") - 1
        model.params[f"dec.b{last}"].data[:] = float(np.mean([ex.target for ex in examples]))
    hist = History()
    n = len(examples)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses, sizes = [], []
        for start in range(0, n, config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            model.params.zero_grad()
            loss = training_loss(model, batch)
            ad.backward(loss)
            model.params.adam_step(config.lr)
            hist.steps += 1
            losses.append(loss.item())
            sizes.append(len(batch))
        model.params.zero_grad()
        hist.train_loss.append(float(np.average(losses, weights=sizes)))
        hist.test_q_error.append(holdout_q_error(model, test))
    return hist


@dataclass
class TrainResult:
    model: Hrqe
    history: History
    train: list[Query]
    test: list[Query]


def train(model: Hrqe, queries: Sequence[Query], hkg: Hkg, config: TrainConfig,
          rng: np.random.Generator) -> TrainResult:
    """Seeded 6:4 split, offline augmentation, then ``fit``."""
    if not queries:
        raise ValueError("empty queryset")
    train_q, test_q = split_queryset(queries, rng, config.train_fraction)
    examples = augment_queryset(train_q, hkg, rng, config.n_add, config.n_remove)
    hist = fit(model, examples, test_q, config, rng)
    return TrainResult(model, hist, train_q, test_q)
