"""Conditional VAE that fills in the embedding of a pattern's missing qualifiers.

The condition ``x`` is ``h_s || h_p || h_o || h_QF`` (optionally followed by a
layer index), the target ``y`` is the aggregated embedding of the qualifiers
that are not present.  The recognition network maps ``x || y`` to the mean and
log-variance of ``z``; the generator maps ``x || z`` back to ``y``.  At
inference ``z`` comes from the standard-normal prior, or is 0 in
deterministic mode.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .embeddings import EmbeddingTable
from .store import Hkg

SCHEMES = ("split", "mask", "both")


@dataclass(frozen=True)
class CvaeConfig:
    dim: int
    latent: int = 8
    hidden: int = 64
    layer_feature: bool = False

    def __post_init__(self):
        if self.dim <= 0 or self.latent <= 0 or self.hidden <= 0:
            raise ValueError("dim, latent and hidden must be positive")

    @property
    def x_dim(self) -> int:
        return 4 * self.dim + int(self.layer_feature)


class CompletionPair(NamedTuple):
    x: np.ndarray
    y: np.ndarray


@dataclass
class Cvae:
    config: CvaeConfig
    params: ParamStore

    @classmethod
    def init(cls, config: CvaeConfig, rng: np.random.Generator) -> "Cvae":
        p = ParamStore()
        c = config
        ad.init_mlp(p, "enc", [c.x_dim + c.dim, c.hidden, 2 * c.latent], rng)
        ad.init_mlp(p, "dec", [c.x_dim + c.latent, c.hidden, c.dim], rng)
        return cls(config, p)

    def encode(self, x, y, params: Optional[ParamStore] = None) -> tuple[Tensor, Tensor]:
        params = self.params if params is None else params
        stats = ad.mlp_forward(params, "enc", ad.concat([ad.as_tensor(x), ad.as_tensor(y)]))
        k = self.config.latent
        return ad.columns(stats, 0, k), ad.columns(stats, k, 2 * k)

    def decode(self, x, z, params: Optional[ParamStore] = None) -> Tensor:
        params = self.params if params is None else params
        return ad.mlp_forward(params, "dec", ad.concat([ad.as_tensor(x), ad.as_tensor(z)]))

    def complete(self, x, rng: Optional[np.random.Generator] = None,
                 params: Optional[ParamStore] = None) -> Tensor:
        """Decode with ``z`` from N(0, I), or ``z = 0`` when ``rng`` is None.

        ``x`` may be a tensor, so gradients flow back into the condition.
        """
        x = ad.as_tensor(x)
        shape = x.shape[:-1] + (self.config.latent,)
        z = np.zeros(shape) if rng is None else rng.standard_normal(shape)
        return self.decode(x, z, params)

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.params.state_dict(), {"kind": "cvae", "config": asdict(self.config)})

    @classmethod
    def load(cls, path) -> "Cvae":
        tensors, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "cvae":
            raise ValueError(f"{path} is not a CVAE checkpoint")
        p = ParamStore()
        p.load_state_dict(tensors)
        return cls(CvaeConfig(**meta["config"]), p)


def complete_qualifiers(model: Cvae, x, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    return model.complete(np.asarray(x, dtype=np.float64), rng).data


# -- training pairs -------------------------------------------------------------------------

def aggregate(table: EmbeddingTable, hkg: Hkg, quals: Sequence[tuple[int, int]]) -> np.ndarray:
    """Sum of rotate compositions with identity projection."""
    out = np.zeros(table.dim)
    for qr, qe in quals:
        r = table.lookup(hkg.relation_label(qr))
        e = table.lookup(hkg.entity_label(qe))
        out += ad.rotate(r, e).data
    return out


def build_training_pairs(
    hkg: Hkg,
    table: EmbeddingTable,
    rng: np.random.Generator,
    scheme: str = "both",
    layer_feature: bool = False,
) -> list[CompletionPair]:
    """One pair per qualified fact and scheme.

    ``split`` keeps a random nonempty proper subset of the qualifiers in the
    condition and targets the rest (facts with a single qualifier have no such
    split and are skipped).  ``mask`` zeroes one of s, p, o, drops all
    qualifiers from the condition and targets all of them.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    qualified = [f for f in hkg.facts if f.qualifiers]
    if scheme == "split" and not qualified:
        raise ValueError("store has no qualified facts")
    zero = np.zeros(table.dim)
    tail = [np.zeros(1)] if layer_feature else []
    pairs = []
    for f in qualified:
        hs = table.lookup(hkg.entity_label(f.subject))
        hp = table.lookup(hkg.relation_label(f.predicate))
        ho = table.lookup(hkg.entity_label(f.object))
        if scheme in ("split", "both") and len(f.qualifiers) >= 2:
            n = len(f.qualifiers)
            while True:
                keep = rng.random(n) < 0.5
                if 0 < keep.sum() < n:
                    break
            kept = [q for q, k in zip(f.qualifiers, keep) if k]
            rest = [q for q, k in zip(f.qualifiers, keep) if not k]
            x = np.concatenate([hs, hp, ho, aggregate(table, hkg, kept), *tail])
            pairs.append(CompletionPair(x, aggregate(table, hkg, rest)))
        if scheme in ("mask", "both"):
            atoms = [hs, hp, ho]
            atoms[int(rng.integers(3))] = zero
            x = np.concatenate([*atoms, zero, *tail])
            pairs.append(CompletionPair(x, aggregate(table, hkg, f.qualifiers)))
    return pairs


def stack_pairs(pairs: Sequence[CompletionPair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.x for p in pairs]), np.stack([p.y for p in pairs])


# -- objective ------------------------------------------------------------------------------------

class CvaeLoss(NamedTuple):
    total: Tensor
    kl: Tensor
    recon: Tensor


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    terms = ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), ad.add(logvar, 1.0))
    return ad.mul(ad.sum(terms, axis=-1), 0.5)


def cvae_loss(
    model: Cvae, x, y, rng: Optional[np.random.Generator] = None,
    params: Optional[ParamStore] = None, eps: Optional[np.ndarray] = None,
) -> CvaeLoss:
    """Negative ELBO with one reparameterised sample, averaged over rows.

    ``eps`` overrides the noise draw (used to make finite-difference checks
    deterministic); otherwise it comes from ``rng``.
    """
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    mu, logvar = model.encode(x, y, params)
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = rng.standard_normal(mu.shape)
    z = ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), eps))
    y_hat = model.decode(x, z, params)
    kl = kl_standard_normal(mu, logvar)
    recon = ad.sum(ad.square(ad.sub(y_hat, y)), axis=-1)
    if kl.data.ndim:
        kl, recon = ad.mean(kl), ad.mean(recon)
    return CvaeLoss(ad.add(kl, recon), kl, recon)


@dataclass
class CvaeHistory:
    initial: float
    epoch_loss: list[float] = field(default_factory=list)
    step_kl: list[float] = field(default_factory=list)
    final: float = float("nan")


def evaluate_loss(model: Cvae, X: np.ndarray, Y: np.ndarray, seed: int = 12345) -> float:
    """Negative ELBO on all rows with a fixed noise stream."""
    return cvae_loss(model, X, Y, np.random.default_rng(seed)).total.item()


def train_cvae(
    model: Cvae,
    pairs: Sequence[CompletionPair],
    epochs: int,
    rng: np.random.Generator,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> CvaeHistory:
    if not pairs:
        raise ValueError("no training pairs")
    X, Y = stack_pairs(pairs)
    hist = CvaeHistory(initial=evaluate_loss(model, X, Y))
    n = len(pairs)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            model.params.zero_grad()
            loss = cvae_loss(model, X[idx], Y[idx], rng)
            ad.backward(loss.total)
            model.params.adam_step(lr)
            hist.step_kl.append(loss.kl.item())
            total += loss.total.item() * len(idx)
        hist.epoch_loss.append(total / n)
    model.params.zero_grad()
    hist.final = evaluate_loss(model, X, Y)
    return hist


def completion_mse(model: Cvae, pairs: Sequence[CompletionPair]) -> tuple[float, float]:
    """(MSE of deterministic completion, MSE of the zero predictor)."""
    X, Y = stack_pairs(pairs)
    pred = model.complete(X).data
    return float(np.mean((pred - Y) ** 2)), float(np.mean(Y ** 2))
