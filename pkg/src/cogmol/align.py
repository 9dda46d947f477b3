"""Contrastive alignment of text bags to frozen molecule latents.

Only the text map ``W`` (bag space -> latent space) is trained. The loss is
one-directional with molecule anchors and in-batch negatives:

    L = -(1/B) sum_i log softmax_j( cos(g_i, W b_j) / tau )[i]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import VOCAB, Dictionary, MotifSpec, encode

ALIGN_FORMAT = "cogmol-align"
ALIGN_VERSION = 1
_EPS = 1e-12


class DegenerateEmbedding(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


def _vocab_hash(vocab: Sequence[str] = VOCAB) -> str:
    import hashlib

    return hashlib.sha256("\n".join(vocab).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AlignBatch:
    latents: np.ndarray  # (B, d), frozen molecule side
    bags: np.ndarray  # (B, V) token counts

    def __post_init__(self):
        g = np.asarray(self.latents, dtype=float)
        b = np.asarray(self.bags, dtype=float)
        if g.ndim != 2 or b.ndim != 2 or len(g) != len(b):
            raise ValueError("latents and bags must be 2-d with matching rows")
        if len(g) < 2:
            raise ValueError("a batch needs at least two pairs")
        object.__setattr__(self, "latents", g)
        object.__setattr__(self, "bags", b)

    def __len__(self) -> int:
        return len(self.latents)


@dataclass(frozen=True, eq=False)
class AlignModel:
    W: np.ndarray
    tau: float = 0.1
    seed: int = 0
    vocab_hash: str = field(default_factory=_vocab_hash)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or not np.all(np.isfinite(W)):
            raise ValueError("W must be a finite matrix")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def identity(cls, dim: int = 32, n_tokens: int = len(VOCAB), tau: float = 0.1, seed: int = 0) -> "AlignModel":
        return cls(np.eye(dim, n_tokens), tau=tau, seed=seed)

    def embed(self, bags: np.ndarray) -> np.ndarray:
        return np.asarray(bags, dtype=float) @ self.W.T

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": ALIGN_FORMAT,
                "version": ALIGN_VERSION,
                "tau": self.tau,
                "seed": self.seed,
                "vocab_hash": self.vocab_hash,
                "W": self.W.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "AlignModel":
        obj = json.loads(text)
        if obj.get("format") != ALIGN_FORMAT or obj.get("version") != ALIGN_VERSION:
            raise ValueError("not a version-1 alignment file")
        if obj["vocab_hash"] != _vocab_hash():
            raise ValueError("alignment was trained against a different vocabulary")
        return cls(np.array(obj["W"]), tau=obj["tau"], seed=obj["seed"], vocab_hash=obj["vocab_hash"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "AlignModel":
        return cls.from_json(Path(path).read_text())


def _unit(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(x, axis=1)
    if np.any(n < _EPS):
        raise DegenerateEmbedding(f"{what} row {int(np.argmin(n))} has (near) zero norm")
    return x / n[:, None], n


def contrastive_loss(W: np.ndarray, tau: float, batch: AlignBatch) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to ``W``."""
    W = np.asarray(W, dtype=float)
    g_hat, _ = _unit(batch.latents, "molecule latent")
    c = batch.bags @ W.T
    c_hat, c_norm = _unit(c, "text embedding")
    logits = (g_hat @ c_hat.T) / tau
    logits_max = logits.max(axis=1, keepdims=True)
    p = np.exp(logits - logits_max)
    z = p.sum(axis=1, keepdims=True)
    p /= z
    B = len(batch)
    log_z = np.log(z[:, 0]) + logits_max[:, 0]
    loss = float(np.mean(log_z - np.diag(logits)))
    # dL/dlogits = (P - I)/B; logits = cos/tau
    a = (p - np.eye(B)) / (B * tau)
    d_chat = a.T @ g_hat
    d_c = (d_chat - np.sum(d_chat * c_hat, axis=1, keepdims=True) * c_hat) / c_norm[:, None]
    return loss, d_c.T @ batch.bags


@dataclass(frozen=True)
class AlignConfig:
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    tau: float = 0.1
    seed: int = 0
    init: str = "identity"  # or "random"


def pairs_from_specs(
    specs: Sequence[MotifSpec], dictionary: Dictionary, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(latents, bags) for grammar specs, latents drawn by the codec's encoder."""
    latents = np.array([encode(s, rng, dictionary) for s in specs])
    bags = np.array([s.bag() for s in specs])
    return latents, bags


def train_alignment(
    latents: np.ndarray, bags: np.ndarray, config: AlignConfig = AlignConfig(), log: list | None = None
) -> AlignModel:
    """Plain minibatch gradient descent on W; the latents are never modified.

    If ``log`` is given, the mean loss of every epoch is appended to it.
    """
    latents = np.asarray(latents, dtype=float)
    bags = np.asarray(bags, dtype=float)
    n = len(latents)
    if n < 10:
        raise ValueError("alignment needs at least 10 pairs")
    rng = np.random.default_rng(config.seed)
    dim, vocab = latents.shape[1], bags.shape[1]
    if config.init == "identity":
        W = np.eye(dim, vocab)
    elif config.init == "random":
        W = rng.standard_normal((dim, vocab)) / np.sqrt(vocab)
    else:
        raise ValueError(f"unknown init {config.init!r}")
    bs = max(2, min(config.batch_size, n))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            if len(idx) < 2:
                continue
            loss, grad = contrastive_loss(W, config.tau, AlignBatch(latents[idx], bags[idx]))
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(f"epoch {epoch}: loss={loss}, |grad|={np.linalg.norm(grad)}")
            W = W - config.lr * grad
            losses.append(loss)
        if log is not None:
            log.append(float(np.mean(losses)))
    return AlignModel(W, tau=config.tau, seed=config.seed)


def retrieval_accuracy(model: AlignModel, latents: np.ndarray, bags: np.ndarray) -> float:
    """Fraction of texts whose nearest latent (by cosine) is their own pair."""
    g_hat, _ = _unit(np.asarray(latents, dtype=float), "molecule latent")
    c_hat, _ = _unit(model.embed(bags), "text embedding")
    hits = np.argmax(c_hat @ g_hat.T, axis=1) == np.arange(len(c_hat))
    return float(np.mean(hits))
