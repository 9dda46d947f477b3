"""Latent diffusion: noise schedule, forward process, denoisers and sampling.

Two denoisers share one interface, ``eps(z, t, cond) -> eps_hat`` over batches
``z`` of shape ``(B, d)``:

* :class:`OracleDenoiser` - the exact posterior-mean denoiser for a Gaussian
  mixture prior over the spec grammar;
* :class:`LearnedDenoiser` - a two-hidden-layer MLP trained on the epsilon
  objective with hand-written backpropagation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .codec import Dictionary, MotifSpec, TOKEN_INDEX, VOCAB, bag_of_tokens


class DiffusionError(ValueError):
    pass


class StepOutOfRange(DiffusionError):
    pass


class EmptyConditionSet(DiffusionError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# schedule and forward process
# --------------------------------------------------------------------------


FINAL_ALPHA_BAR_MAX = 1e-3 + 1e-12  # rounding slack for the one-step cosine schedule


@dataclass(frozen=True, eq=False)
class Schedule:
    """Noise levels ``alpha_bar[t]`` for t = 0..S with ``alpha_bar[0] = 1``."""

    alpha_bar: np.ndarray
    kind: str = "cosine"

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        if ab[0] != 1.0 or np.any(np.diff(ab) >= 0) or ab[-1] <= 0:
            raise DiffusionError("alpha_bar must start at 1 and decrease strictly to a positive value")
        if ab[-1] > FINAL_ALPHA_BAR_MAX:
            raise DiffusionError(f"alpha_bar[S] = {ab[-1]:.3g} leaves too much signal (limit {FINAL_ALPHA_BAR_MAX:g})")

    @property
    def steps(self) -> int:
        return len(self.alpha_bar) - 1

    @classmethod
    def cosine(cls, steps: int = 200, offset: float = 0.008, max_beta: float = 0.999) -> "Schedule":
        if steps < 1:
            raise DiffusionError("steps must be positive")
        f = np.cos((np.arange(steps + 1) / steps + offset) / (1 + offset) * math.pi / 2) ** 2
        betas = np.clip(1 - f[1:] / f[:-1], 0.0, max_beta)
        ab = np.concatenate([[1.0], np.cumprod(1 - betas)])
        return cls(ab, "cosine")

    @classmethod
    def linear(cls, steps: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02, max_beta: float = 0.999) -> "Schedule":
        """Linear betas, given for 1000 steps and rescaled by 1000 / steps."""
        if steps < 1:
            raise DiffusionError("steps must be positive")
        scale = 1000.0 / steps
        betas = np.clip(np.linspace(beta_start * scale, beta_end * scale, steps), 0.0, max_beta)
        betas[-1] = max(betas[-1], min(max_beta, beta_end * scale))
        ab = np.concatenate([[1.0], np.cumprod(1 - betas)])
        return cls(ab, "linear")

    @classmethod
    def from_config(cls, steps: int = 200, kind: str = "cosine") -> "Schedule":
        if kind == "cosine":
            return cls.cosine(steps)
        if kind == "linear":
            return cls.linear(steps)
        raise DiffusionError(f"unknown schedule kind {kind!r}")

    def beta(self, t: int) -> float:
        return 1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]

    def check(self, t: int) -> None:
        if not 0 <= t <= self.steps:
            raise StepOutOfRange(f"step {t} outside [0, {self.steps}]")


def forward_noise(schedule: Schedule, g0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """z_t = sqrt(abar_t) g0 + sqrt(1 - abar_t) eps."""
    schedule.check(t)
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * np.asarray(g0) + math.sqrt(1.0 - ab) * np.asarray(eps)


# --------------------------------------------------------------------------
# conditions and denoisers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Condition:
    """What the denoiser is told about the target.

    ``required`` is a multiset of tokens every admissible spec must contain;
    ``embedding`` is a text vector that reweights admissible specs by cosine
    similarity. Either may be empty.
    """

    required: tuple[str, ...] = ()
    embedding: np.ndarray | None = None

    @classmethod
    def of(cls, tokens: Sequence[str]) -> "Condition":
        return cls(required=tuple(tokens))

    def required_bag(self) -> np.ndarray:
        return bag_of_tokens(self.required)


@dataclass(frozen=True, eq=False)
class ConditionBatch:
    """One condition per block of ``rows`` consecutive latent rows.

    Lets a denoiser serve many prompts in a single call; row block ``i`` is
    conditioned on ``conditions[i]``.
    """

    conditions: tuple[Condition, ...]
    rows: int

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if not self.conditions or self.rows < 1:
            raise DiffusionError("a condition batch needs at least one condition and one row each")

    def __len__(self) -> int:
        return len(self.conditions) * self.rows

    def blocks(self):
        for i, c in enumerate(self.conditions):
            yield slice(i * self.rows, (i + 1) * self.rows), c


class Denoiser(Protocol):
    dim: int

    def eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray: ...


def _as_batch(z: np.ndarray) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


def _check_batch(z: np.ndarray, cond: ConditionBatch) -> None:
    if len(z) != len(cond):
        raise DiffusionError(f"{len(z)} latent rows for a batch of {len(cond)} conditioned rows")


class OracleDenoiser:
    """Closed-form posterior mean under ``sum_i w_i N(mu_i, sigma^2 I)``.

    Components are the specs in ``support``; ``mu_i = counts_i @ basis`` with
    the dictionary as basis. For a condition, components not containing
    ``cond.required`` are dropped and, when ``cond.embedding`` is given, the
    rest are weighted by ``exp(guidance * cos(embedding, mu_i))``.

    ``dtype`` sets the working precision of the responsibility computation;
    float32 roughly halves sampling time at ~1e-6 relative error.
    """

    def __init__(
        self,
        dictionary: Dictionary,
        support: Sequence[MotifSpec],
        sigma: float | None = None,
        guidance: float = 16.0,
        schedule: Schedule | None = None,
        dtype=np.float64,
    ):
        self.dictionary = dictionary
        self.support = tuple(support)
        if not self.support:
            raise EmptyConditionSet("empty support")
        self.sigma = dictionary.sigma if sigma is None else float(sigma)
        self.guidance = float(guidance)
        self.schedule = schedule
        self._setup(np.array([s.bag() for s in self.support], dtype=float), dictionary.vectors, None, dtype)

    def _setup(self, counts, basis, fixed_logw, dtype):
        self.counts = counts
        self.basis = np.asarray(basis, dtype=float)
        self.means = counts @ self.basis
        self.mean_sq = np.einsum("ij,ij->i", self.means, self.means)
        self.mean_norm = np.sqrt(self.mean_sq)
        self._fixed_logw = fixed_logw
        self.dtype = np.dtype(dtype)
        self._basis_t = np.ascontiguousarray(self.basis.T, dtype=self.dtype)
        self._cache: dict = {}

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def from_mixture(
        cls, means: np.ndarray, sigma: float, log_weights: np.ndarray | None = None, schedule: Schedule | None = None
    ) -> "OracleDenoiser":
        """A bare mixture (no dictionary or grammar), for checking the posterior algebra."""
        self = cls.__new__(cls)
        means = np.atleast_2d(np.asarray(means, dtype=float))
        self.dictionary = None
        self.support = ()
        self.sigma = float(sigma)
        self.guidance = 0.0
        self.schedule = schedule
        logw = None if log_weights is None else np.asarray(log_weights, dtype=float)
        self._setup(np.eye(len(means)), means, logw, np.float64)
        return self

    def _log_weights(self, cond: Condition) -> np.ndarray:
        """Unnormalised log prior weight of every component under ``cond``."""
        if self._fixed_logw is not None:
            logw = self._fixed_logw.copy()
        else:
            logw = np.zeros(len(self.counts))
        if cond.required:
            if not self.support:
                raise DiffusionError("a bare mixture has no components to require")
            need = cond.required_bag()
            ok = np.all(self.counts >= need[None, :], axis=1)
            logw[~ok] = -np.inf
        if cond.embedding is not None and self.guidance != 0.0:
            c = np.asarray(cond.embedding, dtype=float)
            if c.shape != (self.dim,):
                raise DiffusionError(f"embedding has shape {c.shape}, expected ({self.dim},)")
            norm = np.linalg.norm(c)
            if norm > 1e-12:
                cos = (self.means @ c) / (np.maximum(self.mean_norm, 1e-12) * norm)
                logw = logw + self.guidance * cos
        if not np.isfinite(logw).any():
            raise EmptyConditionSet(f"no spec in the support contains {cond.required}")
        return logw

    def _active(self, cond: Condition):
        """Components whose prior weight is within e^-60 of the largest.

        Returns ``(idx, lhs, rhs)``: logits are ``[a*z_basis, b, 1] @ lhs`` and
        ``exp(logits) @ rhs`` gives the unnormalised coefficient sums and the
        partition function in its last column.
        """
        key = (cond.required, None if cond.embedding is None else np.asarray(cond.embedding).tobytes())
        hit = self._cache.get(key)
        if hit is None:
            logw = self._log_weights(cond)
            idx = np.flatnonzero(logw > logw.max() - 60.0)
            counts = self.counts[idx]
            lhs = np.vstack([counts.T, self.mean_sq[idx][None, :], logw[idx][None, :]]).astype(self.dtype)
            rhs = np.hstack([counts, np.ones((len(idx), 1))]).astype(self.dtype)
            hit = (idx, np.ascontiguousarray(lhs), np.ascontiguousarray(rhs))
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def _weights(self, z: np.ndarray, alpha_bar: float, cond: Condition):
        idx, lhs, rhs = self._active(cond)
        var = alpha_bar * self.sigma**2 + (1.0 - alpha_bar)
        # log N(z; sqrt(abar) mu, var I) up to terms constant in i
        zb = z.astype(self.dtype, copy=False) @ self._basis_t
        aug = np.empty((len(z), zb.shape[1] + 2), dtype=self.dtype)
        aug[:, :-2] = zb * (math.sqrt(alpha_bar) / var)
        aug[:, -2] = -0.5 * alpha_bar / var
        aug[:, -1] = 1.0
        logits = aug @ lhs
        logits -= logits.max(axis=1, keepdims=True)
        # keep exp() out of the subnormal range, which is very slow in BLAS
        np.maximum(logits, -80.0, out=logits)
        np.exp(logits, out=logits)
        return idx, logits, rhs

    def responsibilities(self, z: np.ndarray, alpha_bar: float, cond: Condition, full: bool = True) -> np.ndarray:
        """Posterior component probabilities given z_t, shape (B, K)."""
        z, _ = _as_batch(z)
        idx, w, _ = self._weights(z, alpha_bar, cond)
        r = w.astype(float) / w.sum(axis=1, keepdims=True, dtype=float)
        if not full:
            return r
        out = np.zeros((len(z), len(self.counts)))
        out[:, idx] = r
        return out

    def posterior_mean_at(self, z: np.ndarray, alpha_bar: float, cond: Condition) -> np.ndarray:
        z, single = _as_batch(z)
        if isinstance(cond, ConditionBatch):
            _check_batch(z, cond)
            out = np.empty_like(z)
            for rows, c in cond.blocks():
                out[rows] = self.posterior_mean_at(z[rows], alpha_bar, c)
            return out
        _, w, rhs = self._weights(z, alpha_bar, cond)
        sums = (w @ rhs).astype(float)
        mix_mean = (sums[:, :-1] / sums[:, -1:]) @ self.basis
        var = alpha_bar * self.sigma**2 + (1.0 - alpha_bar)
        shrink = self.sigma**2 * math.sqrt(alpha_bar) / var
        # E[g0 | z, i] = mu_i + shrink (z - sqrt(abar) mu_i), averaged over i
        out = mix_mean + shrink * (z - math.sqrt(alpha_bar) * mix_mean)
        return out[0] if single else out

    def posterior_mean(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return self.posterior_mean_at(z, float(self._schedule().alpha_bar[t]), cond)

    def _schedule(self) -> Schedule:
        if self.schedule is None:
            raise DiffusionError("oracle needs a schedule to map steps to noise levels")
        return self.schedule

    def eps_at(self, z: np.ndarray, alpha_bar: float, cond: Condition) -> np.ndarray:
        if alpha_bar >= 1.0:
            return np.zeros_like(np.asarray(z, dtype=float))
        x0 = self.posterior_mean_at(z, alpha_bar, cond)
        return (np.asarray(z) - math.sqrt(alpha_bar) * x0) / math.sqrt(1.0 - alpha_bar)

    def eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        sched = self._schedule()
        sched.check(t)
        return self.eps_at(z, float(sched.alpha_bar[t]), cond)


class FactoredOracleDenoiser:
    """The oracle posterior on a product grammar, computed factor by factor.

    The support is every (scaffold, group multiset, modifier multiset)
    combination within the size bounds. With an orthonormal dictionary
    ``|mu|^2`` is a sum over the three factors, so inside each class of specs
    sharing ``|mu|`` both the Gaussian likelihood and the cosine guidance
    split into per-factor terms. Per row and step this costs a few hundred
    exponentials instead of one per spec, and agrees with
    :class:`OracleDenoiser` on the same support to rounding error.
    """

    def __init__(
        self,
        dictionary: Dictionary,
        max_groups: int = 2,
        max_modifiers: int = 2,
        min_groups: int = 1,
        min_modifiers: int = 0,
        sigma: float | None = None,
        guidance: float = 16.0,
        schedule: Schedule | None = None,
    ):
        from .codec import GROUPS, MODIFIERS, SCAFFOLDS, _multisets

        gram = dictionary.vectors @ dictionary.vectors.T
        if not np.allclose(gram, np.eye(len(gram)), atol=1e-9):
            raise DiffusionError("the factored oracle needs an orthonormal dictionary")
        self.dictionary = dictionary
        self.sigma = dictionary.sigma if sigma is None else float(sigma)
        self.guidance = float(guidance)
        self.schedule = schedule
        parts = (
            [(s,) for s in SCAFFOLDS],
            _multisets(GROUPS, max_groups, min_groups),
            _multisets(MODIFIERS, max_modifiers, min_modifiers),
        )
        self.parts = parts
        for scaffold in SCAFFOLDS:
            for groups in parts[1]:
                for mods in parts[2]:
                    if not MotifSpec(scaffold, groups, mods).is_valid():
                        raise DiffusionError(f"{scaffold}+{groups}+{mods} is not a valid spec; support is not a product")
        factors = [np.array([bag_of_tokens(p) for p in part]) for part in parts]
        sq = [np.einsum("ij,ij->i", f, f) for f in factors]
        # classes of equal |mu|^2: every combination of per-factor squared norms
        levels = [np.unique(q) for q in sq]
        self.classes = np.array([(a, b, c) for a in levels[0] for b in levels[1] for c in levels[2]])
        self.class_norm = np.sqrt(self.classes.sum(axis=1))
        n_class = len(self.classes)
        # ragged layout: one segment per (factor, class) listing that factor's
        # members whose squared norm matches the class
        self._factor_start = np.cumsum([0] + [len(f) for f in factors])
        self._items = np.vstack(factors)  # all factor members, stacked
        self._item_sq = np.concatenate(sq)
        cols, seg_class, starts = [], [], []
        for k in range(3):
            for c in range(n_class):
                members = np.flatnonzero(sq[k] == self.classes[c, k])
                starts.append(len(cols))
                cols.extend(self._factor_start[k] + members)
                seg_class.append(c)
        self._cols = np.array(cols)
        self._starts = np.array(starts)
        lengths = np.diff(np.append(self._starts, len(cols)))
        self._col_seg = np.repeat(np.arange(len(starts)), lengths)
        self._col_class = np.array(seg_class)[self._col_seg]
        self._col_items = self._items[self._cols]
        self._col_items_t = np.ascontiguousarray(self._col_items.T)
        self._col_sq = self._item_sq[self._cols]
        # segment indicator, so segment broadcasts and sums are small matmuls
        self._seg_ind = np.zeros((len(starts), len(cols)))
        self._seg_ind[self._col_seg, np.arange(len(cols))] = 1.0
        self._seg_ind_t = np.ascontiguousarray(self._seg_ind.T)
        self._basis_t = np.ascontiguousarray(dictionary.vectors.T)
        self._cache: dict = {}
        self._support = None

    @property
    def dim(self) -> int:
        return self.dictionary.dim

    @property
    def support(self) -> tuple[MotifSpec, ...]:
        """Specs in the order used by :meth:`responsibilities`."""
        if self._support is None:
            self._support = tuple(
                MotifSpec(s[0], g, m) for s in self.parts[0] for g in self.parts[1] for m in self.parts[2]
            )
        return self._support

    def _offsets(self, cond: Condition) -> np.ndarray:
        """Log prior weight of every ragged column (member within class)."""
        key = (cond.required, None if cond.embedding is None else np.asarray(cond.embedding).tobytes())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        off = np.zeros(len(self._items))
        if cond.required:
            need = cond.required_bag()
            if np.any(need[~self._items.any(axis=0)] > 0):
                raise EmptyConditionSet(f"no spec in the support contains {cond.required}")
            for k in range(3):
                lo, hi = self._factor_start[k], self._factor_start[k + 1]
                f = self._items[lo:hi]
                used = f.any(axis=0)
                ok = np.all(f[:, used] >= need[None, used], axis=1)
                if not ok.any():
                    raise EmptyConditionSet(f"no spec in the support contains {cond.required}")
                off[lo:hi][~ok] = -np.inf
        col_off = off[self._cols]
        if cond.embedding is not None and self.guidance != 0.0:
            c = np.asarray(cond.embedding, dtype=float)
            if c.shape != (self.dim,):
                raise DiffusionError(f"embedding has shape {c.shape}, expected ({self.dim},)")
            norm = np.linalg.norm(c)
            if norm > 1e-12:
                u = self._items @ (self.dictionary.vectors @ c) / norm
                col_off = col_off + self.guidance / self.class_norm[self._col_class] * u[self._cols]
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = col_off
        return col_off

    def _column_weights(self, z: np.ndarray, alpha_bar: float, cond):
        """Posterior weight of every ragged column, shape (B, L).

        Summing a factor's columns over classes gives each member's marginal
        posterior probability.
        """
        if isinstance(cond, ConditionBatch):
            _check_batch(z, cond)
            off = np.stack([self._offsets(c) for c in cond.conditions])
        else:
            off = self._offsets(cond)[None]
        var = alpha_bar * self.sigma**2 + (1.0 - alpha_bar)
        a = math.sqrt(alpha_bar) / var
        b = 0.5 * alpha_bar / var
        x = (z @ self._basis_t) @ (a * self._col_items_t)
        x -= b * self._col_sq[None, :]
        blocks = off.shape[0]
        x.reshape(blocks, -1, x.shape[1])[...] += off[:, None, :]
        m = np.maximum.reduceat(x, self._starts, axis=1)
        m[~np.isfinite(m)] = 0.0
        x -= m @ self._seg_ind
        np.exp(x, out=x)
        s = x @ self._seg_ind_t
        with np.errstate(divide="ignore"):
            log_seg = np.log(s) + m
        n_class = len(self.classes)
        log_class = log_seg.reshape(len(z), 3, n_class).sum(axis=1)
        log_class -= log_class.max(axis=1, keepdims=True)
        pc = np.exp(log_class)
        pc /= pc.sum(axis=1, keepdims=True)
        scale = np.divide(pc[:, np.arange(len(self._starts)) % n_class], s, out=np.zeros_like(s), where=s > 0)
        x *= scale @ self._seg_ind
        return x

    def responsibilities(self, z: np.ndarray, alpha_bar: float, cond: Condition, full: bool = True) -> np.ndarray:
        """Posterior probability of every spec in :attr:`support`, shape (B, N)."""
        z, _ = _as_batch(z)
        w = self._column_weights(z, alpha_bar, cond)
        n_class = len(self.classes)
        sizes = np.diff(self._factor_start)
        out = None
        # joint = sum_c p(c) prod_k p(member_k | c); rebuild dense per-class factor tables
        seg = 0
        tables = []
        pc = None
        for k in range(3):
            t = np.zeros((len(z), n_class, sizes[k]))
            for c in range(n_class):
                lo = self._starts[seg]
                hi = self._starts[seg + 1] if seg + 1 < len(self._starts) else len(self._cols)
                t[:, c, self._cols[lo:hi] - self._factor_start[k]] = w[:, lo:hi]
                seg += 1
            tables.append(t)
        pc = tables[0].sum(axis=2)
        cond_tables = [np.divide(t, pc[:, :, None], out=np.zeros_like(t), where=pc[:, :, None] > 0) for t in tables]
        out = np.einsum("rc,rcs,rcg,rcm->rsgm", pc, *cond_tables)
        return out.reshape(len(z), -1)

    def posterior_mean_at(self, z: np.ndarray, alpha_bar: float, cond: Condition) -> np.ndarray:
        z, single = _as_batch(z)
        w = self._column_weights(z, alpha_bar, cond)
        # each factor's columns sum to one, so w @ items is the expected bag
        mix_mean = (w @ self._col_items) @ self.dictionary.vectors
        var = alpha_bar * self.sigma**2 + (1.0 - alpha_bar)
        shrink = self.sigma**2 * math.sqrt(alpha_bar) / var
        out = mix_mean + shrink * (z - math.sqrt(alpha_bar) * mix_mean)
        return out[0] if single else out

    def posterior_mean(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return self.posterior_mean_at(z, float(self._schedule().alpha_bar[t]), cond)

    def _schedule(self) -> Schedule:
        if self.schedule is None:
            raise DiffusionError("oracle needs a schedule to map steps to noise levels")
        return self.schedule

    def eps_at(self, z: np.ndarray, alpha_bar: float, cond: Condition) -> np.ndarray:
        if alpha_bar >= 1.0:
            return np.zeros_like(np.asarray(z, dtype=float))
        x0 = self.posterior_mean_at(z, alpha_bar, cond)
        return (np.asarray(z) - math.sqrt(alpha_bar) * x0) / math.sqrt(1.0 - alpha_bar)

    def eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        sched = self._schedule()
        sched.check(t)
        return self.eps_at(z, float(sched.alpha_bar[t]), cond)


# --------------------------------------------------------------------------
# learned denoiser
# --------------------------------------------------------------------------


def time_features(t: np.ndarray, steps: int, n: int = 16) -> np.ndarray:
    """Sinusoidal features of t / steps, shape (B, n)."""
    t = np.asarray(t, dtype=float).reshape(-1, 1) / steps
    freqs = np.pi * 2.0 ** np.arange(n // 2)[None, :] / 2.0
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)], axis=1)


def _silu(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x))  # logistic sigmoid without exp overflow
    return x * s, s


@dataclass(eq=False)
class LearnedDenoiser:
    """eps_theta(z, t, c) = MLP([z, phi(t), c]) with two SiLU hidden layers."""

    params: dict[str, np.ndarray]
    dim: int
    steps: int
    n_time: int = 16
    seed: int = 0
    config: dict = field(default_factory=dict)

    @classmethod
    def init(cls, dim: int, steps: int, width: int = 128, n_time: int = 16, seed: int = 0) -> "LearnedDenoiser":
        rng = np.random.default_rng(seed)
        n_in = 2 * dim + n_time

        def dense(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) * math.sqrt(1.0 / fan_in)

        params = {
            "W1": dense(n_in, width),
            "b1": np.zeros(width),
            "W2": dense(width, width),
            "b2": np.zeros(width),
            "W3": dense(width, dim) * 0.1,
            "b3": np.zeros(dim),
        }
        return cls(params, dim, steps, n_time, seed, {"width": width})

    def _inputs(self, z, t, c):
        z, _ = _as_batch(z)
        t = np.broadcast_to(np.asarray(t), (len(z),))
        c = np.broadcast_to(np.asarray(c, dtype=float), z.shape)
        return np.concatenate([z, time_features(t, self.steps, self.n_time), c], axis=1)

    def forward(self, x: np.ndarray, params: dict | None = None):
        p = self.params if params is None else params
        a1 = x @ p["W1"] + p["b1"]
        h1, s1 = _silu(a1)
        a2 = h1 @ p["W2"] + p["b2"]
        h2, s2 = _silu(a2)
        out = h2 @ p["W3"] + p["b3"]
        return out, (x, a1, h1, s1, a2, h2, s2)

    def predict(self, z, t, c) -> np.ndarray:
        z_arr = np.asarray(z)
        out, _ = self.forward(self._inputs(z, t, c))
        return out[0] if z_arr.ndim == 1 else out

    def eps(self, z: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        if cond.embedding is None:
            raise DiffusionError("the learned denoiser is conditioned on a text embedding")
        return self.predict(z, t, cond.embedding)

    def loss_and_grad(self, x: np.ndarray, target: np.ndarray, params: dict | None = None):
        """Mean squared error (mean over batch and dims) and its parameter gradients."""
        p = self.params if params is None else params
        out, (x, a1, h1, s1, a2, h2, s2) = self.forward(x, p)
        diff = out - target
        n = diff.size
        loss = float(np.sum(diff**2) / n)
        d_out = 2.0 * diff / n
        grads = {"W3": h2.T @ d_out, "b3": d_out.sum(axis=0)}
        d_h2 = d_out @ p["W3"].T
        d_a2 = d_h2 * (s2 * (1.0 + a2 * (1.0 - s2)))
        grads["W2"] = h1.T @ d_a2
        grads["b2"] = d_a2.sum(axis=0)
        d_h1 = d_a2 @ p["W2"].T
        d_a1 = d_h1 * (s1 * (1.0 + a1 * (1.0 - s1)))
        grads["W1"] = x.T @ d_a1
        grads["b1"] = d_a1.sum(axis=0)
        return loss, grads

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "cogmol-learned-denoiser",
                "version": 1,
                "dim": self.dim,
                "steps": self.steps,
                "n_time": self.n_time,
                "seed": self.seed,
                "config": self.config,
                "params": {k: v.tolist() for k, v in self.params.items()},
            }
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "LearnedDenoiser":
        data = json.loads(Path(path).read_text())
        if data.get("format") != "cogmol-learned-denoiser":
            raise DiffusionError("not a learned-denoiser file")
        params = {k: np.array(v) for k, v in data["params"].items()}
        return cls(params, data["dim"], data["steps"], data["n_time"], data["seed"], data["config"])


@dataclass
class DenoiserTrainConfig:
    width: int = 128
    lr: float = 2e-3
    steps: int = 6000
    batch_size: int = 256
    seed: int = 0
    n_time: int = 16
    lr_decay: float = 0.1  # final lr as a fraction of the initial one


def make_eps_batch(schedule: Schedule, g0: np.ndarray, cond: np.ndarray, rng: np.random.Generator, size: int):
    """Draw (network input pieces, eps target) for the epsilon objective."""
    idx = rng.integers(0, len(g0), size)
    t = rng.integers(1, schedule.steps + 1, size)
    eps = rng.standard_normal((size, g0.shape[1]))
    ab = schedule.alpha_bar[t][:, None]
    z = np.sqrt(ab) * g0[idx] + np.sqrt(1 - ab) * eps
    return z, t, cond[idx], eps


def train_denoiser(
    g0: np.ndarray,
    cond: np.ndarray,
    schedule: Schedule,
    config: DenoiserTrainConfig | None = None,
    log_every: int = 0,
) -> LearnedDenoiser:
    """Fit the epsilon-prediction MSE with Adam on analytic gradients.

    ``g0`` holds clean latents (N, d) and ``cond`` their text embeddings (N, d).
    """
    config = config or DenoiserTrainConfig()
    g0 = np.asarray(g0, dtype=float)
    cond = np.asarray(cond, dtype=float)
    model = LearnedDenoiser.init(g0.shape[1], schedule.steps, config.width, config.n_time, config.seed)
    model.config.update(vars(config))
    rng = np.random.default_rng(config.seed + 1)
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    for step in range(1, config.steps + 1):
        z, t, c, target = make_eps_batch(schedule, g0, cond, rng, config.batch_size)
        x = model._inputs(z, t, c)
        loss, grads = model.loss_and_grad(x, target)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {step}")
        lr = config.lr * (config.lr_decay ** (step / config.steps))
        for k in model.params:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            mhat = m[k] / (1 - b1**step)
            vhat = v[k] / (1 - b2**step)
            model.params[k] = model.params[k] - lr * mhat / (np.sqrt(vhat) + eps_adam)
        if log_every and step % log_every == 0:
            print(f"step {step} loss {loss:.4f}")
    return model


def eps_mse(denoiser: Denoiser, schedule: Schedule, z, t, conds: Sequence[Condition], eps) -> float:
    """Mean squared epsilon error over an explicit evaluation set."""
    err = 0.0
    for k in range(len(z)):
        pred = denoiser.eps(z[k], int(t[k]), conds[k])
        err += float(np.sum((pred - eps[k]) ** 2))
    return err / np.asarray(eps).size


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def _normal(rng, shape: tuple[int, int]) -> np.ndarray:
    """Standard normal draws; a list of generators fills equal row blocks in turn."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    rows, dim = shape
    if rows % len(rng):
        raise DiffusionError(f"{rows} rows do not split over {len(rng)} generators")
    per = rows // len(rng)
    return np.concatenate([g.standard_normal((per, dim)) for g in rng])


def sample(
    denoiser: Denoiser,
    schedule: Schedule,
    cond: Condition,
    t_start: int | None = None,
    init: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    n: int | None = None,
    variance: str = "ddpm",
    checkpoints: Sequence[int] = (),
):
    """Ancestral sampling from step ``t_start`` down to 0.

    With ``init`` the given clean latent(s) are first re-noised to level
    ``t_start`` (warm start); otherwise sampling starts from N(0, I) with
    ``n`` rows (a single vector when ``n`` is None). ``variance`` is
    ``"ddpm"`` (posterior variance) or ``"ddim"`` (deterministic update).
    ``rng`` may be a list of generators, one per block of rows (used with a
    :class:`ConditionBatch` so every prompt keeps its own random stream).
    When ``checkpoints`` is non-empty, returns ``(g, {t: z_t})`` as well.
    """
    if rng is None:
        raise DiffusionError("sample needs an explicit rng")
    S = schedule.steps
    t_start = S if t_start is None else int(t_start)
    schedule.check(t_start)
    if variance not in ("ddpm", "ddim"):
        raise DiffusionError(f"unknown variance mode {variance!r}")
    dim = denoiser.dim
    if init is not None:
        z, single = _as_batch(np.array(init, dtype=float))
        if t_start > 0:
            z = forward_noise(schedule, z, t_start, _normal(rng, z.shape))
    else:
        single = n is None
        z = _normal(rng, (1 if n is None else n, dim))
    snaps: dict[int, np.ndarray] = {}
    wanted = set(checkpoints)
    if t_start in wanted:
        snaps[t_start] = z.copy()
    ab = schedule.alpha_bar
    for t in range(t_start, 0, -1):
        eps_hat = denoiser.eps(z, t, cond)
        x0 = (z - math.sqrt(1 - ab[t]) * eps_hat) / math.sqrt(ab[t])
        if variance == "ddim":
            z = math.sqrt(ab[t - 1]) * x0 + math.sqrt(1 - ab[t - 1]) * eps_hat
        else:
            beta = 1 - ab[t] / ab[t - 1]
            c0 = math.sqrt(ab[t - 1]) * beta / (1 - ab[t])
            ct = math.sqrt(1 - beta) * (1 - ab[t - 1]) / (1 - ab[t])
            z = c0 * x0 + ct * z
            if t > 1:
                var = (1 - ab[t - 1]) / (1 - ab[t]) * beta
                z = z + math.sqrt(var) * _normal(rng, z.shape)
        if t - 1 in wanted:
            snaps[t - 1] = z.copy()
    out = z[0] if single else z
    if checkpoints:
        return out, {t: (s[0] if single else s) for t, s in snaps.items()}
    return out
