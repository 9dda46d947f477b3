"""Motif-dictionary latent space.

A molecule description (:class:`MotifSpec`) is one scaffold plus small
multisets of functional groups and halogen modifiers. Each vocabulary item owns
a unit vector in R^d; a spec's latent is the sum of its items' vectors plus
isotropic noise. Decoding is greedy matching pursuit against the dictionary and
always returns a spec that :func:`realize` can turn into a valid molecule.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .molgraph import Atom, Bond, MolGraph, parse_smiles

SCAFFOLDS = ("benzene", "pyridine", "pyrimidine", "naphthalene", "cyclohexane", "furan", "pyrrole", "thiophene")
GROUPS = ("nitro", "phosphate", "amide", "hydroxyl", "methyl", "carboxyl", "amine", "nitrile", "sulfonyl")
MODIFIERS = ("fluorine", "chlorine", "bromine", "iodine")
VOCAB = SCAFFOLDS + GROUPS + MODIFIERS
TOKEN_INDEX = {tok: i for i, tok in enumerate(VOCAB)}

MAX_GROUPS = 3
MAX_MODIFIERS = 3
MAX_SPEC_ATOMS = 30

# template SMILES and the atoms that may carry a substituent, lowest index first
SCAFFOLD_TEMPLATES: dict[str, tuple[str, tuple[int, ...]]] = {
    "benzene": ("c1ccccc1", (0, 1, 2, 3, 4, 5)),
    "pyridine": ("c1ccncc1", (0, 1, 2, 4, 5)),
    "pyrimidine": ("c1cncnc1", (0, 1, 3, 5)),
    "naphthalene": ("c1ccc2ccccc2c1", (0, 1, 2, 4, 5, 6, 7, 9)),
    "cyclohexane": ("C1CCCCC1", (0, 1, 2, 3, 4, 5)),
    "furan": ("c1ccoc1", (0, 1, 2, 4)),
    "pyrrole": ("c1cc[nH]c1", (0, 1, 2, 4)),
    "thiophene": ("c1ccsc1", (0, 1, 2, 4)),
}

# substituent fragments written as if bonded to a carbon; the first atom attaches
FRAGMENTS: dict[str, str] = {
    "nitro": "[N+](=O)[O-]",
    "phosphate": "OP(=O)(O)O",
    "amide": "C(=O)N",
    "hydroxyl": "O",
    "methyl": "C",
    "carboxyl": "C(=O)O",
    "amine": "N",
    "nitrile": "C#N",
    "sulfonyl": "S(=O)(=O)C",
    "fluorine": "F",
    "chlorine": "Cl",
    "bromine": "Br",
    "iodine": "I",
}


class CodecError(ValueError):
    pass


class NoFreeAttachmentSite(CodecError):
    pass


class UnknownComponentToken(CodecError):
    pass


def granularity(token: str) -> str:
    if token in SCAFFOLDS:
        return "large"
    if token in GROUPS:
        return "medium"
    if token in MODIFIERS:
        return "small"
    raise UnknownComponentToken(token)


def _sorted_tokens(tokens: Iterable[str], vocab: Sequence[str]) -> tuple[str, ...]:
    tokens = tuple(tokens)
    for tok in tokens:
        if tok not in vocab:
            raise UnknownComponentToken(tok)
    return tuple(sorted(tokens, key=vocab.index))


@dataclass(frozen=True)
class MotifSpec:
    scaffold: str
    groups: tuple[str, ...] = ()
    modifiers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.scaffold not in SCAFFOLDS:
            raise UnknownComponentToken(self.scaffold)
        object.__setattr__(self, "groups", _sorted_tokens(self.groups, GROUPS))
        object.__setattr__(self, "modifiers", _sorted_tokens(self.modifiers, MODIFIERS))

    @property
    def components(self) -> tuple[str, ...]:
        return (self.scaffold,) + self.groups + self.modifiers

    def bag(self) -> np.ndarray:
        return bag_of_tokens(self.components)

    def n_substituents(self) -> int:
        return len(self.groups) + len(self.modifiers)

    def is_valid(self) -> bool:
        if len(self.groups) > MAX_GROUPS or len(self.modifiers) > MAX_MODIFIERS:
            return False
        if self.n_substituents() > len(SCAFFOLD_TEMPLATES[self.scaffold][1]):
            return False
        return spec_atom_count(self) <= MAX_SPEC_ATOMS

    def __str__(self):
        parts = [self.scaffold, *self.groups, *self.modifiers]
        return "+".join(parts)

    @classmethod
    def parse(cls, text: str) -> "MotifSpec":
        tokens = [t for t in text.split("+") if t]
        if not tokens:
            raise UnknownComponentToken(text)
        groups = [t for t in tokens[1:] if t in GROUPS]
        mods = [t for t in tokens[1:] if t in MODIFIERS]
        if len(groups) + len(mods) != len(tokens) - 1:
            bad = [t for t in tokens[1:] if t not in GROUPS and t not in MODIFIERS]
            raise UnknownComponentToken(bad[0])
        return cls(tokens[0], tuple(groups), tuple(mods))


def bag_of_tokens(tokens: Iterable[str]) -> np.ndarray:
    bag = np.zeros(len(VOCAB))
    for tok in tokens:
        if tok not in TOKEN_INDEX:
            raise UnknownComponentToken(tok)
        bag[TOKEN_INDEX[tok]] += 1.0
    return bag


# --------------------------------------------------------------------------
# realization
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _fragment(name: str) -> tuple[tuple[Atom, ...], tuple[tuple[int, int, object], ...]]:
    g = parse_smiles("C" + FRAGMENTS[name])
    atoms = g.atoms[1:]
    bonds = tuple((b.a - 1, b.b - 1, b.order) for b in g.bonds if b.a != 0)
    return atoms, bonds


@lru_cache(maxsize=None)
def _scaffold(name: str) -> MolGraph:
    return parse_smiles(SCAFFOLD_TEMPLATES[name][0])


def spec_atom_count(spec: MotifSpec) -> int:
    n = len(_scaffold(spec.scaffold).atoms)
    for name in spec.groups + spec.modifiers:
        n += len(_fragment(name)[0])
    return n


@lru_cache(maxsize=65536)
def realize(spec: MotifSpec) -> MolGraph:
    """Assemble the molecule: groups then modifiers on the lowest free sites."""
    base = _scaffold(spec.scaffold)
    sites = SCAFFOLD_TEMPLATES[spec.scaffold][1]
    substituents = spec.groups + spec.modifiers
    if len(substituents) > len(sites):
        raise NoFreeAttachmentSite(f"{spec} needs {len(substituents)} sites, {spec.scaffold} has {len(sites)}")
    if len(spec.groups) > MAX_GROUPS or len(spec.modifiers) > MAX_MODIFIERS:
        raise CodecError(f"{spec} exceeds multiset limits")
    atoms = list(base.atoms)
    bonds = list(base.bonds)
    for site, name in zip(sites, substituents):
        host = atoms[site]
        atoms[site] = Atom(host.element, host.aromatic, host.formal_charge, host.explicit_h - 1)
        frag_atoms, frag_bonds = _fragment(name)
        offset = len(atoms)
        atoms.extend(frag_atoms)
        bonds.append(Bond(site, offset))
        bonds.extend(Bond(a + offset, b + offset, order) for a, b, order in frag_bonds)
    if len(atoms) > MAX_SPEC_ATOMS:
        raise CodecError(f"{spec} realizes to {len(atoms)} atoms")
    return MolGraph(tuple(atoms), tuple(bonds))


def _multisets(vocab: Sequence[str], max_size: int, min_size: int = 0) -> list[tuple[str, ...]]:
    out = []
    for k in range(min_size, max_size + 1):
        out.extend(itertools.combinations_with_replacement(vocab, k))
    return out


def enumerate_specs(
    max_groups: int = MAX_GROUPS,
    max_modifiers: int = MAX_MODIFIERS,
    min_groups: int = 0,
    min_modifiers: int = 0,
) -> list[MotifSpec]:
    """Every valid spec of the grammar within the given multiset size bounds."""
    specs = []
    for scaffold in SCAFFOLDS:
        for groups in _multisets(GROUPS, max_groups, min_groups):
            for mods in _multisets(MODIFIERS, max_modifiers, min_modifiers):
                spec = MotifSpec(scaffold, groups, mods)
                if spec.is_valid():
                    specs.append(spec)
    return specs


# --------------------------------------------------------------------------
# dictionary
# --------------------------------------------------------------------------

DICTIONARY_FORMAT = "cogmol-dictionary"
DICTIONARY_VERSION = 1


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm, near-orthogonal embeddings for every vocabulary token."""

    vectors: np.ndarray
    seed: int
    sigma: float = 0.05
    theta: float = 0.4
    max_coherence: float = 0.3
    vocab: tuple[str, ...] = field(default=VOCAB)

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=float)
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        if vecs.shape[0] != len(self.vocab):
            raise CodecError("one vector per vocabulary token required")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def build(
        cls,
        seed: int = 0,
        dim: int = 32,
        sigma: float = 0.05,
        theta: float = 0.4,
        max_coherence: float = 0.3,
        orthogonalize: bool = True,
    ) -> "Dictionary":
        """Seeded Gaussian draws, rejection-resampled to ``max_coherence``.

        With ``orthogonalize`` (and ``dim`` >= vocabulary size) the accepted
        draws are then Gram-Schmidt orthonormalised in vocabulary order, which
        makes greedy decoding exact on the whole grammar.
        """
        rng = np.random.default_rng(seed)
        accepted: list[np.ndarray] = []
        for _ in VOCAB:
            for _attempt in range(100_000):
                v = rng.standard_normal(dim)
                v /= np.linalg.norm(v)
                if all(abs(v @ u) <= max_coherence for u in accepted):
                    accepted.append(v)
                    break
            else:
                raise CodecError(f"could not draw {len(VOCAB)} vectors with coherence {max_coherence} in R^{dim}")
        vecs = np.array(accepted)
        if orthogonalize and dim >= len(VOCAB):
            q, r = np.linalg.qr(vecs.T)
            vecs = (q * np.sign(np.diag(r))).T
        return cls(vecs, seed, sigma, theta, max_coherence)

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[TOKEN_INDEX[token]]

    def coherence(self) -> float:
        gram = self.vectors @ self.vectors.T
        np.fill_diagonal(gram, 0.0)
        return float(np.abs(gram).max())

    def mean(self, spec: MotifSpec) -> np.ndarray:
        return spec.bag() @ self.vectors

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": DICTIONARY_FORMAT,
                "version": DICTIONARY_VERSION,
                "seed": self.seed,
                "dim": self.dim,
                "sigma": self.sigma,
                "theta": self.theta,
                "max_coherence": self.max_coherence,
                "vocab": list(self.vocab),
                "vectors": [[float(x) for x in row] for row in self.vectors],
            },
            indent=1,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Dictionary":
        data = json.loads(text)
        if data.get("format") != DICTIONARY_FORMAT or data.get("version") != DICTIONARY_VERSION:
            raise CodecError("unrecognised dictionary file")
        if tuple(data["vocab"]) != VOCAB:
            raise CodecError("dictionary vocabulary does not match this build")
        return cls(
            np.array(data["vectors"]), data["seed"], data["sigma"], data["theta"], data["max_coherence"], VOCAB
        )

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        return cls.from_json(Path(path).read_text())

    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.vocab).encode()).hexdigest()[:16]


@lru_cache(maxsize=8)
def default_dictionary(seed: int = 0, dim: int = 32, sigma: float = 0.05, theta: float = 0.4) -> Dictionary:
    return Dictionary.build(seed=seed, dim=dim, sigma=sigma, theta=theta)


# --------------------------------------------------------------------------
# encode / decode
# --------------------------------------------------------------------------


def encode(spec: MotifSpec, rng: np.random.Generator | None, dictionary: Dictionary, sigma: float | None = None) -> np.ndarray:
    """Latent for ``spec``: sum of its item vectors plus ``sigma``-scaled noise."""
    sigma = dictionary.sigma if sigma is None else sigma
    g = dictionary.mean(spec)
    if sigma > 0:
        if rng is None:
            raise CodecError("noisy encoding needs an rng")
        g = g + sigma * rng.standard_normal(dictionary.dim)
    return g


def decode(g: np.ndarray, dictionary: Dictionary, theta: float | None = None) -> MotifSpec:
    """Greedy matching pursuit: scaffold by inner product, then groups/modifiers.

    A group or modifier is accepted while subtracting its unit vector lowers
    the squared residual by more than ``theta`` and the scaffold still has a
    free site. Any finite input yields a realizable spec.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (dictionary.dim,) or not np.all(np.isfinite(g)):
        raise CodecError("decode needs a finite vector of the dictionary dimension")
    theta = dictionary.theta if theta is None else theta
    E = dictionary.vectors
    n_scaf = len(SCAFFOLDS)
    scores = E[:n_scaf] @ g
    scaffold = SCAFFOLDS[int(np.argmax(scores))]
    residual = g - E[TOKEN_INDEX[scaffold]]
    capacity = len(SCAFFOLD_TEMPLATES[scaffold][1])
    groups: list[str] = []
    mods: list[str] = []
    sub_vecs = E[n_scaf:]
    while len(groups) + len(mods) < capacity:
        proj = sub_vecs @ residual
        mask = np.ones(len(proj), dtype=bool)
        if len(groups) >= MAX_GROUPS:
            mask[: len(GROUPS)] = False
        if len(mods) >= MAX_MODIFIERS:
            mask[len(GROUPS) :] = False
        if not mask.any():
            break
        proj = np.where(mask, proj, -np.inf)
        k = int(np.argmax(proj))
        if 2.0 * proj[k] - 1.0 <= theta:
            break
        token = VOCAB[n_scaf + k]
        trial = MotifSpec(scaffold, tuple(groups + [token]) if token in GROUPS else tuple(groups),
                          tuple(mods + [token]) if token in MODIFIERS else tuple(mods))
        if not trial.is_valid():
            break
        (groups if token in GROUPS else mods).append(token)
        residual = residual - E[TOKEN_INDEX[token]]
    return MotifSpec(scaffold, tuple(groups), tuple(mods))


def encode_text(segments: Iterable[str], W: np.ndarray | None = None, dim: int = 32) -> np.ndarray:
    """Text condition: the alignment map applied to the component bag.

    ``W`` defaults to the rectangular identity, i.e. the bag padded with zeros.
    """
    bag = bag_of_tokens(segments)
    if W is None:
        W = np.eye(dim, len(VOCAB))
    return W @ bag
