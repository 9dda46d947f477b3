"""Substructure-key fingerprints (CoG-Keys-64) and Tanimoto similarity.

Keys are read from the versioned catalog ``data/keys_v1.tsv``. Most keys are
small SMARTS-style patterns matched by exhaustive subgraph search; a handful
are ring-system predicates that are awkward to state as patterns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterator

from .molgraph import BondOrder, MolGraph, validate

KEYSET_VERSION = "CoG-Keys-64 v1"
N_KEYS = 64

ATOMIC_NUMBERS = {"B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "P": 15, "S": 16, "Cl": 17, "Br": 35, "I": 53}


class InvalidMolecule(ValueError):
    pass


class KeySetMismatch(ValueError):
    pass


class PatternError(ValueError):
    pass


# --------------------------------------------------------------------------
# pattern language
# --------------------------------------------------------------------------

AtomPred = Callable[[MolGraph, int], bool]
BondPred = Callable[[MolGraph, int, int, BondOrder], bool]


def _in_ring_of_size(g: MolGraph, i: int, size: int) -> bool:
    return any(len(r) == size and i in r for r in g.rings)


def _total_h(g: MolGraph, i: int) -> int:
    return g.atoms[i].explicit_h


def _element_pred(symbol: str, aromatic: bool | None) -> AtomPred:
    def pred(g, i):
        atom = g.atoms[i]
        return atom.element == symbol and (aromatic is None or atom.aromatic == aromatic)

    return pred


_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC = {"c": "C", "n": "N", "o": "O", "s": "S", "p": "P", "b": "B"}


class _AtomExprParser:
    """Bracket atom expressions: ``!``, implicit/``&`` AND, ``,`` OR, ``;`` AND."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def parse(self) -> AtomPred:
        pred = self._semi()
        if self.pos != len(self.text):
            raise PatternError(f"trailing input in [{self.text}] at {self.pos}")
        return pred

    def _peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _semi(self) -> AtomPred:
        parts = [self._comma()]
        while self._peek() == ";":
            self.pos += 1
            parts.append(self._comma())
        return parts[0] if len(parts) == 1 else (lambda g, i: all(p(g, i) for p in parts))

    def _comma(self) -> AtomPred:
        parts = [self._and()]
        while self._peek() == ",":
            self.pos += 1
            parts.append(self._and())
        return parts[0] if len(parts) == 1 else (lambda g, i: any(p(g, i) for p in parts))

    def _and(self) -> AtomPred:
        parts = [self._unary()]
        while self._peek() and self._peek() not in ",;":
            if self._peek() == "&":
                self.pos += 1
            parts.append(self._unary())
        return parts[0] if len(parts) == 1 else (lambda g, i: all(p(g, i) for p in parts))

    def _number(self, default: int | None) -> int:
        start = self.pos
        while self._peek().isdigit():
            self.pos += 1
        if start == self.pos:
            if default is None:
                raise PatternError(f"number expected in [{self.text}] at {start}")
            return default
        return int(self.text[start : self.pos])

    def _unary(self) -> AtomPred:
        ch = self._peek()
        if ch == "!":
            self.pos += 1
            inner = self._unary()
            return lambda g, i: not inner(g, i)
        if ch == "*":
            self.pos += 1
            return lambda g, i: True
        if ch == "#":
            self.pos += 1
            z = self._number(None)
            return lambda g, i: ATOMIC_NUMBERS[g.atoms[i].element] == z
        if ch == "H":
            self.pos += 1
            n = self._number(1)
            return lambda g, i: _total_h(g, i) == n
        if ch == "D":
            self.pos += 1
            n = self._number(1)
            return lambda g, i: g.degree(i) == n
        if ch == "X":
            self.pos += 1
            n = self._number(1)
            return lambda g, i: g.degree(i) + _total_h(g, i) == n
        if ch == "R":
            self.pos += 1
            return lambda g, i: i in g.ring_atoms
        if ch == "r":
            self.pos += 1
            n = self._number(None)
            return lambda g, i: _in_ring_of_size(g, i, n)
        if ch in "+-":
            self.pos += 1
            sign = 1 if ch == "+" else -1
            n = self._number(1)
            return lambda g, i: g.atoms[i].formal_charge == sign * n
        if ch == "a":
            self.pos += 1
            return lambda g, i: g.atoms[i].aromatic
        if ch == "A":
            self.pos += 1
            return lambda g, i: not g.atoms[i].aromatic
        for sym in _ORGANIC:
            if self.text.startswith(sym, self.pos):
                self.pos += len(sym)
                return _element_pred(sym, False)
        if ch in _AROMATIC:
            self.pos += 1
            return _element_pred(_AROMATIC[ch], True)
        raise PatternError(f"unknown primitive {ch!r} in [{self.text}]")


def _bond_default(g, i, j, order):
    return order in (BondOrder.SINGLE, BondOrder.AROMATIC)


def _bond_pred(token: str) -> BondPred:
    if token == "":
        return _bond_default
    if token == "~":
        return lambda g, i, j, order: True
    if token == "@":
        return lambda g, i, j, order: (min(i, j), max(i, j)) in g.ring_bonds
    if token == "!@":
        return lambda g, i, j, order: (min(i, j), max(i, j)) not in g.ring_bonds
    fixed = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
    if token in fixed:
        want = fixed[token]
        return lambda g, i, j, order: order is want
    raise PatternError(f"unknown bond {token!r}")


@dataclass(frozen=True)
class Pattern:
    """A parsed pattern: atom predicates in DFS order plus bonds."""

    source: str
    atoms: tuple[AtomPred, ...]
    bonds: tuple[tuple[int, int, BondPred], ...]

    def matches(self, g: MolGraph) -> Iterator[tuple[int, ...]]:
        yield from _match(self, g)

    def has_match(self, g: MolGraph) -> bool:
        return next(self.matches(g), None) is not None

    def count_unique(self, g: MolGraph) -> int:
        return len({frozenset(m) for m in self.matches(g)})


def parse_pattern(text: str) -> Pattern:
    atoms: list[AtomPred] = []
    bonds: list[tuple[int, int, BondPred]] = []
    stack: list[int] = []
    ring_open: dict[int, tuple[int, str]] = {}
    prev: int | None = None
    bond_tok = ""
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            stack.append(prev)
            i += 1
        elif ch == ")":
            prev = stack.pop()
            i += 1
        elif text.startswith("!@", i):
            bond_tok = "!@"
            i += 2
        elif ch in "-=#:~@":
            bond_tok = ch
            i += 1
        elif ch.isdigit():
            d = int(ch)
            if d in ring_open:
                other, tok = ring_open.pop(d)
                bonds.append((other, prev, _bond_pred(bond_tok or tok)))
            else:
                ring_open[d] = (prev, bond_tok)
            bond_tok = ""
            i += 1
        else:
            if ch == "[":
                end = text.index("]", i)
                pred = _AtomExprParser(text[i + 1 : end]).parse()
                i = end + 1
            else:
                sub = _AtomExprParser(text[i : i + 2] if text[i : i + 2] in ("Cl", "Br") else ch)
                pred = sub.parse()
                i += len(sub.text)
            atoms.append(pred)
            k = len(atoms) - 1
            if prev is not None:
                bonds.append((prev, k, _bond_pred(bond_tok)))
            bond_tok = ""
            prev = k
    if stack or ring_open:
        raise PatternError(f"unbalanced pattern {text!r}")
    if len(atoms) > 8:
        raise PatternError(f"pattern {text!r} exceeds 8 atoms")
    return Pattern(text, tuple(atoms), tuple(bonds))


def _match(p: Pattern, g: MolGraph) -> Iterator[tuple[int, ...]]:
    n = len(p.atoms)
    # bonds back to earlier pattern atoms, indexed by the later atom
    back: list[list[tuple[int, BondPred]]] = [[] for _ in range(n)]
    for a, b, pred in p.bonds:
        lo, hi = min(a, b), max(a, b)
        back[hi].append((lo, pred))
    mapping = [-1] * n
    used: set[int] = set()

    def candidates(k: int):
        if back[k]:
            anchor, _ = back[k][0]
            return [v for v, _ in g.neighbors[mapping[anchor]]]
        return range(len(g.atoms))

    def rec(k: int):
        if k == n:
            yield tuple(mapping)
            return
        for v in candidates(k):
            if v in used or not p.atoms[k](g, v):
                continue
            ok = True
            for j, pred in back[k]:
                bond = g.bond_between(mapping[j], v)
                if bond is None or not pred(g, mapping[j], v, bond.order):
                    ok = False
                    break
            if not ok:
                continue
            mapping[k] = v
            used.add(v)
            yield from rec(k + 1)
            used.discard(v)
            mapping[k] = -1

    yield from rec(0)


# --------------------------------------------------------------------------
# ring predicates
# --------------------------------------------------------------------------


def _fused(g: MolGraph) -> bool:
    rings = [set(r) for r in g.rings]
    return any(len(rings[i] & rings[j]) >= 2 for i in range(len(rings)) for j in range(i + 1, len(rings)))


_RING_PREDICATES: dict[str, Callable[[MolGraph], bool]] = {
    "size5": lambda g: any(len(r) == 5 for r in g.rings),
    "size6": lambda g: any(len(r) == 6 for r in g.rings),
    "aromatic": lambda g: any(all(g.atoms[i].aromatic for i in r) for r in g.rings),
    "contains_N": lambda g: any(any(g.atoms[i].element == "N" for i in r) for r in g.rings),
    "count2": lambda g: len(g.rings) >= 2,
    "count3": lambda g: len(g.rings) >= 3,
    "fused": _fused,
    "carbon_only": lambda g: any(all(g.atoms[i].element == "C" for i in r) for r in g.rings),
}


# --------------------------------------------------------------------------
# key set
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Key:
    bit: int
    id: str
    kind: str
    pattern: str
    description: str
    matcher: Callable[[MolGraph], bool]


@dataclass(frozen=True)
class KeySet:
    version: str
    keys: tuple[Key, ...]

    def __len__(self):
        return len(self.keys)

    def index(self, key_id: str) -> int:
        for key in self.keys:
            if key.id == key_id:
                return key.bit
        raise KeyError(key_id)

    def names(self, bits: int) -> list[str]:
        return [k.id for k in self.keys if bits >> k.bit & 1]


def _make_matcher(kind: str, pattern: str) -> Callable[[MolGraph], bool]:
    if kind == "smarts":
        pat = parse_pattern(pattern)
        return pat.has_match
    if kind == "count":
        text, threshold = pattern.rsplit(" ", 1)
        pat = parse_pattern(text)
        need = int(threshold)
        if len(pat.atoms) == 1:
            return lambda g: sum(1 for i in range(len(g.atoms)) if pat.atoms[0](g, i)) >= need
        return lambda g: pat.count_unique(g) >= need
    if kind == "ring":
        return _RING_PREDICATES[pattern]
    raise PatternError(f"unknown key kind {kind!r}")


def load_keyset(text: str | None = None) -> KeySet:
    if text is None:
        text = resources.files("cogmol").joinpath("data/keys_v1.tsv").read_text()
    version = None
    keys = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            if version is None:
                version = line.lstrip("# ").strip()
            continue
        bit, key_id, kind, pattern, description = line.split("\t")
        if int(bit) != len(keys):
            raise PatternError(f"key {key_id} out of order")
        keys.append(Key(int(bit), key_id, kind, pattern, description, _make_matcher(kind, pattern)))
    if len({k.id for k in keys}) != len(keys):
        raise PatternError("duplicate key identifiers")
    return KeySet(version or "unversioned", tuple(keys))


@lru_cache(maxsize=1)
def default_keyset() -> KeySet:
    return load_keyset()


# --------------------------------------------------------------------------
# fingerprints
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    version: str = KEYSET_VERSION

    def on_bits(self) -> list[int]:
        return [i for i in range(N_KEYS) if self.bits >> i & 1]

    def __len__(self):
        return self.bits.bit_count()

    @classmethod
    def from_bits(cls, on: list[int], version: str = KEYSET_VERSION) -> "Fingerprint":
        value = 0
        for i in on:
            value |= 1 << i
        return cls(value, version)


def fingerprint(g: MolGraph, keyset: KeySet | None = None) -> Fingerprint:
    if not validate(g):
        raise InvalidMolecule("fingerprint requires a chemically valid graph")
    keyset = keyset or default_keyset()
    bits = 0
    for key in keyset.keys:
        if key.matcher(g):
            bits |= 1 << key.bit
    return Fingerprint(bits, keyset.version)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; two empty fingerprints count as identical."""
    if a.version != b.version:
        raise KeySetMismatch(f"{a.version!r} vs {b.version!r}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union
