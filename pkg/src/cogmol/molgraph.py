"""Molecular graphs: SMILES parsing, chemical validation and canonical forms.

Only the SMILES subset needed by the motif grammar is supported: organic-subset
atoms (B, C, N, O, P, S, F, Cl, Br, I), their aromatic lowercase forms, bracket
atoms with hydrogen counts and charges, branches, ring closures 1-9 and the
bond symbols ``- = # :``. Stereo marks, isotopes, dots and ``%nn`` closures are
rejected.
"""

from __future__ import annotations

import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

MAX_ATOMS = 64

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ELEMENTS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
VALENCES: dict[str, tuple[int, ...]] = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}


class SmilesError(ValueError):
    """Raised for malformed SMILES; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class UnbalancedRingClosure(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnsupportedSmiles(SmilesError):
    pass


class GraphError(ValueError):
    pass


class SizeLimitExceeded(GraphError):
    pass


class BondOrder(Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def symbol(self) -> str:
        return {1: "-", 2: "=", 3: "#", 4: ":"}[self.value]


_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int = 0

    def __post_init__(self):
        if self.element not in VALENCES:
            raise GraphError(f"unsupported element {self.element!r}")
        if self.explicit_h < 0 or self.explicit_h > max(VALENCES[self.element]) + abs(self.formal_charge):
            raise GraphError(f"hydrogen count {self.explicit_h} out of range for {self.element}")

    @property
    def label(self) -> tuple:
        return (self.element, self.aromatic, self.formal_charge, self.explicit_h)


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE

    def __post_init__(self):
        if self.a == self.b:
            raise GraphError("bond endpoints must differ")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass(frozen=True, eq=False)
class MolGraph:
    """Immutable connected molecular graph with hydrogens stored as counts."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        if not self.atoms:
            raise GraphError("graph has no atoms")
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if bond.b >= n:
                raise GraphError(f"bond {bond.endpoints} outside atom range {n}")
            if bond.endpoints in seen:
                raise GraphError(f"duplicate bond {bond.endpoints}")
            seen.add(bond.endpoints)
        if len(self._component_of(0)) != n:
            raise GraphError("graph is not connected")

    def __eq__(self, other):
        if not isinstance(other, MolGraph):
            return NotImplemented
        return self.atoms == other.atoms and sorted(self._bond_keys()) == sorted(other._bond_keys())

    def __hash__(self):
        return hash((self.atoms, tuple(sorted(self._bond_keys()))))

    def __len__(self):
        return len(self.atoms)

    def __repr__(self):
        return f"MolGraph({to_smiles(self)!r})"

    def _bond_keys(self):
        return [(b.a, b.b, b.order.value) for b in self.bonds]

    def _component_of(self, start: int) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v, _ in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    @cached_property
    def neighbors(self) -> tuple[tuple[tuple[int, BondOrder], ...], ...]:
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        return tuple(tuple(sorted(nbrs, key=lambda x: x[0])) for nbrs in adj)

    @cached_property
    def bond_index(self) -> dict[tuple[int, int], Bond]:
        return {bond.endpoints: bond for bond in self.bonds}

    def bond_between(self, i: int, j: int) -> Bond | None:
        return self.bond_index.get((min(i, j), max(i, j)))

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    @cached_property
    def rings(self) -> tuple[tuple[int, ...], ...]:
        """Smallest set of smallest rings, each as a cyclic atom sequence."""
        return _sssr(self)

    @cached_property
    def ring_atoms(self) -> frozenset[int]:
        return frozenset(i for ring in self.rings for i in ring)

    @cached_property
    def ring_bonds(self) -> frozenset[tuple[int, int]]:
        out = set()
        for ring in self.rings:
            for k in range(len(ring)):
                i, j = ring[k], ring[(k + 1) % len(ring)]
                out.add((min(i, j), max(i, j)))
        return frozenset(out)

    def heavy_formula(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for atom in self.atoms:
            counts[atom.element] = counts.get(atom.element, 0) + 1
        return counts

    def permuted(self, order: Sequence[int]) -> "MolGraph":
        """Return the same molecule with atom ``order[k]`` placed at index ``k``."""
        if sorted(order) != list(range(len(self.atoms))):
            raise GraphError("order must be a permutation of atom indices")
        new_index = {old: new for new, old in enumerate(order)}
        atoms = [self.atoms[old] for old in order]
        bonds = [Bond(new_index[b.a], new_index[b.b], b.order) for b in self.bonds]
        bonds.sort(key=lambda b: b.endpoints)
        return MolGraph(tuple(atoms), tuple(bonds))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _default_h(element: str, aromatic: bool, bond_sum: float, n_aromatic: int) -> int:
    if aromatic:
        if element in ("C", "B"):
            return max(0, VALENCES[element][0] - int(bond_sum) - 1)
        if element in ("N", "P"):
            return max(0, 3 - int(bond_sum) - 1)
        return 0
    used = int(bond_sum)
    for v in VALENCES[element]:
        if v >= used:
            return v - used
    return 0


@dataclass
class _PendingAtom:
    element: str
    aromatic: bool
    charge: int = 0
    hcount: int | None = None  # None: organic subset, resolve from valence
    offset: int = 0


def parse_smiles(s: str) -> MolGraph:
    """Parse a SMILES string into a :class:`MolGraph`.

    Implicit hydrogens on organic-subset atoms are resolved to explicit counts
    using the lowest standard valence that accommodates the bonds.
    """
    if not s or not s.strip():
        raise EmptyInput("empty SMILES", 0)
    if not s.isascii():
        bad = next(i for i, ch in enumerate(s) if not ch.isascii())
        raise UnsupportedSmiles("non-ASCII character", bad)

    atoms: list[_PendingAtom] = []
    bonds: dict[tuple[int, int], BondOrder | None] = {}
    stack: list[tuple[int | None, int]] = []
    ring_open: dict[int, tuple[int, BondOrder | None, int]] = {}
    prev: int | None = None
    pending_bond: BondOrder | None = None
    pending_bond_offset = 0
    i = 0
    n = len(s)

    def add_bond(u: int, v: int, order: BondOrder | None, offset: int) -> None:
        key = (min(u, v), max(u, v))
        if u == v or key in bonds:
            raise UnsupportedSmiles("duplicate or self bond", offset)
        bonds[key] = order

    def add_atom(atom: _PendingAtom) -> None:
        nonlocal prev, pending_bond
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending_bond, atom.offset)
        elif pending_bond is not None:
            raise UnsupportedSmiles("bond symbol without preceding atom", pending_bond_offset)
        prev = idx
        pending_bond = None

    while i < n:
        ch = s[i]
        if ch == "(":
            if prev is None:
                raise UnbalancedParenthesis("branch opened before any atom", i)
            stack.append((prev, i))
            i += 1
        elif ch == ")":
            if not stack:
                raise UnbalancedParenthesis("unmatched ')'", i)
            if pending_bond is not None:
                raise UnsupportedSmiles("dangling bond symbol", pending_bond_offset)
            prev, _ = stack.pop()
            i += 1
        elif ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise UnsupportedSmiles("two consecutive bond symbols", i)
            pending_bond = _BOND_SYMBOLS[ch]
            pending_bond_offset = i
            i += 1
        elif ch.isdigit():
            if prev is None:
                raise UnbalancedRingClosure("ring closure before any atom", i)
            digit = int(ch)
            if digit == 0:
                raise UnsupportedSmiles("ring closure 0 is not supported", i)
            if digit in ring_open:
                other, order, _ = ring_open.pop(digit)
                if order is not None and pending_bond is not None and order != pending_bond:
                    raise UnbalancedRingClosure("conflicting ring-closure bond orders", i)
                add_bond(other, prev, pending_bond or order, i)
            else:
                ring_open[digit] = (prev, pending_bond, i)
            pending_bond = None
            i += 1
        elif ch == "[":
            end = s.find("]", i)
            if end < 0:
                raise UnsupportedSmiles("unterminated bracket atom", i)
            add_atom(_parse_bracket(s[i + 1 : end], i))
            i = end + 1
        elif ch in "/\\":
            raise UnsupportedSmiles("stereo bonds are not supported", i)
        elif ch in ".%":
            raise UnsupportedSmiles(f"unsupported symbol {ch!r}", i)
        elif ch.isalpha() or ch == "*":
            two = s[i : i + 2]
            if two in ("Cl", "Br"):
                add_atom(_PendingAtom(two, False, offset=i))
                i += 2
            elif ch in VALENCES:
                add_atom(_PendingAtom(ch, False, offset=i))
                i += 1
            elif ch in AROMATIC_ELEMENTS:
                add_atom(_PendingAtom(AROMATIC_ELEMENTS[ch], True, offset=i))
                i += 1
            else:
                raise UnknownElement(f"unknown element {ch!r}", i)
        else:
            raise UnsupportedSmiles(f"unexpected character {ch!r}", i)

    if stack:
        raise UnbalancedParenthesis("unclosed '('", stack[-1][1])
    if ring_open:
        digit, (_, _, offset) = min(ring_open.items(), key=lambda kv: kv[1][2])
        raise UnbalancedRingClosure(f"ring bond {digit} never closed", offset)
    if pending_bond is not None:
        raise UnsupportedSmiles("dangling bond symbol", pending_bond_offset)
    if len(atoms) > MAX_ATOMS:
        raise SizeLimitExceeded(f"{len(atoms)} atoms exceeds limit {MAX_ATOMS}")

    resolved_bonds = []
    for (u, v), order in sorted(bonds.items()):
        if order is None:
            order = BondOrder.AROMATIC if atoms[u].aromatic and atoms[v].aromatic else BondOrder.SINGLE
        resolved_bonds.append(Bond(u, v, order))

    bond_sum = [0.0] * len(atoms)
    n_arom = [0] * len(atoms)
    for bond in resolved_bonds:
        for k in bond.endpoints:
            if bond.order is BondOrder.AROMATIC:
                bond_sum[k] += 1
                n_arom[k] += 1
            else:
                bond_sum[k] += bond.order.value
    out_atoms = []
    for k, pa in enumerate(atoms):
        h = pa.hcount
        if h is None:
            h = _default_h(pa.element, pa.aromatic, bond_sum[k], n_arom[k])
        try:
            out_atoms.append(Atom(pa.element, pa.aromatic, pa.charge, h))
        except GraphError as exc:
            raise UnsupportedSmiles(str(exc), pa.offset) from None
    try:
        return MolGraph(tuple(out_atoms), tuple(resolved_bonds))
    except GraphError as exc:
        raise UnsupportedSmiles(str(exc), 0) from None


def _parse_bracket(body: str, offset: int) -> _PendingAtom:
    pos = 0
    if body[:1].isdigit():
        raise UnsupportedSmiles("isotopes are not supported", offset + 1)
    if body[:2] in ("Cl", "Br"):
        element, aromatic = body[:2], False
        pos = 2
    elif body[:1] in VALENCES:
        element, aromatic = body[:1], False
        pos = 1
    elif body[:1] in AROMATIC_ELEMENTS:
        element, aromatic = AROMATIC_ELEMENTS[body[:1]], True
        pos = 1
    else:
        raise UnknownElement(f"unknown element in [{body}]", offset + 1)
    hcount = 0
    charge = 0
    while pos < len(body):
        ch = body[pos]
        if ch == "H":
            pos += 1
            num = ""
            while pos < len(body) and body[pos].isdigit():
                num += body[pos]
                pos += 1
            hcount = int(num) if num else 1
        elif ch in "+-":
            sign = 1 if ch == "+" else -1
            pos += 1
            num = ""
            while pos < len(body) and body[pos].isdigit():
                num += body[pos]
                pos += 1
            if num:
                charge += sign * int(num)
            else:
                charge += sign
                while pos < len(body) and body[pos] == ch:
                    charge += sign
                    pos += 1
        elif ch == "@":
            raise UnsupportedSmiles("chirality is not supported", offset + 1 + pos)
        elif ch.isalpha():
            raise UnknownElement(f"unknown element in [{body}]", offset + 1)
        else:
            raise UnsupportedSmiles(f"unexpected {ch!r} in bracket atom", offset + 1 + pos)
    return _PendingAtom(element, aromatic, charge, hcount, offset)


# --------------------------------------------------------------------------
# rings
# --------------------------------------------------------------------------


def _shortest_cycle_through(g: MolGraph, u: int, v: int) -> list[int] | None:
    """Shortest path u -> v avoiding the direct u-v bond, as an atom list."""
    parent = {u: None}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        for y, _ in g.neighbors[x]:
            if x == u and y == v:
                continue
            if y not in parent:
                parent[y] = x
                if y == v:
                    path = [v]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path[::-1]
                queue.append(y)
    return None


def _sssr(g: MolGraph) -> tuple[tuple[int, ...], ...]:
    n_rings = len(g.bonds) - len(g.atoms) + 1
    if n_rings <= 0:
        return ()
    candidates = {}
    for bond in g.bonds:
        path = _shortest_cycle_through(g, bond.a, bond.b)
        if path is None:
            continue
        key = frozenset(path)
        if key not in candidates:
            candidates[key] = tuple(path)
    # Also try cycles through each atom pair of fused systems via second shortest paths
    ordered = sorted(candidates.values(), key=lambda r: (len(r), sorted(r)))
    bond_ids = {b.endpoints: k for k, b in enumerate(g.bonds)}
    basis: list[int] = []  # GF(2) row-reduced bit vectors
    chosen: list[tuple[int, ...]] = []
    for ring in ordered:
        vec = 0
        for k in range(len(ring)):
            i, j = ring[k], ring[(k + 1) % len(ring)]
            vec |= 1 << bond_ids[(min(i, j), max(i, j))]
        reduced = vec
        for b in basis:
            reduced = min(reduced, reduced ^ b)
        if reduced:
            basis.append(reduced)
            basis.sort(reverse=True)
            chosen.append(_rotate_ring(ring))
            if len(chosen) == n_rings:
                break
    return tuple(chosen)


def _rotate_ring(ring: tuple[int, ...]) -> tuple[int, ...]:
    k = ring.index(min(ring))
    r = ring[k:] + ring[:k]
    if len(r) > 2 and r[-1] < r[1]:
        r = (r[0],) + tuple(reversed(r[1:]))
    return r


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def allowed_valences(element: str, charge: int) -> frozenset[int]:
    base = VALENCES[element]
    if charge == 0:
        return frozenset(base)
    q = abs(charge)
    return frozenset(v for b in base for v in (b + q, b - q) if v >= 0)


def kekulize(g: MolGraph) -> dict[tuple[int, int], int] | None:
    """Assign integer orders to aromatic bonds, or ``None`` when impossible.

    Each aromatic atom either receives one double bond from the matching or none,
    whichever makes its total valence allowed.
    """
    arom_bonds = [b for b in g.bonds if b.order is BondOrder.AROMATIC]
    if not arom_bonds:
        return {}
    arom_atoms = sorted({k for b in arom_bonds for k in b.endpoints})
    must, optional = set(), set()
    for k in arom_atoms:
        atom = g.atoms[k]
        base = atom.explicit_h
        for _, order in g.neighbors[k]:
            base += 1 if order is BondOrder.AROMATIC else order.value
        ok = allowed_valences(atom.element, atom.formal_charge)
        if base + 1 in ok and base in ok:
            optional.add(k)
        elif base + 1 in ok:
            must.add(k)
        elif base not in ok:
            return None
    adj: dict[int, list[int]] = {k: [] for k in arom_atoms}
    for b in arom_bonds:
        adj[b.a].append(b.b)
        adj[b.b].append(b.a)
    mate: dict[int, int] = {}
    free = must | optional

    def solve(todo: list[int]) -> bool:
        while todo and todo[0] in mate:
            todo = todo[1:]
        if not todo:
            return True
        u = todo[0]
        for v in adj[u]:
            if v in free and v not in mate:
                mate[u], mate[v] = v, u
                if solve(todo[1:]):
                    return True
                del mate[u], mate[v]
        return False

    if not solve(sorted(must)):
        return None
    orders = {}
    for b in arom_bonds:
        orders[b.endpoints] = 2 if mate.get(b.a) == b.b else 1
    return orders


def validate(g: MolGraph) -> bool:
    """True iff every atom has an allowed valence and aromatic atoms sit on 5/6-rings."""
    small_ring_atoms = {k for ring in g.rings if len(ring) in (5, 6) for k in ring}
    for k, atom in enumerate(g.atoms):
        if atom.aromatic and k not in small_ring_atoms:
            return False
    for bond in g.bonds:
        if bond.order is BondOrder.AROMATIC:
            if not (g.atoms[bond.a].aromatic and g.atoms[bond.b].aromatic):
                return False
            if bond.endpoints not in g.ring_bonds:
                return False
    kek = kekulize(g)
    if kek is None:
        return False
    for k, atom in enumerate(g.atoms):
        total = atom.explicit_h
        for j, order in g.neighbors[k]:
            if order is BondOrder.AROMATIC:
                total += kek[(min(k, j), max(k, j))]
            else:
                total += order.value
        if total not in allowed_valences(atom.element, atom.formal_charge):
            return False
    return True


# --------------------------------------------------------------------------
# canonical form / isomorphism
# --------------------------------------------------------------------------


def _refine(g: MolGraph, colors: list[int]) -> list[int]:
    while True:
        sigs = [
            (colors[i], tuple(sorted((order.value, colors[j]) for j, order in g.neighbors[i])))
            for i in range(len(g.atoms))
        ]
        ranking = {sig: r for r, sig in enumerate(sorted(set(sigs)))}
        new = [ranking[sig] for sig in sigs]
        if len(set(new)) == len(set(colors)):
            return new
        colors = new


def _encode(g: MolGraph, colors: list[int]) -> tuple:
    order = sorted(range(len(g.atoms)), key=lambda i: colors[i])
    pos = {old: new for new, old in enumerate(order)}
    atoms = tuple(g.atoms[i].label for i in order)
    edges = tuple(sorted((min(pos[b.a], pos[b.b]), max(pos[b.a], pos[b.b]), b.order.value) for b in g.bonds))
    return (atoms, edges)


def canonical_form(g: MolGraph) -> tuple:
    """Canonical encoding by colour refinement plus exhaustive individualisation."""
    if len(g.atoms) > MAX_ATOMS:
        raise SizeLimitExceeded(f"{len(g.atoms)} atoms exceeds limit {MAX_ATOMS}")
    labels = sorted({a.label for a in g.atoms})
    init = [labels.index(a.label) for a in g.atoms]
    best: list[tuple | None] = [None]

    def search(colors: list[int]) -> None:
        colors = _refine(g, colors)
        if len(set(colors)) == len(colors):
            enc = _encode(g, colors)
            if best[0] is None or enc < best[0]:
                best[0] = enc
            return
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        target = min(c for c, m in counts.items() if m > 1)
        for v in range(len(colors)):
            if colors[v] != target:
                continue
            branch = [2 * c + (0 if c < target or (c == target and u == v) else 1) for u, c in enumerate(colors)]
            search(branch)

    search([2 * c for c in init])
    return best[0]


def is_isomorphic(a: MolGraph, b: MolGraph) -> bool:
    if len(a.atoms) > MAX_ATOMS or len(b.atoms) > MAX_ATOMS:
        raise SizeLimitExceeded(f"isomorphism limited to {MAX_ATOMS} atoms")
    if len(a.atoms) != len(b.atoms) or len(a.bonds) != len(b.bonds):
        return False
    if sorted(x.label for x in a.atoms) != sorted(x.label for x in b.atoms):
        return False
    return canonical_form(a) == canonical_form(b)


def brute_force_isomorphic(a: MolGraph, b: MolGraph) -> bool:
    """Permutation search; only practical for small graphs (test oracle)."""
    if len(a.atoms) != len(b.atoms) or len(a.bonds) != len(b.bonds):
        return False
    edges_b = {(bd.a, bd.b): bd.order for bd in b.bonds}
    for perm in itertools.permutations(range(len(a.atoms))):
        if any(a.atoms[i].label != b.atoms[perm[i]].label for i in range(len(perm))):
            continue
        if all(
            edges_b.get((min(perm[bd.a], perm[bd.b]), max(perm[bd.a], perm[bd.b]))) is bd.order for bd in a.bonds
        ):
            return True
    return False


# --------------------------------------------------------------------------
# writing
# --------------------------------------------------------------------------


def _needs_bracket(g: MolGraph, k: int) -> bool:
    atom = g.atoms[k]
    if atom.formal_charge:
        return True
    bond_sum = 0.0
    n_arom = 0
    for _, order in g.neighbors[k]:
        if order is BondOrder.AROMATIC:
            bond_sum += 1
            n_arom += 1
        else:
            bond_sum += order.value
    return _default_h(atom.element, atom.aromatic, bond_sum, n_arom) != atom.explicit_h


def _atom_token(g: MolGraph, k: int) -> str:
    atom = g.atoms[k]
    sym = atom.element.lower() if atom.aromatic else atom.element
    if not _needs_bracket(g, k):
        return sym
    out = "[" + sym
    if atom.explicit_h:
        out += "H" + (str(atom.explicit_h) if atom.explicit_h > 1 else "")
    if atom.formal_charge:
        sign = "+" if atom.formal_charge > 0 else "-"
        out += sign + (str(abs(atom.formal_charge)) if abs(atom.formal_charge) > 1 else "")
    return out + "]"


def _bond_token(g: MolGraph, i: int, j: int, order: BondOrder) -> str:
    if order is BondOrder.AROMATIC:
        return ""
    if order is BondOrder.SINGLE:
        return "-" if g.atoms[i].aromatic and g.atoms[j].aromatic else ""
    return order.symbol


def to_smiles(g: MolGraph, root: int = 0, rng: random.Random | None = None) -> str:
    """Write ``g`` as SMILES by depth-first traversal from ``root``.

    With ``rng`` the neighbour visiting order is shuffled, which enumerates
    alternative SMILES for the same graph.
    """
    n = len(g.atoms)
    visited = [False] * n
    order_of_visit: list[int] = []
    tree_children: dict[int, list[int]] = {k: [] for k in range(n)}
    ring_edges: list[tuple[int, int]] = []

    def nbrs(u: int) -> list[int]:
        out = [v for v, _ in g.neighbors[u]]
        if rng is not None:
            rng.shuffle(out)
        return out

    # iterative DFS recording tree and back edges
    visited[root] = True
    order_of_visit.append(root)
    stack = [(root, -1, iter(nbrs(root)))]
    while stack:
        u, parent, it = stack[-1]
        advanced = False
        for v in it:
            if v == parent:
                continue
            if visited[v]:
                if (min(u, v), max(u, v)) not in {(min(a, b), max(a, b)) for a, b in ring_edges}:
                    ring_edges.append((v, u))
                continue
            visited[v] = True
            order_of_visit.append(v)
            tree_children[u].append(v)
            stack.append((v, u, iter(nbrs(v))))
            advanced = True
            break
        if not advanced:
            stack.pop()

    rank = {k: r for r, k in enumerate(order_of_visit)}
    # ring closure opens at the earlier-visited atom
    opens: dict[int, list[tuple[int, int]]] = {k: [] for k in range(n)}
    closes: dict[int, list[tuple[int, int]]] = {k: [] for k in range(n)}
    for idx, (a, b) in enumerate(ring_edges):
        first, second = (a, b) if rank[a] < rank[b] else (b, a)
        opens[first].append((idx, second))
        closes[second].append((idx, first))

    digits: dict[int, int] = {}
    free = list(range(1, 10))
    parts: list[str] = []

    def emit(u: int, parent: int | None) -> None:
        if parent is not None:
            parts.append(_bond_token(g, parent, u, g.bond_between(parent, u).order))
        parts.append(_atom_token(g, u))
        for idx, other in sorted(closes[u], key=lambda x: digits[x[0]]):
            d = digits.pop(idx)
            parts.append(_bond_token(g, u, other, g.bond_between(u, other).order) + str(d))
            free.append(d)
            free.sort()
        for idx, other in opens[u]:
            if not free:
                raise GraphError("more than 9 simultaneous ring closures")
            d = free.pop(0)
            digits[idx] = d
            parts.append(_bond_token(g, u, other, g.bond_between(u, other).order) + str(d))
        kids = tree_children[u]
        for c in kids[:-1]:
            parts.append("(")
            emit(c, u)
            parts.append(")")
        if kids:
            emit(kids[-1], u)

    emit(root, None)
    return "".join(parts)


def enumerate_smiles(g: MolGraph, count: int, seed: int = 0) -> list[str]:
    """Random alternative SMILES of ``g`` (random roots and traversal orders)."""
    rng = random.Random(seed)
    return [to_smiles(g, root=rng.randrange(len(g.atoms)), rng=rng) for _ in range(count)]


def connected_components(n: int, edges: Iterable[tuple[int, int]]) -> list[set[int]]:
    adj: dict[int, set[int]] = {k: set() for k in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen: set[int] = set()
    out = []
    for k in range(n):
        if k in seen:
            continue
        comp = {k}
        stack = [k]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        out.append(comp)
    return out
