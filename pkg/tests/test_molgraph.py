import random

import pytest
from hypothesis import given, settings, strategies as st

from _graphs import random_graph, rewired, shuffled
from cogmol.molgraph import (
    Atom,
    Bond,
    BondOrder,
    EmptyInput,
    GraphError,
    MolGraph,
    SizeLimitExceeded,
    UnbalancedParenthesis,
    UnbalancedRingClosure,
    UnknownElement,
    brute_force_isomorphic,
    canonical_form,
    enumerate_smiles,
    is_isomorphic,
    parse_smiles,
    to_smiles,
    validate,
)


def test_single_carbon():
    g = parse_smiles("C")
    assert len(g.atoms) == 1 and g.atoms[0].explicit_h == 4 and g.bonds == ()


def test_benzene_counts():
    # hand-counted: six aromatic CH, six aromatic bonds, one 6-ring
    g = parse_smiles("c1ccccc1")
    assert len(g.atoms) == 6 and all(a.aromatic and a.element == "C" for a in g.atoms)
    assert len(g.bonds) == 6 and all(b.order is BondOrder.AROMATIC for b in g.bonds)
    assert [len(r) for r in g.rings] == [6]


def test_naphthalene_rings():
    g = parse_smiles("c1ccc2ccccc2c1")
    assert len(g.atoms) == 10 and len(g.bonds) == 11
    assert sorted(len(r) for r in g.rings) == [6, 6]


def test_methylcyclopropane_spellings():
    a, b = parse_smiles("C1CC1C"), parse_smiles("CC1CC1")
    assert is_isomorphic(a, b)
    assert brute_force_isomorphic(a, b)


def test_charged_bracket_atoms():
    g = parse_smiles("C[N+](=O)[O-]")
    assert [a.formal_charge for a in g.atoms] == [0, 1, 0, -1]
    assert validate(g)


@pytest.mark.parametrize(
    "smiles, error, offset",
    [
        ("", EmptyInput, 0),
        ("C1CC", UnbalancedRingClosure, 1),
        ("CC(C", UnbalancedParenthesis, 2),
        ("CX", UnknownElement, 1),
        ("CC)", UnbalancedParenthesis, 2),
    ],
)
def test_parse_errors_carry_offsets(smiles, error, offset):
    with pytest.raises(error) as info:
        parse_smiles(smiles)
    assert info.value.offset == offset


def test_parse_is_deterministic():
    s = "OC(=O)c1ccc(Cl)cc1"
    assert parse_smiles(s) == parse_smiles(s)


def test_validate_benzene_and_overflow():
    assert validate(parse_smiles("c1ccccc1"))
    assert not validate(parse_smiles("C(C)(C)(C)(C)C"))


def test_aromatic_atom_outside_ring_is_invalid():
    g = parse_smiles("CC")
    flagged = MolGraph((Atom("C", aromatic=True, explicit_h=3), g.atoms[1]), g.bonds)
    assert not validate(flagged)


def test_aromatic_four_ring_is_invalid():
    assert not validate(parse_smiles("c1ccc1"))


@pytest.mark.parametrize("smiles", ["c1ccncc1", "c1cc[nH]c1", "c1ccoc1", "c1ccsc1", "c1cncnc1", "OP(=O)(O)O",
                                    "CS(=O)(=O)C", "[NH4+]", "ClC(Br)I"])
def test_common_molecules_validate(smiles):
    assert validate(parse_smiles(smiles))


def test_pyrrole_without_nh_is_invalid():
    assert not validate(parse_smiles("c1ccnc1"))


def test_graph_invariants():
    with pytest.raises(GraphError):
        MolGraph((Atom("C"), Atom("C")), ())  # disconnected
    with pytest.raises(GraphError):
        MolGraph((Atom("C"), Atom("C")), (Bond(0, 1), Bond(1, 0)))
    with pytest.raises(GraphError):
        Bond(1, 1)
    with pytest.raises(GraphError):
        Atom("Xe")


def test_isomorphism_basics():
    benzene, pyridine = parse_smiles("c1ccccc1"), parse_smiles("c1ccncc1")
    assert is_isomorphic(benzene, benzene)
    assert not is_isomorphic(benzene, pyridine)


def test_size_limit():
    with pytest.raises(SizeLimitExceeded):
        parse_smiles("C" * 65)
    chain = MolGraph(tuple(Atom("C", explicit_h=2) for _ in range(65)), tuple(Bond(k, k + 1) for k in range(64)))
    with pytest.raises(SizeLimitExceeded):
        is_isomorphic(chain, chain)


def test_smiles_writer_round_trip():
    for s in ["c1ccc2ccccc2c1", "OC(=O)c1ccc(Cl)cc1", "C[N+](=O)[O-]", "c1cc[nH]c1", "N#Cc1ccccc1"]:
        g = parse_smiles(s)
        for alt in enumerate_smiles(g, 5, seed=1):
            assert is_isomorphic(parse_smiles(alt), g), alt


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permuted_writeout_reparses_isomorphic(seed):
    rng = random.Random(seed)
    g = random_graph(rng)
    h = parse_smiles(to_smiles(shuffled(g, rng)))
    assert brute_force_isomorphic(g, h)
    assert canonical_form(g) == canonical_form(h)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_canonical_form_agrees_with_brute_force(seed):
    rng = random.Random(seed)
    g = random_graph(rng)
    h = rewired(g, rng) or shuffled(g, rng)
    assert is_isomorphic(g, h) == brute_force_isomorphic(g, h)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_validity_is_permutation_invariant(seed):
    rng = random.Random(seed)
    g = random_graph(rng)
    assert validate(g) == validate(shuffled(g, rng))


def test_rdkit_cross_check():
    Chem = pytest.importorskip("rdkit.Chem")
    for s in ["c1ccccc1", "c1ccc2ccccc2c1", "OC(=O)c1ccc(Cl)cc1"]:
        ref = Chem.MolFromSmiles(s)
        g = parse_smiles(s)
        assert len(g.atoms) == ref.GetNumAtoms()
        assert len(g.bonds) == ref.GetNumBonds()
        assert len(g.rings) == ref.GetRingInfo().NumRings()
