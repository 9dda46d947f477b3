import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from _oracles import brute_metrics, random_sample_set
from cogmol.codec import MotifSpec, realize
from cogmol.metrics import (
    FIELDS,
    EmptyInput,
    EmptySampleSet,
    EvalSample,
    MetricsReport,
    aggregate,
    base_proportions,
    composite,
    evaluate,
    field_names,
    mean_std,
    proportions_from_similarities,
    reports_to_csv,
    reports_to_markdown,
)

REF = realize(MotifSpec("pyridine", ("nitro",), ("fluorine",)))


def report(**kw):
    values = dict.fromkeys(FIELDS, 0.0)
    values.update(kw)
    return MetricsReport(**values)


def test_field_names_are_the_interface_names():
    assert field_names() == FIELDS == ("p_val", "p_base", "p_qual", "p_dist", "bqi", "q_cov", "q_nov")


def test_all_identical_to_reference():
    r = evaluate([EvalSample.of(REF, REF) for _ in range(5)])
    assert (r.p_val, r.p_base, r.p_qual, r.p_dist) == (1.0, 1.0, 0.0, 0.0)


def test_single_sample_in_quality_band():
    assert proportions_from_similarities([True], [0.6], [[1.0]]) == (1.0, 1.0, 1.0, 0.0)


def test_interval_is_open():
    assert proportions_from_similarities([True] * 2, [0.5, 0.8], [[1, 1], [1, 1]]) == (1.0, 0.5, 0.0, 0.0)


def test_pairs_only_from_base_set():
    # sample 2 is off target, so only the (0, 1) pair counts
    pair = [[1.0, 0.7, 0.0], [0.7, 1.0, 0.0], [0.0, 0.0, 1.0]]
    p = proportions_from_similarities([True] * 3, [0.9, 0.6, 0.2], pair)
    assert p[3] == pytest.approx(0.3, abs=1e-15)


def test_empty_sample_set():
    with pytest.raises(EmptySampleSet):
        base_proportions([])


def test_composite_examples():
    r = composite(1, 1, 0, 0)
    assert (r.bqi, r.q_cov, r.q_nov) == (0.5, 0, 0)
    r = composite(1, 1, 0.4, 0.5)
    assert r.q_cov == pytest.approx(0.4) and r.q_nov == pytest.approx(0.2) and r.bqi == pytest.approx(0.725)
    r = composite(0, 0, 0, 0)
    assert (r.bqi, r.q_cov, r.q_nov) == (0, 0, 0)
    with pytest.raises(ValueError):
        composite(1.2, 0, 0, 0)


def test_aggregate():
    single = report(bqi=0.3, p_val=1.0)
    assert aggregate([single]) == single
    assert aggregate([report(bqi=0.4), report(bqi=0.6)]).bqi == pytest.approx(0.5)
    with pytest.raises(EmptyInput):
        aggregate([])


def test_mean_std_uses_sample_deviation():
    mean, std = mean_std([report(bqi=0.4), report(bqi=0.6), report(bqi=0.5)])
    assert mean.bqi == pytest.approx(0.5)
    assert std.bqi == pytest.approx(0.1)
    _, std = mean_std([report(bqi=0.4)])
    assert std.bqi == 0.0


def test_table_layouts():
    mean, std = mean_std([report(bqi=0.5, p_val=1.0), report(bqi=0.6, p_val=1.0)])
    md = reports_to_markdown([("OneShot", mean, std)])
    assert md.splitlines()[0] == "| Prompting strategy | BQI | Q-Cov | Q-Nov | Validity |"
    assert "| OneShot | 55.00 ± 7.07 | 0.00 ± 0.00 | 0.00 ± 0.00 | 100.00 ± 0.00 |" in md
    csv = reports_to_csv([("OneShot", mean, std)])
    assert csv.splitlines()[0].startswith("strategy,p_val,p_val_std")


def test_invalid_samples_count_against_validity():
    from _oracles import INVALID
    from cogmol.molgraph import parse_smiles

    bad = parse_smiles(INVALID)
    r = evaluate([EvalSample.of(bad, REF), EvalSample.of(REF, REF)])
    assert r.p_val == 0.5 and r.p_base == 0.5


def test_ten_samples_against_brute_force():
    rng = random.Random(10)
    gen, ref = random_sample_set(rng, 10)
    while len(gen) != 10:
        gen, ref = random_sample_set(rng, 10)
    got = evaluate([EvalSample.of(g, ref) for g in gen]).as_dict()
    want = brute_metrics(gen, ref)
    for k in FIELDS:
        assert abs(got[k] - want[k]) <= 1e-12


def test_replacing_samples_with_reference():
    rng = random.Random(2)
    gen, ref = random_sample_set(rng)
    r = evaluate([EvalSample.of(ref, ref) for _ in gen])
    assert r.p_base == 1.0 and r.p_qual == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_properties(seed):
    rng = random.Random(seed)
    gen, ref = random_sample_set(rng)
    samples = [EvalSample.of(g, ref) for g in gen]
    r = evaluate(samples)
    assert r.p_qual <= r.p_base
    assert all(0.0 <= v <= 1.0 for v in r.as_dict().values())
    assert r.bqi == (r.p_val + r.p_base + r.p_dist + r.p_qual) / 4
    assert r.q_cov == r.p_val * r.p_qual and r.q_nov == r.p_qual * r.p_dist
    rng.shuffle(samples)
    again = evaluate(samples)
    for k in FIELDS:
        assert math.isclose(getattr(again, k), getattr(r, k), abs_tol=1e-15)
