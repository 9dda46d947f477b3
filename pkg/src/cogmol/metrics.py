"""Fidelity/creativity metrics over fingerprint similarity to a reference.

For generated graphs G'_k and the prompt's reference G, with f the Tanimoto
similarity of substructure-key fingerprints:

    p_val   fraction of valid generated graphs
    p_base  fraction with f(G', G) > 0.5
    p_qual  fraction with 0.5 < f(G', G) < 0.8
    p_dist  mean of 1 - f(G'_i, G'_j) over unordered pairs of the p_base set
            (0 when that set has fewer than two members)

    q_nov = p_qual * p_dist,  q_cov = p_val * p_qual,
    bqi   = (p_val + p_base + p_dist + p_qual) / 4
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

from .fingerprint import Fingerprint, fingerprint, tanimoto
from .molgraph import MolGraph, validate

BASE_THRESHOLD = 0.5
QUAL_UPPER = 0.8
FIELDS = ("p_val", "p_base", "p_qual", "p_dist", "bqi", "q_cov", "q_nov")


class EmptySampleSet(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class EvalSample:
    generated: MolGraph
    reference: MolGraph
    valid: bool

    @classmethod
    def of(cls, generated: MolGraph, reference: MolGraph) -> "EvalSample":
        return cls(generated, reference, validate(generated))


@dataclass(frozen=True)
class MetricsReport:
    p_val: float
    p_base: float
    p_qual: float
    p_dist: float
    bqi: float
    q_cov: float
    q_nov: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def percent(self) -> dict[str, float]:
        return {k: 100.0 * v for k, v in asdict(self).items()}


def proportions_from_similarities(
    valid: Sequence[bool], to_ref: Sequence[float], pairwise: Sequence[Sequence[float]]
) -> tuple[float, float, float, float]:
    """Base proportions from precomputed similarities.

    ``pairwise[i][j]`` is f(G'_i, G'_j); only entries between base-set members
    are read.
    """
    n = len(to_ref)
    if n == 0:
        raise EmptySampleSet("no samples")
    p_val = sum(1 for v in valid if v) / n
    base = [i for i, f in enumerate(to_ref) if f > BASE_THRESHOLD]
    p_base = len(base) / n
    p_qual = sum(1 for f in to_ref if BASE_THRESHOLD < f < QUAL_UPPER) / n
    if len(base) < 2:
        p_dist = 0.0
    else:
        total = 0.0
        count = 0
        for a in range(len(base)):
            for b in range(a + 1, len(base)):
                total += 1.0 - pairwise[base[a]][base[b]]
                count += 1
        p_dist = total / count
    return p_val, p_base, p_qual, p_dist


def base_proportions(
    samples: Sequence[EvalSample], fingerprints: dict | None = None
) -> tuple[float, float, float, float]:
    """(p_val, p_base, p_qual, p_dist) for one prompt's samples.

    Invalid samples cannot be fingerprinted; they count against p_val and are
    treated as similarity 0 to the reference.
    """
    if not samples:
        raise EmptySampleSet("no samples")
    cache = {} if fingerprints is None else fingerprints

    def fp(g: MolGraph) -> Fingerprint:
        hit = cache.get(g)
        if hit is None:
            hit = cache[g] = fingerprint(g)
        return hit

    gen_fps = [fp(s.generated) if s.valid else None for s in samples]
    to_ref = [tanimoto(f, fp(s.reference)) if f is not None else 0.0 for f, s in zip(gen_fps, samples)]

    class _Pairs:
        def __getitem__(self, i):
            return _Row(i)

    class _Row:
        def __init__(self, i):
            self.i = i

        def __getitem__(self, j):
            return tanimoto(gen_fps[self.i], gen_fps[j])

    return proportions_from_similarities([s.valid for s in samples], to_ref, _Pairs())


def composite(p_val: float, p_base: float, p_qual: float, p_dist: float) -> MetricsReport:
    for name, v in (("p_val", p_val), ("p_base", p_base), ("p_qual", p_qual), ("p_dist", p_dist)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    return MetricsReport(
        p_val=p_val,
        p_base=p_base,
        p_qual=p_qual,
        p_dist=p_dist,
        bqi=(p_val + p_base + p_dist + p_qual) / 4.0,
        q_cov=p_val * p_qual,
        q_nov=p_qual * p_dist,
    )


def evaluate(samples: Sequence[EvalSample], fingerprints: dict | None = None) -> MetricsReport:
    return composite(*base_proportions(samples, fingerprints))


def aggregate(per_prompt: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of every field across prompts."""
    if not per_prompt:
        raise EmptyInput("nothing to aggregate")
    n = len(per_prompt)
    return MetricsReport(**{f: sum(getattr(r, f) for r in per_prompt) / n for f in FIELDS})


def mean_std(runs: Sequence[MetricsReport]) -> tuple[MetricsReport, MetricsReport]:
    """Mean and sample standard deviation (ddof=1; zero for a single run)."""
    mean = aggregate(runs)
    if len(runs) < 2:
        return mean, MetricsReport(*([0.0] * len(FIELDS)))
    std = {}
    for f in FIELDS:
        m = getattr(mean, f)
        std[f] = math.sqrt(sum((getattr(r, f) - m) ** 2 for r in runs) / (len(runs) - 1))
    return mean, MetricsReport(**std)


def reports_to_csv(rows: Iterable[tuple[str, MetricsReport, MetricsReport | None]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["strategy"]
    for f in FIELDS:
        header += [f, f + "_std"]
    writer.writerow(header)
    for label, mean, std in rows:
        row = [label]
        for f in FIELDS:
            row += [f"{100 * getattr(mean, f):.2f}", f"{100 * getattr(std, f):.2f}" if std else ""]
        writer.writerow(row)
    return buf.getvalue()


def reports_to_markdown(rows: Iterable[tuple[str, MetricsReport, MetricsReport | None]]) -> str:
    lines = ["| Prompting strategy | BQI | Q-Cov | Q-Nov | Validity |", "|---|---|---|---|---|"]
    for label, mean, std in rows:
        cells = []
        for f in ("bqi", "q_cov", "q_nov", "p_val"):
            m = 100 * getattr(mean, f)
            cells.append(f"{m:.2f} ± {100 * getattr(std, f):.2f}" if std else f"{m:.2f}")
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(MetricsReport))
