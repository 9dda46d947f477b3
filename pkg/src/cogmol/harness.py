"""Synthetic dataset generation, strategy benchmark and trajectory tracing."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .align import AlignConfig, AlignModel, pairs_from_specs, retrieval_accuracy, train_alignment
from .codec import (
    GROUPS,
    MODIFIERS,
    SCAFFOLDS,
    TOKEN_INDEX,
    Dictionary,
    MotifSpec,
    decode,
    default_dictionary,
    enumerate_specs,
    realize,
)
from .cogengine import (
    ChainResult,
    PromptSegment,
    Strategy,
    mention,
    plan,
    run_chains,
    segment_prompt,
    stage_condition,
)
from .diffusion import FactoredOracleDenoiser, Schedule
from .fingerprint import Fingerprint, fingerprint, tanimoto
from .metrics import MetricsReport, composite, mean_std, proportions_from_similarities, reports_to_csv, reports_to_markdown
from .molgraph import MolGraph, to_smiles

log = logging.getLogger(__name__)

CONFIG_SCHEMA = "cogmol-config/1"

# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything a benchmark run depends on. Loaded from YAML; see README."""

    seed: int = 0
    prompts: int = 200
    samples: int = 20  # K per prompt
    runs: int = 3
    strategies: tuple[str, ...] = tuple(s.value for s in Strategy)
    rho: float = 0.2
    steps: int = 200
    schedule: str = "cosine"
    sigma: float = 0.05
    guidance: float = 16.0
    conditioning: str = "text"
    dim: int = 32
    dictionary_seed: int = 0
    min_groups: int = 1
    max_groups: int = 2
    min_modifiers: int = 0
    max_modifiers: int = 2
    align_pairs: int = 100
    align_epochs: int = 200
    align_lr: float = 0.05
    align_tau: float = 0.1
    base_threshold: float = 0.5
    qual_upper: float = 0.8

    def __post_init__(self):
        if self.samples < 1 or self.prompts < 1 or self.runs < 1:
            raise ValueError("prompts, samples and runs must all be >= 1")
        object.__setattr__(self, "strategies", tuple(Strategy.parse(s).value for s in self.strategies))
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if (self.base_threshold, self.qual_upper) != (0.5, 0.8):
            raise ValueError("metric thresholds are fixed at 0.5 / 0.8 by the metric definitions")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        schema = data.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema {schema!r} (expected {CONFIG_SCHEMA!r})")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        if "strategies" in data:
            data["strategies"] = tuple(data["strategies"])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return {"schema": CONFIG_SCHEMA, **d}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------

SCAFFOLD_TEMPLATES = (
    "The molecule is made of {}",
    "The molecule is {}",
    "This molecule is built on {}",
    "The molecule contains {} as its core",
)
GROUP_TEMPLATES = (
    " with {} attached",
    " substituted with {}",
    " and contains {}",
    " bearing {}",
)
MODIFIER_TEMPLATES = (
    " and {}",
    ", decorated with {}",
    " plus {}",
    " that also carries {}",
)


def _join(parts: Sequence[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def _mentions(tokens: Sequence[str]) -> list[str]:
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    return [mention(t, n) for t, n in counts.items()]


def render_prompt(spec: MotifSpec, choice: tuple[int, int, int] = (0, 0, 0)) -> str:
    """Surface sentence for ``spec``; ``choice`` picks one template per class."""
    text = SCAFFOLD_TEMPLATES[choice[0]].format(mention(spec.scaffold))
    if spec.groups:
        text += GROUP_TEMPLATES[choice[1]].format(_join(_mentions(spec.groups)))
    if spec.modifiers:
        text += MODIFIER_TEMPLATES[choice[2]].format(_join(_mentions(spec.modifiers)))
    return text + "."


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    spec: MotifSpec
    prompt: str
    segments: tuple[PromptSegment, ...]
    reference: MolGraph
    template: tuple[int, int, int] = (0, 0, 0)

    def to_json(self) -> dict:
        return {"spec": str(self.spec), "prompt": self.prompt, "template": list(self.template),
                "reference": to_smiles(self.reference)}

    @classmethod
    def from_spec(cls, spec: MotifSpec, template: tuple[int, int, int] = (0, 0, 0)) -> "DatasetRecord":
        prompt = render_prompt(spec, template)
        return cls(spec, prompt, tuple(segment_prompt(prompt)), realize(spec), tuple(template))

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetRecord":
        return cls.from_spec(MotifSpec.parse(obj["spec"]), tuple(obj.get("template", (0, 0, 0))))


@lru_cache(maxsize=8)
def _grammar(min_groups: int, max_groups: int, min_modifiers: int, max_modifiers: int) -> tuple[MotifSpec, ...]:
    return tuple(enumerate_specs(max_groups, max_modifiers, min_groups, min_modifiers))


def gen_dataset(config: RunConfig = RunConfig(), n: int | None = None) -> list[DatasetRecord]:
    """Uniformly sampled grammar specs with seeded template choices."""
    specs = _grammar(config.min_groups, config.max_groups, config.min_modifiers, config.max_modifiers)
    rng = np.random.default_rng([config.seed, 0xDA7A])
    n = config.prompts if n is None else n
    out = []
    for idx in rng.integers(len(specs), size=n):
        template = tuple(int(x) for x in rng.integers(4, size=3))
        out.append(DatasetRecord.from_spec(specs[int(idx)], template))
    return out


def save_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    with open(path) as fh:
        return [DatasetRecord.from_json(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Models:
    dictionary: Dictionary
    schedule: Schedule
    denoiser: FactoredOracleDenoiser
    align: AlignModel


def build_models(config: RunConfig = RunConfig()) -> Models:
    """Dictionary, schedule, oracle denoiser and a freshly trained text alignment."""
    dictionary = default_dictionary(config.dictionary_seed, config.dim, config.sigma)
    schedule = Schedule.from_config(config.steps, config.schedule)
    denoiser = FactoredOracleDenoiser(
        dictionary, config.max_groups, config.max_modifiers, config.min_groups, config.min_modifiers,
        sigma=config.sigma, guidance=config.guidance, schedule=schedule,
    )
    specs = _grammar(config.min_groups, config.max_groups, config.min_modifiers, config.max_modifiers)
    rng = np.random.default_rng([config.seed, 0xA11])
    chosen = [specs[i] for i in rng.choice(len(specs), size=config.align_pairs, replace=False)]
    latents, bags = pairs_from_specs(chosen, dictionary, rng)
    align = train_alignment(
        latents, bags,
        AlignConfig(lr=config.align_lr, epochs=config.align_epochs, tau=config.align_tau, seed=config.seed),
    )
    log.info("alignment retrieval accuracy %.3f", retrieval_accuracy(align, latents, bags))
    return Models(dictionary, schedule, denoiser, align)


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


class FingerprintCache:
    """Fingerprints keyed by spec; the grammar is small, so each is computed once."""

    def __init__(self):
        self._by_spec: dict[MotifSpec, Fingerprint] = {}

    def __call__(self, spec: MotifSpec) -> Fingerprint:
        fp = self._by_spec.get(spec)
        if fp is None:
            fp = self._by_spec[spec] = fingerprint(realize(spec))
        return fp


def prompt_rng(seed: int, run: int, prompt: int, strategy: str) -> np.random.Generator:
    """Per-prompt stream: SeedSequence entropy (seed, run, prompt, crc of strategy)."""
    tag = int(hashlib.sha256(strategy.encode()).hexdigest()[:8], 16)
    return np.random.default_rng([seed, run, prompt, tag])


def evaluate_specs(specs: Sequence[MotifSpec], reference: MotifSpec, fp: FingerprintCache) -> MetricsReport:
    """Metrics for one prompt's samples; grammar specs always realize to valid graphs."""
    ref = fp(reference)
    fps = [fp(s) for s in specs]
    to_ref = [tanimoto(f, ref) for f in fps]
    pair = [[tanimoto(a, b) for b in fps] for a in fps]
    return composite(*proportions_from_similarities([True] * len(specs), to_ref, pair))


@dataclass(frozen=True, eq=False)
class BenchResult:
    config: RunConfig
    summary: dict  # strategy -> (mean MetricsReport, std MetricsReport)
    per_run: dict  # strategy -> list of per-run MetricsReport
    samples: list  # raw sample log records
    seconds: float

    def rows(self):
        return [(s, *self.summary[s]) for s in self.config.strategies]

    def csv(self) -> str:
        return reports_to_csv(self.rows())

    def markdown(self) -> str:
        return reports_to_markdown(self.rows())


def run_bench(
    dataset: Sequence[DatasetRecord],
    config: RunConfig = RunConfig(),
    models: Models | None = None,
    out_dir: str | Path | None = None,
) -> BenchResult:
    """Every strategy on every prompt, ``config.runs`` times; mean ± std over runs.

    Writes ``bench.csv``, ``bench.md`` and ``samples.jsonl`` to ``out_dir``
    when given. Composite metrics are recomputed from the raw sample log
    before anything is written.
    """
    if not dataset:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    models = build_models(config) if models is None else models
    fp = FingerprintCache()
    per_run: dict[str, list[MetricsReport]] = {s: [] for s in config.strategies}
    sample_log: list[dict] = []
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        for run in range(config.runs):
            for strategy in config.strategies:
                plans = [plan(list(r.segments), strategy, config.rho) for r in dataset]
                # seeded by the plan's own strategy, so a collapsed plan draws like OneShot
                rngs = [prompt_rng(config.seed, run, i, p.strategy.value) for i, p in enumerate(plans)]
                results = run_chains(
                    plans, models.denoiser, models.schedule, models.align, rngs, models.dictionary,
                    n=config.samples, conditioning=config.conditioning,
                )
                reports = []
                for i, (rec, res) in enumerate(zip(dataset, results)):
                    reports.append(evaluate_specs(res.specs, rec.spec, fp))
                    sample_log.append({
                        "run": run, "strategy": strategy, "prompt": i, "reference": str(rec.spec),
                        "samples": [str(s) for s in res.specs],
                    })
                per_run[strategy].append(_mean_reports(reports))
                log.info("run %d %-18s bqi %.4f", run, strategy, per_run[strategy][-1].bqi)
    finally:
        if out is not None:
            write_sample_log(sample_log, out / "samples.jsonl")
    summary = {s: mean_std(per_run[s]) for s in config.strategies}
    result = BenchResult(config, summary, per_run, sample_log, time.perf_counter() - t0)
    verify(result, fp)
    if out is not None:
        (out / "bench.csv").write_text(result.csv())
        (out / "bench.md").write_text(result.markdown())
        (out / "config.yaml").write_text(config.dump())
    return result


def _mean_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    from .metrics import aggregate

    return aggregate(reports)


def write_sample_log(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def recompute_from_log(records: Iterable[dict], strategies: Sequence[str], fp: FingerprintCache | None = None) -> dict:
    """strategy -> list of per-run MetricsReport, recomputed from raw samples."""
    fp = FingerprintCache() if fp is None else fp
    grouped: dict[tuple[str, int], list] = {}
    for rec in records:
        specs = [MotifSpec.parse(s) for s in rec["samples"]]
        rep = evaluate_specs(specs, MotifSpec.parse(rec["reference"]), fp)
        grouped.setdefault((rec["strategy"], rec["run"]), []).append(rep)
    out = {}
    for s in strategies:
        runs = sorted(r for (st, r) in grouped if st == s)
        out[s] = [_mean_reports(grouped[(s, r)]) for r in runs]
    return out


class VerificationError(AssertionError):
    pass


def verify(result: BenchResult, fp: FingerprintCache | None = None) -> None:
    """Independent pass: recompute every reported number from the sample log."""
    again = recompute_from_log(result.samples, result.config.strategies, fp)
    for s in result.config.strategies:
        mean, std = mean_std(again[s])
        for name in ("p_val", "p_base", "p_qual", "p_dist", "bqi", "q_cov", "q_nov"):
            for a, b in ((mean, result.summary[s][0]), (std, result.summary[s][1])):
                if abs(getattr(a, name) - getattr(b, name)) > 1e-12:
                    raise VerificationError(f"{s} {name}: log gives {getattr(a, name)}, report has {getattr(b, name)}")


# --------------------------------------------------------------------------
# trajectory tracing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    step: int  # position along the whole chain, counting every denoising step
    stage: int
    t: int
    spec: MotifSpec
    bits: int

    def to_json(self) -> dict:
        return {"step": self.step, "stage": self.stage, "t": self.t, "spec": str(self.spec),
                "smiles": to_smiles(realize(self.spec)), "fingerprint": f"{self.bits:016x}"}


@dataclass(frozen=True)
class TraceReport:
    prompt: str
    strategy: str
    seed: int
    reference: MotifSpec
    steps: tuple[TraceStep, ...]
    keys: dict  # component label -> key bits that signal it
    first: dict  # component label -> first step its keys are all on (None if never)
    n_stages: int

    def level_step(self, level: str) -> float:
        """First step at which every key of a granularity level is on (inf if never)."""
        labels = [k for k in self.keys if k.split(":")[0] == level]
        want = 0
        for k in labels:
            want |= self.keys[k]
        if not want:
            return math.inf
        for s in self.steps:
            if s.bits & want == want:
                return s.step
        return math.inf

    @property
    def scaffold_first(self) -> bool:
        """Whether the scaffold keys show up no later than the modifier keys."""
        return self.level_step("large") <= self.level_step("small")

    def records(self) -> list[dict]:
        head = {
            "kind": "summary", "prompt": self.prompt, "strategy": self.strategy, "seed": self.seed,
            "reference": str(self.reference), "stages": self.n_stages,
            "first_appearance": self.first,
            "scaffold_first": self.scaffold_first,
        }
        return [head] + [{"kind": "step", **s.to_json()} for s in self.steps]

    def write_jsonl(self, path: str | Path) -> None:
        write_sample_log(self.records(), path)

    def ascii_timeline(self, width: int = 60) -> str:
        last = self.steps[-1].step if self.steps else 0
        scale = max(1, math.ceil((last + 1) / width))
        cols = last // scale + 1
        lines = [f"{self.strategy}: {self.prompt}"]
        pad = max(len(k) for k in self.keys) if self.keys else 0
        for label, step in self.first.items():
            if step is None:
                bar = "." * cols
            else:
                bar = "." * (step // scale) + "#" * (cols - step // scale)
            lines.append(f"{label:<{pad}} |{bar}| {'-' if step is None else step}")
        return "\n".join(lines)

    def svg(self, width: int = 600, row: int = 22) -> str:
        last = max(1, self.steps[-1].step if self.steps else 1)
        left = 140
        height = row * (len(self.first) + 1)
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + width + 10}" height="{height}">']
        for i, (label, step) in enumerate(self.first.items()):
            y = row * i + 4
            parts.append(f'<text x="4" y="{y + 13}" font-size="12">{label}</text>')
            parts.append(f'<rect x="{left}" y="{y}" width="{width}" height="{row - 8}" fill="#eee"/>')
            if step is not None:
                x = left + width * step / last
                parts.append(f'<rect x="{x:.1f}" y="{y}" width="{left + width - x:.1f}" height="{row - 8}" fill="#4a7"/>')
        # a grey line where each stage begins
        for k in range(1, self.n_stages):
            start = min(s.step for s in self.steps if s.stage == k)
            x = left + width * start / last
            parts.append(f'<line x1="{x:.1f}" y1="0" x2="{x:.1f}" y2="{height}" stroke="#999"/>')
        parts.append("</svg>")
        return "\n".join(parts)


def component_keys(spec: MotifSpec, fp: FingerprintCache) -> dict[str, int]:
    """Fingerprint bits that only a given component switches on.

    The scaffold's keys are those of the bare scaffold; a group's keys are the
    bits it adds to the scaffold, and a modifier's the bits it adds to the
    scaffold with all groups attached.
    """
    keys = {f"large:{spec.scaffold}": fp(MotifSpec(spec.scaffold)).bits}
    bare = fp(MotifSpec(spec.scaffold)).bits
    for g in dict.fromkeys(spec.groups):
        keys[f"medium:{g}"] = fp(MotifSpec(spec.scaffold, (g,))).bits & ~bare
    with_groups = fp(MotifSpec(spec.scaffold, spec.groups)).bits
    for m in dict.fromkeys(spec.modifiers):
        keys[f"small:{m}"] = fp(MotifSpec(spec.scaffold, spec.groups, (m,))).bits & ~with_groups
    return keys


def trace_run(
    prompt: str,
    strategy: str = Strategy.COARSE_TO_FINE.value,
    config: RunConfig = RunConfig(),
    models: Models | None = None,
    checkpoints: Sequence[int] | None = None,
    seed: int | None = None,
    fp: FingerprintCache | None = None,
) -> TraceReport:
    """Run one chain and decode it at every checkpoint step.

    At a checkpoint with t > 0 the decoded structure is that of the denoiser's
    clean-latent estimate (z_t - sqrt(1 - abar) eps) / sqrt(abar), which is
    what a partially denoised latent "looks like" to the decoder. By default
    every step is a checkpoint.
    """
    models = build_models(config) if models is None else models
    fp = FingerprintCache() if fp is None else fp
    seed = config.seed if seed is None else seed
    segments = segment_prompt(prompt)
    reference = MotifSpec.parse("+".join(c for s in segments for c in s.components))
    stage_plan = plan(segments, strategy, config.rho)
    S = models.schedule
    wanted = range(S.steps + 1) if checkpoints is None else sorted(set(checkpoints))
    result = run_chains([stage_plan], models.denoiser, S, models.align, [prompt_rng(seed, 0, 0, stage_plan.strategy.value)],
                        models.dictionary, n=1, conditioning=config.conditioning, checkpoints=wanted)[0]
    steps: list[TraceStep] = []
    position = 0
    for st in result.trace:
        cond = stage_condition(st.components, models.align, config.conditioning)
        for t in range(st.t_start, -1, -1):
            if t in st.checkpoints:
                z = np.atleast_2d(st.checkpoints[t])[0]
                if t > 0:
                    ab = S.alpha_bar[t]
                    z = (z - math.sqrt(1 - ab) * models.denoiser.eps(z, t, cond)) / math.sqrt(ab)
                spec = decode(z, models.dictionary)
                steps.append(TraceStep(position, st.index, t, spec, fp(spec).bits))
            position += 1
    keys = component_keys(reference, fp)
    first: dict[str, int | None] = {}
    for label, want in keys.items():
        hit = next((s.step for s in steps if want and s.bits & want == want), None)
        first[label] = hit
    return TraceReport(prompt, stage_plan.strategy.value, seed, reference, tuple(steps), keys, first, len(result.trace))


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


def _load_config(path: str | None) -> RunConfig:
    return RunConfig() if path is None else RunConfig.load(path)


def _parse_structure(text: str) -> MolGraph:
    """A sample is either a grammar spec ("benzene+nitro") or a SMILES string."""
    from .codec import CodecError
    from .molgraph import parse_smiles

    try:
        return realize(MotifSpec.parse(text))
    except CodecError:
        return parse_smiles(text)


def _cmd_gen_dataset(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    records = gen_dataset(config, args.n)
    if args.out:
        save_dataset(records, args.out)
    else:
        for r in records:
            print(json.dumps(r.to_json(), sort_keys=True))
    return 0


def _cmd_gen(args) -> int:
    config = _load_config(args.config)
    models = build_models(config)
    segments = segment_prompt(args.prompt)
    stage_plan = plan(segments, args.strategy, config.rho)
    res = run_chains([stage_plan], models.denoiser, models.schedule, models.align,
                     [prompt_rng(args.seed, 0, 0, stage_plan.strategy.value)], models.dictionary,
                     n=args.n, conditioning=config.conditioning)[0]
    for spec, smi in zip(res.specs, res.smiles):
        print(f"{smi}\t{spec}")
    return 0


def _cmd_segment(args) -> int:
    if args.use_llm:
        from .cogengine import llm_segment

        result = llm_segment(args.prompt)
        print(f"Number: {result.n}\t({result.source})")
        for sentence in result.sentences:
            print(sentence)
        return 0
    for seg in segment_prompt(args.prompt):
        print(f"{seg.granularity}\t{seg.text}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import EvalSample, aggregate, evaluate

    cache: dict = {}
    reports = []
    with open(args.samples) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ref = _parse_structure(rec["reference"])
            samples = [EvalSample.of(_parse_structure(s), ref) for s in rec["samples"]]
            reports.append(evaluate(samples, cache))
    if not reports:
        raise SystemExit("no records in samples file")
    print(reports_to_markdown([("samples", aggregate(reports), None)]))
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args.config)
    if args.prompts is not None:
        config = replace(config, prompts=args.prompts)
    if args.runs is not None:
        config = replace(config, runs=args.runs)
    dataset = load_dataset(args.dataset) if args.dataset else gen_dataset(config)
    result = run_bench(dataset, config, out_dir=args.out)
    print(result.markdown())
    log.info("bench finished in %.1f s", result.seconds)
    return 0


def _cmd_trace(args) -> int:
    config = _load_config(args.config)
    checkpoints = None if args.every is None else range(0, config.steps + 1, args.every)
    report = trace_run(args.prompt, args.strategy, config, checkpoints=checkpoints, seed=args.seed)
    print(report.ascii_timeline())
    if args.out:
        report.write_jsonl(args.out)
    if args.svg:
        Path(args.svg).write_text(report.svg())
    return 0


def build_parser():
    import argparse

    p = argparse.ArgumentParser(prog="cogmol", description="Staged molecule generation on a motif grammar.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="write a prompt/reference dataset as JSONL")
    g.add_argument("--config")
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_gen_dataset)

    g = sub.add_parser("gen", help="sample molecules for one prompt")
    g.add_argument("prompt")
    g.add_argument("--strategy", default=Strategy.COARSE_TO_FINE.value)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--config")
    g.set_defaults(func=_cmd_gen)

    g = sub.add_parser("segment", help="split a prompt into component segments")
    g.add_argument("prompt")
    g.add_argument("--use-llm", action="store_true", help="ask the configured LLM endpoint")
    g.set_defaults(func=_cmd_segment)

    g = sub.add_parser("eval", help="score a JSONL file of {reference, samples} records")
    g.add_argument("samples")
    g.set_defaults(func=_cmd_eval)

    g = sub.add_parser("bench", help="compare every strategy on a dataset")
    g.add_argument("--config")
    g.add_argument("--dataset")
    g.add_argument("--prompts", type=int)
    g.add_argument("--runs", type=int)
    g.add_argument("--out", default="bench-out")
    g.set_defaults(func=_cmd_bench)

    g = sub.add_parser("trace", help="decode one chain step by step")
    g.add_argument("prompt")
    g.add_argument("--strategy", default=Strategy.COARSE_TO_FINE.value)
    g.add_argument("--seed", type=int)
    g.add_argument("--every", type=int, help="checkpoint every N steps (default: all)")
    g.add_argument("--config")
    g.add_argument("--out", help="JSONL trace file")
    g.add_argument("--svg", help="SVG timeline file")
    g.set_defaults(func=_cmd_trace)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
