"""Prompt decomposition, stage planning and staged sampling.

A prompt is split into segments, one per component mention, each tagged with
its granularity. A plan orders the segments and turns them into stages; each
stage after the first re-noises the previous stage's latent to a shallow level
and denoises it under that stage's condition.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .align import AlignModel
from .codec import (
    GROUPS,
    MODIFIERS,
    SCAFFOLDS,
    TOKEN_INDEX,
    VOCAB,
    Dictionary,
    MotifSpec,
    bag_of_tokens,
    decode,
    granularity,
    realize,
)
from .diffusion import Condition, ConditionBatch, Denoiser, Schedule, sample
from .molgraph import MolGraph, to_smiles

GRANULARITY_RANK = {"large": 0, "medium": 1, "small": 2}
DEFAULT_RHO = 0.2


class SegmentationError(ValueError):
    pass


class NoScaffoldFound(SegmentationError):
    pass


class UnknownVocabulary(SegmentationError):
    pass


class ContradictoryPrompt(SegmentationError):
    pass


class EmptySegments(ValueError):
    pass


# --------------------------------------------------------------------------
# surface forms
# --------------------------------------------------------------------------

# token -> (singular noun phrase, plural noun phrase)
SURFACE = {
    **{s: (f"{s} ring", f"{s} rings") for s in SCAFFOLDS},
    **{g: (f"{g} group", f"{g} groups") for g in GROUPS},
    **{m: (f"{m} atom", f"{m} atoms") for m in MODIFIERS},
}

# alternative names accepted by the parser
SYNONYMS = {
    "amino": "amine",
    "hydroxy": "hydroxyl",
    "carboxy": "carboxyl",
    "cyano": "nitrile",
    "fluoro": "fluorine",
    "chloro": "chlorine",
    "bromo": "bromine",
    "iodo": "iodine",
}

NUMBER_WORDS = {"a": 1, "an": 1, "one": 1, "single": 1, "two": 2, "three": 3}
COUNT_WORDS = {1: "a", 2: "two", 3: "three"}
_HEADS = ("ring", "rings", "group", "groups", "atom", "atoms", "substituent", "substituents", "core")
_WORD = re.compile(r"[a-z]+")


@dataclass(frozen=True)
class PromptSegment:
    text: str
    components: tuple[str, ...]
    granularity: str

    def __post_init__(self):
        if not self.components:
            raise ValueError("a segment needs at least one component")
        kinds = {granularity(c) for c in self.components}
        if kinds != {self.granularity}:
            raise ValueError(f"segment {self.text!r} mixes granularities {sorted(kinds)}")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def sort_key(self) -> tuple[int, int]:
        return GRANULARITY_RANK[self.granularity], TOKEN_INDEX[self.components[0]]


def mention(token: str, count: int = 1) -> str:
    """Surface noun phrase for ``count`` copies of ``token`` ("two nitro groups")."""
    sing, plural = SURFACE[token]
    if count == 1:
        article = "an" if sing[0] in "aeiou" else "a"
        return f"{article} {sing}"
    return f"{COUNT_WORDS[count]} {plural}"


def _lookup(word: str) -> str | None:
    word = SYNONYMS.get(word, word)
    return word if word in TOKEN_INDEX else None


def segment_prompt(text: str) -> list[PromptSegment]:
    """Rule-based split of a grammar prompt into component mentions.

    Mentions of the same token are merged; segments come back ordered by
    granularity (scaffold first) and then vocabulary order.
    """
    words = [(m.group(0), m.start(), m.end()) for m in _WORD.finditer(text.lower())]
    counts: dict[str, int] = {}
    spans: dict[str, list[tuple[int, int]]] = {}
    for i, (w, start, end) in enumerate(words):
        tok = _lookup(w)
        nxt = words[i + 1][0] if i + 1 < len(words) else ""
        if tok is None:
            if nxt in ("group", "groups", "ring", "rings") and w not in NUMBER_WORDS and w not in ("the", "both"):
                raise UnknownVocabulary(f"unknown component {w!r} at offset {start}")
            continue
        n = 1
        prev = words[i - 1][0] if i > 0 else ""
        if prev in NUMBER_WORDS:
            n = NUMBER_WORDS[prev]
        first = words[i - 1][1] if prev in NUMBER_WORDS else start
        last = words[i + 1][2] if nxt in _HEADS else end
        counts[tok] = counts.get(tok, 0) + n
        spans.setdefault(tok, []).append((first, last))
    scaffolds = [t for t in counts if t in SCAFFOLDS]
    if not scaffolds:
        raise NoScaffoldFound(f"no scaffold mentioned in {text!r}")
    if len(scaffolds) > 1 or counts[scaffolds[0]] > 1:
        raise ContradictoryPrompt(f"more than one scaffold in {text!r}")
    segments = []
    for tok, n in counts.items():
        surface = " / ".join(text[a:b] for a, b in spans[tok])
        segments.append(PromptSegment(surface, (tok,) * n, granularity(tok)))
    return sorted(segments, key=lambda s: s.sort_key)


def segments_to_spec(segments: Sequence[PromptSegment]) -> MotifSpec:
    tokens = [c for s in segments for c in s.components]
    scaffolds = [t for t in tokens if t in SCAFFOLDS]
    if len(scaffolds) != 1:
        raise NoScaffoldFound("segments must contain exactly one scaffold")
    return MotifSpec(
        scaffolds[0],
        tuple(t for t in tokens if t in GROUPS),
        tuple(t for t in tokens if t in MODIFIERS),
    )


def stage_sentence(components: Sequence[str]) -> str:
    """Canonical sentence for a cumulative stage ("The molecule is made of ...")."""
    counts: dict[str, int] = {}
    for c in components:
        counts[c] = counts.get(c, 0) + 1
    parts = [mention(t, n) for t, n in sorted(counts.items(), key=lambda kv: TOKEN_INDEX[kv[0]])]
    if len(parts) == 1:
        body = parts[0]
    else:
        body = ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"The molecule is made of {body}."


# --------------------------------------------------------------------------
# planning
# --------------------------------------------------------------------------


class Strategy(str, enum.Enum):
    ONE_SHOT = "OneShot"
    COARSE_TO_FINE = "CoG-CoarseToFine"
    FINE_TO_COARSE = "CoG-FineToCoarse"
    NON_CUMULATIVE = "CoG-NonCumulative"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        key = name.lower().replace("-", "").replace("_", "").replace("cog", "")
        for s in cls:
            if s.value.lower().replace("-", "").replace("cog", "") == key:
                return s
        raise ValueError(f"unknown strategy {name!r}; choose from {[s.value for s in cls]}")


@dataclass(frozen=True)
class Stage:
    components: tuple[str, ...]
    rho: float

    @property
    def sentence(self) -> str:
        return stage_sentence(self.components)


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]
    strategy: Strategy

    def __post_init__(self):
        if not self.stages:
            raise EmptySegments("a plan needs at least one stage")
        if self.stages[0].rho != 1.0:
            raise ValueError("the first stage must be a full run (rho = 1)")
        for st in self.stages[1:]:
            if not 0.0 < st.rho <= 1.0:
                raise ValueError(f"warm-start fraction {st.rho} outside (0, 1]")

    def __len__(self) -> int:
        return len(self.stages)


def plan(
    segments: Sequence[PromptSegment], strategy: Strategy | str, rho: float | Sequence[float] = DEFAULT_RHO
) -> StagePlan:
    """Order segments for ``strategy`` and build the stage list.

    ``rho`` is the warm-start fraction of every later stage, or one value per
    later stage.
    """
    if not segments:
        raise EmptySegments("nothing to plan")
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    ordered = sorted(segments, key=lambda s: s.sort_key)
    if len(ordered) == 1 or strategy is Strategy.ONE_SHOT:
        comps = tuple(c for s in ordered for c in s.components)
        return StagePlan((Stage(comps, 1.0),), Strategy.ONE_SHOT)
    if strategy is Strategy.FINE_TO_COARSE:
        ordered = ordered[::-1]
    n_later = len(ordered) - 1
    rhos = [float(rho)] * n_later if np.isscalar(rho) else [float(r) for r in rho]
    if len(rhos) != n_later:
        raise ValueError(f"need {n_later} warm-start fractions, got {len(rhos)}")
    stages = []
    acc: tuple[str, ...] = ()
    for k, seg in enumerate(ordered):
        if strategy is Strategy.NON_CUMULATIVE:
            comps = seg.components
        else:
            acc = acc + seg.components
            comps = acc
        stages.append(Stage(comps, 1.0 if k == 0 else rhos[k - 1]))
    return StagePlan(tuple(stages), strategy)


# --------------------------------------------------------------------------
# staged sampling
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StageTrace:
    index: int
    components: tuple[str, ...]
    t_start: int
    latent: np.ndarray
    specs: tuple[MotifSpec, ...]
    checkpoints: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ChainResult:
    latents: np.ndarray  # (n, d)
    specs: tuple[MotifSpec, ...]
    trace: tuple[StageTrace, ...]

    @property
    def graphs(self) -> list[MolGraph]:
        return [realize(s) for s in self.specs]

    @property
    def graph(self) -> MolGraph:
        return realize(self.specs[0])

    @property
    def smiles(self) -> list[str]:
        return [to_smiles(g) for g in self.graphs]


def stage_condition(
    components: Sequence[str], align_model: AlignModel | None, mode: str = "text"
) -> Condition:
    """Condition for one stage.

    ``mode`` "text" encodes the stage's components through the alignment map,
    "hard" requires them as a component subset, "both" does both.
    """
    if mode not in ("text", "hard", "both"):
        raise ValueError(f"unknown conditioning mode {mode!r}")
    embedding = None
    if mode in ("text", "both"):
        if align_model is None:
            raise ValueError("text conditioning needs an alignment model")
        embedding = align_model.embed(bag_of_tokens(components)[None, :])[0]
    required = tuple(components) if mode in ("hard", "both") else ()
    return Condition(required=required, embedding=embedding)


def warm_start_step(rho: float, steps: int) -> int:
    return min(steps, int(math.ceil(rho * steps - 1e-9)))


def run_chains(
    plans: Sequence[StagePlan],
    denoiser: Denoiser,
    schedule: Schedule,
    align_model: AlignModel | None,
    rngs: Sequence[np.random.Generator],
    dictionary: Dictionary,
    n: int = 1,
    conditioning: str = "text",
    checkpoints: Sequence[int] = (),
) -> list[ChainResult]:
    """Run many chains at once, ``n`` samples each, one generator per plan.

    Stage k of every plan that has one is denoised in a single batched call;
    each plan's random draws come from its own generator, so a plan's result
    does not depend on which other plans share the batch.
    """
    if len(plans) != len(rngs):
        raise ValueError("one generator per plan required")
    if not plans:
        return []
    latents: list[np.ndarray | None] = [None] * len(plans)
    traces: list[list[StageTrace]] = [[] for _ in plans]
    for k in range(max(len(p) for p in plans)):
        active = [i for i, p in enumerate(plans) if len(p) > k]
        conds = [stage_condition(plans[i].stages[k].components, align_model, conditioning) for i in active]
        if k == 0:
            t_start, init = schedule.steps, None
        else:
            rhos = {plans[i].stages[k].rho for i in active}
            # prompts with different warm-start fractions cannot share a call
            if len(rhos) > 1:
                for rho in sorted(rhos):
                    sub = [i for i in active if plans[i].stages[k].rho == rho]
                    _advance(sub, k, plans, latents, traces, denoiser, schedule, align_model, rngs,
                             dictionary, n, conditioning, checkpoints)
                continue
            t_start = warm_start_step(rhos.pop(), schedule.steps)
            init = np.concatenate([latents[i] for i in active])
        _stage_call(active, k, conds, t_start, init, plans, latents, traces, denoiser, schedule, rngs,
                    dictionary, n, checkpoints)
    return [ChainResult(latents[i], traces[i][-1].specs, tuple(traces[i])) for i in range(len(plans))]


def _advance(active, k, plans, latents, traces, denoiser, schedule, align_model, rngs, dictionary, n,
             conditioning, checkpoints):
    conds = [stage_condition(plans[i].stages[k].components, align_model, conditioning) for i in active]
    t_start = warm_start_step(plans[active[0]].stages[k].rho, schedule.steps)
    init = np.concatenate([latents[i] for i in active])
    _stage_call(active, k, conds, t_start, init, plans, latents, traces, denoiser, schedule, rngs,
                dictionary, n, checkpoints)


def _stage_call(active, k, conds, t_start, init, plans, latents, traces, denoiser, schedule, rngs,
                dictionary, n, checkpoints):
    if len(active) == 1:
        cond, rng = conds[0], rngs[active[0]]
    else:
        cond, rng = ConditionBatch(tuple(conds), n), [rngs[i] for i in active]
    out = sample(
        denoiser, schedule, cond, t_start=t_start, init=init, rng=rng,
        n=n * len(active) if init is None else None, checkpoints=checkpoints,
    )
    z, snaps = out if checkpoints else (out, {})
    z = np.atleast_2d(z)
    for j, i in enumerate(active):
        rows = slice(j * n, (j + 1) * n)
        zi = z[rows].copy()
        specs = tuple(decode(v, dictionary) for v in zi)
        own = {t: np.atleast_2d(v)[rows].copy() for t, v in snaps.items()}
        traces[i].append(StageTrace(k, plans[i].stages[k].components, t_start, zi, specs, own))
        latents[i] = zi


def run_chain(
    stage_plan: StagePlan,
    denoiser: Denoiser,
    schedule: Schedule,
    align_model: AlignModel | None,
    rng: np.random.Generator,
    dictionary: Dictionary,
    n: int = 1,
    conditioning: str = "text",
    checkpoints: Sequence[int] = (),
) -> ChainResult:
    """Sample through every stage, warm-starting each from the previous output.

    Stage 1 starts from fresh noise over the full schedule; stage k > 1
    re-noises stage k-1's latent to step ceil(rho_k * S) and denoises it under
    stage k's condition. ``n`` chains run side by side.
    """
    return run_chains([stage_plan], denoiser, schedule, align_model, [rng], dictionary, n, conditioning,
                      checkpoints)[0]


# --------------------------------------------------------------------------
# optional LLM segmentation
# --------------------------------------------------------------------------

PROMPT_FILES = {
    "plain": "segment_plain_v1.txt",
    "detailed": "segment_detailed_v1.txt",
    "counted": "segment_real_v1.txt",
}
ENV_BASE_URL = "COGMOL_LLM_BASE_URL"
ENV_TOKEN = "COGMOL_LLM_TOKEN"
ENV_MODEL = "COGMOL_LLM_MODEL"
ENV_TIMEOUT = "COGMOL_LLM_TIMEOUT"

_log = logging.getLogger(__name__)


class EndpointUnreachable(ConnectionError):
    pass


class MalformedLLMResponse(ValueError):
    pass


def system_prompt(variant: str = "counted") -> str:
    """One of the shipped segmentation system prompts, with its {DESCRIPTION} slot intact."""
    if variant not in PROMPT_FILES:
        raise ValueError(f"unknown prompt variant {variant!r}; choose from {sorted(PROMPT_FILES)}")
    return resources.files("cogmol").joinpath("data", "prompts", PROMPT_FILES[variant]).read_text()


@dataclass(frozen=True)
class LLMConfig:
    base_url: str = ""
    token: str = ""
    model: str = ""
    timeout: float = 30.0

    @classmethod
    def from_env(cls, env: dict | None = None) -> "LLMConfig":
        env = os.environ if env is None else env
        return cls(
            env.get(ENV_BASE_URL, ""),
            env.get(ENV_TOKEN, ""),
            env.get(ENV_MODEL, ""),
            float(env.get(ENV_TIMEOUT, 30.0)),
        )

    @property
    def configured(self) -> bool:
        return bool(self.base_url)


@dataclass(frozen=True)
class LLMSegmentation:
    n: int
    sentences: tuple[str, ...]  # cumulative, coarse first
    source: str  # "llm" or "rules"
    segments: tuple[PromptSegment, ...] = ()
    reverse: tuple[str, ...] = ()  # fine-first pair from the four-output prompts


def parse_counted(text: str) -> tuple[int, tuple[str, ...]]:
    """Parse a "Number: n" reply followed by n tab-separated cumulative sentences."""
    m = re.search(r"Number:\s*(\d+)", text)
    if not m:
        raise MalformedLLMResponse("no 'Number: n' line in the reply")
    n = int(m.group(1))
    rest = text[m.end():]
    rest = re.sub(r"^\s*Segmentations?:", "", rest.lstrip())
    sentences = tuple(s.strip() for s in re.split(r"[\t\n]+", rest) if s.strip())
    if n < 1 or len(sentences) != n:
        raise MalformedLLMResponse(f"reply announces {n} parts but carries {len(sentences)} sentences")
    return n, sentences


def parse_four_outputs(text: str) -> tuple[tuple[str, str], tuple[str, str]]:
    """Parse the (A only, AB, C only, BC) reply of the three-component prompts."""
    found = {}
    for line in text.splitlines():
        m = re.match(r"\s*(A only|AB|C only|BC)\s*:\s*(.+)", line)
        if m:
            found[m.group(1)] = m.group(2).strip()
    if len(found) != 4:
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if len(lines) != 4:
            raise MalformedLLMResponse("expected four descriptions (A only, AB, C only, BC)")
        found = dict(zip(("A only", "AB", "C only", "BC"), lines))
    return (found["A only"], found["AB"]), (found["C only"], found["BC"])


def _chat(config: LLMConfig, system: str, user: str) -> str:
    body = json.dumps({
        "model": config.model,
        "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        "temperature": 0,
    }).encode()
    headers = {"Content-Type": "application/json"}
    if config.token:
        headers["Authorization"] = f"Bearer {config.token}"
    req = urllib.request.Request(config.base_url.rstrip("/") + "/chat/completions", body, headers)
    try:
        with urllib.request.urlopen(req, timeout=config.timeout) as resp:
            payload = resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise EndpointUnreachable(str(exc)) from exc
    try:
        return json.loads(payload)["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedLLMResponse("reply is not a chat-completion object") from exc


def _rules(text: str) -> LLMSegmentation:
    segments = segment_prompt(text)
    sentences = tuple(
        stage_sentence([c for s in segments[: k + 1] for c in s.components]) for k in range(len(segments))
    )
    return LLMSegmentation(len(segments), sentences, "rules", tuple(segments))


_request_lock = threading.Lock()


def llm_segment(
    text: str, config: LLMConfig | None = None, variant: str = "counted", fallback: bool = True
) -> LLMSegmentation:
    """Ask a chat-completion endpoint to segment a description.

    With ``fallback`` (the default) an unset endpoint, a network failure or a
    reply that does not parse falls back to :func:`segment_prompt`, logging a
    warning; without it those conditions raise.
    """
    config = LLMConfig.from_env() if config is None else config
    if not config.configured:
        if not fallback:
            raise EndpointUnreachable("no LLM endpoint configured")
        _log.warning("no LLM endpoint configured; using rule-based segmentation")
        return _rules(text)
    system = system_prompt(variant).replace("{DESCRIPTION}", text)
    try:
        with _request_lock:
            reply = _chat(config, system, text)
        if variant == "counted":
            n, sentences = parse_counted(reply)
            return LLMSegmentation(n, sentences, "llm")
        forward, reverse = parse_four_outputs(reply)
        return LLMSegmentation(3, forward, "llm", reverse=reverse)
    except (EndpointUnreachable, MalformedLLMResponse) as exc:
        if not fallback:
            raise
        _log.warning("LLM segmentation failed (%s); using rule-based segmentation", exc)
        return _rules(text)
