"""Staged (coarse-to-fine) conditional molecule generation on a motif grammar."""

from .codec import MotifSpec, decode, default_dictionary, encode, enumerate_specs, realize
from .cogengine import Strategy, llm_segment, plan, run_chain, run_chains, segment_prompt
from .diffusion import Condition, FactoredOracleDenoiser, LearnedDenoiser, OracleDenoiser, Schedule, sample
from .fingerprint import fingerprint, tanimoto
from .harness import RunConfig, build_models, gen_dataset, run_bench, trace_run
from .metrics import MetricsReport, evaluate
from .molgraph import MolGraph, is_isomorphic, parse_smiles, to_smiles, validate

__version__ = "0.1.0"

__all__ = [
    "Condition",
    "FactoredOracleDenoiser",
    "LearnedDenoiser",
    "MetricsReport",
    "MolGraph",
    "MotifSpec",
    "OracleDenoiser",
    "RunConfig",
    "Schedule",
    "Strategy",
    "build_models",
    "decode",
    "default_dictionary",
    "encode",
    "enumerate_specs",
    "evaluate",
    "fingerprint",
    "gen_dataset",
    "is_isomorphic",
    "llm_segment",
    "parse_smiles",
    "plan",
    "realize",
    "run_bench",
    "run_chain",
    "run_chains",
    "sample",
    "segment_prompt",
    "tanimoto",
    "to_smiles",
    "trace_run",
    "validate",
]
