"""Executable step-level speculation over virtual-time model backends."""

from .backends import CorpusBackend, ModelBackend, make_mock_backends, random_corpus
from .pipeline import (
    CycleOutcome,
    GenerationReport,
    PipelineConfig,
    run_async_pipeline,
    run_autoregressive_baseline,
    run_multibranch_cycle,
    run_pipeline,
    run_sync_cycle,
    run_sync_pipeline,
)
from .remote import EndpointConfig, RemoteBackend, remote_backend
from .token_sd import TableTokenModel, TokenSDConfig, acceptance_tables, token_sd_generate
from .trace import BOUNDARY, EOS, StepText, Trace, split_steps
from .verifiers import (
    ExactMatch,
    JudgeAdapter,
    NgramSimilarity,
    RandomAccept,
    ScoreThreshold,
    parse_verifier,
    verify,
)

__all__ = [
    "BOUNDARY",
    "EOS",
    "CorpusBackend",
    "CycleOutcome",
    "EndpointConfig",
    "ExactMatch",
    "GenerationReport",
    "JudgeAdapter",
    "ModelBackend",
    "NgramSimilarity",
    "PipelineConfig",
    "RandomAccept",
    "RemoteBackend",
    "ScoreThreshold",
    "StepText",
    "TableTokenModel",
    "TokenSDConfig",
    "Trace",
    "acceptance_tables",
    "make_mock_backends",
    "random_corpus",
    "remote_backend",
    "run_async_pipeline",
    "run_autoregressive_baseline",
    "run_multibranch_cycle",
    "run_pipeline",
    "run_sync_cycle",
    "run_sync_pipeline",
    "split_steps",
    "token_sd_generate",
    "verify",
]
