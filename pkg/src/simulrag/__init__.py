"""Simulation-grounded question answering.

The pipeline samples several candidate answers, decomposes them into
atomic claims, estimates per-claim confidence from an answer-claim
entailment graph, selects the shaky claims that a mechanistic simulator
can actually check, verifies and repairs them against a simulation run,
and synthesizes the final answer from what survives.
"""

from .domain import (
    Answer,
    Claim,
    Handbook,
    ParamSettings,
    PipelineConfig,
    PipelineResult,
    QAItem,
    Question,
    SimulationOutput,
)
from .errors import SimulragError
from .gateway import HttpBackend, LlmGateway, ScriptedBackend
from .pipeline import run

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "Claim",
    "Handbook",
    "HttpBackend",
    "LlmGateway",
    "ParamSettings",
    "PipelineConfig",
    "PipelineResult",
    "QAItem",
    "Question",
    "ScriptedBackend",
    "SimulationOutput",
    "SimulragError",
    "run",
    "__version__",
]
