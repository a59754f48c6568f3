"""Multi-agent pipeline that turns book chapters into podcast-style interpretations."""

from .domain import (
    Chapter,
    Manuscript,
    OralScript,
    PipelineConfig,
    TopicCaseSet,
    TopicDraft,
    validate,
)
from .gateway import Gateway, HttpProvider, ScriptedProvider
from .orchestrator import Orchestrator, refine_loop, resume

__all__ = [
    "Chapter",
    "Gateway",
    "HttpProvider",
    "Manuscript",
    "OralScript",
    "Orchestrator",
    "PipelineConfig",
    "ScriptedProvider",
    "TopicCaseSet",
    "TopicDraft",
    "refine_loop",
    "resume",
    "validate",
]
__version__ = "0.1.0"
