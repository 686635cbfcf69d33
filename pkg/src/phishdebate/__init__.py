"""Multi-agent LLM debate for phishing website detection."""

from .agents import AgentFailure, AgentKind, AgentResponse, parse_agent_response
from .backend import LiveBackend, ModelReply, ModelRequest, ScriptedBackend
from .coordination import ConsensusEvaluation, Verdict, parse_judge_reply, parse_moderator_reply
from .engine import DebateConfig, DebateTranscript, run_debate, validate_config
from .evaluation import ConfusionMatrix, compute_metrics, run_benchmark, scenario_analysis, score
from .ingest import ProcessedSample, clean_html, extract_visible_text, load_dataset
from .labels import Assessment
from .truncation import TokenBudget, estimate_tokens, truncate_html, truncate_text

__version__ = "0.1.0"

__all__ = [
    "AgentFailure",
    "AgentKind",
    "AgentResponse",
    "Assessment",
    "ConfusionMatrix",
    "ConsensusEvaluation",
    "DebateConfig",
    "DebateTranscript",
    "LiveBackend",
    "ModelReply",
    "ModelRequest",
    "ProcessedSample",
    "ScriptedBackend",
    "TokenBudget",
    "Verdict",
    "clean_html",
    "compute_metrics",
    "estimate_tokens",
    "extract_visible_text",
    "load_dataset",
    "parse_agent_response",
    "parse_judge_reply",
    "parse_moderator_reply",
    "run_benchmark",
    "run_debate",
    "scenario_analysis",
    "score",
    "truncate_html",
    "truncate_text",
    "validate_config",
]
