"""The debate state machine: independent round, consensus checks, debate rounds, Judge."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .agents import (
    AGENT_ORDER,
    FORMAT_REMINDER,
    AgentFailure,
    AgentKind,
    AgentParseError,
    parse_agent_response,
    render_debate_prompt,
    render_initial_prompt,
)
from .backend import JUDGE, MODERATOR, Backend, BackendError, ModelReply, ModelRequest
from .coordination import (
    JSON_RETRY_INSTRUCTION,
    ConsensusEvaluation,
    CoordinationParseError,
    RoundEntry,
    Verdict,
    format_entries,
    parse_judge_reply,
    parse_moderator_reply,
    render_judge_prompt,
    render_moderator_prompt,
)
from .ingest import ProcessedSample
from .labels import Assessment
from .truncation import TokenBudget

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_ROUNDS_LIMIT = 10
DEFAULT_MAX_ROUNDS = 3
DEFAULT_TAU = 0.7
DEFAULT_PARSE_RETRIES = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RoleModel:
    model_name: str = "default"
    temperature: float = 0.0
    max_reply_tokens: int = 1024


@dataclass(frozen=True)
class DebateConfig:
    max_rounds: int = DEFAULT_MAX_ROUNDS
    consensus_threshold: float = DEFAULT_TAU
    active_agents: tuple[AgentKind, ...] = AGENT_ORDER
    budget: TokenBudget = field(default_factory=TokenBudget)
    # Keys: an agent value, "specialist", "moderator", "judge" or "default".
    role_models: Mapping[str, RoleModel] = field(default_factory=dict)
    parallel_round_queries: bool = True
    parse_retries: int = DEFAULT_PARSE_RETRIES
    judge_sees_moderator: bool = True
    templates: Mapping[AgentKind, str] | None = None

    def model_for(self, role: str) -> RoleModel:
        models = self.role_models
        if role in models:
            return models[role]
        if role not in (MODERATOR, JUDGE) and "specialist" in models:
            return models["specialist"]
        return models.get("default", RoleModel())

    def agents_in_order(self) -> list[AgentKind]:
        return [a for a in AGENT_ORDER if a in self.active_agents]

    def summary(self) -> dict:
        return {
            "max_rounds": self.max_rounds,
            "consensus_threshold": self.consensus_threshold,
            "active_agents": [a.value for a in self.agents_in_order()],
        }


def validate_config(config: DebateConfig) -> None:
    """Raise ConfigError unless the configuration is runnable."""
    rounds = config.max_rounds
    if isinstance(rounds, bool) or not isinstance(rounds, int) or not 1 <= rounds <= MAX_ROUNDS_LIMIT:
        raise ConfigError(f"max_rounds must be an integer in [1, {MAX_ROUNDS_LIMIT}], got {rounds!r}")
    tau = config.consensus_threshold
    if isinstance(tau, bool) or not isinstance(tau, (int, float)) or not 0.0 <= tau <= 1.0:
        raise ConfigError(f"consensus threshold must be in [0, 1], got {tau!r}")
    agents = list(config.active_agents)
    if not agents:
        raise ConfigError("at least one specialist agent must remain active")
    for agent in agents:
        if not isinstance(agent, AgentKind):
            raise ConfigError(f"only specialist agents can be selected, got {agent!r}")
    if len(set(agents)) != len(agents):
        raise ConfigError("duplicate agents in active set")
    if config.parse_retries < 0:
        raise ConfigError("parse_retries must be >= 0")


def aggregate_context(latest_responses: Sequence[RoundEntry]) -> str:
    if not latest_responses:
        raise ValueError("cannot aggregate an empty round")
    return format_entries(latest_responses)


@dataclass(frozen=True)
class Exchange:
    """One request/reply pair with the backend, kept verbatim."""

    role: str
    round: int | None
    attempt: int
    prompt: str
    reply: str | None
    latency: float
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    error: str | None = None
    model: str | None = None

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "model": self.model,
            "round": self.round,
            "attempt": self.attempt,
            "prompt": self.prompt,
            "reply": self.reply,
            "latency": self.latency,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "error": self.error,
        }


@dataclass
class DebateTranscript:
    sample_id: str
    gold: Assessment | None
    config: dict
    rounds: list[list[RoundEntry]] = field(default_factory=list)
    moderator_evals: list[ConsensusEvaluation] = field(default_factory=list)
    moderator_failures: list[int] = field(default_factory=list)
    verdict: Verdict | None = None
    consensus_reached: bool = False
    wall_time: float = 0.0
    exchanges: list[Exchange] = field(default_factory=list)
    error: str | None = None

    @property
    def rounds_used(self) -> int:
        return len(self.rounds)

    @property
    def early_termination(self) -> bool:
        return self.consensus_reached and (
            self.rounds_used < self.config["max_rounds"] or self.rounds_used == 1
        )

    @property
    def prediction(self) -> Assessment | None:
        return self.verdict.assessment if self.verdict else None

    def usage(self) -> dict:
        prompt = [e.prompt_tokens for e in self.exchanges if e.reply is not None]
        completion = [e.completion_tokens for e in self.exchanges if e.reply is not None]
        return {
            "requests": len(self.exchanges),
            "prompt_tokens": sum(prompt) if prompt and None not in prompt else None,
            "completion_tokens": sum(completion) if completion and None not in completion else None,
            "latency": sum(e.latency for e in self.exchanges),
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": "debate",
            "sample_id": self.sample_id,
            "gold": self.gold.value if self.gold else None,
            "prediction": self.prediction.value if self.prediction else None,
            "confidence": self.verdict.confidence if self.verdict else None,
            "wall_time": self.wall_time,
            "error": self.error,
            "config": self.config,
            "rounds_used": self.rounds_used,
            "early_termination": self.early_termination,
            "consensus_reached": self.consensus_reached,
            "rounds": [
                {"round": i, "entries": [e.to_dict() for e in entries]}
                for i, entries in enumerate(self.rounds, start=1)
            ],
            "moderator_evals": [
                dict(ev.to_dict(), round=i, failed=i in self.moderator_failures)
                for i, ev in enumerate(self.moderator_evals, start=1)
            ],
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "usage": self.usage(),
            "exchanges": [e.to_dict() for e in self.exchanges],
        }


def _no_consensus(reason: str) -> ConsensusEvaluation:
    return ConsensusEvaluation(
        reached=False,
        assessment=Assessment.UNCERTAIN,
        reasoning=f"moderator unavailable: {reason}",
        confidence=0.0,
        continue_debate=True,
    )


class DebateRunner:
    """Runs debates for one config against one backend.

    Each call to :meth:`run` builds its own transcript, so a runner can be
    shared across threads.
    """

    def __init__(self, config: DebateConfig, backend: Backend):
        validate_config(config)
        self.config = config
        self.backend = backend

    def _query(self, role: str, round: int | None, prompt: str, parse: Callable[[str], object],
               reminder: str) -> tuple[object | None, list[Exchange], str | None]:
        settings = self.config.model_for(role)
        exchanges: list[Exchange] = []
        error = None
        for attempt in range(1, self.config.parse_retries + 2):
            text = prompt if attempt == 1 else f"{prompt}\n\n{reminder}"
            request = ModelRequest(role=role, prompt=text, model_name=settings.model_name,
                                   temperature=settings.temperature, max_reply_tokens=settings.max_reply_tokens)
            try:
                reply: ModelReply = self.backend.complete(request)
            except BackendError as exc:
                exchanges.append(Exchange(role, round, attempt, text, None, 0.0, error=str(exc),
                                          model=settings.model_name))
                return None, exchanges, str(exc)
            try:
                parsed = parse(reply.text)
            except (AgentParseError, CoordinationParseError) as exc:
                error = f"parse error: {exc}"
                exchanges.append(Exchange(role, round, attempt, text, reply.text, reply.latency,
                                          reply.prompt_tokens, reply.completion_tokens, error, settings.model_name))
                continue
            exchanges.append(Exchange(role, round, attempt, text, reply.text, reply.latency,
                                      reply.prompt_tokens, reply.completion_tokens, model=settings.model_name))
            return parsed, exchanges, None
        return None, exchanges, error

    def _ask_specialist(self, agent: AgentKind, round: int, prompt: str) -> tuple[RoundEntry, list[Exchange]]:
        parsed, exchanges, error = self._query(
            agent.value, round, prompt, lambda raw: parse_agent_response(raw, agent, round), FORMAT_REMINDER
        )
        if parsed is None:
            last_reply = exchanges[-1].reply if exchanges else None
            return AgentFailure(agent, round, error or "unknown error", last_reply), exchanges
        return parsed, exchanges

    def _run_round(self, sample: ProcessedSample, round: int, context: str | None) -> tuple[list[RoundEntry], list[Exchange]]:
        cfg = self.config
        agents = cfg.agents_in_order()

        def prompt_for(agent: AgentKind) -> str:
            if context is None:
                return render_initial_prompt(agent, sample, cfg.budget, cfg.templates)
            return render_debate_prompt(agent, sample, context, cfg.budget, cfg.templates)

        def task(agent: AgentKind):
            return self._ask_specialist(agent, round, prompt_for(agent))

        if cfg.parallel_round_queries and len(agents) > 1:
            with ThreadPoolExecutor(max_workers=len(agents)) as pool:
                results = list(pool.map(task, agents))
        else:
            results = [task(a) for a in agents]
        # pool.map preserves input order, so transcripts do not depend on scheduling.
        entries = [entry for entry, _ in results]
        exchanges = [ex for _, batch in results for ex in batch]
        return entries, exchanges

    def run(self, sample: ProcessedSample) -> DebateTranscript:
        cfg = self.config
        transcript = DebateTranscript(sample_id=sample.id, gold=sample.label, config=cfg.summary())
        started = self.backend.clock()
        context = None
        for round in range(1, cfg.max_rounds + 1):
            entries, exchanges = self._run_round(sample, round, context)
            transcript.rounds.append(entries)
            transcript.exchanges.extend(exchanges)
            if all(isinstance(e, AgentFailure) for e in entries):
                transcript.error = f"all specialist agents failed in round {round}"
                transcript.wall_time = self.backend.clock() - started
                return transcript

            evaluation, exchanges, error = self._query(
                MODERATOR, round, render_moderator_prompt(entries, round), parse_moderator_reply,
                JSON_RETRY_INSTRUCTION,
            )
            transcript.exchanges.extend(exchanges)
            if evaluation is None:
                logger.warning("moderator failed for %s round %d: %s", sample.id, round, error)
                evaluation = _no_consensus(error or "unknown error")
                transcript.moderator_failures.append(round)
            transcript.moderator_evals.append(evaluation)
            if evaluation.reached and evaluation.confidence >= cfg.consensus_threshold:
                transcript.consensus_reached = True
                break
            context = aggregate_context(entries)

        judge_prompt = render_judge_prompt(
            transcript.rounds, transcript.moderator_evals, transcript.rounds_used,
            include_moderator=cfg.judge_sees_moderator,
        )
        verdict, exchanges, error = self._query(JUDGE, None, judge_prompt, parse_judge_reply, JSON_RETRY_INSTRUCTION)
        transcript.exchanges.extend(exchanges)
        transcript.wall_time = self.backend.clock() - started
        if verdict is None:
            transcript.error = f"judge failed: {error}"
        else:
            transcript.verdict = verdict
        return transcript


def run_debate(sample: ProcessedSample, config: DebateConfig, backend: Backend) -> DebateTranscript:
    return DebateRunner(config, backend).run(sample)
