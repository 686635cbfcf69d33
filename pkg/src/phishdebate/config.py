"""Engine configuration: defaults, the ``phishdebate.json`` file, CLI overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .agents import AGENT_ORDER, AgentKind, load_template_overrides
from .backend import DEFAULT_ATTEMPTS, DEFAULT_MAX_INFLIGHT, DEFAULT_TIMEOUT, LiveBackend
from .engine import (
    DEFAULT_MAX_ROUNDS,
    DEFAULT_PARSE_RETRIES,
    DEFAULT_TAU,
    ConfigError,
    DebateConfig,
    RoleModel,
    validate_config,
)
from .truncation import (
    DEFAULT_CHARS_PER_TOKEN,
    DEFAULT_HTML_TOKEN_LIMIT,
    DEFAULT_TEXT_TOKEN_LIMIT,
    TokenBudget,
)

CONFIG_FILENAME = "phishdebate.json"


@dataclass(frozen=True)
class EngineConfig:
    # backend
    endpoint: str | None = None
    api_path: str = "/v1/chat/completions"
    api_key_env: str | None = None
    models: Mapping[str, str] = field(default_factory=lambda: {"default": "default"})
    temperature: float = 0.0
    max_reply_tokens: int = 1024
    timeout: float = DEFAULT_TIMEOUT
    attempts: int = DEFAULT_ATTEMPTS
    backoff_base: float = 1.0
    max_inflight: int = DEFAULT_MAX_INFLIGHT
    # debate
    max_rounds: int = DEFAULT_MAX_ROUNDS
    tau: float = DEFAULT_TAU
    exclude: tuple[str, ...] = ()
    parallel_round_queries: bool = True
    parse_retries: int = DEFAULT_PARSE_RETRIES
    judge_sees_moderator: bool = True
    # budget
    model_id: str = "default"
    html_token_limit: int = DEFAULT_HTML_TOKEN_LIMIT
    text_token_limit: int = DEFAULT_TEXT_TOKEN_LIMIT
    chars_per_token: float = DEFAULT_CHARS_PER_TOKEN
    # misc
    templates: Mapping[str, str] = field(default_factory=dict)
    output_dir: str = "phishdebate-out"
    price_table: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    _SECTIONS = {
        "backend": ("endpoint", "api_path", "api_key_env", "models", "temperature", "max_reply_tokens",
                    "timeout", "attempts", "backoff_base", "max_inflight"),
        "debate": ("max_rounds", "tau", "exclude", "parallel_round_queries", "parse_retries",
                   "judge_sees_moderator"),
        "budget": ("model_id", "html_token_limit", "text_token_limit", "chars_per_token"),
    }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: "EngineConfig | None" = None) -> "EngineConfig":
        """Overlay a config-file mapping on ``base`` (defaults when omitted).

        Keys may be nested under ``backend``/``debate``/``budget`` or given flat.
        """
        known = {f.name for f in fields(cls)}
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if key in cls._SECTIONS:
                if not isinstance(value, Mapping):
                    raise ConfigError(f"config section {key!r} must be an object")
                for sub, subvalue in value.items():
                    if sub not in cls._SECTIONS[key]:
                        raise ConfigError(f"unknown key {key}.{sub}")
                    flat[sub] = subvalue
            elif key in known:
                flat[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if "exclude" in flat:
            flat["exclude"] = _names(flat["exclude"])
        if "price_table" in flat:
            flat["price_table"] = {k: (float(v[0]), float(v[1])) for k, v in flat["price_table"].items()}
        return replace(base or cls(), **flat)

    @classmethod
    def load(cls, path: str | Path | None) -> "EngineConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError("config file must hold a JSON object")
        cfg = cls.from_dict(data)
        if cfg.templates:
            base = Path(path).parent
            cfg = replace(cfg, templates={k: str(base / v) for k, v in cfg.templates.items()})
        return cfg

    def with_overrides(self, **overrides) -> "EngineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def budget(self) -> TokenBudget:
        try:
            return TokenBudget(self.model_id, self.html_token_limit, self.text_token_limit, self.chars_per_token)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def excluded_agents(self) -> frozenset[AgentKind]:
        try:
            return frozenset(AgentKind.from_name(n) for n in self.exclude)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def role_model(self, role: str) -> RoleModel:
        name = self.models.get(role) or self.models.get("default", "default")
        return RoleModel(name, self.temperature, self.max_reply_tokens)

    def debate_config(self) -> DebateConfig:
        excluded = self.excluded_agents()
        roles = {role: self.role_model(role) for role in self.models}
        templates = None
        if self.templates:
            try:
                templates = load_template_overrides(self.templates)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"bad template override: {exc}") from exc
        config = DebateConfig(
            max_rounds=self.max_rounds,
            consensus_threshold=self.tau,
            active_agents=tuple(a for a in AGENT_ORDER if a not in excluded),
            budget=self.budget(),
            role_models=roles,
            parallel_round_queries=self.parallel_round_queries,
            parse_retries=self.parse_retries,
            judge_sees_moderator=self.judge_sees_moderator,
            templates=templates,
        )
        validate_config(config)
        return config

    def live_backend(self) -> LiveBackend:
        if not self.endpoint:
            raise ConfigError("live backend needs backend.endpoint in the config")
        return LiveBackend(
            endpoint=self.endpoint,
            path=self.api_path,
            api_key_env=self.api_key_env,
            timeout=self.timeout,
            attempts=self.attempts,
            backoff_base=self.backoff_base,
            max_inflight=self.max_inflight,
        )


def _names(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = value.split(",")
    return tuple(v.strip() for v in value if v and v.strip())
