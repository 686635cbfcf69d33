"""Moderator and Judge prompts, and parsing of their JSON replies."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

from .agents import AGENT_ORDER, AgentFailure, AgentResponse, format_confidence, load_template
from .labels import Assessment

RoundEntry = Union[AgentResponse, AgentFailure]

UNAVAILABLE = "analysis unavailable"
JSON_RETRY_INSTRUCTION = "Reply with valid JSON only."

MODERATOR_SCHEMA_INSTRUCTION = """Respond with a single JSON object and nothing else, using exactly these keys:
{
  "consensus": "Yes" or "No",
  "assessment": "PHISHING" or "LEGITIMATE" or "UNCERTAIN",
  "reasoning": "<why the agents do or do not agree, and what the evidence supports>",
  "confidence": <number between 0 and 1>,
  "continue_debate": true or false
}
Answer "consensus": "Yes" only with a PHISHING or LEGITIMATE assessment, and then set "continue_debate" to false."""

JUDGE_SCHEMA_INSTRUCTION = """Respond with a single JSON object and nothing else, using exactly these keys:
{
  "assessment": "PHISHING" or "LEGITIMATE",
  "confidence": <number between 0 and 1>,
  "reasoning": "<comprehensive reasoning for the decision>",
  "evidence_summary": "<summary of the key evidence>"
}"""

JUDGE_DECISION_REMINDER = "You must make a definitive decision between PHISHING or LEGITIMATE."


class CoordinationParseError(ValueError):
    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class ConsensusEvaluation:
    reached: bool
    assessment: Assessment
    reasoning: str
    confidence: float
    continue_debate: bool

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if self.reached and self.assessment is Assessment.UNCERTAIN:
            raise ValueError("consensus reached with an UNCERTAIN assessment")
        if self.reached and self.continue_debate:
            raise ValueError("consensus reached but continue_debate is true")

    def to_dict(self) -> dict:
        return {
            "consensus": "Yes" if self.reached else "No",
            "assessment": self.assessment.value,
            "reasoning": self.reasoning,
            "confidence": self.confidence,
            "continue_debate": self.continue_debate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Verdict:
    assessment: Assessment
    confidence: float
    reasoning: str
    evidence_summary: str

    def __post_init__(self):
        if not self.assessment.is_definitive:
            raise ValueError("judge verdict must be PHISHING or LEGITIMATE")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")

    def to_dict(self) -> dict:
        return {
            "assessment": self.assessment.value,
            "confidence": self.confidence,
            "reasoning": self.reasoning,
            "evidence_summary": self.evidence_summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def sort_entries(entries: Sequence[RoundEntry]) -> list[RoundEntry]:
    return sorted(entries, key=lambda e: AGENT_ORDER.index(e.agent))


def format_entry(entry: RoundEntry) -> str:
    """One agent block as shown to peers, the Moderator and the Judge."""
    header = f"[{entry.agent.display_name}]"
    if isinstance(entry, AgentFailure):
        return f"{header}\nStatus: {UNAVAILABLE}"
    return (
        f"{header}\n"
        f"Claim: {entry.claim.value}\n"
        f"Confidence: {format_confidence(entry.confidence)}\n"
        f"Evidence: {entry.evidence}"
    )


def format_entries(entries: Sequence[RoundEntry]) -> str:
    return "\n\n".join(format_entry(e) for e in sort_entries(entries))


def render_moderator_prompt(round_responses: Sequence[RoundEntry], round: int) -> str:
    if not round_responses:
        raise ValueError("moderator prompt needs at least one agent response")
    rounds = {e.round for e in round_responses}
    if rounds != {round}:
        raise ValueError(f"responses from rounds {sorted(rounds)} given for round {round}")
    return "\n\n".join(
        [
            load_template("moderator"),
            f"Specialist agent analyses for round {round}:",
            format_entries(round_responses),
            MODERATOR_SCHEMA_INSTRUCTION,
        ]
    )


def format_consensus(evaluation: ConsensusEvaluation, round: int) -> str:
    return (
        f"Moderator evaluation after round {round}: consensus={'Yes' if evaluation.reached else 'No'}, "
        f"assessment={evaluation.assessment.value}, confidence={format_confidence(evaluation.confidence)}\n"
        f"Moderator reasoning: {evaluation.reasoning}"
    )


def render_judge_prompt(
    full_history: Sequence[Sequence[RoundEntry]],
    moderator_history: Sequence[ConsensusEvaluation],
    rounds_used: int,
    include_moderator: bool = True,
) -> str:
    if not full_history or not any(full_history):
        raise ValueError("judge prompt needs at least one round of responses")
    parts = [load_template("judge"), f"Complete debate history ({rounds_used} round(s)):"]
    for index, entries in enumerate(full_history, start=1):
        section = [f"=== Round {index} ===", format_entries(entries)]
        if include_moderator and index <= len(moderator_history):
            section.append(format_consensus(moderator_history[index - 1], index))
        parts.append("\n\n".join(section))
    parts.append(JUDGE_DECISION_REMINDER)
    parts.append(JUDGE_SCHEMA_INSTRUCTION)
    return "\n\n".join(parts)


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def extract_json_object(raw: str) -> dict:
    """Return the first JSON object in ``raw``, ignoring markdown fences and chatter."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(raw)]
    candidates.append(raw)
    decoder = json.JSONDecoder()
    for text in candidates:
        start = text.find("{")
        while start >= 0:
            try:
                obj, _ = decoder.raw_decode(text, start)
            except ValueError:
                start = text.find("{", start + 1)
                continue
            if isinstance(obj, dict):
                return obj
            start = text.find("{", start + 1)
    raise ValueError("no JSON object found")


def _require(obj: dict, key: str, raw: str):
    if key not in obj:
        raise CoordinationParseError(f"missing key {key!r}", raw)
    return obj[key]


def _confidence(obj: dict, raw: str) -> float:
    value = _require(obj, "confidence", raw)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or math.isnan(value):
        raise CoordinationParseError(f"confidence is not a number: {value!r}", raw)
    if not 0.0 <= value <= 1.0:
        raise CoordinationParseError(f"confidence out of range: {value!r}", raw)
    return float(value)


def _string(obj: dict, key: str, raw: str) -> str:
    value = _require(obj, key, raw)
    if not isinstance(value, str):
        raise CoordinationParseError(f"{key} must be a string", raw)
    return value


def _load(raw: str) -> dict:
    try:
        return extract_json_object(raw)
    except ValueError as exc:
        raise CoordinationParseError(str(exc), raw) from None


def parse_moderator_reply(raw: str) -> ConsensusEvaluation:
    obj = _load(raw)
    consensus = _require(obj, "consensus", raw)
    if isinstance(consensus, bool):
        reached = consensus
    elif isinstance(consensus, str) and consensus.strip().lower() in ("yes", "no"):
        reached = consensus.strip().lower() == "yes"
    else:
        raise CoordinationParseError(f"consensus must be Yes or No, got {consensus!r}", raw)
    try:
        assessment = Assessment.parse(_require(obj, "assessment", raw))
    except ValueError as exc:
        raise CoordinationParseError(str(exc), raw) from None
    continue_debate = _require(obj, "continue_debate", raw)
    if not isinstance(continue_debate, bool):
        raise CoordinationParseError("continue_debate must be a boolean", raw)
    try:
        return ConsensusEvaluation(
            reached=reached,
            assessment=assessment,
            reasoning=_string(obj, "reasoning", raw),
            confidence=_confidence(obj, raw),
            continue_debate=continue_debate,
        )
    except CoordinationParseError:
        raise
    except ValueError as exc:
        raise CoordinationParseError(str(exc), raw) from None


def parse_judge_reply(raw: str) -> Verdict:
    obj = _load(raw)
    value = _require(obj, "assessment", raw)
    try:
        assessment = Assessment.parse(value)
    except ValueError as exc:
        raise CoordinationParseError(str(exc), raw) from None
    if not assessment.is_definitive:
        raise CoordinationParseError("judge assessment must be PHISHING or LEGITIMATE", raw)
    return Verdict(
        assessment=assessment,
        confidence=_confidence(obj, raw),
        reasoning=_string(obj, "reasoning", raw),
        evidence_summary=_string(obj, "evidence_summary", raw),
    )
