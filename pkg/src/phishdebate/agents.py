"""Specialist agents: prompt rendering and Claim/Confidence/Evidence parsing."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

from .ingest import ProcessedSample
from .labels import Assessment, Claim
from .truncation import TokenBudget, truncate_html, truncate_text

URL_PLACEHOLDER = "[TARGET_URL]"
HTML_PLACEHOLDER = "[TRUNCATED_HTML_CONTENT]"
TEXT_PLACEHOLDER = "[TRUNCATED_VISIBLE_TEXT]"
_PLACEHOLDER_RE = re.compile(r"\[(TARGET_URL|TRUNCATED_HTML_CONTENT|TRUNCATED_VISIBLE_TEXT)\]")

PEER_SECTION_HEADER = "=== Peer analyses from previous round ==="
PEER_SECTION_FOOTER = "=== End of peer analyses ==="
RECONSIDER_INSTRUCTION = (
    "Consider the analyses above from the other specialist agents. Reconsider your "
    "assessment in light of their evidence, keeping your own area of expertise, and "
    "reply again in the same format:\n"
    "- Claim: [PHISHING or LEGITIMATE]\n"
    "- Confidence: [A score between 0 and 1]\n"
    "- Evidence: [Key evidence supporting your claim, including any peer evidence you accept or reject]"
)
FORMAT_REMINDER = "Reply using exactly the Claim / Confidence / Evidence format requested above."


class AgentKind(str, enum.Enum):
    URL_ANALYST = "url_analyst"
    HTML_STRUCTURE = "html_structure"
    CONTENT_SEMANTIC = "content_semantic"
    BRAND_IMPERSONATION = "brand_impersonation"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @property
    def short_name(self) -> str:
        return _SHORT_NAMES[self]

    @classmethod
    def from_name(cls, name: str) -> "AgentKind":
        """Accept the enum value or the short CLI name (url, html, content, brand)."""
        key = name.strip().lower()
        for kind in cls:
            if key in (kind.value, kind.short_name):
                return kind
        raise ValueError(f"unknown agent {name!r}")


_DISPLAY_NAMES = {
    AgentKind.URL_ANALYST: "URL Analyst Agent",
    AgentKind.HTML_STRUCTURE: "HTML Structure Agent",
    AgentKind.CONTENT_SEMANTIC: "Content Semantic Agent",
    AgentKind.BRAND_IMPERSONATION: "Brand Impersonation Agent",
}
_SHORT_NAMES = {
    AgentKind.URL_ANALYST: "url",
    AgentKind.HTML_STRUCTURE: "html",
    AgentKind.CONTENT_SEMANTIC: "content",
    AgentKind.BRAND_IMPERSONATION: "brand",
}

# Canonical order used for rendering and transcripts.
AGENT_ORDER: tuple[AgentKind, ...] = tuple(AgentKind)


class AgentParseError(ValueError):
    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class AgentResponse:
    agent: AgentKind
    round: int
    claim: Claim
    confidence: float | None
    evidence: str
    raw_reply: str

    def __post_init__(self):
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")

    def to_dict(self) -> dict:
        return {
            "agent": self.agent.value,
            "round": self.round,
            "status": "ok",
            "claim": self.claim.value,
            "confidence": self.confidence,
            "evidence": self.evidence,
            "raw_reply": self.raw_reply,
        }


@dataclass(frozen=True)
class AgentFailure:
    """Marker for a specialist whose reply never parsed (or whose backend failed)."""

    agent: AgentKind
    round: int
    error: str
    raw_reply: str | None = None

    def to_dict(self) -> dict:
        return {
            "agent": self.agent.value,
            "round": self.round,
            "status": "failed",
            "error": self.error,
            "raw_reply": self.raw_reply,
        }


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    text = resources.files("phishdebate").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


def default_templates() -> dict[AgentKind, str]:
    return {kind: load_template(kind.value) for kind in AgentKind}


def load_template_overrides(mapping: Mapping[str, str | Path]) -> dict[AgentKind, str]:
    """Read replacement template files keyed by agent name."""
    templates = default_templates()
    for name, path in mapping.items():
        templates[AgentKind.from_name(name)] = Path(path).read_text(encoding="utf-8").rstrip("\n")
    return templates


def fill_placeholders(template: str, values: Mapping[str, str]) -> str:
    # Single pass, so placeholder-like text inside page content is left alone.
    return _PLACEHOLDER_RE.sub(lambda m: values.get(m.group(0), m.group(0)), template)


def render_initial_prompt(
    agent: AgentKind,
    sample: ProcessedSample,
    budget: TokenBudget,
    templates: Mapping[AgentKind, str] | None = None,
) -> str:
    template = (templates or {}).get(agent) or load_template(agent.value)
    values = {}
    if agent in (AgentKind.URL_ANALYST, AgentKind.BRAND_IMPERSONATION):
        values[URL_PLACEHOLDER] = sample.url
    if agent is AgentKind.HTML_STRUCTURE:
        values[HTML_PLACEHOLDER] = truncate_html(sample.cleaned_html, budget)[0]
    if agent in (AgentKind.CONTENT_SEMANTIC, AgentKind.BRAND_IMPERSONATION):
        values[TEXT_PLACEHOLDER] = truncate_text(sample.visible_text, budget)[0]
    return fill_placeholders(template, values)


def render_debate_prompt(
    agent: AgentKind,
    sample: ProcessedSample,
    peer_context: str,
    budget: TokenBudget,
    templates: Mapping[AgentKind, str] | None = None,
) -> str:
    if not peer_context or not peer_context.strip():
        raise ValueError("debate prompt requires at least one peer entry")
    initial = render_initial_prompt(agent, sample, budget, templates)
    return "\n\n".join([initial, PEER_SECTION_HEADER, peer_context.strip(), PEER_SECTION_FOOTER, RECONSIDER_INSTRUCTION])


def format_confidence(confidence: float | None) -> str:
    return "not provided" if confidence is None else repr(float(confidence))


def format_agent_reply(claim: Claim, confidence: float | None, evidence: str) -> str:
    """Canonical reply text, i.e. what a template-conformant model returns."""
    return f"- Claim: {claim.value}\n- Confidence: {format_confidence(confidence)}\n- Evidence: {evidence}"


_FIELD_RE = re.compile(
    r"^\s*(?:[-•]\s*|[*+]\s+|\d+[.)]\s*)?(?P<open>[*_]{0,2})\s*(?P<label>claim|confidence|evidence)\s*"
    r"(?P<close>[*_]{0,2})\s*:[ \t]*(?P<value>.*)$",
    re.IGNORECASE,
)
_NUMBER_RE = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|\.\d+)")
_NEGATION = r"(?:not|non|no|isn't|is\s+not|never)[\s-]+(?:a\s+|an\s+)?"
_NEG_PHISH = re.compile(_NEGATION + r"(?:phishing|malicious)")
_NEG_LEGIT = re.compile(_NEGATION + r"(?:legitimate|benign)|illegitimate")
_PHISH = re.compile(r"phishing|malicious")
_LEGIT = re.compile(r"legitimate|benign")


def classify_claim(text: str) -> Claim:
    """Map free-form claim text onto a label.

    Negated mentions are removed before looking for the plain keywords, so
    "not phishing" reads as legitimate and "not legitimate" as phishing.
    """
    lowered = text.lower()
    neg_legit = bool(_NEG_LEGIT.search(lowered))
    neg_phish = bool(_NEG_PHISH.search(lowered))
    remainder = _NEG_LEGIT.sub(" ", _NEG_PHISH.sub(" ", lowered))
    if _PHISH.search(remainder) or neg_legit:
        return Assessment.PHISHING
    if _LEGIT.search(remainder) or neg_phish:
        return Assessment.LEGITIMATE
    return Assessment.UNCERTAIN


def parse_confidence(text: str) -> float | None:
    m = _NUMBER_RE.search(text)
    if not m:
        return None
    value = float(m.group(1))
    if 0.0 <= value <= 1.0:
        return value
    if 1.0 < value <= 100.0:
        return value / 100
    return None


def parse_agent_response(raw: str, agent: AgentKind, round: int) -> AgentResponse:
    fields: dict[str, list[str]] = {}
    current = None
    for line in raw.splitlines():
        m = _FIELD_RE.match(line)
        if m:
            current = m.group("label").lower()
            if current in fields:
                # Only the first occurrence of each label counts.
                current = None
                continue
            fields[current] = [_field_value(m)]
        elif current == "evidence":
            fields[current].append(line)
        elif current is not None:
            current = None
    if "claim" not in fields:
        raise AgentParseError("no Claim line in agent reply", raw)
    claim_text = _strip_emphasis(fields["claim"][0])
    confidence = parse_confidence(fields["confidence"][0]) if "confidence" in fields else None
    evidence = "\n".join(fields.get("evidence", [""])).strip()
    return AgentResponse(
        agent=agent,
        round=round,
        claim=classify_claim(claim_text),
        confidence=confidence,
        evidence=evidence,
        raw_reply=raw,
    )


def _field_value(m: re.Match) -> str:
    # "**Claim:** x" closes the emphasis after the colon; drop only that marker.
    value, opened = m.group("value"), m.group("open")
    if opened and not m.group("close") and value.startswith(opened):
        value = value[len(opened):].lstrip()
    return value


def _strip_emphasis(text: str) -> str:
    return text.strip().strip("*_").strip()
