"""Single-agent comparison methods: direct prompting and Chain-of-Thought."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .agents import load_template
from .backend import Backend, BackendError, ModelReply, ModelRequest
from .engine import SCHEMA_VERSION, RoleModel
from .ingest import ProcessedSample
from .labels import Assessment
from .truncation import TokenBudget, truncate_html, truncate_text

STEP_COUNT = 5
MISSING_STEP = "[missing]"


class Method(str, enum.Enum):
    DIRECT = "direct"
    COT = "cot"


class ConfidenceLevel(str, enum.Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"


@dataclass
class BaselineResult:
    method: Method
    sample_id: str
    gold: Assessment | None
    classification: Assessment | None
    confidence_level: ConfidenceLevel | None
    reasoning: str
    steps: list[str] | None
    wall_time: float
    raw_reply: str | None
    prompt: str
    error: str | None = None
    usage: dict | None = None

    def __post_init__(self):
        if self.steps is not None:
            if self.method is not Method.COT:
                raise ValueError("steps are only recorded for CoT")
            if len(self.steps) != STEP_COUNT:
                raise ValueError(f"CoT results carry exactly {STEP_COUNT} steps")

    @property
    def prediction(self) -> Assessment | None:
        return self.classification

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method.value,
            "sample_id": self.sample_id,
            "gold": self.gold.value if self.gold else None,
            "prediction": self.classification.value if self.classification else None,
            "confidence_level": self.confidence_level.value if self.confidence_level else None,
            "wall_time": self.wall_time,
            "error": self.error,
            "reasoning": self.reasoning,
            "steps": self.steps,
            "prompt": self.prompt,
            "raw_reply": self.raw_reply,
            "usage": self.usage,
        }


def _inputs_block(sample: ProcessedSample, budget: TokenBudget) -> str:
    html, _ = truncate_html(sample.cleaned_html, budget)
    text, _ = truncate_text(sample.visible_text, budget)
    return f"URL: {sample.url}\n\nHTML Content:\n{html}\n\nVisible Text:\n{text}"


def render_direct_prompt(sample: ProcessedSample, budget: TokenBudget) -> str:
    return load_template("direct") + "\n\n" + _inputs_block(sample, budget)


def render_cot_prompt(sample: ProcessedSample, budget: TokenBudget) -> str:
    return load_template("cot") + "\n\n" + _inputs_block(sample, budget)


_LEADING_NOISE = re.compile(r"^[\s*_#>`\-:]*")
_LABEL_PREFIX = re.compile(r"^(?:final\s+)?(?:classification|answer|verdict)\s*[*_]*\s*:\s*[*_]*\s*", re.I)
_KEYWORD = re.compile(r"(PHISHING|LEGITIMATE)\b", re.I)
_ALTERNATIVE = re.compile(r"\s*(?:/|\||or\b|and\b)\s*[*_]*(PHISHING|LEGITIMATE)\b", re.I)
_UPPER_KEYWORD = re.compile(r"\b(PHISHING|LEGITIMATE)\b")


def parse_direct_classification(reply: str) -> Assessment:
    """Label led by the reply, else a single unambiguous uppercase label, else UNCERTAIN."""
    head = _LEADING_NOISE.sub("", reply)
    head = _LEADING_NOISE.sub("", _LABEL_PREFIX.sub("", head))
    m = _KEYWORD.match(head)
    if m:
        if _ALTERNATIVE.match(head, m.end()):
            return Assessment.UNCERTAIN
        return Assessment.parse(m.group(1))
    found = set(_UPPER_KEYWORD.findall(reply))
    if len(found) == 1:
        return Assessment.parse(found.pop())
    return Assessment.UNCERTAIN


_COT_FIELD = re.compile(
    r"^\s*[*_#]*\s*(STEP\s*([1-9])\b[^:\n]*?|CLASSIFICATION|CONFIDENCE|REASONING)[*_]*\s*:\s*[*_]*\s*(.*)$",
    re.I,
)


@dataclass(frozen=True)
class CotParse:
    classification: Assessment
    confidence_level: ConfidenceLevel | None
    reasoning: str
    steps: list[str]


def parse_cot_reply(reply: str) -> CotParse:
    sections: dict[str, list[str]] = {}
    current = None
    for line in reply.splitlines():
        m = _COT_FIELD.match(line)
        if m:
            key = f"step{m.group(2)}" if m.group(2) else m.group(1).upper()
            if key in sections:
                current = None
                continue
            current = key
            sections[key] = [m.group(3)]
        elif current is not None:
            sections[current].append(line)

    def body(key: str) -> str | None:
        return "\n".join(sections[key]).strip() if key in sections else None

    steps = [body(f"step{i}") or MISSING_STEP for i in range(1, STEP_COUNT + 1)]

    classification = Assessment.UNCERTAIN
    value = body("CLASSIFICATION")
    if value:
        m = re.match(r"[*_\[\s]*(PHISHING|LEGITIMATE)\b", value, re.I)
        if m and not _ALTERNATIVE.match(value, m.end()):
            classification = Assessment.parse(m.group(1))

    level = None
    value = body("CONFIDENCE")
    if value:
        m = re.match(r"[*_\[\s]*(high|medium|low)\b", value, re.I)
        if m:
            level = ConfidenceLevel(m.group(1).capitalize())

    return CotParse(classification, level, body("REASONING") or "", steps)


def _call(backend: Backend, role: str, prompt: str, model: RoleModel):
    request = ModelRequest(role=role, prompt=prompt, model_name=model.model_name,
                           temperature=model.temperature, max_reply_tokens=model.max_reply_tokens)
    return backend.complete(request)


def _usage(reply: ModelReply) -> dict:
    return {
        "model": reply.model_name,
        "prompt_tokens": reply.prompt_tokens,
        "completion_tokens": reply.completion_tokens,
        "latency": reply.latency,
    }


def run_direct(sample: ProcessedSample, backend: Backend, budget: TokenBudget,
               model: RoleModel = RoleModel()) -> BaselineResult:
    prompt = render_direct_prompt(sample, budget)
    started = backend.clock()
    try:
        reply = _call(backend, Method.DIRECT.value, prompt, model)
    except BackendError as exc:
        return BaselineResult(Method.DIRECT, sample.id, sample.label, None, None, "", None,
                              backend.clock() - started, None, prompt, error=str(exc))
    return BaselineResult(
        method=Method.DIRECT,
        sample_id=sample.id,
        gold=sample.label,
        classification=parse_direct_classification(reply.text),
        confidence_level=None,
        reasoning=reply.text.strip(),
        steps=None,
        wall_time=backend.clock() - started,
        raw_reply=reply.text,
        prompt=prompt,
        usage=_usage(reply),
    )


def run_cot(sample: ProcessedSample, backend: Backend, budget: TokenBudget,
            model: RoleModel = RoleModel()) -> BaselineResult:
    prompt = render_cot_prompt(sample, budget)
    started = backend.clock()
    try:
        reply = _call(backend, Method.COT.value, prompt, model)
    except BackendError as exc:
        return BaselineResult(Method.COT, sample.id, sample.label, None, None, "", None,
                              backend.clock() - started, None, prompt, error=str(exc))
    parsed = parse_cot_reply(reply.text)
    return BaselineResult(
        method=Method.COT,
        sample_id=sample.id,
        gold=sample.label,
        classification=parsed.classification,
        confidence_level=parsed.confidence_level,
        reasoning=parsed.reasoning,
        steps=parsed.steps,
        wall_time=backend.clock() - started,
        raw_reply=reply.text,
        prompt=prompt,
        usage=_usage(reply),
    )
