"""Token budgets and content truncation for prompt inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

TRUNCATION_NOTICE = "[NOTE: content truncated due to length limits]"
# Separator + notice appended to every truncated output.
NOTICE_SUFFIX = "\n" + TRUNCATION_NOTICE

MIN_LIMIT = 64
DEFAULT_HTML_TOKEN_LIMIT = 8000
DEFAULT_TEXT_TOKEN_LIMIT = 4000
DEFAULT_CHARS_PER_TOKEN = 4


class BudgetError(ValueError):
    """Budget too small to hold even the truncation notice."""


@dataclass(frozen=True)
class TokenBudget:
    model_id: str = "default"
    html_token_limit: int = DEFAULT_HTML_TOKEN_LIMIT
    text_token_limit: int = DEFAULT_TEXT_TOKEN_LIMIT
    chars_per_token: float | Fraction = DEFAULT_CHARS_PER_TOKEN

    def __post_init__(self):
        for name in ("html_token_limit", "text_token_limit"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < MIN_LIMIT:
                raise ValueError(f"{name} must be an integer >= {MIN_LIMIT}, got {value!r}")
        if not self.chars_per_token > 0:
            raise ValueError(f"chars_per_token must be positive, got {self.chars_per_token!r}")

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.chars_per_token)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "html_token_limit": self.html_token_limit,
            "text_token_limit": self.text_token_limit,
            "chars_per_token": float(self.chars_per_token),
        }


def estimate_tokens(text: str, budget: TokenBudget) -> int:
    """ceil(characters / chars_per_token), computed exactly."""
    return math.ceil(len(text) / budget.ratio)


def _max_chars(tokens: int, budget: TokenBudget) -> int:
    # Largest n with ceil(n / ratio) <= tokens.
    return math.floor(tokens * budget.ratio)


def _content_allowance(limit: int, budget: TokenBudget) -> int:
    remaining = limit - estimate_tokens(NOTICE_SUFFIX, budget)
    if remaining < 0:
        raise BudgetError(f"token limit {limit} cannot hold the truncation notice")
    return _max_chars(remaining, budget)


def truncate_html(html: str, budget: TokenBudget) -> tuple[str, bool]:
    """Cut ``html`` at the last ``>`` that keeps the result within budget.

    Returns ``(content, was_truncated)``. The notice is appended only when
    something was cut.
    """
    limit = budget.html_token_limit
    if estimate_tokens(html, budget) <= limit:
        return html, False
    allowance = _content_allowance(limit, budget)
    cut = html.rfind(">", 0, allowance)
    if cut < 0:
        raise BudgetError("no tag boundary fits within the HTML token limit")
    return html[: cut + 1] + NOTICE_SUFFIX, True


def truncate_text(text: str, budget: TokenBudget) -> tuple[str, bool]:
    """Cut ``text`` at the last whitespace boundary within budget.

    A single unbroken run longer than the allowance is cut at the character
    limit instead.
    """
    limit = budget.text_token_limit
    if estimate_tokens(text, budget) <= limit:
        return text, False
    allowance = _content_allowance(limit, budget)
    # text[allowance] exists because the text is over budget.
    if text[allowance].isspace():
        head = text[:allowance]
    else:
        head = text[:allowance]
        boundary = next((i for i in range(len(head) - 1, -1, -1) if head[i].isspace()), -1)
        if boundary >= 0:
            head = head[:boundary]
    return head.rstrip() + NOTICE_SUFFIX, True
