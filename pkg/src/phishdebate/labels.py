"""Classification labels shared by every role and by the scorer."""

from __future__ import annotations

import enum


class Assessment(str, enum.Enum):
    PHISHING = "PHISHING"
    LEGITIMATE = "LEGITIMATE"
    UNCERTAIN = "UNCERTAIN"

    @classmethod
    def parse(cls, value: str) -> "Assessment":
        """Case-insensitive lookup; raises ValueError on anything else."""
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"not an assessment: {value!r}") from None

    @property
    def is_definitive(self) -> bool:
        return self is not Assessment.UNCERTAIN


# Specialist claims use the same three values.
Claim = Assessment


def parse_gold_label(value: str) -> Assessment:
    label = Assessment.parse(value)
    if not label.is_definitive:
        raise ValueError(f"gold label must be phishing or legitimate, got {value!r}")
    return label
