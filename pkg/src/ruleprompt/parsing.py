"""Verdict extraction from model replies, plus rule-adherence scoring.

Replies are expected to lead with a single-word label and may carry a short
explanation naming sensors. Parsing is total: every string either yields a
verdict or raises one of the two unparseable errors, which downstream code
counts as a third outcome bucket rather than coercing to a class.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EmptyReplyError, MissingLabelError
from .telemetry import Label, RuleConfig, ZScoreVector, apply_rule

# First standalone keyword wins; "anomalous" is accepted as a synonym of
# "anomaly", while weaker words like "abnormal" are deliberately not.
_KEYWORD = re.compile(r"\b(normal|anomaly|anomalous)\b", re.IGNORECASE)
_SENSOR_CITATION = re.compile(r"Sensor\s+(\d+)\b", re.IGNORECASE)
_EMPHASIS_CHARS = str.maketrans("", "", "*`")


@dataclass(frozen=True, slots=True)
class ParsedVerdict:
    label: Label
    explanation: str
    cited_sensor_ids: tuple[int, ...]
    raw_reply: str


@dataclass(frozen=True, slots=True)
class AdherenceReport:
    """Agreement between a parsed verdict and the rule oracle.

    Ratios over empty sets are vacuously 1.0.
    """

    label_matches_rule: bool
    citations_valid: float
    citations_complete: float


def parse_response(reply: str) -> ParsedVerdict:
    """Extract the first standalone verdict keyword and the text after its line.

    Markdown emphasis characters (asterisks, backticks) are stripped before
    matching. Raises EmptyReplyError on blank input and MissingLabelError when
    no keyword occurs.
    """
    if reply is None or not reply.strip():
        raise EmptyReplyError("blank reply")
    cleaned = reply.translate(_EMPHASIS_CHARS).strip()
    match = _KEYWORD.search(cleaned)
    if match is None:
        raise MissingLabelError(f"no verdict keyword in reply: {reply[:80]!r}")
    word = match.group(1).lower()
    label = Label.NOMINAL if word == "normal" else Label.ANOMALY

    line_end = cleaned.find("\n", match.end())
    explanation = "" if line_end == -1 else cleaned[line_end + 1 :].strip()
    cited = sorted(
        {int(m.group(1)) - 1 for m in _SENSOR_CITATION.finditer(explanation) if int(m.group(1)) > 0}
    )
    return ParsedVerdict(
        label=label,
        explanation=explanation,
        cited_sensor_ids=tuple(cited),
        raw_reply=reply,
    )


def check_rule_adherence(
    verdict: ParsedVerdict, z: ZScoreVector, rule: RuleConfig
) -> AdherenceReport:
    """Compare the verdict's label and sensor citations against the rule oracle."""
    rule_label, flagged = apply_rule(z, rule)
    flagged_set = set(flagged)
    cited_set = set(verdict.cited_sensor_ids)
    valid = len(cited_set & flagged_set) / len(cited_set) if cited_set else 1.0
    complete = len(cited_set & flagged_set) / len(flagged_set) if flagged_set else 1.0
    return AdherenceReport(
        label_matches_rule=verdict.label is rule_label,
        citations_valid=valid,
        citations_complete=complete,
    )
