"""Prompt composition: six ordered modules, pluggable value blocks, exemplars.

A prompt is the blank-line concatenation of role, context, normalization, rule,
optional exemplar section, value block, and output schema. Four value-block
styles trade statistical context against verbosity; the z-score-only style is
the framework default. Token counts use a deterministic surrogate (alphanumeric
runs plus isolated symbols) so size comparisons are reproducible without a
model-specific tokenizer.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    EmptyModuleError,
    InsufficientExemplarsError,
    MissingThresholdError,
    ShapeMismatchError,
)
from .telemetry import Label, RuleConfig, SensorMeta, SensorStats, Snapshot, ZScoreVector, normalize

if TYPE_CHECKING:
    from .datagen import DatasetSplit

SECTION_ORDER = ("role", "context", "normalization", "rule", "exemplars", "values", "output_schema")

TEMPLATE_FILES = {
    "role": "role.txt",
    "context": "context.txt",
    "normalization": "normalization.txt",
    "rule": "rule.txt",
    "output_schema": "output_schema.txt",
}

_TOKEN_PATTERN = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


class ValueBlockStyle(enum.Enum):
    """The four value-block encodings; ZSCORE_ONLY is the framework default."""

    VALUE_ONLY = "value"
    MEAN_STD_VALUE = "mean_std"
    MEAN_STD_VALUE_Z = "mean_std_z"
    ZSCORE_ONLY = "zscore"


class Paradigm(enum.Enum):
    ZERO_SHOT = "zero-shot"
    FEW_SHOT = "few-shot"
    ICL = "icl"


# Display precision: abs_z to one decimal, raw values and stats to four, so no
# style leaks label information through precision differences.
VALUE_DECIMALS = 4
STAT_DECIMALS = 4
Z_DECIMALS = 1


def format_tau(tau: float) -> str:
    return str(float(tau))


def format_abs_z(value: float, decimals: int = Z_DECIMALS) -> str:
    return f"{value:.{decimals}f}"


def count_tokens(text: str) -> int:
    """Maximal [A-Za-z0-9] runs count one each; other non-whitespace chars one each."""
    return len(_TOKEN_PATTERN.findall(text))


@dataclass(frozen=True, slots=True)
class PromptModules:
    """The five fixed module texts (the value block is supplied per sample)."""

    role_text: str
    context_text: str
    normalization_text: str
    rule_text: str
    output_schema_text: str

    def as_sections(self) -> dict[str, str]:
        return {
            "role": self.role_text,
            "context": self.context_text,
            "normalization": self.normalization_text,
            "rule": self.rule_text,
            "output_schema": self.output_schema_text,
        }


def validate_modules(modules: PromptModules, rule: RuleConfig) -> None:
    """Non-empty texts, and the rule text must mention the rendered threshold."""
    for name, text in modules.as_sections().items():
        if not text.strip():
            raise EmptyModuleError(f"prompt module {name!r} is empty")
    if format_tau(rule.tau) not in modules.rule_text:
        raise MissingThresholdError(
            f"rule module text never mentions the threshold {format_tau(rule.tau)}"
        )


def load_prompt_modules(rule: RuleConfig, template_dir: str | Path | None = None) -> PromptModules:
    """Read the five template files, substituting {tau} in the rule template.

    With no directory given, the templates packaged with this module are used.
    """
    texts = {}
    for name, filename in TEMPLATE_FILES.items():
        if template_dir is None:
            raw = resources.files("ruleprompt").joinpath("templates", filename).read_text("utf-8")
        else:
            raw = (Path(template_dir) / filename).read_text("utf-8")
        text = raw.strip()
        if name == "rule":
            text = text.replace("{tau}", format_tau(rule.tau))
        texts[name] = text
    modules = PromptModules(
        role_text=texts["role"],
        context_text=texts["context"],
        normalization_text=texts["normalization"],
        rule_text=texts["rule"],
        output_schema_text=texts["output_schema"],
    )
    validate_modules(modules, rule)
    return modules


@dataclass(frozen=True, slots=True)
class Exemplar:
    """One labeled in-prompt example: a value block, its label, a short rationale."""

    value_block: str
    label: Label
    rationale: str

    def render(self) -> str:
        return f"{self.value_block}\nLabel: {self.label.value}\n{self.rationale}"


@dataclass(frozen=True, slots=True)
class RenderedPrompt:
    text: str
    token_count: int
    section_offsets: dict[str, tuple[int, int]]

    def section_text(self, name: str) -> str:
        start, end = self.section_offsets[name]
        return self.text[start:end]


def render_value_block(
    x: Snapshot,
    stats: SensorStats,
    z: ZScoreVector,
    style: ValueBlockStyle,
    metas: Sequence[SensorMeta],
) -> str:
    """One line per sensor in ascending id order, format fixed per style."""
    if not (len(x) == len(stats) == len(z) == len(metas)):
        raise ShapeMismatchError(
            f"inconsistent lengths: snapshot {len(x)}, stats {len(stats)}, "
            f"z {len(z)}, metas {len(metas)}"
        )
    lines = []
    for meta in sorted(metas, key=lambda m: m.id):
        i = meta.id
        value = f"{x.values[i]:.{VALUE_DECIMALS}f}"
        mean = f"{stats.means[i]:.{STAT_DECIMALS}f}"
        std = f"{stats.stds[i]:.{STAT_DECIMALS}f}"
        abs_z = format_abs_z(z.abs_z[i])
        if style is ValueBlockStyle.VALUE_ONLY:
            line = f"{meta.name}: value = {value}"
        elif style is ValueBlockStyle.MEAN_STD_VALUE:
            line = f"{meta.name}: value = {value}, mean = {mean}, std = {std}"
        elif style is ValueBlockStyle.MEAN_STD_VALUE_Z:
            line = f"{meta.name}: value = {value}, mean = {mean}, std = {std}, abs_z = {abs_z}"
        else:
            line = f"{meta.name}: abs_z = {abs_z}"
        lines.append(line)
    return "\n".join(lines)


def compose_prompt(
    modules: PromptModules,
    exemplars: Sequence[Exemplar],
    value_block: str,
) -> RenderedPrompt:
    """Concatenate sections in fixed order, blank lines between them.

    The exemplar section, when present, sits between the rule text and the
    query value block: the rule is stated first, worked examples next, the
    sample under assessment last.
    """
    sections: list[tuple[str, str]] = [
        ("role", modules.role_text),
        ("context", modules.context_text),
        ("normalization", modules.normalization_text),
        ("rule", modules.rule_text),
    ]
    if exemplars:
        sections.append(("exemplars", "\n\n".join(e.render() for e in exemplars)))
    sections.append(("values", value_block))
    sections.append(("output_schema", modules.output_schema_text))

    for name, text in sections:
        if not text.strip():
            raise EmptyModuleError(f"prompt section {name!r} is empty")

    offsets: dict[str, tuple[int, int]] = {}
    parts: list[str] = []
    cursor = 0
    for idx, (name, text) in enumerate(sections):
        if idx:
            cursor += 2  # "\n\n" separator
        offsets[name] = (cursor, cursor + len(text))
        cursor += len(text)
        parts.append(text)
    text = "\n\n".join(parts)
    return RenderedPrompt(text=text, token_count=count_tokens(text), section_offsets=offsets)


def _exemplar_from_sample(sample, split: "DatasetSplit", style: ValueBlockStyle) -> Exemplar:
    z = normalize(sample.snapshot, split.stats, split.rule)
    block = render_value_block(sample.snapshot, split.stats, z, style, split.sensor_metas())
    tau = format_tau(split.rule.tau)
    if sample.label is Label.ANOMALY:
        cited = ", ".join(
            f"Sensor {i + 1}: abs_z = {format_abs_z(z.abs_z[i])}" for i in sample.flagged_ids
        )
        rationale = f"{cited} meets or exceeds {tau}."
    else:
        rationale = f"All abs_z values are below {tau}."
    return Exemplar(value_block=block, label=sample.label, rationale=rationale)


def attach_exemplars(
    split: "DatasetSplit",
    paradigm: Paradigm,
    rng: np.random.Generator,
    style: ValueBlockStyle = ValueBlockStyle.ZSCORE_ONLY,
) -> list[Exemplar]:
    """Draw paradigm-appropriate exemplars from the training split.

    Zero-shot attaches none. Few-shot attaches one nominal and one anomalous
    example. ICL attaches five, both classes represented, preferring anomalies
    with pairwise-distinct flagged-sensor patterns. Selection is deterministic
    given the generator state.
    """
    if paradigm is Paradigm.ZERO_SHOT:
        return []
    nominal = [s for s in split.train if s.label is Label.NOMINAL]
    anomalous = [s for s in split.train if s.label is Label.ANOMALY]
    if not nominal or not anomalous:
        raise InsufficientExemplarsError("training split must contain both classes")

    if paradigm is Paradigm.FEW_SHOT:
        chosen = [
            nominal[int(rng.integers(len(nominal)))],
            anomalous[int(rng.integers(len(anomalous)))],
        ]
        return [_exemplar_from_sample(s, split, style) for s in chosen]

    # ICL: three anomalies with distinct flag patterns where possible, two nominals.
    if len(nominal) < 2 or len(anomalous) < 3:
        raise InsufficientExemplarsError("ICL needs >= 2 nominal and >= 3 anomalous training samples")
    order = rng.permutation(len(anomalous))
    picked: list = []
    seen_patterns: set[tuple[int, ...]] = set()
    for idx in order:
        cand = anomalous[int(idx)]
        if cand.flagged_ids not in seen_patterns:
            picked.append(cand)
            seen_patterns.add(cand.flagged_ids)
        if len(picked) == 3:
            break
    for idx in order:  # fall back to repeats of a pattern if diversity ran out
        if len(picked) == 3:
            break
        cand = anomalous[int(idx)]
        if cand not in picked:
            picked.append(cand)
    nominal_idx = rng.permutation(len(nominal))[:2]
    nominals = [nominal[int(i)] for i in nominal_idx]
    ordered = [picked[0], nominals[0], picked[1], nominals[1], picked[2]]
    return [_exemplar_from_sample(s, split, style) for s in ordered]
