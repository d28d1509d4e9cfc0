"""Chat responders: an OpenAI-compatible HTTP client and a seeded offline simulator.

The simulator reads the absolute z-scores out of the prompt's value block, the
same channel a real model sees, applies the rule, and emits the rule-correct
label with a configurable per-sample probability. Its output depends only on
(config, prompt text, sample index), never on call order, so concurrent runs
stay reproducible.
"""

from __future__ import annotations

import enum
import os
import re
import time
from dataclasses import dataclass, field

import requests

from .errors import (
    ChatTimeoutError,
    HttpStatusError,
    MissingApiKeyError,
    ReplyFormatError,
    UnparseableValueBlockError,
)
from .prompts import RenderedPrompt, format_tau
from .telemetry import Label, RuleConfig, ZScoreVector, apply_rule

API_KEY_ENV_VAR = "RULEPROMPT_API_KEY"
CHAT_COMPLETIONS_PATH = "/v1/chat/completions"

_ABS_Z_LINE = re.compile(r"Sensor (\d+):.*?abs_z = (-?\d+(?:\.\d+)?)")


class TransportStatus(enum.Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    HTTP_ERROR = "http_error"
    PARSE_ERROR = "parse_error"


class Verbosity(enum.Enum):
    LABEL_ONLY = "label_only"
    LABEL_PLUS_EXPLANATION = "label_plus_explanation"


@dataclass(frozen=True, slots=True)
class EndpointConfig:
    """A chat-completions-compatible endpoint; any backbone model plugs in here."""

    base_url: str
    model_name: str
    api_key: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV_VAR) or None


@dataclass(frozen=True, slots=True)
class ChatExchange:
    prompt_text: str
    reply_text: str
    prompt_tokens: int
    latency: float
    transport_status: TransportStatus = TransportStatus.OK
    http_code: int | None = None

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if (self.reply_text == "") != (self.transport_status is not TransportStatus.OK):
            raise ValueError("reply_text must be empty exactly when the status is not OK")


@dataclass(frozen=True, slots=True)
class SimulatedResponderConfig:
    rule: RuleConfig = field(default_factory=RuleConfig)
    fidelity: float = 1.0
    verbosity: Verbosity = Verbosity.LABEL_PLUS_EXPLANATION
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fidelity <= 1.0:
            raise ValueError("fidelity must be in [0, 1]")


def _failed_exchange(prompt: RenderedPrompt, elapsed: float, status: TransportStatus,
                     code: int | None = None) -> ChatExchange:
    return ChatExchange(
        prompt_text=prompt.text,
        reply_text="",
        prompt_tokens=prompt.token_count,
        latency=elapsed,
        transport_status=status,
        http_code=code,
    )


def send_chat(cfg: EndpointConfig, prompt: RenderedPrompt) -> ChatExchange:
    """POST the prompt to <base_url>/v1/chat/completions and return the reply.

    Timeouts and 5xx responses are retried up to max_retries with exponential
    backoff; 4xx responses fail immediately. After exhaustion a typed error is
    raised carrying the failed exchange on its .exchange attribute.
    """
    url = cfg.base_url.rstrip("/") + CHAT_COMPLETIONS_PATH
    body = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = cfg.resolved_api_key()
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    started = time.monotonic()
    last_code: int | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            time.sleep(cfg.backoff_base * 2 ** (attempt - 1))
        try:
            response = requests.post(url, json=body, headers=headers, timeout=cfg.timeout)
        except requests.Timeout:
            last_code = None
            continue
        except requests.RequestException as exc:
            elapsed = time.monotonic() - started
            raise ChatTimeoutError(
                f"endpoint unreachable: {exc}",
                exchange=_failed_exchange(prompt, elapsed, TransportStatus.TIMEOUT),
            ) from exc
        if response.status_code >= 500:
            last_code = response.status_code
            continue
        elapsed = time.monotonic() - started
        if response.status_code >= 400:
            failed = _failed_exchange(
                prompt, elapsed, TransportStatus.HTTP_ERROR, response.status_code
            )
            if response.status_code in (401, 403) and not api_key:
                raise MissingApiKeyError(
                    f"endpoint returned {response.status_code} and no API key is "
                    f"configured (set {API_KEY_ENV_VAR})",
                    exchange=failed,
                )
            raise HttpStatusError(
                f"endpoint returned {response.status_code}",
                status_code=response.status_code,
                exchange=failed,
            )
        try:
            payload = response.json()
            reply = payload["choices"][0]["message"]["content"]
            if not isinstance(reply, str):
                raise TypeError("message content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ReplyFormatError(
                f"response body is not a chat completion: {exc}",
                exchange=_failed_exchange(prompt, elapsed, TransportStatus.PARSE_ERROR),
            ) from exc
        return ChatExchange(
            prompt_text=prompt.text,
            reply_text=reply,
            prompt_tokens=prompt.token_count,
            latency=elapsed,
        )

    elapsed = time.monotonic() - started
    if last_code is not None:
        raise HttpStatusError(
            f"endpoint returned {last_code} on every attempt "
            f"({cfg.max_retries + 1} tries)",
            status_code=last_code,
            exchange=_failed_exchange(prompt, elapsed, TransportStatus.HTTP_ERROR, last_code),
        )
    raise ChatTimeoutError(
        f"endpoint timed out on every attempt ({cfg.max_retries + 1} tries)",
        exchange=_failed_exchange(prompt, elapsed, TransportStatus.TIMEOUT),
    )


def _splitmix64(x: int) -> int:
    """One step of the splitmix64 mixer; full 64-bit avalanche."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _per_sample_unit(seed: int, sample_index: int) -> float:
    """Deterministic uniform in [0, 1) derived from (seed, sample_index)."""
    mixed = _splitmix64(_splitmix64(seed & 0xFFFFFFFFFFFFFFFF) ^ sample_index)
    return mixed / 2.0**64


def extract_abs_z(value_block_text: str) -> tuple[list[int], list[float]]:
    """Pull (0-based sensor ids, abs_z values) out of rendered value-block lines."""
    ids: list[int] = []
    values: list[float] = []
    for match in _ABS_Z_LINE.finditer(value_block_text):
        ids.append(int(match.group(1)) - 1)
        values.append(float(match.group(2)))
    return ids, values


def simulate_response(
    cfg: SimulatedResponderConfig, prompt: RenderedPrompt, sample_index: int
) -> ChatExchange:
    """Answer a prompt offline by re-applying the rule to the displayed abs_z values.

    Only the query value-block section is read (exemplar sections also contain
    abs_z lines and must not leak in). With probability `fidelity` the reply
    starts with the rule-correct label, otherwise the opposite one. Explanations
    always describe the rule outcome, so a flipped label reads as an
    inconsistent model. Latency is reported as zero.
    """
    if "values" not in prompt.section_offsets:
        raise UnparseableValueBlockError("prompt carries no value-block section")
    block = prompt.section_text("values")
    ids, abs_z = extract_abs_z(block)
    if not ids:
        raise UnparseableValueBlockError(
            "no abs_z fields in the value block; the simulated responder can "
            "only serve z-score-bearing styles"
        )
    rule_label, _ = apply_rule(ZScoreVector(abs_z=abs_z), cfg.rule)
    flagged = [(ids[i], abs_z[i]) for i in range(len(ids)) if abs_z[i] >= cfg.rule.tau]

    correct = _per_sample_unit(cfg.seed, sample_index) < cfg.fidelity
    if correct:
        emitted = rule_label
    else:
        emitted = Label.NOMINAL if rule_label is Label.ANOMALY else Label.ANOMALY

    lines = [emitted.value]
    if cfg.verbosity is Verbosity.LABEL_PLUS_EXPLANATION:
        tau = format_tau(cfg.rule.tau)
        if flagged:
            lines.extend(
                f"Sensor {sid + 1}: abs_z = {z} exceeds {tau}" for sid, z in flagged
            )
        else:
            lines.append(f"all abs_z below {tau}")
    reply = "\n".join(lines)
    return ChatExchange(
        prompt_text=prompt.text,
        reply_text=reply,
        prompt_tokens=prompt.token_count,
        latency=0.0,
    )
