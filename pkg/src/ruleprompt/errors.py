"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RulePromptError(Exception):
    """Base class for every error raised by this package."""


# --- telemetry / generic input errors ---


class EmptyInputError(RulePromptError):
    """An operation received an empty collection where at least one item is required."""


class ShapeMismatchError(RulePromptError):
    """Vector lengths disagree (snapshots, stats, features)."""


# --- dataset generation and I/O ---


class TooManySensorsError(RulePromptError):
    """Injection asked for more sensors than the snapshot has."""


class QuotaUnreachableError(RulePromptError):
    """Rejection sampling exhausted its attempt cap before a class quota filled."""


class DatasetFormatError(RulePromptError):
    """Dataset file is truncated, malformed, or carries an unsupported schema version."""


# --- prompt composition ---


class EmptyModuleError(RulePromptError):
    """A prompt module text is empty or whitespace-only."""


class MissingThresholdError(RulePromptError):
    """The rule module text does not mention the threshold it is supposed to encode."""


class InsufficientExemplarsError(RulePromptError):
    """The training split cannot supply the exemplars a paradigm requires."""


# --- gateway ---


class GatewayError(RulePromptError):
    """Base class for chat endpoint failures. Carries the failed exchange when known."""

    def __init__(self, message: str, exchange=None):
        super().__init__(message)
        self.exchange = exchange


class ChatTimeoutError(GatewayError):
    """The endpoint did not answer within the configured timeout, after retries."""


class HttpStatusError(GatewayError):
    """The endpoint returned a 4xx/5xx status (5xx only after retries)."""

    def __init__(self, message: str, status_code: int, exchange=None):
        super().__init__(message, exchange)
        self.status_code = status_code


class ReplyFormatError(GatewayError):
    """The endpoint answered 200 but the body is not a chat-completions response."""


class MissingApiKeyError(GatewayError):
    """The endpoint demands authentication and no API key was configured."""


class UnparseableValueBlockError(RulePromptError):
    """The simulated responder found no abs_z fields in the prompt's value block."""


# --- reply parsing ---


class UnparseableReplyError(RulePromptError):
    """No verdict could be extracted from a reply; counted as its own outcome bucket."""


class EmptyReplyError(UnparseableReplyError):
    """The reply is blank."""


class MissingLabelError(UnparseableReplyError):
    """The reply contains no standalone verdict keyword."""


# --- detector ---


class EmptySelectionError(RulePromptError):
    """Feature extraction received an explicit but empty sensor selection."""


class SingleClassDataError(RulePromptError):
    """Detector training data contains only one class."""


class DivergedLossError(RulePromptError):
    """Training loss became non-finite."""


# --- harness ---


class EmptyRunError(RulePromptError):
    """Metrics requested over zero evaluated samples."""


class DatasetMismatchError(RulePromptError):
    """Run results being compared were produced from different datasets."""


class ModelMissingError(RulePromptError):
    """Hybrid evaluation requested without a trained model file."""


class EndpointUnavailableError(RulePromptError):
    """The responder failed for the run as a whole (after per-request retries)."""
