"""Trainable anomaly detector over z-score summary features, plus the hybrid filter.

The detector is a hand-rolled L2-regularized logistic model trained by
full-batch gradient descent, small enough that its gradients are checkable
against finite differences. The hybrid path first selects sensors with a
rule-aware filter (threshold crossing, verdict citations, top-k fallback) and
feeds features of the selection to the model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DatasetFormatError,
    DivergedLossError,
    EmptySelectionError,
    EmptyInputError,
    ShapeMismatchError,
    SingleClassDataError,
)
from .parsing import ParsedVerdict
from .telemetry import Label, RuleConfig, ZScoreVector

MODEL_SCHEMA_VERSION = 1

FEATURE_NAMES = (
    "max_abs_z",
    "second_abs_z",
    "third_abs_z",
    "mean_abs_z",
    "count_ge_2.0",
    "count_ge_2.5",
)
_COUNT_THRESHOLDS = (2.0, 2.5)


@dataclass(frozen=True, slots=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 2000
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.l2 < 0:
            raise ValueError("invalid training hyperparameters")


@dataclass(frozen=True, slots=True)
class HybridConfig:
    """Sensor selection and decision thresholds for the hybrid pipeline."""

    filter_threshold: float = 2.5
    max_selected: int = 16
    decision_threshold: float = 0.5

    def __post_init__(self):
        if self.filter_threshold <= 0 or self.max_selected < 1:
            raise ValueError("filter_threshold must be > 0 and max_selected >= 1")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must be in (0, 1)")

    def warn_if_above_rule(self, rule: RuleConfig) -> None:
        if self.filter_threshold > rule.tau:
            warnings.warn(
                f"filter_threshold {self.filter_threshold} exceeds the rule "
                f"threshold {rule.tau}; flagged sensors may be filtered out",
                stacklevel=2,
            )


@dataclass(frozen=True, eq=False, slots=True)
class LogisticModel:
    """Weights plus the feature standardization fitted alongside them.

    Inputs are standardized with the stored means/stds before the linear map,
    which keeps one learning rate usable across feature scales.
    """

    weights: np.ndarray
    bias: float
    l2: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("weights", "feature_means", "feature_stds"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (self.weights.size == self.feature_means.size == self.feature_stds.size):
            raise ShapeMismatchError("weight and standardization vectors must align")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogisticModel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and self.bias == other.bias
            and self.l2 == other.l2
            and np.array_equal(self.feature_means, other.feature_means)
            and np.array_equal(self.feature_stds, other.feature_stds)
            and self.training_meta == other.training_meta
        )


def extract_features(
    z: ZScoreVector, selected_ids: Sequence[int] | None = None
) -> np.ndarray:
    """Six summary statistics of abs_z over the selected sensors (or all).

    Order statistics are zero-padded when fewer than three sensors are in play.
    """
    if len(z) == 0:
        raise EmptyInputError("cannot extract features from an empty z-score vector")
    if selected_ids is None:
        values = z.abs_z
    else:
        ids = list(selected_ids)
        if not ids:
            raise EmptySelectionError("explicit sensor selection is empty")
        if min(ids) < 0 or max(ids) >= len(z):
            raise ShapeMismatchError("selected ids out of range")
        values = z.abs_z[ids]
    top = np.sort(values)[::-1]
    ordered = [float(top[i]) if i < top.size else 0.0 for i in range(3)]
    counts = [float(np.count_nonzero(values >= t)) for t in _COUNT_THRESHOLDS]
    return np.array(ordered + [float(values.mean())] + counts)


def _sigmoid(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logistic_loss(
    weights: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray, l2: float
) -> float:
    """Mean cross-entropy plus 0.5 * l2 * ||w||^2; the bias is not regularized."""
    logits = x @ weights + bias
    ce = np.logaddexp(0.0, logits) - y * logits
    return float(ce.mean() + 0.5 * l2 * weights @ weights)


def logistic_gradient(
    weights: np.ndarray, bias: float, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[np.ndarray, float]:
    residual = _sigmoid(x @ weights + bias) - y
    grad_w = x.T @ residual / x.shape[0] + l2 * weights
    grad_b = float(residual.mean())
    return grad_w, grad_b


def train_detector(
    features: np.ndarray,
    labels: np.ndarray,
    hyper: TrainConfig = TrainConfig(),
    *,
    record_loss_history: bool = False,
) -> LogisticModel:
    """Full-batch gradient descent from zero init; deterministic given the inputs."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeMismatchError("features must be (n, d) with n matching labels")
    if len(np.unique(y)) < 2:
        raise SingleClassDataError("training data must contain both classes")

    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)  # constant features pass through unscaled
    x_std = (x - means) / stds

    weights = np.zeros(x.shape[1])
    bias = 0.0
    history: list[float] = []
    loss = logistic_loss(weights, bias, x_std, y, hyper.l2)
    for _ in range(hyper.epochs):
        if record_loss_history:
            history.append(loss)
        grad_w, grad_b = logistic_gradient(weights, bias, x_std, y, hyper.l2)
        weights = weights - hyper.learning_rate * grad_w
        bias = bias - hyper.learning_rate * grad_b
        loss = logistic_loss(weights, bias, x_std, y, hyper.l2)
        if not np.isfinite(loss):
            raise DivergedLossError(f"training loss became non-finite: {loss}")
    if record_loss_history:
        history.append(loss)

    meta = {
        "epochs": hyper.epochs,
        "learning_rate": hyper.learning_rate,
        "seed": hyper.seed,
        "final_loss": loss,
    }
    if record_loss_history:
        meta["loss_history"] = history
    return LogisticModel(
        weights=weights,
        bias=bias,
        l2=hyper.l2,
        feature_means=means,
        feature_stds=stds,
        training_meta=meta,
    )


def predict(
    model: LogisticModel, features: np.ndarray, threshold: float = 0.5
) -> tuple[Label, float]:
    """Sigmoid probability with an inclusive decision boundary (p >= threshold)."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape != model.weights.shape:
        raise ShapeMismatchError(
            f"feature length {f.shape} != weight length {model.weights.shape}"
        )
    standardized = (f - model.feature_means) / model.feature_stds
    logit = float(standardized @ model.weights + model.bias)
    probability = float(_sigmoid(np.array([logit]))[0])
    label = Label.ANOMALY if probability >= threshold else Label.NOMINAL
    return label, probability


def rule_filter(
    z: ZScoreVector, cfg: HybridConfig, verdict: ParsedVerdict | None = None
) -> list[int]:
    """Sensors crossing the filter threshold, unioned with verdict citations.

    The union is truncated to max_selected by descending abs_z (ties broken by
    ascending id); if nothing qualifies, the top three sensors by abs_z are
    returned so the detector always receives features.
    """
    if len(z) == 0:
        raise EmptyInputError("cannot filter an empty z-score vector")
    selected = set(int(i) for i in np.flatnonzero(z.abs_z >= cfg.filter_threshold))
    if verdict is not None:
        selected.update(i for i in verdict.cited_sensor_ids if 0 <= i < len(z))
    if not selected:
        order = sorted(range(len(z)), key=lambda i: (-z.abs_z[i], i))
        return sorted(order[: min(3, len(z))])
    ranked = sorted(selected, key=lambda i: (-z.abs_z[i], i))
    return sorted(ranked[: cfg.max_selected])


def hybrid_predict(
    z: ZScoreVector,
    model: LogisticModel,
    cfg: HybridConfig,
    verdict: ParsedVerdict | None = None,
) -> tuple[Label, float, list[int]]:
    """Filter sensors, extract features of the selection, classify."""
    selected = rule_filter(z, cfg, verdict)
    label, probability = predict(
        model, extract_features(z, selected), cfg.decision_threshold
    )
    return label, probability, selected


def save_model(model: LogisticModel, path: str | Path) -> None:
    payload = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "feature_config": {
            "names": list(FEATURE_NAMES),
            "feature_means": model.feature_means.tolist(),
            "feature_stds": model.feature_stds.tolist(),
        },
        "hyper": {
            "learning_rate": model.training_meta.get("learning_rate"),
            "epochs": model.training_meta.get("epochs"),
            "l2": model.l2,
            "seed": model.training_meta.get("seed"),
        },
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "training_meta": model.training_meta,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> LogisticModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: not a model file: {exc}") from exc
    version = payload.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported model schema_version {version!r}"
        )
    return LogisticModel(
        weights=payload["weights"],
        bias=payload["bias"],
        l2=payload["hyper"]["l2"],
        feature_means=payload["feature_config"]["feature_means"],
        feature_stds=payload["feature_config"]["feature_stds"],
        training_meta=payload["training_meta"],
    )
