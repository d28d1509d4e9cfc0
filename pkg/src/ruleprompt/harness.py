"""Experiment orchestration: runs, metrics, comparisons, consistency checks, reports.

A run walks the test split of a dataset, renders one prompt per sample,
collects replies from the configured responder (HTTP endpoint or offline
simulator), parses verdicts, and aggregates a confusion matrix with token and
latency accounting. Aggregation is keyed by sample index, so any concurrency
level produces identical results with a deterministic responder.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .datagen import DatasetSplit, read_dataset
from .detector import (
    HybridConfig,
    LogisticModel,
    TrainConfig,
    extract_features,
    hybrid_predict,
    load_model,
    rule_filter,
    train_detector,
)
from .errors import (
    DatasetFormatError,
    DatasetMismatchError,
    EmptyRunError,
    EndpointUnavailableError,
    GatewayError,
    ModelMissingError,
    UnparseableReplyError,
)
from .gateway import (
    ChatExchange,
    EndpointConfig,
    SimulatedResponderConfig,
    send_chat,
    simulate_response,
)
from .parsing import check_rule_adherence, parse_response
from .prompts import (
    Paradigm,
    RenderedPrompt,
    ValueBlockStyle,
    attach_exemplars,
    compose_prompt,
    load_prompt_modules,
    render_value_block,
)
from .reference_results import F1_TOLERANCE_PP, REPORTED_ROWS, ReportedRow
from .telemetry import Label, normalize

RESULT_SCHEMA_VERSION = 1

UNPARSEABLE = "unparseable"


class RunParadigm(enum.Enum):
    ZERO_SHOT = "zero-shot"
    FEW_SHOT = "few-shot"
    ICL = "icl"
    HYBRID = "hybrid"

    def exemplar_paradigm(self) -> Paradigm:
        # The hybrid pipeline prompts the model as a zero-shot filter.
        mapping = {
            RunParadigm.ZERO_SHOT: Paradigm.ZERO_SHOT,
            RunParadigm.FEW_SHOT: Paradigm.FEW_SHOT,
            RunParadigm.ICL: Paradigm.ICL,
            RunParadigm.HYBRID: Paradigm.ZERO_SHOT,
        }
        return mapping[self]


@dataclass(frozen=True, slots=True)
class RunConfig:
    dataset_path: str
    responder: EndpointConfig | SimulatedResponderConfig
    paradigm: RunParadigm = RunParadigm.ZERO_SHOT
    style: ValueBlockStyle = ValueBlockStyle.ZSCORE_ONLY
    hybrid: HybridConfig | None = None
    model_path: str | None = None
    concurrency: int = 4
    seed: int = 0
    template_dir: str | None = None
    score_unparseable_as_error: bool = False
    # set when the endpoint hosts a fine-tuned/adapted model, so the manifest
    # records that supervision level even though the wire protocol is identical
    endpoint_adapted: bool = False

    def __post_init__(self):
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.paradigm is RunParadigm.HYBRID and self.model_path is None:
            raise ModelMissingError("hybrid runs need a trained model path")

    def echo(self) -> dict:
        """JSON-safe copy of the resolved configuration; secrets are redacted."""
        if isinstance(self.responder, SimulatedResponderConfig):
            responder = {
                "kind": "simulated",
                "fidelity": self.responder.fidelity,
                "verbosity": self.responder.verbosity.value,
                "seed": self.responder.seed,
                "rule": {"tau": self.responder.rule.tau, "epsilon": self.responder.rule.epsilon},
            }
        else:
            responder = {
                "kind": "endpoint",
                "base_url": self.responder.base_url,
                "model_name": self.responder.model_name,
                "api_key_present": self.responder.resolved_api_key() is not None,
                "timeout": self.responder.timeout,
                "max_retries": self.responder.max_retries,
                "temperature": self.responder.temperature,
            }
        hybrid = None
        if self.hybrid is not None:
            hybrid = {
                "filter_threshold": self.hybrid.filter_threshold,
                "max_selected": self.hybrid.max_selected,
                "decision_threshold": self.hybrid.decision_threshold,
            }
        return {
            "dataset_path": str(self.dataset_path),
            "paradigm": "endpoint-adapted" if self.endpoint_adapted else self.paradigm.value,
            "style": self.style.value,
            "responder": responder,
            "hybrid": hybrid,
            "model_path": str(self.model_path) if self.model_path else None,
            "concurrency": self.concurrency,
            "seed": self.seed,
            "score_unparseable_as_error": self.score_unparseable_as_error,
        }


@dataclass(frozen=True, slots=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    unparseable: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn, self.unparseable) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn + self.unparseable

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "unparseable": self.unparseable,
        }


@dataclass(frozen=True, slots=True)
class Metrics:
    accuracy: float
    recall: float
    precision: float
    f1: float
    unparseable_rate: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "unparseable_rate": self.unparseable_rate,
        }


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, zero when the denominator vanishes."""
    denom = precision + recall
    return 2.0 * precision * recall / denom if denom > 0 else 0.0


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy over all evaluated samples (unparseable ones can only hurt it)."""
    if cm.total == 0:
        raise EmptyRunError("no evaluated samples")
    accuracy = (cm.tp + cm.tn) / cm.total
    recall = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else 0.0
    precision = cm.tp / (cm.tp + cm.fp) if (cm.tp + cm.fp) > 0 else 0.0
    return Metrics(
        accuracy=accuracy,
        recall=recall,
        precision=precision,
        f1=f1_score(precision, recall),
        unparseable_rate=cm.unparseable / cm.total,
    )


def confusion_from_records(
    records: list[dict], score_unparseable_as_error: bool = False
) -> ConfusionMatrix:
    """Tally truth/predicted pairs; unparseable replies form their own bucket,
    or count as the wrong class under the strict policy."""
    tp = fp = fn = tn = unparseable = 0
    for record in records:
        truth, predicted = record["truth"], record["predicted"]
        if predicted == UNPARSEABLE:
            if score_unparseable_as_error:
                if truth == Label.ANOMALY.value:
                    fn += 1
                else:
                    fp += 1
            else:
                unparseable += 1
        elif predicted == Label.ANOMALY.value:
            if truth == Label.ANOMALY.value:
                tp += 1
            else:
                fp += 1
        else:
            if truth == Label.ANOMALY.value:
                fn += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn, unparseable=unparseable)


@dataclass(eq=False)
class RunResult:
    per_sample: list[dict]
    confusion: ConfusionMatrix
    metrics: Metrics
    token_stats: dict
    manifest: dict = field(default_factory=dict)

    def adherence_summary(self) -> dict:
        matches = [
            r["label_matches_rule"] for r in self.per_sample if r["label_matches_rule"] is not None
        ]
        valid = [r["citations_valid"] for r in self.per_sample if r["citations_valid"] is not None]
        complete = [
            r["citations_complete"] for r in self.per_sample if r["citations_complete"] is not None
        ]
        return {
            "parsed_replies": len(matches),
            "unparsed_replies": sum(1 for r in self.per_sample if not r["parsed"]),
            "label_matches_rule_rate": float(np.mean(matches)) if matches else 0.0,
            "mean_citations_valid": float(np.mean(valid)) if valid else 0.0,
            "mean_citations_complete": float(np.mean(complete)) if complete else 0.0,
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": RESULT_SCHEMA_VERSION,
            "manifest": self.manifest,
            "confusion": self.confusion.as_dict(),
            "metrics": self.metrics.as_dict(),
            "token_stats": self.token_stats,
            "adherence": self.adherence_summary(),
            "per_sample": self.per_sample,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunResult":
        version = payload.get("schema_version")
        if version != RESULT_SCHEMA_VERSION:
            raise DatasetFormatError(f"unsupported result schema_version {version!r}")
        confusion = ConfusionMatrix(**payload["confusion"])
        metrics = Metrics(**payload["metrics"])
        result = cls(
            per_sample=payload["per_sample"],
            confusion=confusion,
            metrics=metrics,
            token_stats=payload["token_stats"],
            manifest=payload["manifest"],
        )
        strict = result.manifest.get("run_config", {}).get(
            "score_unparseable_as_error", False
        )
        recomputed = confusion_from_records(result.per_sample, strict)
        if recomputed != confusion or compute_metrics(recomputed) != metrics:
            raise DatasetFormatError(
                "stored metrics are not recomputable from the per-sample records"
            )
        return result

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunResult":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: not a result file: {exc}") from exc
        return cls.from_dict(payload)


def dataset_file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def detector_training_data(
    samples, split: DatasetSplit, hybrid: HybridConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and 0/1 labels for detector training.

    With a hybrid config the features come from rule-filtered sensor
    selections (no verdicts at training time); otherwise from all sensors.
    """
    rows = []
    labels = []
    for sample in samples:
        z = normalize(sample.snapshot, split.stats, split.rule)
        selected = rule_filter(z, hybrid) if hybrid is not None else None
        rows.append(extract_features(z, selected))
        labels.append(1.0 if sample.label is Label.ANOMALY else 0.0)
    return np.array(rows), np.array(labels)


def train_from_dataset(
    split: DatasetSplit,
    hyper: TrainConfig = TrainConfig(),
    hybrid: HybridConfig | None = None,
) -> LogisticModel:
    if hybrid is not None:
        hybrid.warn_if_above_rule(split.rule)
    features, labels = detector_training_data(split.train, split, hybrid)
    return train_detector(features, labels, hyper)


def _respond(cfg: RunConfig, prompt: RenderedPrompt, index: int) -> ChatExchange:
    if isinstance(cfg.responder, SimulatedResponderConfig):
        return simulate_response(cfg.responder, prompt, index)
    try:
        return send_chat(cfg.responder, prompt)
    except GatewayError as exc:
        raise EndpointUnavailableError(f"sample {index}: {exc}") from exc


def evaluate_run(cfg: RunConfig, dataset: DatasetSplit | None = None) -> RunResult:
    """Evaluate the dataset's test split under the configured paradigm and style."""
    if dataset is None:
        try:
            dataset = read_dataset(cfg.dataset_path)
        except OSError as exc:
            raise DatasetFormatError(f"cannot read dataset: {exc}") from exc
    if not dataset.test:
        raise EmptyRunError("dataset has an empty test split")

    modules = load_prompt_modules(dataset.rule, cfg.template_dir)
    metas = dataset.sensor_metas()
    rng = np.random.default_rng(cfg.seed)
    exemplars = attach_exemplars(
        dataset, cfg.paradigm.exemplar_paradigm(), rng, cfg.style
    )

    model: LogisticModel | None = None
    hybrid_cfg: HybridConfig | None = None
    if cfg.paradigm is RunParadigm.HYBRID:
        if cfg.model_path is None or not Path(cfg.model_path).exists():
            raise ModelMissingError(f"no trained model at {cfg.model_path!r}")
        model = load_model(cfg.model_path)
        hybrid_cfg = cfg.hybrid or HybridConfig()
        hybrid_cfg.warn_if_above_rule(dataset.rule)

    def evaluate_sample(index: int) -> dict:
        sample = dataset.test[index]
        z = normalize(sample.snapshot, dataset.stats, dataset.rule)
        block = render_value_block(sample.snapshot, dataset.stats, z, cfg.style, metas)
        prompt = compose_prompt(modules, exemplars, block)
        exchange = _respond(cfg, prompt, index)
        try:
            verdict = parse_response(exchange.reply_text)
        except UnparseableReplyError:
            verdict = None

        record: dict = {
            "index": index,
            "truth": sample.label.value,
            "prompt_tokens": exchange.prompt_tokens,
            "latency": exchange.latency,
            "parsed": verdict is not None,
        }
        if verdict is not None:
            adherence = check_rule_adherence(verdict, z, dataset.rule)
            record["label_matches_rule"] = adherence.label_matches_rule
            record["citations_valid"] = adherence.citations_valid
            record["citations_complete"] = adherence.citations_complete
        else:
            record["label_matches_rule"] = None
            record["citations_valid"] = None
            record["citations_complete"] = None

        if cfg.paradigm is RunParadigm.HYBRID:
            label, probability, selected = hybrid_predict(z, model, hybrid_cfg, verdict)
            record["predicted"] = label.value
            record["probability"] = probability
            record["selected_ids"] = selected
        else:
            record["predicted"] = verdict.label.value if verdict else UNPARSEABLE
        return record

    indices = range(len(dataset.test))
    if cfg.concurrency == 1:
        records = [evaluate_sample(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            records = list(pool.map(evaluate_sample, indices))
    records.sort(key=lambda r: r["index"])

    confusion = confusion_from_records(records, cfg.score_unparseable_as_error)
    metrics = compute_metrics(confusion)
    tokens = [r["prompt_tokens"] for r in records]
    token_stats = {"mean": float(np.mean(tokens)), "max": int(np.max(tokens))}
    manifest = {
        "run_config": cfg.echo(),
        "dataset_hash": dataset_file_hash(cfg.dataset_path),
        "samples_evaluated": len(records),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    return RunResult(
        per_sample=records,
        confusion=confusion,
        metrics=metrics,
        token_stats=token_stats,
        manifest=manifest,
    )


@dataclass(frozen=True, slots=True)
class ComparisonTable:
    columns: tuple[str, ...]
    rows: tuple[dict, ...]

    def render_text(self) -> str:
        widths = {c: max(len(c), *(len(_cell(r[c])) for r in self.rows)) for c in self.columns}
        header = "  ".join(c.ljust(widths[c]) for c in self.columns)
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append("  ".join(_cell(row[c]).ljust(widths[c]) for c in self.columns))
        return "\n".join(lines)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=self.columns)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def compare_runs(results: list[RunResult], labels: list[str] | None = None) -> ComparisonTable:
    """Side-by-side metrics for runs over the same dataset (hash-enforced)."""
    if len(results) < 2:
        raise EmptyRunError("need at least two runs to compare")
    hashes = {r.manifest.get("dataset_hash") for r in results}
    if len(hashes) != 1:
        raise DatasetMismatchError(
            f"runs span {len(hashes)} different datasets; refusing to compare"
        )
    if labels is None:
        labels = [
            f"{r.manifest['run_config']['paradigm']}/{r.manifest['run_config']['style']}"
            for r in results
        ]
    rows = []
    for label, result in zip(labels, results):
        rows.append(
            {
                "run": label,
                "accuracy": result.metrics.accuracy,
                "recall": result.metrics.recall,
                "precision": result.metrics.precision,
                "f1": result.metrics.f1,
                "mean_tokens": result.token_stats["mean"],
            }
        )
    return ComparisonTable(
        columns=("run", "accuracy", "recall", "precision", "f1", "mean_tokens"),
        rows=tuple(rows),
    )


@dataclass(frozen=True, slots=True)
class ConsistencyRow:
    name: str
    group: str
    precision_pct: float
    recall_pct: float
    reported_f1_pct: float
    recomputed_f1_pct: float

    @property
    def delta_pp(self) -> float:
        return abs(self.recomputed_f1_pct - self.reported_f1_pct)

    @property
    def within_tolerance(self) -> bool:
        return self.delta_pp <= F1_TOLERANCE_PP


@dataclass(frozen=True, slots=True)
class ConsistencyReport:
    rows: tuple[ConsistencyRow, ...]
    tolerance_pp: float = F1_TOLERANCE_PP

    @property
    def all_pass(self) -> bool:
        return all(row.within_tolerance for row in self.rows)


def verify_reported_consistency(
    rows: tuple[ReportedRow, ...] = REPORTED_ROWS,
) -> ConsistencyReport:
    """Recompute each reported F1 from its precision/recall pair."""
    out = []
    for row in rows:
        recomputed = f1_score(row.precision_pct / 100.0, row.recall_pct / 100.0) * 100.0
        out.append(
            ConsistencyRow(
                name=row.name,
                group=row.group,
                precision_pct=row.precision_pct,
                recall_pct=row.recall_pct,
                reported_f1_pct=row.f1_pct,
                recomputed_f1_pct=recomputed,
            )
        )
    return ConsistencyReport(rows=tuple(out))


class ReportFormat(enum.Enum):
    JSON_SUMMARY = "json_summary"
    CSV_PER_SAMPLE = "csv_per_sample"


def emit_report(result: RunResult, fmt: ReportFormat, path: str | Path) -> Path:
    """Write one report file. The JSON summary drops timestamps so repeated
    identical runs produce byte-identical summaries."""
    if not result.per_sample:
        raise EmptyRunError("refusing to report an empty run")
    path = Path(path)
    if fmt is ReportFormat.JSON_SUMMARY:
        manifest = {k: v for k, v in result.manifest.items() if k != "created_at"}
        payload = {
            "manifest": manifest,
            "confusion": result.confusion.as_dict(),
            "metrics": result.metrics.as_dict(),
            "token_stats": result.token_stats,
            "adherence": result.adherence_summary(),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["index", "truth", "predicted", "prompt_tokens", "latency", "label_matches_rule"]
            )
            for record in result.per_sample:
                matches = record["label_matches_rule"]
                writer.writerow(
                    [
                        record["index"],
                        record["truth"],
                        record["predicted"],
                        record["prompt_tokens"],
                        record["latency"],
                        "" if matches is None else matches,
                    ]
                )
    return path
