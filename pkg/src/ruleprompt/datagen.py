"""Seeded synthetic telemetry: nominal sampling, anomaly injection, labeled splits.

The generator replaces a physical simulation with a per-sensor Gaussian model
whose operating points are scaled by sensor kind (voltages near 1.0, flows and
injections in the tens), which is all the downstream prompt framework consumes.
Labels always come from the three-sigma rule oracle, never from the injection
event itself.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DatasetFormatError,
    QuotaUnreachableError,
    ShapeMismatchError,
    TooManySensorsError,
)
from .telemetry import (
    Label,
    RuleConfig,
    SensorKind,
    SensorMeta,
    SensorStats,
    Snapshot,
    ZScoreVector,
    apply_rule,
    default_sensor_metas,
    estimate_stats,
    normalize,
)

SCHEMA_VERSION = 1

DEFAULT_SENSOR_COUNT = 255
DEFAULT_STATS_POOL = 2000
DEFAULT_ATTEMPT_CAP_MULTIPLIER = 100

# Nominal operating scale per sensor kind: (mean, std). Mean/std ratios near 20
# keep a 15% multiplicative injection crossing the 3-sigma line roughly half
# the time per injected sensor, so rejection sampling stays cheap.
KIND_SCALES: dict[SensorKind, tuple[float, float]] = {
    SensorKind.ACTIVE_INJECTION: (60.0, 3.0),
    SensorKind.REACTIVE_INJECTION: (20.0, 1.0),
    SensorKind.ACTIVE_FLOW: (100.0, 5.0),
    SensorKind.REACTIVE_FLOW: (30.0, 1.5),
    SensorKind.VOLTAGE_MAGNITUDE: (1.0, 0.05),
}


class SignPolicy(enum.Enum):
    RANDOM_SIGN = "random_sign"
    ALWAYS_UP = "always_up"


@dataclass(frozen=True, eq=False, slots=True)
class SyntheticModel:
    """Per-sensor Gaussian operating model with a 64-bit generation seed."""

    sensor_metas: tuple[SensorMeta, ...]
    base_means: np.ndarray
    base_stds: np.ndarray
    seed: int

    def __post_init__(self):
        means = np.asarray(self.base_means, dtype=np.float64).copy()
        stds = np.asarray(self.base_stds, dtype=np.float64).copy()
        if means.size != len(self.sensor_metas) or stds.size != len(self.sensor_metas):
            raise ShapeMismatchError("base vectors must match the sensor count")
        if np.any(stds <= 0):
            raise ValueError("base_stds must be entrywise > 0")
        means.flags.writeable = False
        stds.flags.writeable = False
        object.__setattr__(self, "base_means", means)
        object.__setattr__(self, "base_stds", stds)

    @property
    def sensor_count(self) -> int:
        return len(self.sensor_metas)


def default_synthetic_model(
    sensor_count: int = DEFAULT_SENSOR_COUNT, seed: int = 42
) -> SyntheticModel:
    """Kind-scaled model with a small deterministic jitter so sensors differ."""
    metas = default_sensor_metas(sensor_count)
    jitter_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6A177E12]))
    means = np.empty(sensor_count)
    stds = np.empty(sensor_count)
    for meta in metas:
        mean_scale, std_scale = KIND_SCALES[meta.kind]
        means[meta.id] = mean_scale * (1.0 + 0.1 * jitter_rng.uniform(-1.0, 1.0))
        stds[meta.id] = std_scale * (1.0 + 0.1 * jitter_rng.uniform(-1.0, 1.0))
    return SyntheticModel(sensor_metas=metas, base_means=means, base_stds=stds, seed=seed)


@dataclass(frozen=True, slots=True)
class InjectionSpec:
    """How anomaly candidates are perturbed before rule labeling."""

    deviation_fraction: float = 0.15
    sensors_per_sample: int = 3
    sign_policy: SignPolicy = SignPolicy.RANDOM_SIGN

    def __post_init__(self):
        if not 0.0 < self.deviation_fraction < 1.0:
            raise ValueError("deviation_fraction must be in (0, 1)")
        if self.sensors_per_sample < 0:
            raise ValueError("sensors_per_sample must be >= 0")


@dataclass(frozen=True, slots=True)
class SplitPlan:
    """Per-class quotas for each split; classes are balanced by construction."""

    train_per_class: int = 600
    validation_per_class: int = 100
    test_per_class: int = 100

    def __post_init__(self):
        for quota in (self.train_per_class, self.validation_per_class, self.test_per_class):
            if quota < 0:
                raise ValueError("split quotas must be >= 0")


@dataclass(frozen=True, eq=False, slots=True)
class LabeledSample:
    snapshot: Snapshot
    label: Label
    injected_ids: tuple[int, ...]
    flagged_ids: tuple[int, ...]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledSample):
            return NotImplemented
        return (
            self.label == other.label
            and self.injected_ids == other.injected_ids
            and self.flagged_ids == other.flagged_ids
            and self.snapshot == other.snapshot
        )


@dataclass(eq=False)
class DatasetSplit:
    train: list[LabeledSample]
    validation: list[LabeledSample]
    test: list[LabeledSample]
    stats: SensorStats
    rule: RuleConfig
    manifest: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.manifest == other.manifest
            and self.rule == other.rule
            and self.stats == other.stats
            and self.train == other.train
            and self.validation == other.validation
            and self.test == other.test
        )

    @property
    def sensor_count(self) -> int:
        return len(self.stats)

    def sensor_metas(self) -> tuple[SensorMeta, ...]:
        return default_sensor_metas(self.sensor_count)


def sample_nominal(model: SyntheticModel, rng: np.random.Generator) -> Snapshot:
    """Draw one nominal snapshot; deterministic given the stream state."""
    g = rng.standard_normal(model.sensor_count)
    return Snapshot(values=model.base_means + model.base_stds * g)


def inject_anomaly(
    x: Snapshot, spec: InjectionSpec, rng: np.random.Generator
) -> tuple[Snapshot, tuple[int, ...]]:
    """Scale `sensors_per_sample` distinct sensor values by (1 +/- deviation)."""
    n = len(x)
    if spec.sensors_per_sample > n:
        raise TooManySensorsError(
            f"cannot inject {spec.sensors_per_sample} sensors into a {n}-sensor snapshot"
        )
    if spec.sensors_per_sample == 0:
        return x, ()
    ids = np.sort(rng.choice(n, size=spec.sensors_per_sample, replace=False))
    if spec.sign_policy is SignPolicy.RANDOM_SIGN:
        signs = rng.integers(0, 2, size=spec.sensors_per_sample) * 2 - 1
    else:
        signs = np.ones(spec.sensors_per_sample, dtype=np.int64)
    values = x.values.copy()
    values[ids] = values[ids] * (1.0 + signs * spec.deviation_fraction)
    return Snapshot(values=values), tuple(int(i) for i in ids)


def _display_consistent(z: ZScoreVector, rule: RuleConfig, decimals: int) -> bool:
    """True when rounding abs_z for display flips no sensor across the threshold.

    Prompts show abs_z at fixed precision, so a responder working from the
    displayed values can only reproduce the oracle on samples where the
    rounded comparison agrees with the exact one for every sensor. Rounding
    moves a value by at most half a display step, so only sensors that close
    to tau need the exact formatting check.
    """
    near = np.abs(z.abs_z - rule.tau) < 0.6 * 10.0**-decimals
    for v in z.abs_z[near]:
        displayed = float(f"{v:.{decimals}f}")
        if (displayed >= rule.tau) != (v >= rule.tau):
            return False
    return True


def generate_dataset(
    model: SyntheticModel,
    spec: InjectionSpec,
    plan: SplitPlan,
    rule: RuleConfig,
    *,
    stats_pool: int = DEFAULT_STATS_POOL,
    attempt_cap_multiplier: int = DEFAULT_ATTEMPT_CAP_MULTIPLIER,
    display_decimals: int | None = 1,
) -> DatasetSplit:
    """Fit stats on a dedicated nominal pool, then fill per-split class quotas.

    Candidates are drawn with injection for the anomaly quota and without for
    the nominal quota, labeled by the rule oracle, and discarded when the label
    misses the quota being filled (rejection sampling). With `display_decimals`
    set, candidates whose rounded abs_z display would disagree with the exact
    rule on any sensor are also discarded, keeping displayed values faithful to
    the labels. Fully deterministic given the model seed.
    """
    rng = np.random.default_rng(model.seed)
    pool = [sample_nominal(model, rng) for _ in range(stats_pool)]
    stats = estimate_stats(pool)
    seen_hashes = {snap.content_hash() for snap in pool}

    def fill(quota: int, want: Label) -> list[LabeledSample]:
        out: list[LabeledSample] = []
        attempts = 0
        cap = max(1, attempt_cap_multiplier * max(quota, 1))
        while len(out) < quota:
            attempts += 1
            if attempts > cap:
                raise QuotaUnreachableError(
                    f"{want.value} quota unfilled after {cap} attempts "
                    f"({len(out)}/{quota}); injection magnitude may be too "
                    "small (or too large) for the rule threshold"
                )
            x = sample_nominal(model, rng)
            injected: tuple[int, ...] = ()
            if want is Label.ANOMALY:
                x, injected = inject_anomaly(x, spec, rng)
            z = normalize(x, stats, rule)
            label, flagged = apply_rule(z, rule)
            if label is not want:
                continue
            if display_decimals is not None and not _display_consistent(
                z, rule, display_decimals
            ):
                continue
            h = x.content_hash()
            if h in seen_hashes:
                continue
            seen_hashes.add(h)
            out.append(
                LabeledSample(
                    snapshot=x,
                    label=label,
                    injected_ids=injected,
                    flagged_ids=tuple(flagged),
                )
            )
        return out

    splits = {}
    for name, quota in (
        ("train", plan.train_per_class),
        ("validation", plan.validation_per_class),
        ("test", plan.test_per_class),
    ):
        nominal = fill(quota, Label.NOMINAL)
        anomalous = fill(quota, Label.ANOMALY)
        splits[name] = nominal + anomalous

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": model.seed,
        "sensor_count": model.sensor_count,
        "rule": {"tau": rule.tau, "epsilon": rule.epsilon},
        "means": stats.means.tolist(),
        "stds": stats.stds.tolist(),
        "injection": {
            "fraction": spec.deviation_fraction,
            "k": spec.sensors_per_sample,
            "sign": spec.sign_policy.value,
        },
        "counts": {
            "train_per_class": plan.train_per_class,
            "validation_per_class": plan.validation_per_class,
            "test_per_class": plan.test_per_class,
        },
        "stats_pool": stats_pool,
        "stats_sample_count": stats.sample_count,
        "display_decimals": display_decimals,
    }
    return DatasetSplit(
        train=splits["train"],
        validation=splits["validation"],
        test=splits["test"],
        stats=stats,
        rule=rule,
        manifest=manifest,
    )


def _sample_to_record(sample: LabeledSample, split_name: str) -> dict:
    return {
        "split": split_name,
        "values": sample.snapshot.values.tolist(),
        "label": sample.label.value,
        "injected": list(sample.injected_ids),
        "flagged": list(sample.flagged_ids),
    }


def write_dataset(split: DatasetSplit, path: str | Path) -> None:
    """One header line (manifest + stats), then one JSON line per sample."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(split.manifest) + "\n")
        for name in ("train", "validation", "test"):
            for sample in getattr(split, name):
                f.write(json.dumps(_sample_to_record(sample, name)) + "\n")


def read_dataset_header(path: str | Path) -> dict:
    """Parse just the manifest line; cheap way to get rule/shape information."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header_line = f.readline()
    if not header_line.strip():
        raise DatasetFormatError(f"{path}: missing header line")
    try:
        manifest = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: unreadable header: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported schema_version {manifest.get('schema_version')!r} "
            f"(this reader handles {SCHEMA_VERSION})"
        )
    return manifest


def read_dataset(path: str | Path) -> DatasetSplit:
    """Inverse of write_dataset; raises DatasetFormatError on any malformation."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header_line = f.readline()
        if not header_line.strip():
            raise DatasetFormatError(f"{path}: missing header line")
        try:
            manifest = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}: unreadable header: {exc}") from exc
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DatasetFormatError(
                f"{path}: unsupported schema_version {version!r} "
                f"(this reader handles {SCHEMA_VERSION})"
            )
        for key in ("seed", "sensor_count", "rule", "means", "stds", "injection"):
            if key not in manifest:
                raise DatasetFormatError(f"{path}: header missing {key!r}")
        rule = RuleConfig(
            tau=manifest["rule"]["tau"], epsilon=manifest["rule"]["epsilon"]
        )
        stats = SensorStats(
            means=manifest["means"],
            stds=manifest["stds"],
            sample_count=manifest.get("stats_sample_count", 1),
        )
        buckets: dict[str, list[LabeledSample]] = {
            "train": [],
            "validation": [],
            "test": [],
        }
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(
                    f"{path}:{lineno}: truncated or corrupt sample line"
                ) from exc
            try:
                sample = LabeledSample(
                    snapshot=Snapshot(values=record["values"]),
                    label=Label.from_text(record["label"]),
                    injected_ids=tuple(record["injected"]),
                    flagged_ids=tuple(record["flagged"]),
                )
                bucket = buckets[record["split"]]
            except (KeyError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: bad sample record: {exc}") from exc
            if len(sample.snapshot) != manifest["sensor_count"]:
                raise DatasetFormatError(
                    f"{path}:{lineno}: sample width {len(sample.snapshot)} != "
                    f"header sensor_count {manifest['sensor_count']}"
                )
            bucket.append(sample)

    counts = manifest.get("counts")
    if counts is not None:
        expected = {
            "train": 2 * counts["train_per_class"],
            "validation": 2 * counts["validation_per_class"],
            "test": 2 * counts["test_per_class"],
        }
        for name, want in expected.items():
            if len(buckets[name]) != want:
                raise DatasetFormatError(
                    f"{path}: {name} split has {len(buckets[name])} samples, "
                    f"header promised {want} (file truncated?)"
                )
    return DatasetSplit(
        train=buckets["train"],
        validation=buckets["validation"],
        test=buckets["test"],
        stats=stats,
        rule=rule,
        manifest=manifest,
    )


def verify_labels(split: DatasetSplit) -> bool:
    """Independent pass re-deriving every label from the rule oracle."""
    for samples in (split.train, split.validation, split.test):
        for sample in samples:
            z = normalize(sample.snapshot, split.stats, split.rule)
            label, flagged = apply_rule(z, split.rule)
            if label is not sample.label or tuple(flagged) != sample.flagged_ids:
                return False
    return True
