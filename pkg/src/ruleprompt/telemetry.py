"""Telemetry types, per-sensor statistics, z-score normalization, and the three-sigma rule.

Every function here is pure and every type is immutable after construction, so
all of it is safe to use concurrently. The rule oracle in this module defines
ground truth for the rest of the package.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError

DEFAULT_TAU = 3.0
DEFAULT_EPSILON = 1e-9


class SensorKind(enum.Enum):
    ACTIVE_INJECTION = "active_injection"
    REACTIVE_INJECTION = "reactive_injection"
    ACTIVE_FLOW = "active_flow"
    REACTIVE_FLOW = "reactive_flow"
    VOLTAGE_MAGNITUDE = "voltage_magnitude"


class Label(enum.Enum):
    """Binary verdict; the .value strings are the textual forms used in prompt I/O."""

    NOMINAL = "normal"
    ANOMALY = "anomaly"

    @classmethod
    def from_text(cls, text: str) -> "Label":
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown label text: {text!r}")


@dataclass(frozen=True, slots=True)
class SensorMeta:
    """Identity of one sensor. Display names are 1-based ("Sensor 1" is id 0)."""

    id: int
    name: str
    kind: SensorKind

    @classmethod
    def default(cls, sensor_id: int, kind: SensorKind) -> "SensorMeta":
        return cls(id=sensor_id, name=f"Sensor {sensor_id + 1}", kind=kind)


def default_sensor_metas(count: int) -> tuple[SensorMeta, ...]:
    """Contiguous 0-based ids split into five near-equal kind blocks, enum order."""
    if count < 1:
        raise EmptyInputError("sensor count must be >= 1")
    kinds = list(SensorKind)
    base, extra = divmod(count, len(kinds))
    metas: list[SensorMeta] = []
    for k, kind in enumerate(kinds):
        block = base + (1 if k < extra else 0)
        for _ in range(block):
            metas.append(SensorMeta.default(len(metas), kind))
    return tuple(metas)


def _as_readonly_vector(values: Iterable[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False, slots=True)
class Snapshot:
    """One multivariate telemetry sample: a fixed-width vector of finite readings."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_readonly_vector(self.values, "snapshot values")
        if arr.size == 0:
            raise EmptyInputError("snapshot must have at least one value")
        if not np.all(np.isfinite(arr)):
            raise ValueError("snapshot values must be finite")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def content_hash(self) -> str:
        """Stable hash of the exact float contents, for leakage/disjointness checks."""
        payload = json.dumps([repr(v) for v in self.values.tolist()]).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True, eq=False, slots=True)
class SensorStats:
    """Per-sensor nominal mean and population (divisor N) standard deviation.

    The population convention follows control-chart practice; fixtures relying
    on exact std values assume divisor N, not N-1.
    """

    means: np.ndarray
    stds: np.ndarray
    sample_count: int

    def __post_init__(self):
        means = _as_readonly_vector(self.means, "means")
        stds = _as_readonly_vector(self.stds, "stds")
        if means.size != stds.size:
            raise ShapeMismatchError(
                f"means length {means.size} != stds length {stds.size}"
            )
        if np.any(stds < 0):
            raise ValueError("stds must be entrywise >= 0")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    def __len__(self) -> int:
        return int(self.means.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorStats):
            return NotImplemented
        return (
            self.sample_count == other.sample_count
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.stds, other.stds)
        )


@dataclass(frozen=True, eq=False, slots=True)
class ZScoreVector:
    """Absolute z-scores for one snapshot; entries are finite and >= 0."""

    abs_z: np.ndarray

    def __post_init__(self):
        arr = _as_readonly_vector(self.abs_z, "abs_z")
        if not np.all(np.isfinite(arr)):
            raise ValueError("abs_z entries must be finite")
        if np.any(arr < 0):
            raise ValueError("abs_z entries must be >= 0")
        object.__setattr__(self, "abs_z", arr)

    def __len__(self) -> int:
        return int(self.abs_z.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ZScoreVector):
            return NotImplemented
        return np.array_equal(self.abs_z, other.abs_z)


@dataclass(frozen=True, slots=True)
class RuleConfig:
    """Three-sigma rule parameters: threshold tau and the division guard epsilon."""

    tau: float = DEFAULT_TAU
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def estimate_stats(samples: Sequence[Snapshot]) -> SensorStats:
    """Fit per-sensor mean and population standard deviation from snapshots.

    Raises EmptyInputError with no snapshots and ShapeMismatchError on ragged
    lengths.
    """
    if len(samples) == 0:
        raise EmptyInputError("cannot estimate stats from zero snapshots")
    width = len(samples[0])
    for i, snap in enumerate(samples):
        if len(snap) != width:
            raise ShapeMismatchError(
                f"snapshot {i} has length {len(snap)}, expected {width}"
            )
    matrix = np.stack([snap.values for snap in samples])
    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)  # population convention: divisor N
    return SensorStats(means=means, stds=stds, sample_count=len(samples))


def normalize(x: Snapshot, stats: SensorStats, cfg: RuleConfig) -> ZScoreVector:
    """abs_z[i] = |x[i] - mean[i]| / max(std[i], epsilon)."""
    if len(x) != len(stats):
        raise ShapeMismatchError(
            f"snapshot length {len(x)} != stats length {len(stats)}"
        )
    denom = np.maximum(stats.stds, cfg.epsilon)
    return ZScoreVector(abs_z=np.abs(x.values - stats.means) / denom)


def flag_sensor(abs_z_i: float, cfg: RuleConfig) -> int:
    """1 iff the absolute z-score meets or exceeds tau (boundary inclusive)."""
    return 1 if abs_z_i >= cfg.tau else 0


def apply_rule(z: ZScoreVector, cfg: RuleConfig) -> tuple[Label, list[int]]:
    """Verdict plus the ascending ids of every flagged sensor.

    A sample is anomalous iff at least one sensor's abs_z meets or exceeds tau.
    """
    if len(z) == 0:
        raise EmptyInputError("cannot apply the rule to an empty z-score vector")
    flagged = np.flatnonzero(z.abs_z >= cfg.tau)
    label = Label.ANOMALY if flagged.size else Label.NOMINAL
    return label, [int(i) for i in flagged]
