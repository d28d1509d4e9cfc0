from __future__ import annotations

import pytest

from ruleprompt.datagen import (
    InjectionSpec,
    SplitPlan,
    default_synthetic_model,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from ruleprompt.telemetry import RuleConfig


@pytest.fixture(scope="session")
def small_split():
    """16 sensors, 20/5/5 per class: big enough for exemplars, fast everywhere."""
    model = default_synthetic_model(sensor_count=16, seed=7)
    return generate_dataset(
        model, InjectionSpec(), SplitPlan(20, 5, 5), RuleConfig(), stats_pool=200
    )


@pytest.fixture(scope="session")
def small_split_path(small_split, tmp_path_factory):
    path = tmp_path_factory.mktemp("small") / "small.jsonl"
    write_dataset(small_split, path)
    return path


@pytest.fixture(scope="session")
def default_split_path(tmp_path_factory):
    """The full default dataset: 255 sensors, 600/100/100 per class, seed 42."""
    path = tmp_path_factory.mktemp("default") / "default.jsonl"
    model = default_synthetic_model()
    split = generate_dataset(model, InjectionSpec(), SplitPlan(), RuleConfig())
    write_dataset(split, path)
    return path


@pytest.fixture(scope="session")
def default_split(default_split_path):
    return read_dataset(default_split_path)
