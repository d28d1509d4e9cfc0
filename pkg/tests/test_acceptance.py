"""Acceptance suite: one test per criterion, each printing a PASS line on success.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion lines.
Every tolerance is pinned here; nothing is deferred to later calibration.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from ruleprompt.cli import main
from ruleprompt.datagen import verify_labels
from ruleprompt.detector import HybridConfig, TrainConfig, extract_features, predict, save_model
from ruleprompt.gateway import SimulatedResponderConfig
from ruleprompt.harness import (
    RunConfig,
    RunParadigm,
    evaluate_run,
    train_from_dataset,
    verify_reported_consistency,
)
from ruleprompt.prompts import (
    Paradigm,
    ValueBlockStyle,
    attach_exemplars,
    compose_prompt,
    load_prompt_modules,
    render_value_block,
)
from ruleprompt.telemetry import Label, RuleConfig, ZScoreVector, apply_rule, normalize
from ruleprompt.detector import logistic_gradient, logistic_loss


def _passed(line: str) -> None:
    print(f"PASS {line}")


def test_criterion_1_reported_f1_arithmetic():
    started = time.monotonic()
    report = verify_reported_consistency()
    assert len(report.rows) == 7
    for row in report.rows:
        assert row.delta_pp <= 0.15, f"{row.name}: delta {row.delta_pp:.3f}pp"
    assert main(["check"]) == 0
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    _passed(
        "criterion 1: all 7 reported (precision, recall, F1) rows consistent "
        f"within 0.15pp in {elapsed:.2f}s"
    )


def test_criterion_2_oracle_end_to_end_identity(default_split, default_split_path):
    started = time.monotonic()
    cfg = RunConfig(
        dataset_path=str(default_split_path),
        responder=SimulatedResponderConfig(rule=default_split.rule, fidelity=1.0, seed=0),
        paradigm=RunParadigm.ZERO_SHOT,
        style=ValueBlockStyle.ZSCORE_ONLY,
        concurrency=8,
        seed=0,
    )
    result = evaluate_run(cfg, dataset=default_split)
    m = result.metrics
    assert (m.accuracy, m.recall, m.precision, m.f1) == (1.0, 1.0, 1.0, 1.0)
    assert m.unparseable_rate == 0.0
    assert result.confusion.total == 200
    elapsed = time.monotonic() - started
    assert elapsed < 30.0
    _passed(
        "criterion 2: fidelity-1.0 simulated run scores exactly 1.000 on all "
        f"metrics over 200 test samples in {elapsed:.1f}s"
    )


def test_criterion_3_token_orderings(default_split):
    started = time.monotonic()
    modules = load_prompt_modules(default_split.rule)
    metas = default_split.sensor_metas()
    sample = default_split.test[0]
    z = normalize(sample.snapshot, default_split.stats, default_split.rule)

    tokens = {}
    for style in ValueBlockStyle:
        block = render_value_block(sample.snapshot, default_split.stats, z, style, metas)
        tokens[style] = compose_prompt(modules, [], block).token_count
    assert tokens[ValueBlockStyle.ZSCORE_ONLY] <= tokens[ValueBlockStyle.VALUE_ONLY] * 1.2
    assert (
        tokens[ValueBlockStyle.VALUE_ONLY]
        < tokens[ValueBlockStyle.MEAN_STD_VALUE]
        < tokens[ValueBlockStyle.MEAN_STD_VALUE_Z]
    )

    paradigm_tokens = []
    for paradigm in (Paradigm.ZERO_SHOT, Paradigm.FEW_SHOT, Paradigm.ICL):
        rng = np.random.default_rng(0)
        exemplars = attach_exemplars(default_split, paradigm, rng, ValueBlockStyle.ZSCORE_ONLY)
        block = render_value_block(
            sample.snapshot, default_split.stats, z, ValueBlockStyle.ZSCORE_ONLY, metas
        )
        paradigm_tokens.append(compose_prompt(modules, exemplars, block).token_count)
    assert paradigm_tokens[0] < paradigm_tokens[1] < paradigm_tokens[2]

    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    _passed(
        "criterion 3: token orderings hold "
        f"(zscore {tokens[ValueBlockStyle.ZSCORE_ONLY]} <= 1.2x value "
        f"{tokens[ValueBlockStyle.VALUE_ONLY]}; paradigms {paradigm_tokens}) "
        f"in {elapsed:.2f}s"
    )


def test_criterion_4_rule_oracle_equivalence():
    started = time.monotonic()
    cfg = RuleConfig()
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 32))
        z = rng.uniform(0.0, 4.0, size=n)
        if rng.random() < 0.1:
            z[rng.integers(n)] = cfg.tau  # boundary case: |z| exactly tau
        label, flagged = apply_rule(ZScoreVector(abs_z=z), cfg)
        brute = max(float(v) for v in z)
        assert (label is Label.ANOMALY) == (brute >= cfg.tau)
        if brute == cfg.tau:
            assert label is Label.ANOMALY
        assert flagged == [i for i, v in enumerate(z) if v >= cfg.tau]
        checked += 1
    elapsed = time.monotonic() - started
    assert checked == 10_000 and elapsed < 5.0
    _passed(
        f"criterion 4: rule verdict equals brute-force max scan on 10000 vectors "
        f"(boundary inclusive) in {elapsed:.1f}s"
    )


def test_criterion_5_gradient_check():
    started = time.monotonic()
    rng = np.random.default_rng(31337)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(4, 40)), int(rng.integers(2, 10))
        x = rng.normal(0, 2, size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        w = rng.normal(0, 1.5, size=d)
        b = float(rng.normal())
        l2 = float(rng.uniform(0, 1))
        grad_w, grad_b = logistic_gradient(w, b, x, y, l2)
        fd = np.empty(d + 1)
        for j in range(d):
            up, down = w.copy(), w.copy()
            up[j] += h
            down[j] -= h
            fd[j] = (logistic_loss(up, b, x, y, l2) - logistic_loss(down, b, x, y, l2)) / (2 * h)
        fd[d] = (logistic_loss(w, b + h, x, y, l2) - logistic_loss(w, b - h, x, y, l2)) / (2 * h)
        analytic = np.append(grad_w, grad_b)
        rel = np.linalg.norm(analytic - fd) / max(
            np.linalg.norm(analytic), np.linalg.norm(fd), 1e-12
        )
        worst = max(worst, rel)
        assert rel < 1e-4
    elapsed = time.monotonic() - started
    assert elapsed < 5.0
    _passed(
        f"criterion 5: analytic gradient matches central differences on 100 draws "
        f"(worst relative error {worst:.2e}) in {elapsed:.1f}s"
    )


def test_criterion_6_hybrid_precision_dominance(default_split, default_split_path, tmp_path):
    started = time.monotonic()
    hybrid_cfg = HybridConfig()
    hyper = TrainConfig()
    hybrid_model = train_from_dataset(default_split, hyper, hybrid_cfg)
    standalone_model = train_from_dataset(default_split, hyper, None)

    model_path = tmp_path / "hybrid_model.json"
    save_model(hybrid_model, model_path)
    cfg = RunConfig(
        dataset_path=str(default_split_path),
        responder=SimulatedResponderConfig(rule=default_split.rule, fidelity=1.0, seed=0),
        paradigm=RunParadigm.HYBRID,
        hybrid=hybrid_cfg,
        model_path=str(model_path),
        concurrency=8,
    )
    hybrid_precision = evaluate_run(cfg, dataset=default_split).metrics.precision

    tp = fp = 0
    for sample in default_split.test:
        z = normalize(sample.snapshot, default_split.stats, default_split.rule)
        label, _ = predict(standalone_model, extract_features(z))
        if label is Label.ANOMALY:
            if sample.label is Label.ANOMALY:
                tp += 1
            else:
                fp += 1
    standalone_precision = tp / (tp + fp) if (tp + fp) else 0.0

    assert hybrid_precision >= standalone_precision
    assert hybrid_precision >= 0.99
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    _passed(
        f"criterion 6: hybrid precision {hybrid_precision:.3f} >= standalone "
        f"{standalone_precision:.3f} and >= 0.99, trained and evaluated in {elapsed:.1f}s"
    )


def test_criterion_7_determinism_under_concurrency(default_split, default_split_path):
    started = time.monotonic()
    blobs = []
    for concurrency in (1, 8):
        cfg = RunConfig(
            dataset_path=str(default_split_path),
            responder=SimulatedResponderConfig(rule=default_split.rule, fidelity=0.9, seed=7),
            concurrency=concurrency,
            seed=7,
        )
        result = evaluate_run(cfg, dataset=default_split)
        blobs.append(json.dumps(result.per_sample, sort_keys=True).encode())
    assert blobs[0] == blobs[1]
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    _passed(
        f"criterion 7: per-sample records byte-identical at concurrency 1 and 8 "
        f"in {elapsed:.1f}s"
    )


def test_criterion_8_dataset_protocol(default_split):
    started = time.monotonic()
    split = default_split
    for samples, per_class in ((split.train, 600), (split.validation, 100), (split.test, 100)):
        assert len(samples) == 2 * per_class
        anomalies = sum(1 for s in samples if s.label is Label.ANOMALY)
        assert anomalies == per_class
    assert verify_labels(split)  # every label re-derived from the rule oracle
    assert split.manifest["sensor_count"] == 255
    assert split.manifest["injection"]["fraction"] == 0.15
    assert split.manifest["injection"]["k"] == 3
    elapsed = time.monotonic() - started
    _passed(
        "criterion 8: default dataset holds exact 600/600, 100/100, 100/100 "
        f"class counts with rule-verified labels in {elapsed:.1f}s"
    )
