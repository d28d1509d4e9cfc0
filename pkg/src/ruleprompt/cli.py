"""Command-line driver: gen, prompt, run, train, compare, check, report.

Flag values override config-file values, which override defaults; the fully
resolved configuration is echoed into every run manifest. Exit codes: 0 ok,
2 configuration problem, 3 responder/endpoint failure, 4 dataset problem.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import (
    InjectionSpec,
    SignPolicy,
    SplitPlan,
    default_synthetic_model,
    generate_dataset,
    read_dataset,
    read_dataset_header,
    write_dataset,
)
from .detector import HybridConfig, TrainConfig, predict, save_model
from .errors import (
    DatasetFormatError,
    DatasetMismatchError,
    EndpointUnavailableError,
    GatewayError,
    QuotaUnreachableError,
    RulePromptError,
    TooManySensorsError,
    UnparseableValueBlockError,
)
from .gateway import EndpointConfig, SimulatedResponderConfig, Verbosity
from .harness import (
    ReportFormat,
    RunConfig,
    RunParadigm,
    RunResult,
    compare_runs,
    detector_training_data,
    emit_report,
    evaluate_run,
    train_from_dataset,
    verify_reported_consistency,
)
from .prompts import ValueBlockStyle, attach_exemplars, compose_prompt, load_prompt_modules, render_value_block
from .telemetry import Label, RuleConfig, normalize

STYLE_CHOICES = [s.value for s in ValueBlockStyle]
PARADIGM_CHOICES = [p.value for p in RunParadigm]

# Every key the run-config resolution chain consumes, mapped to its flag.
# The --help reflection test walks this registry.
RUN_CONFIG_FLAGS: dict[str, str] = {
    "dataset_path": "--dataset",
    "paradigm": "--paradigm",
    "style": "--style",
    "responder": "--responder",
    "fidelity": "--fidelity",
    "verbosity": "--verbosity",
    "base_url": "--base-url",
    "model_name": "--model-name",
    "timeout": "--timeout",
    "max_retries": "--max-retries",
    "temperature": "--temperature",
    "model_path": "--model-path",
    "filter_threshold": "--filter-threshold",
    "max_selected": "--max-selected",
    "decision_threshold": "--decision-threshold",
    "concurrency": "--concurrency",
    "seed": "--seed",
    "template_dir": "--template-dir",
    "score_unparseable_as_error": "--score-unparseable-as-error",
    "endpoint_adapted": "--endpoint-adapted",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ruleprompt",
        description="Rule-aware prompting pipeline for numeric telemetry anomaly assessment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a seeded labeled dataset")
    p_gen.add_argument("--out", required=True, help="dataset file to write (JSON lines)")
    p_gen.add_argument("--seed", type=int, default=42)
    p_gen.add_argument("--sensors", type=int, default=255)
    p_gen.add_argument("--deviation", type=float, default=0.15, help="injection fraction")
    p_gen.add_argument("--k", type=int, default=3, help="sensors injected per anomaly candidate")
    p_gen.add_argument("--sign", choices=["random", "up"], default="random")
    p_gen.add_argument("--tau", type=float, default=3.0)
    p_gen.add_argument("--train-per-class", type=int, default=600)
    p_gen.add_argument("--val-per-class", type=int, default=100)
    p_gen.add_argument("--test-per-class", type=int, default=100)
    p_gen.add_argument("--stats-pool", type=int, default=2000)
    p_gen.add_argument("--attempt-cap", type=int, default=100, help="attempt cap multiplier")
    p_gen.set_defaults(func=cmd_gen)

    p_prompt = sub.add_parser("prompt", help="render one prompt to standard output")
    p_prompt.add_argument("--dataset", required=True)
    p_prompt.add_argument("--index", type=int, default=0, help="test-split sample index")
    p_prompt.add_argument("--style", choices=STYLE_CHOICES, default="zscore")
    p_prompt.add_argument("--paradigm", choices=PARADIGM_CHOICES, default="zero-shot")
    p_prompt.add_argument("--seed", type=int, default=0)
    p_prompt.add_argument("--template-dir", default=None)
    p_prompt.set_defaults(func=cmd_prompt)

    p_run = sub.add_parser("run", help="evaluate a dataset's test split")
    p_run.add_argument("--config", default=None, help="JSON config file mirroring run fields")
    p_run.add_argument("--dataset", default=None)
    p_run.add_argument("--paradigm", choices=PARADIGM_CHOICES, default=None)
    p_run.add_argument("--style", choices=STYLE_CHOICES, default=None)
    p_run.add_argument("--responder", choices=["simulated", "endpoint"], default=None)
    p_run.add_argument("--fidelity", type=float, default=None, help="simulated responder fidelity")
    p_run.add_argument(
        "--verbosity", choices=[v.value for v in Verbosity], default=None,
        help="simulated responder verbosity",
    )
    p_run.add_argument("--base-url", default=None, help="endpoint base URL")
    p_run.add_argument("--model-name", default=None, help="endpoint model name")
    p_run.add_argument("--timeout", type=float, default=None, help="endpoint timeout (s)")
    p_run.add_argument("--max-retries", type=int, default=None)
    p_run.add_argument("--temperature", type=float, default=None)
    p_run.add_argument("--model-path", default=None, help="trained detector (hybrid runs)")
    p_run.add_argument("--filter-threshold", type=float, default=None)
    p_run.add_argument("--max-selected", type=int, default=None)
    p_run.add_argument("--decision-threshold", type=float, default=None)
    p_run.add_argument("--concurrency", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--template-dir", default=None)
    p_run.add_argument(
        "--score-unparseable-as-error", action="store_true", default=None,
        help="count unparseable replies as the wrong class instead of a separate bucket",
    )
    p_run.add_argument(
        "--endpoint-adapted", action="store_true", default=None,
        help="record the endpoint as hosting an adapted (fine-tuned) model in the manifest",
    )
    p_run.add_argument("--out-dir", default="ruleprompt-run", help="directory for report files")
    p_run.set_defaults(func=cmd_run)

    p_train = sub.add_parser("train", help="fit the detector and write a model file")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", required=True, help="model file to write")
    p_train.add_argument(
        "--features", choices=["all", "filtered"], default="filtered",
        help="train on all sensors or on rule-filtered selections",
    )
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--epochs", type=int, default=2000)
    p_train.add_argument("--l2", type=float, default=1e-4)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--filter-threshold", type=float, default=2.5)
    p_train.add_argument("--max-selected", type=int, default=16)
    p_train.set_defaults(func=cmd_train)

    p_compare = sub.add_parser("compare", help="tabulate several saved runs")
    p_compare.add_argument("results", nargs="+", help="result.json files from runs")
    p_compare.add_argument("--out-dir", default=None, help="write comparison.csv and .png here")
    p_compare.set_defaults(func=cmd_compare)

    p_check = sub.add_parser(
        "check", help="recompute shipped reference F1 values from precision/recall"
    )
    p_check.set_defaults(func=cmd_check)

    p_report = sub.add_parser("report", help="re-render report files from a saved run")
    p_report.add_argument("--result", required=True, help="result.json from a run")
    p_report.add_argument("--out-dir", required=True)
    p_report.set_defaults(func=cmd_report)

    return parser


def cmd_gen(args) -> int:
    model = default_synthetic_model(sensor_count=args.sensors, seed=args.seed)
    spec = InjectionSpec(
        deviation_fraction=args.deviation,
        sensors_per_sample=args.k,
        sign_policy=SignPolicy.RANDOM_SIGN if args.sign == "random" else SignPolicy.ALWAYS_UP,
    )
    plan = SplitPlan(
        train_per_class=args.train_per_class,
        validation_per_class=args.val_per_class,
        test_per_class=args.test_per_class,
    )
    rule = RuleConfig(tau=args.tau)
    split = generate_dataset(
        model, spec, plan, rule,
        stats_pool=args.stats_pool,
        attempt_cap_multiplier=args.attempt_cap,
    )
    write_dataset(split, args.out)
    total = len(split.train) + len(split.validation) + len(split.test)
    print(f"wrote {total} samples to {args.out} (seed {args.seed}, {args.sensors} sensors)")
    return 0


def _style(value: str) -> ValueBlockStyle:
    return ValueBlockStyle(value)


def cmd_prompt(args) -> int:
    split = read_dataset(args.dataset)
    if not 0 <= args.index < len(split.test):
        raise ValueError(
            f"--index {args.index} outside the test split (size {len(split.test)})"
        )
    paradigm = RunParadigm(args.paradigm)
    style = _style(args.style)
    modules = load_prompt_modules(split.rule, args.template_dir)
    rng = np.random.default_rng(args.seed)
    exemplars = attach_exemplars(split, paradigm.exemplar_paradigm(), rng, style)
    sample = split.test[args.index]
    z = normalize(sample.snapshot, split.stats, split.rule)
    block = render_value_block(sample.snapshot, split.stats, z, style, split.sensor_metas())
    prompt = compose_prompt(modules, exemplars, block)
    print(prompt.text)
    print(f"# tokens: {prompt.token_count}")
    return 0


def resolve_run_config(args) -> RunConfig:
    """defaults < config file < flags; the winner is what the manifest echoes."""
    file_cfg: dict = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(file_cfg, dict):
            raise ValueError(f"{args.config}: config file must hold a JSON object")
        unknown = set(file_cfg) - set(RUN_CONFIG_FLAGS)
        if unknown:
            raise ValueError(f"{args.config}: unknown config keys {sorted(unknown)}")

    def pick(key: str, default):
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            return flag_value
        if key in file_cfg and file_cfg[key] is not None:
            return file_cfg[key]
        return default

    dataset_path = pick("dataset_path", None) or pick("dataset", None)
    if not dataset_path:
        raise ValueError("a dataset is required (--dataset or config dataset_path)")

    responder_kind = pick("responder", "simulated")
    seed = int(pick("seed", 0))
    if responder_kind == "simulated":
        header = read_dataset_header(dataset_path)
        responder = SimulatedResponderConfig(
            rule=RuleConfig(tau=header["rule"]["tau"], epsilon=header["rule"]["epsilon"]),
            fidelity=float(pick("fidelity", 1.0)),
            verbosity=Verbosity(pick("verbosity", Verbosity.LABEL_PLUS_EXPLANATION.value)),
            seed=seed,
        )
    elif responder_kind == "endpoint":
        base_url = pick("base_url", None)
        model_name = pick("model_name", None)
        if not base_url or not model_name:
            raise ValueError("endpoint responder needs --base-url and --model-name")
        responder = EndpointConfig(
            base_url=base_url,
            model_name=model_name,
            timeout=float(pick("timeout", 30.0)),
            max_retries=int(pick("max_retries", 2)),
            temperature=float(pick("temperature", 0.0)),
        )
    else:
        raise ValueError(f"unknown responder kind {responder_kind!r}")

    paradigm = RunParadigm(pick("paradigm", RunParadigm.ZERO_SHOT.value))
    hybrid = None
    hybrid_keys = ("filter_threshold", "max_selected", "decision_threshold")
    if paradigm is RunParadigm.HYBRID or any(pick(k, None) is not None for k in hybrid_keys):
        hybrid = HybridConfig(
            filter_threshold=float(pick("filter_threshold", 2.5)),
            max_selected=int(pick("max_selected", 16)),
            decision_threshold=float(pick("decision_threshold", 0.5)),
        )
    return RunConfig(
        dataset_path=str(dataset_path),
        responder=responder,
        paradigm=paradigm,
        style=_style(pick("style", ValueBlockStyle.ZSCORE_ONLY.value)),
        hybrid=hybrid,
        model_path=pick("model_path", None),
        concurrency=int(pick("concurrency", 4)),
        seed=seed,
        template_dir=pick("template_dir", None),
        score_unparseable_as_error=bool(pick("score_unparseable_as_error", False)),
        endpoint_adapted=bool(pick("endpoint_adapted", False)),
    )


def _write_run_outputs(result: RunResult, out_dir: Path) -> None:
    from .plots import save_run_figure

    out_dir.mkdir(parents=True, exist_ok=True)
    result.save(out_dir / "result.json")
    emit_report(result, ReportFormat.JSON_SUMMARY, out_dir / "summary.json")
    emit_report(result, ReportFormat.CSV_PER_SAMPLE, out_dir / "per_sample.csv")
    save_run_figure(result, out_dir / "metrics.png")


def cmd_run(args) -> int:
    cfg = resolve_run_config(args)
    result = evaluate_run(cfg)
    out_dir = Path(args.out_dir)
    _write_run_outputs(result, out_dir)
    m = result.metrics
    print(
        f"samples={result.confusion.total} accuracy={m.accuracy:.3f} "
        f"recall={m.recall:.3f} precision={m.precision:.3f} f1={m.f1:.3f} "
        f"unparseable_rate={m.unparseable_rate:.3f}"
    )
    print(f"mean tokens={result.token_stats['mean']:.1f} max={result.token_stats['max']}")
    print(f"reports in {out_dir}/ (result.json, summary.json, per_sample.csv, metrics.png)")
    return 0


def cmd_train(args) -> int:
    split = read_dataset(args.dataset)
    hybrid = None
    if args.features == "filtered":
        hybrid = HybridConfig(
            filter_threshold=args.filter_threshold, max_selected=args.max_selected
        )
    hyper = TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, l2=args.l2, seed=args.seed
    )
    model = train_from_dataset(split, hyper, hybrid)
    save_model(model, args.out)
    features, labels = detector_training_data(split.train, split, hybrid)
    hits = sum(
        1
        for f, y in zip(features, labels)
        if (predict(model, f)[0] is Label.ANOMALY) == bool(y)
    )
    print(
        f"trained on {len(labels)} samples: final_loss="
        f"{model.training_meta['final_loss']:.6f} train_accuracy={hits / len(labels):.3f}"
    )
    print(f"model written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    from .plots import save_comparison_figure

    results = [RunResult.load(p) for p in args.results]
    table = compare_runs(results)
    print(table.render_text())
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table.write_csv(out_dir / "comparison.csv")
        save_comparison_figure(table, out_dir / "comparison.png")
        print(f"wrote {out_dir}/comparison.csv and {out_dir}/comparison.png")
    return 0


def cmd_check(args) -> int:
    report = verify_reported_consistency()
    for row in report.rows:
        status = "ok" if row.within_tolerance else "MISMATCH"
        print(
            f"{row.group}/{row.name}: precision={row.precision_pct:.1f} "
            f"recall={row.recall_pct:.1f} reported_f1={row.reported_f1_pct:.1f} "
            f"recomputed_f1={row.recomputed_f1_pct:.2f} delta={row.delta_pp:.3f}pp [{status}]"
        )
    if report.all_pass:
        print(f"all {len(report.rows)} rows consistent within {report.tolerance_pp}pp")
        return 0
    print("consistency check failed", file=sys.stderr)
    return 1


def cmd_report(args) -> int:
    result = RunResult.load(args.result)
    _write_run_outputs(result, Path(args.out_dir))
    print(f"re-rendered reports in {args.out_dir}/")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QuotaUnreachableError as exc:
        print(
            f"error: {exc}\nhint: raise --deviation (or lower --tau) so injected "
            "candidates can cross the rule threshold",
            file=sys.stderr,
        )
        return 4
    except (DatasetFormatError, DatasetMismatchError, TooManySensorsError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 4
    except (EndpointUnavailableError, GatewayError, UnparseableValueBlockError) as exc:
        print(f"responder error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 4
    except (RulePromptError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
