"""Rule-aware prompting for LLM anomaly assessment over numeric telemetry.

The pipeline: generate rule-labeled synthetic telemetry, render modular
prompts around normalized value blocks, query a chat endpoint or an offline
simulated responder, parse verdicts, optionally hand rule-filtered features to
a trainable detector, and evaluate rule adherence, detection metrics, and
token efficiency.
"""

from .datagen import (
    DatasetSplit,
    InjectionSpec,
    LabeledSample,
    SignPolicy,
    SplitPlan,
    SyntheticModel,
    default_synthetic_model,
    generate_dataset,
    inject_anomaly,
    read_dataset,
    sample_nominal,
    write_dataset,
)
from .detector import (
    HybridConfig,
    LogisticModel,
    TrainConfig,
    extract_features,
    hybrid_predict,
    load_model,
    predict,
    rule_filter,
    save_model,
    train_detector,
)
from .gateway import (
    ChatExchange,
    EndpointConfig,
    SimulatedResponderConfig,
    TransportStatus,
    Verbosity,
    send_chat,
    simulate_response,
)
from .harness import (
    ComparisonTable,
    ConfusionMatrix,
    Metrics,
    ReportFormat,
    RunConfig,
    RunParadigm,
    RunResult,
    compare_runs,
    compute_metrics,
    emit_report,
    evaluate_run,
    train_from_dataset,
    verify_reported_consistency,
)
from .parsing import AdherenceReport, ParsedVerdict, check_rule_adherence, parse_response
from .prompts import (
    Exemplar,
    Paradigm,
    PromptModules,
    RenderedPrompt,
    ValueBlockStyle,
    attach_exemplars,
    compose_prompt,
    count_tokens,
    load_prompt_modules,
    render_value_block,
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
    estimate_stats,
    flag_sensor,
    normalize,
)

__version__ = "0.1.0"
