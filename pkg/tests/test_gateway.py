from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from ruleprompt.errors import (
    ChatTimeoutError,
    HttpStatusError,
    MissingApiKeyError,
    ReplyFormatError,
    UnparseableValueBlockError,
)
from ruleprompt.gateway import (
    EndpointConfig,
    SimulatedResponderConfig,
    TransportStatus,
    Verbosity,
    extract_abs_z,
    send_chat,
    simulate_response,
)
from ruleprompt.prompts import (
    PromptModules,
    ValueBlockStyle,
    compose_prompt,
    render_value_block,
)
from ruleprompt.telemetry import (
    RuleConfig,
    SensorStats,
    Snapshot,
    ZScoreVector,
    apply_rule,
    default_sensor_metas,
    normalize,
)


class StubHandler(BaseHTTPRequestHandler):
    """Scripted chat-completions endpoint; behavior keyed by the URL-embedded mode."""

    requests_seen: list[dict] = []

    def do_POST(self):  # noqa: N802 (stdlib naming)
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        type(self).requests_seen.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        mode = self.server.mode  # type: ignore[attr-defined]
        if mode == "echo":
            self._reply_json(200, {"choices": [{"message": {"content": "anomaly"}}]})
        elif mode == "error500":
            self._reply_json(500, {"error": "boom"})
        elif mode == "malformed":
            self._reply_json(200, {"unexpected": True})
        elif mode == "needs_key":
            if self.headers.get("Authorization"):
                self._reply_json(200, {"choices": [{"message": {"content": "normal"}}]})
            else:
                self._reply_json(401, {"error": "unauthorized"})
        elif mode == "bad_request":
            self._reply_json(400, {"error": "bad request"})

    def _reply_json(self, code: int, payload: dict):
        data = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    StubHandler.requests_seen = []
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=5)


def endpoint_cfg(server, **overrides) -> EndpointConfig:
    defaults = dict(
        base_url=f"http://127.0.0.1:{server.server_address[1]}",
        model_name="test-model",
        timeout=5.0,
        max_retries=2,
        backoff_base=0.0,
    )
    defaults.update(overrides)
    return EndpointConfig(**defaults)


def tiny_prompt(style=ValueBlockStyle.ZSCORE_ONLY, values=(1.35,)):
    stats = SensorStats(means=[1.0] * len(values), stds=[0.1] * len(values), sample_count=5)
    x = Snapshot(values=list(values))
    z = normalize(x, stats, RuleConfig())
    block = render_value_block(x, stats, z, style, default_sensor_metas(len(values)))
    return compose_prompt(PromptModules("R", "C", "N", "S 3.0", "O"), [], block)


def test_send_chat_loopback(stub_server):
    stub_server.mode = "echo"
    exchange = send_chat(endpoint_cfg(stub_server), tiny_prompt())
    assert exchange.reply_text == "anomaly"
    assert exchange.transport_status is TransportStatus.OK
    assert exchange.latency >= 0
    seen = StubHandler.requests_seen[0]
    assert seen["path"] == "/v1/chat/completions"
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["temperature"] == 0.0
    assert seen["body"]["messages"][0]["role"] == "user"


def test_send_chat_retry_exhaustion_on_500(stub_server):
    stub_server.mode = "error500"
    with pytest.raises(HttpStatusError) as exc_info:
        send_chat(endpoint_cfg(stub_server, max_retries=2), tiny_prompt())
    assert exc_info.value.status_code == 500
    assert len(StubHandler.requests_seen) == 3  # initial try + 2 retries
    failed = exc_info.value.exchange
    assert failed.transport_status is TransportStatus.HTTP_ERROR
    assert failed.reply_text == ""


def test_send_chat_no_retry_on_4xx(stub_server):
    stub_server.mode = "bad_request"
    with pytest.raises(HttpStatusError) as exc_info:
        send_chat(endpoint_cfg(stub_server, api_key="k"), tiny_prompt())
    assert exc_info.value.status_code == 400
    assert len(StubHandler.requests_seen) == 1


def test_send_chat_malformed_body(stub_server):
    stub_server.mode = "malformed"
    with pytest.raises(ReplyFormatError):
        send_chat(endpoint_cfg(stub_server), tiny_prompt())


def test_send_chat_missing_api_key(stub_server, monkeypatch):
    monkeypatch.delenv("RULEPROMPT_API_KEY", raising=False)
    stub_server.mode = "needs_key"
    with pytest.raises(MissingApiKeyError):
        send_chat(endpoint_cfg(stub_server), tiny_prompt())


def test_send_chat_key_from_environment(stub_server, monkeypatch):
    monkeypatch.setenv("RULEPROMPT_API_KEY", "sekrit")
    stub_server.mode = "needs_key"
    exchange = send_chat(endpoint_cfg(stub_server), tiny_prompt())
    assert exchange.reply_text == "normal"
    assert StubHandler.requests_seen[0]["auth"] == "Bearer sekrit"


def test_send_chat_unreachable_host():
    cfg = EndpointConfig(
        base_url="http://127.0.0.1:9", model_name="m", timeout=0.5,
        max_retries=0, backoff_base=0.0,
    )
    with pytest.raises(ChatTimeoutError):
        send_chat(cfg, tiny_prompt())


def test_extract_abs_z_reads_plain_and_combined_lines():
    text = (
        "Sensor 1: abs_z = 0.4\n"
        "Sensor 2: value = 9.1000, mean = 9.0000, std = 0.1000, abs_z = 1.0\n"
        "Sensor 3: value = 9.1000"
    )
    ids, values = extract_abs_z(text)
    assert ids == [0, 1]
    assert values == [0.4, 1.0]


def test_simulated_config_fidelity_bounds():
    with pytest.raises(ValueError):
        SimulatedResponderConfig(fidelity=1.5)


def test_simulate_perfect_oracle_labels():
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=1.0, seed=1)
    anomaly = simulate_response(cfg, tiny_prompt(values=(1.35,)), 0)
    assert anomaly.reply_text.splitlines()[0] == "anomaly"
    assert anomaly.latency == 0.0
    nominal = simulate_response(cfg, tiny_prompt(values=(1.01,)), 0)
    assert nominal.reply_text.splitlines()[0] == "normal"


def test_simulate_inverted_oracle():
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=0.0, seed=1)
    exchange = simulate_response(cfg, tiny_prompt(values=(1.35,)), 0)
    assert exchange.reply_text.splitlines()[0] == "normal"


def test_simulate_explanations_name_flagged_sensors():
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=1.0, seed=1)
    exchange = simulate_response(cfg, tiny_prompt(values=(1.35, 1.0)), 0)
    lines = exchange.reply_text.splitlines()
    assert lines[0] == "anomaly"
    assert lines[1] == "Sensor 1: abs_z = 3.5 exceeds 3.0"

    nominal = simulate_response(cfg, tiny_prompt(values=(1.0, 1.0)), 0)
    assert nominal.reply_text.splitlines()[1] == "all abs_z below 3.0"


def test_simulate_label_only_verbosity():
    cfg = SimulatedResponderConfig(
        rule=RuleConfig(), fidelity=1.0, verbosity=Verbosity.LABEL_ONLY, seed=1
    )
    exchange = simulate_response(cfg, tiny_prompt(values=(1.35,)), 0)
    assert exchange.reply_text == "anomaly"


def test_simulate_rejects_value_only_prompts():
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=1.0, seed=1)
    with pytest.raises(UnparseableValueBlockError):
        simulate_response(cfg, tiny_prompt(style=ValueBlockStyle.VALUE_ONLY), 0)
    with pytest.raises(UnparseableValueBlockError):
        simulate_response(cfg, tiny_prompt(style=ValueBlockStyle.MEAN_STD_VALUE), 0)


def test_simulate_serves_mean_std_value_z_prompts():
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=1.0, seed=1)
    exchange = simulate_response(cfg, tiny_prompt(style=ValueBlockStyle.MEAN_STD_VALUE_Z), 0)
    assert exchange.reply_text.splitlines()[0] == "anomaly"


def test_simulate_ignores_exemplar_abs_z_lines():
    # exemplar block carries a flagged sensor; the query block is nominal
    from ruleprompt.prompts import Exemplar
    from ruleprompt.telemetry import Label

    stats = SensorStats(means=[1.0], stds=[0.1], sample_count=5)
    x = Snapshot(values=[1.01])
    z = normalize(x, stats, RuleConfig())
    block = render_value_block(x, stats, z, ValueBlockStyle.ZSCORE_ONLY, default_sensor_metas(1))
    exemplar = Exemplar("Sensor 1: abs_z = 9.9", Label.ANOMALY, "Sensor 1 exceeds 3.0.")
    prompt = compose_prompt(PromptModules("R", "C", "N", "S 3.0", "O"), [exemplar], block)
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=1.0, seed=1)
    assert simulate_response(cfg, prompt, 0).reply_text.splitlines()[0] == "normal"


def test_simulate_fidelity_zero_point_nine_agreement_band():
    # 1000 seeded samples: agreement with the oracle within +/- 3 binomial sigmas
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=0.9, seed=123)
    prompt = tiny_prompt(values=(1.35,))
    agree = sum(
        simulate_response(cfg, prompt, i).reply_text.splitlines()[0] == "anomaly"
        for i in range(1000)
    )
    assert 870 <= agree <= 930


def test_simulate_deterministic_under_concurrency():
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=0.8, seed=7)
    prompt = tiny_prompt(values=(1.35,))
    sequential = [simulate_response(cfg, prompt, i).reply_text for i in range(64)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        threaded = list(pool.map(lambda i: simulate_response(cfg, prompt, i).reply_text,
                                 range(64)))
    assert sequential == threaded


def test_simulated_labels_match_rule_on_displayed_values():
    # whatever the display rounding did, the simulator agrees with the rule
    # applied to the parsed display values
    rng = np.random.default_rng(17)
    cfg = SimulatedResponderConfig(rule=RuleConfig(), fidelity=1.0, seed=5)
    for trial in range(30):
        n = int(rng.integers(1, 12))
        values = 1.0 + rng.normal(0, 0.15, n)
        prompt = tiny_prompt(values=tuple(values.tolist()))
        reply = simulate_response(cfg, prompt, trial).reply_text.splitlines()[0]
        _, displayed = extract_abs_z(prompt.section_text("values"))
        expected, _ = apply_rule(ZScoreVector(abs_z=displayed), cfg.rule)
        assert reply == expected.value
