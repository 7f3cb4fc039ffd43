import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import numpy as np
import pytest

from mloalloc.channel import ScenarioSpec, generate_topology
from mloalloc.csma import build_graph
from mloalloc.llm import (COT_STEPS, AllocationParseError, HttpProvider, MalformedResponseError, MockProvider,
                          ProviderConfig, ProviderUnavailableError, build_prompt, conflict_pairs,
                          greedy_allocation, obtain_allocation, oracle_reply, parse_allocation,
                          query_provider, run_llm_bai_mcts, scenario_hash, solved_example)
from mloalloc.problem import MloConfig, NetworkEnv, config_space, exhaustive_search
from mloalloc.search import BaiParams, run_bai_mcts

CONFIGS = config_space("STR")


def env_for(stas=(2, 2, 2), seed=0, draws=30):
    return NetworkEnv(generate_topology(ScenarioSpec(stas_per_ap=stas), seed=seed), oracle_draws=draws)


@pytest.fixture(scope="module")
def example():
    return solved_example(env_for((1, 1, 1), seed=42))


@pytest.fixture(scope="module")
def six():
    env = env_for(seed=3)
    return env, exhaustive_search(env)


def bundle_for(env, example, cot=True):
    return build_prompt(env.topology, conflict_pairs(env.topology, env.params), [example], cot, env.params)


class TestPrompt:
    def test_six_sta_scenario(self, six, example):
        env, _ = six
        b = bundle_for(env, example)
        assert len(b.cot_steps) == 5 and list(b.cot_steps) == list(COT_STEPS)
        assert b.cot_steps[0].startswith("Step 1 - Perceive network information")
        assert len(b.icl_examples) == 1
        text = b.user_text()
        assert "STA6" in text and "JSON" in b.output_format
        assert text.index("Step 1") < text.index("Step 5")
        msgs = b.messages()
        assert [m["role"] for m in msgs] == ["system", "user"]

    def test_without_cot(self, six, example):
        env, _ = six
        b = bundle_for(env, example, cot=False)
        assert b.cot_steps == []
        text = b.user_text()
        assert "Step 1" not in text and "Example 1" in text and "STA1 is at" in text

    def test_deterministic(self, six, example):
        env, _ = six
        a, b = bundle_for(env, example), bundle_for(env, example)
        assert a.user_text() == b.user_text() and a.task_description == b.task_description

    def test_graphs_form_matches_pairs(self, six, example):
        env, _ = six
        graphs = [build_graph(env.topology, [MloConfig(7)] * 6, band, env.params) for band in range(3)]
        via_graphs = build_prompt(env.topology, graphs, [example], params=env.params)
        assert via_graphs.network_facts == bundle_for(env, example).network_facts

    def test_needs_example(self, six):
        env, _ = six
        with pytest.raises(ValueError):
            build_prompt(env.topology, {}, [])

    def test_example_carries_oracle(self):
        env = env_for((1, 1, 1), seed=42)
        ex = solved_example(env)
        best = exhaustive_search(env).best
        assert ex.allocation == {f"STA{n + 1}": list(CONFIGS[c].bits(3)) for n, c in enumerate(best)}


class TestParse:
    def test_bit_order(self):
        alloc = parse_allocation('{"STA1": [1, 0, 1]}', 1, CONFIGS)
        assert CONFIGS[alloc.fixed[0]].mask == 0b101 and alloc.fixed[0] + 1 == 5

    def test_prose_around_json(self):
        text = 'Reasoning {not json} first.\nFinal: {"STA1": [0,1,0], "STA2": {"bits": [1,1,1], "confidence": 0.7}} done'
        alloc = parse_allocation(text, 2, CONFIGS)
        assert alloc.fixed == {0: 1, 1: 6} and alloc.confidence == {1: 0.7}

    def test_empty_mask(self):
        with pytest.raises(AllocationParseError, match="empty"):
            parse_allocation('{"STA1": [0, 0, 0]}', 1, CONFIGS)

    def test_lists_every_issue(self):
        with pytest.raises(AllocationParseError) as info:
            parse_allocation('{"STA1": [1, 1], "STA9": [1, 0, 0], "STA2": [1, 1, 1]}', 3,
                             config_space("bonding"))
        issues = info.value.issues
        assert any("STA1" in i for i in issues) and any("STA9" in i for i in issues)
        assert any("STA2" in i and "not allowed" in i for i in issues)
        assert any("STA3: missing" in i for i in issues)

    def test_no_json(self):
        with pytest.raises(AllocationParseError):
            parse_allocation("I cannot help with that.", 2, CONFIGS)


class TestProviders:
    def test_mock_returns_canned_reply(self, six, example):
        env, oracle = six
        reply = oracle_reply(oracle.best, env.configs)
        b = bundle_for(env, example)
        mock = MockProvider({scenario_hash(env.topology): reply})
        assert query_provider(b, mock) == reply
        assert len(mock.calls) == 1

    def test_mock_without_reply(self, six, example):
        with pytest.raises(ProviderUnavailableError):
            query_provider(bundle_for(six[0], example), MockProvider())

    def test_retries_then_unavailable(self, six, example):
        def fail(request):
            raise httpx.ConnectError("refused", request=request)

        prov = HttpProvider(ProviderConfig("http://llm.invalid/v1/chat", "m", max_retries=2),
                            transport=httpx.MockTransport(fail))
        with pytest.raises(ProviderUnavailableError):
            prov.complete(bundle_for(six[0], example))
        assert prov.attempts == 3

    def test_unreachable_port(self, six, example):
        prov = HttpProvider(ProviderConfig("http://127.0.0.1:9/v1/chat", "m", timeout=2, max_retries=2))
        with pytest.raises(ProviderUnavailableError):
            prov.complete(bundle_for(six[0], example))
        assert prov.attempts == 3

    def test_server_errors_are_retried(self, six, example):
        seen = []

        def handler(request):
            seen.append(request)
            if len(seen) < 3:
                return httpx.Response(503)
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        prov = HttpProvider(ProviderConfig("http://x/v1", "m", max_retries=2), transport=httpx.MockTransport(handler))
        assert prov.complete(bundle_for(six[0], example)) == "ok"
        assert len(seen) == 3

    def test_request_shape_and_credentials(self, six, example, monkeypatch):
        monkeypatch.setenv("TEST_LLM_TOKEN", "s3cret")
        captured = {}

        def handler(request):
            captured["auth"] = request.headers.get("authorization")
            captured["body"] = json.loads(request.content)
            return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}]})

        cfg = ProviderConfig("http://x/v1", "some-model", credential_env="TEST_LLM_TOKEN", temperature=0.0)
        HttpProvider(cfg, transport=httpx.MockTransport(handler)).complete(bundle_for(six[0], example))
        assert captured["auth"] == "Bearer s3cret"
        assert captured["body"]["model"] == "some-model"
        assert [m["role"] for m in captured["body"]["messages"]] == ["system", "user"]

    @pytest.mark.parametrize("payload", [{"choices": []}, {"choices": [{"message": {"content": [1, 2]}}]}])
    def test_malformed(self, six, example, payload):
        prov = HttpProvider(ProviderConfig("http://x/v1", "m"),
                            transport=httpx.MockTransport(lambda r: httpx.Response(200, json=payload)))
        with pytest.raises(MalformedResponseError):
            prov.complete(bundle_for(six[0], example))

    def test_timeout_honored(self, six, example):
        class Slow(BaseHTTPRequestHandler):
            def do_POST(self):
                time.sleep(4)
                self.send_response(200)
                self.end_headers()

            def log_message(self, *args):
                pass

        server = ThreadingHTTPServer(("127.0.0.1", 0), Slow)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat"
            prov = HttpProvider(ProviderConfig(url, "m", timeout=1.0, max_retries=0))
            start = time.perf_counter()
            with pytest.raises(ProviderUnavailableError):
                prov.complete(bundle_for(six[0], example))
            assert abs(time.perf_counter() - start - 1.0) <= 1.0
        finally:
            server.shutdown()

    def test_config_validation(self, monkeypatch):
        with pytest.raises(ValueError):
            ProviderConfig(max_retries=-1)
        monkeypatch.setenv("MLOALLOC_LLM_MODEL", "local-model")
        assert ProviderConfig.from_env().model == "local-model"


class TestObtain:
    def test_parse_retries_then_fallback(self, six, example, tmp_path):
        env, _ = six
        mock = MockProvider(default="no idea")
        alloc = obtain_allocation(bundle_for(env, example), mock, env, parse_retries=2, log_dir=tmp_path)
        assert len(mock.calls) == 3
        assert alloc.source == "fallback" and alloc.fixed == greedy_allocation(env)
        assert "could not be used" in mock.calls[-1][-1]["content"]
        assert (tmp_path / "prompt.txt").exists() and (tmp_path / "response_2.txt").exists()

    def test_no_fallback_aborts(self, six, example):
        env, _ = six
        with pytest.raises(ProviderUnavailableError):
            obtain_allocation(bundle_for(env, example), MockProvider(default="{}"), env, fallback=False)

    def test_correction_recovers(self, six, example):
        env, oracle = six
        replies = iter(["garbage", oracle_reply(oracle.best, env.configs)])

        class Flaky(MockProvider):
            def complete(self, bundle, extra=()):
                super().complete(bundle, extra)
                return next(replies)

        alloc = obtain_allocation(bundle_for(env, example), Flaky(default=""), env)
        assert alloc.source == "llm" and tuple(alloc.fixed[n] for n in range(6)) == oracle.best


class TestHybridSearch:
    params = BaiParams(epsilon=0.02, delta=0.1, height=6, budget=150)

    def test_l_zero_is_plain_search(self, six, example):
        env, _ = six
        mock = MockProvider()
        a = run_llm_bai_mcts(env, self.params, mock, 0, np.random.default_rng(4), bundle_for(env, example))
        b = run_bai_mcts(env, self.params, np.random.default_rng(4))
        assert a.trace.arms == b.trace.arms and a.trace.rewards == b.trace.rewards
        assert mock.calls == []

    def test_l_equals_n_evaluates_answer(self, six, example):
        env, oracle = six
        mock = MockProvider({scenario_hash(env.topology): oracle_reply(oracle.best, env.configs)})
        res = run_llm_bai_mcts(env, self.params, mock, 6, np.random.default_rng(0), bundle_for(env, example))
        assert res.converged and len(res.trace) == 1
        assert res.allocation == oracle.best
        assert res.trace.expected[0] == pytest.approx(oracle.normalized)

    @pytest.mark.parametrize("L", [2, 4])
    def test_frozen_stas_and_height(self, six, example, L):
        env, oracle = six
        mock = MockProvider({scenario_hash(env.topology): oracle_reply(oracle.best, env.configs)})
        res = run_llm_bai_mcts(env, self.params, mock, L, np.random.default_rng(1), bundle_for(env, example))
        for arm in res.trace.arms:
            assert arm[:L] == oracle.best[:L]
        assert res.partial.fixed == {n: oracle.best[n] for n in range(L)}
        assert sorted(res.partial.free) == list(range(L, 6))

        depth = 0
        stack = [res.root]
        while stack:
            node = stack.pop()
            depth = max(depth, node.depth)
            stack.extend(node.children.values())
        assert depth == 6 - L
        assert res.root.arity == env.arity[L]

    def test_custom_freeze_order(self, six, example):
        env, oracle = six
        mock = MockProvider({scenario_hash(env.topology): oracle_reply(oracle.best, env.configs)})
        res = run_llm_bai_mcts(env, self.params, mock, 2, np.random.default_rng(1), bundle_for(env, example),
                               order=[5, 3, 0, 1, 2, 4])
        assert set(res.partial.fixed) == {5, 3}
        assert all(a[5] == oracle.best[5] and a[3] == oracle.best[3] for a in res.trace.arms)

    def test_deterministic_with_mock(self, six, example):
        env, oracle = six
        mock = MockProvider({scenario_hash(env.topology): oracle_reply(oracle.best, env.configs)})
        runs = [run_llm_bai_mcts(env, self.params, mock, 3, np.random.default_rng(7), bundle_for(env, example))
                for _ in range(2)]
        assert runs[0].trace.arms == runs[1].trace.arms

    def test_invalid_l(self, six, example):
        env, _ = six
        with pytest.raises(ValueError):
            run_llm_bai_mcts(env, self.params, MockProvider(), 7, np.random.default_rng(0))
