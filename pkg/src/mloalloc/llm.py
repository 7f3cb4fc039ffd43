"""Language-model initialization for the tree search.

A prompt describing the network (positions, per-band carrier-sensing
conflicts), a few solved examples and five reasoning steps is sent to a
chat-completion provider.  The reply is parsed into per-STA configurations;
the first L STAs are frozen and the tree search explores the rest.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .channel import PhyParams, Topology, sensing_gain_matrix
from .csma import CarrierSenseGraph
from .problem import BanditEnv, MloConfig, NetworkEnv, ResidualEnv, exhaustive_search
from .search import BaiParams, RunTrace, SearchResult, run_bai_mcts

log = logging.getLogger(__name__)

COT_STEPS = (
    "Step 1 - Perceive network information: read the AP and STA positions, the associations "
    "and the list of STA pairs that sense each other on every band.",
    "Step 2 - Define allocation rules and objectives: each STA uses a non-empty subset of the bands, "
    "at most l links per STA, and the goal is the largest total network throughput.",
    "Step 3 - Analyze conflict relationships: on every band, count how many other STAs each STA "
    "conflicts with; conflicting STAs on one band share airtime.",
    "Step 4 - Prioritize low-conflict STAs: give STAs with few conflicts more bands first, and move "
    "crowded STAs to the band where they meet the fewest neighbours.",
    "Step 5 - Allocate to all STAs: output the final band choice for every STA.",
)


class ProviderUnavailableError(RuntimeError):
    pass


class MalformedResponseError(RuntimeError):
    pass


class AllocationParseError(ValueError):
    def __init__(self, issues: list[str]):
        super().__init__("; ".join(issues))
        self.issues = issues


# -- prompt --------------------------------------------------------------------

def band_labels(params: PhyParams) -> list[str]:
    return [f"{fc / 1e9:g} GHz" for fc in params.bands]


def conflict_pairs(topology: Topology, params: PhyParams) -> dict[str, list[tuple[int, int]]]:
    """STA pairs that would sense each other on each band if both used it (0-based)."""
    sensing = sensing_gain_matrix(topology, params)
    thr = params.carrier_sense_threshold_mw
    out = {}
    for b, label in enumerate(band_labels(params)):
        s = sensing[b]
        hit = (s >= thr) | (s.T >= thr)
        out[label] = [(i, j) for i in range(topology.n_stas) for j in range(i + 1, topology.n_stas) if hit[i, j]]
    return out


def graphs_to_pairs(graphs: Sequence[CarrierSenseGraph], params: PhyParams) -> dict[str, list[tuple[int, int]]]:
    labels = band_labels(params)
    out: dict[str, list[tuple[int, int]]] = {}
    for g in graphs:
        label = " + ".join(labels[c] for c in g.channel)
        pairs = sorted({tuple(sorted((g.vertices[i][0], g.vertices[j][0]))) for i, j in g.edges})
        out[label] = pairs
    return out


def bits_of(config: MloConfig, n_bands: int) -> list[int]:
    return list(config.bits(n_bands))


def scenario_hash(topology: Topology) -> str:
    blob = json.dumps(topology.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def describe_network(topology: Topology, pairs: Mapping[str, Sequence[tuple[int, int]]]) -> str:
    lines = [f"The network has {topology.n_aps} APs and {topology.n_stas} STAs in a square area."]
    for m, (x, y) in enumerate(np.round(topology.ap_positions, 2)):
        lines.append(f"AP{m + 1} is at ({x:g}, {y:g}) m.")
    for n, (x, y) in enumerate(np.round(topology.sta_positions, 2)):
        lines.append(f"STA{n + 1} is at ({x:g}, {y:g}) m and is associated with AP{int(topology.association[n]) + 1}.")
    for label, ps in pairs.items():
        listed = ", ".join(f"(STA{i + 1}, STA{j + 1})" for i, j in ps) or "none"
        lines.append(f"Conflicting STA pairs on {label}: {listed}.")
    return "\n".join(lines)


@dataclass
class IclExample:
    summary: str
    allocation: dict[str, list[int]]

    def render(self) -> str:
        return f"{self.summary}\nOptimal allocation: {json.dumps(self.allocation)}"


def solved_example(env: NetworkEnv) -> IclExample:
    """Describe a small scenario together with its exhaustive-search optimum."""
    oracle = exhaustive_search(env)
    nb = env.params.n_bands
    alloc = {f"STA{n + 1}": bits_of(env.configs[c], nb) for n, c in enumerate(oracle.best)}
    summary = describe_network(env.topology, conflict_pairs(env.topology, env.params))
    return IclExample(summary, alloc)


@dataclass
class PromptBundle:
    task_description: str
    network_facts: str
    icl_examples: list[IclExample]
    cot_steps: list[str]
    output_format: str
    scenario_hash: str = ""

    def user_text(self) -> str:
        parts = ["Network information:", self.network_facts]
        for k, ex in enumerate(self.icl_examples, 1):
            parts += [f"Example {k}:", ex.render()]
        if self.cot_steps:
            parts.append("Think through the following steps in order.")
            parts += self.cot_steps
        parts.append(self.output_format)
        return "\n\n".join(parts)

    def messages(self, extra: Sequence[str] = ()) -> list[dict[str, str]]:
        msgs = [{"role": "system", "content": self.task_description},
                {"role": "user", "content": self.user_text()}]
        for note in extra:
            msgs.append({"role": "user", "content": note})
        return msgs


def build_prompt(topology: Topology, graphs, examples: Sequence[IclExample], cot: bool = True,
                 params: PhyParams | None = None, max_links: int | None = None) -> PromptBundle:
    """Assemble the prompt.  ``graphs`` is a band-to-pairs mapping or a list of carrier-sensing graphs."""
    params = params or PhyParams()
    if not examples:
        raise ValueError("at least one solved example is required")
    if isinstance(graphs, Mapping):
        pairs = {k: list(v) for k, v in graphs.items()}
    else:
        pairs = graphs_to_pairs(graphs, params)
    labels = band_labels(params)
    l = params.n_bands if max_links is None else max_links
    task = ("You are a WiFi 7 network planner. Multi-link devices can hold links on several bands at once "
            f"({', '.join(labels)}). Choose for every STA which bands it uses so that total network "
            f"throughput is as large as possible, with between 1 and {l} links per STA. STAs that sense "
            "each other on a band share that band's airtime.")
    order = ", ".join(reversed(labels))
    fmt = ("Answer with one JSON object mapping every STA id to a list of "
           f"{params.n_bands} bits in the band order ({order}), for example "
           '{"STA1": ' + json.dumps([1] + [0] * (params.n_bands - 1)) + "}. A 1 means the STA uses that band.")
    return PromptBundle(task, describe_network(topology, pairs), list(examples),
                        list(COT_STEPS) if cot else [], fmt, scenario_hash(topology))


# -- providers -----------------------------------------------------------------

@dataclass
class ProviderConfig:
    endpoint: str = ""
    model: str = "mock"
    credential_env: str = "MLOALLOC_LLM_API_KEY"
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @classmethod
    def from_env(cls, **overrides) -> "ProviderConfig":
        env = os.environ
        cfg = dict(endpoint=env.get("MLOALLOC_LLM_ENDPOINT", ""), model=env.get("MLOALLOC_LLM_MODEL", "mock"),
                   credential_env=env.get("MLOALLOC_LLM_KEY_VAR", "MLOALLOC_LLM_API_KEY"))
        cfg.update(overrides)
        return cls(**cfg)


class Provider(Protocol):
    config: ProviderConfig

    def complete(self, bundle: PromptBundle, extra: Sequence[str] = ()) -> str: ...


class MockProvider:
    """Canned replies keyed by scenario hash; needs no network or credentials."""

    def __init__(self, responses: Mapping[str, str] | None = None, default: str | None = None,
                 config: ProviderConfig | None = None):
        self.responses = dict(responses or {})
        self.default = default
        self.config = config or ProviderConfig()
        self.calls: list[list[dict[str, str]]] = []

    def complete(self, bundle, extra=()):
        self.calls.append(bundle.messages(extra))
        text = self.responses.get(bundle.scenario_hash, self.default)
        if text is None:
            raise ProviderUnavailableError(f"mock has no reply for scenario {bundle.scenario_hash}")
        return text


class HttpProvider:
    """Chat-completion JSON over HTTP with a bearer token read from the environment."""

    def __init__(self, config: ProviderConfig, transport=None):
        import httpx

        self._httpx = httpx
        self.config = config
        self.transport = transport
        self.attempts = 0

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.credential_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, bundle, extra=()):
        httpx = self._httpx
        body = {"model": self.config.model, "messages": bundle.messages(extra),
                "temperature": self.config.temperature}
        last = None
        with httpx.Client(timeout=self.config.timeout, transport=self.transport) as client:
            for attempt in range(self.config.max_retries + 1):
                self.attempts += 1
                try:
                    resp = client.post(self.config.endpoint, json=body, headers=self._headers())
                    if resp.status_code >= 500:
                        last = f"HTTP {resp.status_code}"
                        continue
                    resp.raise_for_status()
                    data = resp.json()
                except (httpx.TransportError, httpx.TimeoutException) as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    log.warning("provider attempt %d failed: %s", attempt + 1, last)
                    continue
                except (httpx.HTTPStatusError, ValueError) as exc:
                    raise MalformedResponseError(str(exc)) from exc
                try:
                    text = data["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise MalformedResponseError("response has no choices[0].message.content") from exc
                if not isinstance(text, str):
                    raise MalformedResponseError("assistant content is not text")
                return text
        raise ProviderUnavailableError(
            f"{self.config.endpoint} unavailable after {self.config.max_retries + 1} attempts ({last})")


def query_provider(bundle: PromptBundle, provider: Provider, extra: Sequence[str] = ()) -> str:
    text = provider.complete(bundle, extra)
    if not isinstance(text, str):
        raise MalformedResponseError("provider returned non-text")
    return text


# -- parsing -------------------------------------------------------------------

@dataclass
class PartialAllocation:
    fixed: dict[int, int]  # STA index -> config index
    free: list[int]
    source: str = "llm"
    confidence: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.fixed) & set(self.free):
            raise ValueError("fixed and free STAs overlap")


def _first_json_object(text: str):
    dec = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch == "{":
            try:
                obj, _ = dec.raw_decode(text, i)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    return None


def _sta_index(key) -> int | None:
    s = str(key).strip().upper()
    if s.startswith("STA"):
        s = s[3:]
    s = s.strip(" _-")
    return int(s) - 1 if s.isdigit() else None


def parse_allocation(text: str, n_stas: int, configs: Sequence[MloConfig], n_bands: int = 3) -> PartialAllocation:
    """Read one config per STA from the first JSON object in ``text``.

    Values are bit lists with the highest band first, optionally wrapped as
    ``{"bits": [...], "confidence": 0.8}``.  Raises AllocationParseError listing
    every offending entry.
    """
    obj = _first_json_object(text)
    if obj is None:
        raise AllocationParseError(["no JSON object found"])
    by_mask = {}
    for i, c in enumerate(configs):
        by_mask.setdefault(c.mask, i)
    chosen: dict[int, int] = {}
    conf: dict[int, float] = {}
    issues = []
    for key, value in obj.items():
        sta = _sta_index(key)
        if sta is None or not 0 <= sta < n_stas:
            issues.append(f"{key}: unknown STA id")
            continue
        if isinstance(value, dict):
            if "confidence" in value:
                try:
                    conf[sta] = float(value["confidence"])
                except (TypeError, ValueError):
                    issues.append(f"{key}: confidence is not a number")
            value = value.get("bits", value.get("mask"))
        if not isinstance(value, list) or len(value) != n_bands or any(b not in (0, 1) for b in value):
            issues.append(f"{key}: expected a list of {n_bands} bits, got {value!r}")
            continue
        mask = sum(int(b) << (n_bands - 1 - k) for k, b in enumerate(value))
        if mask == 0:
            issues.append(f"{key}: empty configuration")
            continue
        if mask not in by_mask:
            issues.append(f"{key}: configuration {value} is not allowed here")
            continue
        chosen[sta] = by_mask[mask]
    missing = [n for n in range(n_stas) if n not in chosen]
    for n in missing:
        if not any(_sta_index(k) == n for k in obj):
            issues.append(f"STA{n + 1}: missing")
    if issues:
        raise AllocationParseError(issues)
    return PartialAllocation(chosen, [], "llm", conf)


def greedy_allocation(env: BanditEnv) -> dict[int, int]:
    """Each STA independently takes the config with the best solo throughput."""
    if not hasattr(env, "solo_throughput"):
        return {n: 0 for n in range(env.height)}
    out = {}
    for n in range(env.height):
        vals = [env.solo_throughput(n, c) for c in env.configs]
        out[n] = int(np.argmax(vals))
    return out


FORMAT_CORRECTION = ("Your previous answer could not be used ({issues}). Reply with only a JSON object "
                     "mapping every STA id (STA1, STA2, ...) to its list of band bits.")


def obtain_allocation(bundle: PromptBundle, provider: Provider, env: BanditEnv, parse_retries: int = 2,
                      fallback: bool = True, log_dir: str | Path | None = None) -> PartialAllocation:
    """Query, parse with up to ``parse_retries`` corrections, then fall back to the greedy rule."""
    n_bands = getattr(getattr(env, "params", None), "n_bands", 3)
    configs = getattr(env, "configs", None)
    log_path = Path(log_dir) if log_dir else None
    if log_path:
        log_path.mkdir(parents=True, exist_ok=True)
        (log_path / "prompt.txt").write_text(bundle.task_description + "\n\n" + bundle.user_text())
    extra: list[str] = []
    issues: list[str] = []
    provider_error = None
    for attempt in range(parse_retries + 1):
        try:
            text = query_provider(bundle, provider, extra)
        except (ProviderUnavailableError, MalformedResponseError) as exc:
            provider_error = exc
            break
        if log_path:
            (log_path / f"response_{attempt}.txt").write_text(text)
        try:
            return parse_allocation(text, env.height, configs, n_bands)
        except AllocationParseError as exc:
            issues = exc.issues
            extra = extra + [FORMAT_CORRECTION.format(issues="; ".join(issues))]
    if not fallback:
        reason = provider_error or AllocationParseError(issues)
        raise ProviderUnavailableError(f"no usable allocation from {provider.config.model}: {reason}")
    log.info("falling back to greedy allocation (%s)", provider_error or "; ".join(issues))
    return PartialAllocation(greedy_allocation(env), [], "fallback")


def run_llm_bai_mcts(env: BanditEnv, params: BaiParams, provider: Provider | None, L: int,
                     rng: np.random.Generator, bundle: PromptBundle | None = None,
                     examples: Sequence[IclExample] = (), order: Sequence[int] | None = None,
                     parse_retries: int = 2, fallback: bool = True, exploit_after_stop: bool = False,
                     log_dir: str | Path | None = None, track_expected: bool = True) -> SearchResult:
    """Freeze L STAs from the language model's answer and search the rest with BAI-MCTS.

    L = 0 is plain BAI-MCTS (the provider is not called); L = N evaluates the
    answer directly in one slot.  Trace rows always carry full allocations.
    """
    n = env.height
    if not 0 <= L <= n:
        raise ValueError(f"L must lie in [0, {n}]")
    if L == 0:
        return run_bai_mcts(env, params, rng, exploit_after_stop, track_expected)
    if bundle is None:
        topo = getattr(env, "topology", None)
        if topo is None:
            raise ValueError("a prompt bundle is required for environments without a topology")
        bundle = build_prompt(topo, conflict_pairs(topo, env.params), examples, True, env.params, env.l)
    answer = obtain_allocation(bundle, provider, env, parse_retries, fallback, log_dir)
    order = list(range(n)) if order is None else list(order)
    frozen = order[:L]
    fixed = {sta: answer.fixed[sta] for sta in frozen}
    partial = PartialAllocation(fixed, [s for s in range(n) if s not in fixed], answer.source,
                                {s: c for s, c in answer.confidence.items() if s in fixed})
    if L == n:
        arm = tuple(fixed[s] for s in range(n))
        trace = RunTrace()
        start = time.perf_counter()
        value = env.expected(arm) if track_expected else float("nan")
        budget = params.budget if exploit_after_stop else 1
        for _ in range(budget):
            reward, raw = env.pull(arm, rng)
            trace.append(arm, reward, raw, n, time.perf_counter() - start, value, value)
        result = SearchResult(arm, trace, True, 1, n, None)
        result.partial = partial
        return result
    residual = ResidualEnv(env, fixed)
    sub = BaiParams(params.epsilon, params.delta, residual.height, params.budget)
    result = run_bai_mcts(residual, sub, rng, exploit_after_stop, track_expected)
    result.trace.arms = [residual.full_arm(a) for a in result.trace.arms]
    result.allocation = residual.full_arm(result.allocation)
    result.partial = partial
    return result


def oracle_reply(allocation: Sequence[int], configs: Sequence[MloConfig], n_bands: int = 3) -> str:
    """Text a perfect model would return for ``allocation``; used to script the mock."""
    body = {f"STA{i + 1}": bits_of(configs[c], n_bands) for i, c in enumerate(allocation)}
    return "Allocation after the five steps:\n" + json.dumps(body)
