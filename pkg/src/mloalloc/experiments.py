"""Monte-Carlo campaigns, mode sweeps and the preset experiment recipes."""
from __future__ import annotations

import csv
import io
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ScenarioSpec, Topology, generate_topology
from .problem import Mode, NetworkEnv, OracleResult, optimum
from .search import ALGORITHMS, BaiParams, RunTrace, SearchResult

KNOWN_ALGORITHMS = tuple(ALGORITHMS) + ("llm-bai-mcts",)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "campaign"
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    algorithms: list[str] = field(default_factory=lambda: ["bai-mcts", "uct", "dng-mcts", "random"])
    epsilon: float = 0.02
    delta: float = 0.1
    budget: int = 2000
    L: int = 0
    replications: int = 50
    master_seed: int = 0
    mode: str = "STR"
    output_dir: str = "results"
    shared_topology: bool = True
    oracle_draws: int = 200
    convergence_fraction: float = 0.98
    provider: str = "mock-oracle"
    workers: int = 1

    def validate(self):
        unknown = [a for a in self.algorithms if a not in KNOWN_ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {list(KNOWN_ALGORITHMS)}")
        if not self.algorithms:
            raise ConfigError("no algorithms selected")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.budget < 1:
            raise ConfigError("budget T must be at least 1")
        if self.L < 0:
            raise ConfigError("L must be non-negative")
        Mode.parse(self.mode)
        if self.provider not in ("mock-oracle", "mock-greedy", "http"):
            raise ConfigError(f"unknown provider {self.provider!r}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "scenario" in data and not isinstance(data["scenario"], ScenarioSpec):
            data["scenario"] = ScenarioSpec.from_dict(data["scenario"])
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResultRow:
    experiment: str
    replication: int
    slot: int
    algorithm: str
    allocation: str
    reward: float
    raw_mbps: float
    eta: int
    cumulative_mean: float
    mean_reward: float
    recommended_reward: float

    FIELDS = ("experiment", "replication", "slot", "algorithm", "allocation", "reward", "raw_mbps", "eta",
              "cumulative_mean", "mean_reward", "recommended_reward")

    def cells(self) -> list[str]:
        return [self.experiment, str(self.replication), str(self.slot), self.algorithm, self.allocation,
                f"{self.reward:.8f}", f"{self.raw_mbps:.6f}", str(self.eta), f"{self.cumulative_mean:.8f}",
                f"{self.mean_reward:.8f}", f"{self.recommended_reward:.8f}"]


# -- seeding ---------------------------------------------------------------------

def stream_seed(master_seed: int, *keys) -> np.random.SeedSequence:
    """A SeedSequence fixed by the master seed and a tuple of ints or strings."""
    ints = [master_seed]
    for k in keys:
        ints.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(ints)


def run_rng(master_seed: int, replication: int) -> np.random.Generator:
    # every algorithm draws from the same stream per replication (paired design)
    return np.random.default_rng(stream_seed(master_seed, "run", replication))


def topology_seed(master_seed: int, *keys) -> int:
    return int(stream_seed(master_seed, "topology", *keys).generate_state(1)[0])


# -- metrics ---------------------------------------------------------------------

def convergence_slot(values: Sequence[float], target: float) -> int | None:
    """First 1-based slot whose value reaches ``target``, or None."""
    arr = np.asarray(values, dtype=float)
    hit = np.flatnonzero(arr >= target)
    return int(hit[0]) + 1 if hit.size else None


def arm_histogram(traces: Sequence[RunTrace], arity: Sequence[int]) -> np.ndarray:
    """(N, K) fraction of slots in which STA n played config k, pooled over traces."""
    n, k = len(arity), max(arity)
    counts = np.zeros((n, k))
    for tr in traces:
        if len(tr):
            arms = np.asarray(tr.arms, dtype=int)
            for sta in range(n):
                counts[sta] += np.bincount(arms[:, sta], minlength=k)[:k]
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


# -- campaign --------------------------------------------------------------------

def build_env(config: ExperimentConfig, topology: Topology) -> NetworkEnv:
    return NetworkEnv(topology, config.scenario.phy, mode=config.mode, oracle_draws=config.oracle_draws)


def icl_example_env(config: ExperimentConfig) -> NetworkEnv:
    spec = ScenarioSpec(area_m=config.scenario.area_m, stas_per_ap=(1, 1, 1), phy=config.scenario.phy)
    topo = generate_topology(spec, topology_seed(config.master_seed, "icl"))
    return NetworkEnv(topo, config.scenario.phy, mode=config.mode, oracle_draws=config.oracle_draws)


def make_provider(config: ExperimentConfig, env: NetworkEnv, oracle_arm):
    from . import llm

    if config.provider == "mock-oracle":
        reply = llm.oracle_reply(oracle_arm, env.configs, env.params.n_bands)
    elif config.provider == "mock-greedy":
        greedy = llm.greedy_allocation(env)
        reply = llm.oracle_reply([greedy[n] for n in range(env.height)], env.configs, env.params.n_bands)
    else:
        return llm.HttpProvider(llm.ProviderConfig.from_env())
    return llm.MockProvider({llm.scenario_hash(env.topology): reply})


def _run_one(config: ExperimentConfig, algorithm: str, env: NetworkEnv, rep: int, oracle_arm) -> SearchResult:
    params = BaiParams(config.epsilon, config.delta, env.height, config.budget)
    rng = run_rng(config.master_seed, rep)
    if algorithm == "bai-mcts":
        return ALGORITHMS[algorithm](env, params, rng, exploit_after_stop=True)
    if algorithm == "llm-bai-mcts":
        from . import llm

        example = llm.solved_example(icl_example_env(config))
        provider = make_provider(config, env, oracle_arm)
        return llm.run_llm_bai_mcts(env, params, provider, config.L, rng, examples=[example],
                                    exploit_after_stop=True)
    return ALGORITHMS[algorithm](env, params, rng)


_SHARED: dict[str, tuple[NetworkEnv, OracleResult]] = {}


def _env_and_oracle(config: ExperimentConfig, rep: int) -> tuple[NetworkEnv, OracleResult]:
    # a shared topology is solved once per process; its noise-free tables are deterministic
    topo = campaign_topology(config, rep)
    if not config.shared_topology:
        env = build_env(config, topo)
        return env, optimum(env)
    key = json.dumps([topo.to_dict(), repr(config.scenario.phy), config.mode, config.oracle_draws], sort_keys=True)
    hit = _SHARED.get(key)
    if hit is None:
        if len(_SHARED) >= 8:
            _SHARED.clear()
        env = build_env(config, topo)
        hit = _SHARED[key] = (env, optimum(env))
    return hit


def _replication(args):
    config, rep = args
    env, oracle = _env_and_oracle(config, rep)
    out = []
    for alg in config.algorithms:
        res = _run_one(config, alg, env, rep, oracle.best)
        out.append((alg, res.trace, res.allocation, res.converged, res.stop_slot,
                    env.expected(res.allocation), env.expected_raw(res.allocation), env.labels))
    return rep, oracle, out


def campaign_topology(config: ExperimentConfig, rep: int) -> Topology:
    if config.shared_topology:
        seed = config.scenario.seed if config.scenario.seed is not None else topology_seed(config.master_seed)
    else:
        seed = topology_seed(config.master_seed, rep)
    return generate_topology(config.scenario, seed)


def trace_rows(experiment: str, algorithm: str, rep: int, trace: RunTrace, labels) -> list[ResultRow]:
    rows = []
    csum = 0.0
    for i in range(len(trace)):
        csum += trace.rewards[i]
        rows.append(ResultRow(experiment, rep, trace.slots[i], algorithm, " ".join(labels(trace.arms[i])),
                              trace.rewards[i], trace.raw[i], trace.eta[i], csum / (i + 1),
                              trace.expected[i], trace.recommended[i]))
    return rows


@dataclass
class CampaignResult:
    summary: dict
    files: list[Path]
    traces: dict[str, list[RunTrace]] = field(default_factory=dict, repr=False)


def run_campaign(config: ExperimentConfig, write: bool = True) -> CampaignResult:
    """Run every (algorithm, replication); write one CSV per algorithm plus ``summary.json``."""
    config.validate()
    out_dir = Path(config.output_dir)
    if write:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            probe = out_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    jobs = [(config, rep) for rep in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_replication, jobs))
    else:
        results = [_replication(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    buffers = {alg: io.StringIO() for alg in config.algorithms}
    writers = {alg: csv.writer(buf, lineterminator="\n") for alg, buf in buffers.items()}
    for w in writers.values():
        w.writerow(ResultRow.FIELDS)
    per_alg: dict[str, list[dict]] = {alg: [] for alg in config.algorithms}
    traces: dict[str, list[RunTrace]] = {alg: [] for alg in config.algorithms}
    oracle_rows = []
    for rep, oracle, runs in results:
        oracle_rows.append({"replication": rep, "arm": list(oracle.best), "value_mbps": oracle.value,
                            "normalized": oracle.normalized})
        target = config.convergence_fraction * oracle.normalized
        for alg, trace, final, converged, stop_slot, final_norm, final_raw, labels in runs:
            for row in trace_rows(config.name, alg, rep, trace, labels):
                writers[alg].writerow(row.cells())
            traces[alg].append(trace)
            per_alg[alg].append({
                "replication": rep,
                "convergence_slot": convergence_slot(trace.recommended, target),
                "final_allocation": list(final),
                "final_normalized": final_norm,
                "final_mbps": final_raw,
                "oracle_normalized": oracle.normalized,
                "converged": bool(converged),
                "stop_slot": stop_slot,
            })
    censor = config.budget + 1
    cfg_dict = config.to_dict()
    cfg_dict.pop("output_dir")  # keeps summaries comparable across output locations
    cfg_dict.pop("workers")
    summary = {"experiment": config.name, "config": cfg_dict, "oracle": oracle_rows,
               "convergence_metric": f"first slot whose recommended allocation reaches "
                                     f"{config.convergence_fraction:g} of the oracle value",
               "algorithms": {}}
    for alg, rows in per_alg.items():
        slots = [r["convergence_slot"] if r["convergence_slot"] is not None else censor for r in rows]
        summary["algorithms"][alg] = {
            "median_convergence_slot": float(np.median(slots)),
            "censored_runs": sum(r["convergence_slot"] is None for r in rows),
            "median_final_normalized": float(np.median([r["final_normalized"] for r in rows])),
            "median_final_gap": float(np.median([r["oracle_normalized"] - r["final_normalized"] for r in rows])),
            "stopped_runs": sum(r["converged"] for r in rows),
            "runs": rows,
        }
    files = []
    if write:
        for alg, buf in buffers.items():
            path = out_dir / f"{config.name}_{alg}.csv"
            path.write_text(buf.getvalue())
            files.append(path)
        spath = out_dir / f"{config.name}_summary.json"
        spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        files.append(spath)
    return CampaignResult(summary, files, traces)


# -- mode sweep ------------------------------------------------------------------

def spread_stas(n: int, n_aps: int = 3) -> tuple[int, ...]:
    """Round-robin association counts, e.g. 4 STAs over 3 APs -> (2, 1, 1)."""
    return tuple(n // n_aps + (1 if m < n % n_aps else 0) for m in range(n_aps))


@dataclass
class SweepRow:
    mode: str
    n_stas: int
    mean_mbps: float
    se_mbps: float
    per_sta_mbps: float
    values: list[float] = field(repr=False)


def mode_sweep(config: ExperimentConfig, n_values: Sequence[int] = (2, 4, 6),
               modes: Sequence[str] = ("SLO", "bonding", "STR"), topologies: int = 30) -> list[SweepRow]:
    """BAI-MCTS final throughput per (mode, N), each averaged over fresh topologies.

    All modes see the same topologies, so differences between modes are paired.
    """
    config.validate()
    rows = []
    for n in n_values:
        spec = replace(config.scenario, stas_per_ap=spread_stas(n, len(config.scenario.stas_per_ap)))
        topos = [generate_topology(spec, topology_seed(config.master_seed, "sweep", n, k)) for k in range(topologies)]
        for mode in modes:
            vals = []
            for k, topo in enumerate(topos):
                env = NetworkEnv(topo, spec.phy, mode=mode, oracle_draws=config.oracle_draws)
                params = BaiParams(config.epsilon, config.delta, env.height, config.budget)
                rng = np.random.default_rng(stream_seed(config.master_seed, "sweep", n, k))
                res = ALGORITHMS["bai-mcts"](env, params, rng, track_expected=False)
                vals.append(env.expected_raw(res.allocation))
            arr = np.array(vals)
            rows.append(SweepRow(Mode.parse(mode).value, n, float(arr.mean()),
                                 float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0,
                                 float(arr.mean() / n), vals))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "n_stas", "mean_mbps", "se_mbps", "per_sta_mbps", "topologies"])
    for r in rows:
        w.writerow([r.mode, r.n_stas, f"{r.mean_mbps:.6f}", f"{r.se_mbps:.6f}", f"{r.per_sta_mbps:.6f}", len(r.values)])
    return buf.getvalue()


def paired_margins(rows: Sequence[SweepRow], better: str, worse: str) -> dict[int, tuple[float, float]]:
    """Per N: mean of (better - worse) and its standard error over the shared topologies."""
    by = {(r.mode, r.n_stas): r for r in rows}
    out = {}
    for n in sorted({r.n_stas for r in rows}):
        a = np.array(by[(Mode.parse(better).value, n)].values)
        b = np.array(by[(Mode.parse(worse).value, n)].values)
        d = a - b
        out[n] = (float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else 0.0)
    return out


# -- presets ---------------------------------------------------------------------

def preset(name: str, **overrides) -> ExperimentConfig:
    if name == "fig9":
        cfg = ExperimentConfig(name="fig9", scenario=ScenarioSpec(stas_per_ap=(2, 2, 2), seed=1),
                               algorithms=["bai-mcts", "uct", "dng-mcts", "random"], budget=2000,
                               epsilon=0.02, delta=0.1, replications=50, shared_topology=True)
    elif name == "fig11":
        cfg = ExperimentConfig(name="fig11", algorithms=["bai-mcts"], budget=2000, replications=30,
                               shared_topology=False)
    elif name == "fig13":
        cfg = ExperimentConfig(name="fig13", scenario=ScenarioSpec(stas_per_ap=(4, 4, 4), seed=1),
                               algorithms=["bai-mcts", "llm-bai-mcts"], budget=4000, L=4,
                               replications=30, shared_topology=True, provider="mock-oracle")
    else:
        raise ConfigError(f"unknown preset {name!r}; choose fig9, fig11 or fig13")
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()
