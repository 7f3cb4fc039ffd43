"""Decision space, bandit environments and the exhaustive-search oracle."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .channel import PhyParams, Topology, sample_fading
from .csma import DEFAULT_STATE_CAP, ThroughputEngine

Arm = tuple[int, ...]


class Mode(str, Enum):
    SLO = "SLO"
    BONDING = "bonding"
    STR = "STR"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        for m in cls:
            if m.value.lower() == str(value).lower():
                return m
        raise ValueError(f"unknown transmission mode {value!r}")


class ArmSpaceOverflowError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class MloConfig:
    """Set of bands used by one AP-STA pair; bit b set means a link on band b."""

    mask: int
    bonded: bool = False

    @property
    def n_links(self) -> int:
        return 1 if self.bonded else bin(self.mask).count("1")

    def bits(self, n_bands: int) -> tuple[int, ...]:
        """Bit vector with the highest band first, e.g. (1, 0, 1) for 6 GHz + 2.4 GHz."""
        return tuple(self.mask >> b & 1 for b in reversed(range(n_bands)))

    def __str__(self) -> str:
        return f"{self.mask:b}" + ("B" if self.bonded else "")


def config_space(mode, n_bands: int = 3, l: int | None = None, bonded_mask: int | None = None) -> list[MloConfig]:
    """Feasible configurations of one pair, ordered by (popcount, mask).

    For three bands under STR this gives masks 001, 010, 100, 011, 101, 110,
    111, i.e. arm labels 1 to 7.
    """
    mode = Mode.parse(mode)
    if n_bands < 1:
        raise ValueError("need at least one band")
    l = n_bands if l is None else l
    singles = [MloConfig(1 << b) for b in range(n_bands)]
    if mode is Mode.SLO:
        return singles
    if mode is Mode.BONDING:
        # default bond: the two highest bands (5 + 6 GHz for the three-band default)
        mask = ((1 << n_bands) - 1) & ~1 if bonded_mask is None and n_bands > 2 else (
            (1 << n_bands) - 1 if bonded_mask is None else bonded_mask)
        if bin(mask).count("1") < 2:
            return singles
        return singles + [MloConfig(mask, bonded=True)]
    masks = [m for m in range(1, 1 << n_bands) if bin(m).count("1") <= l]
    return [MloConfig(m) for m in sorted(masks, key=lambda m: (bin(m).count("1"), m))]


def arm_space_size(arity: Sequence[int]) -> int:
    return math.prod(arity)


def arm_index(arm: Sequence[int], arity: Sequence[int]) -> int:
    """Mixed-radix encoding with the first STA most significant."""
    if len(arm) != len(arity):
        raise ValueError("arm length does not match the number of STAs")
    idx = 0
    for c, k in zip(arm, arity):
        if not 0 <= c < k:
            raise ValueError(f"config index {c} outside [0, {k})")
        idx = idx * k + int(c)
    return idx


def decode_arm(index: int, arity: Sequence[int]) -> Arm:
    if not 0 <= index < arm_space_size(arity):
        raise IndexError(f"arm index {index} out of range")
    out = []
    for k in reversed(arity):
        index, c = divmod(index, k)
        out.append(c)
    return tuple(reversed(out))


def all_arms(arity: Sequence[int]) -> np.ndarray:
    """(|A|, N) array of every arm in index order."""
    grids = np.indices(tuple(arity)).reshape(len(arity), -1)
    return grids.T


class BanditEnv:
    """Common surface the tree-search algorithms rely on.

    Subclasses provide ``arity`` and ``pull``; ``expected`` is optional and
    returns the noise-free normalized reward used for reporting.
    """

    arity: tuple[int, ...]
    reward_upper_bound: float = 1.0

    @property
    def height(self) -> int:
        return len(self.arity)

    def pull(self, arm: Arm, rng: np.random.Generator) -> tuple[float, float]:
        raise NotImplementedError

    def expected(self, arm: Arm) -> float:
        return self.expected_raw(arm) / self.reward_upper_bound

    def expected_raw(self, arm: Arm) -> float:
        raise NotImplementedError

    def labels(self, arm: Arm) -> tuple[str, ...]:
        return tuple(str(c + 1) for c in arm)


class TableEnv(BanditEnv):
    """Synthetic environment with a tabulated mean per arm.

    ``noise`` is one of None (deterministic), "gaussian" (with ``sigma``) or
    "bernoulli".
    """

    def __init__(self, means, noise: str | None = None, sigma: float = 1.0, clip: bool = False):
        self.means = np.asarray(means, dtype=float)
        self.arity = tuple(self.means.shape)
        self.noise = noise
        self.sigma = sigma
        self.clip = clip

    def expected_raw(self, arm):
        return float(self.means[tuple(arm)])

    def pull(self, arm, rng):
        mu = self.means[tuple(arm)]
        if self.noise is None:
            r = float(mu)
        elif self.noise == "gaussian":
            r = float(mu + self.sigma * rng.standard_normal())
        elif self.noise == "bernoulli":
            r = float(rng.random() < mu)
        else:
            raise ValueError(f"unknown noise model {self.noise!r}")
        if self.clip:
            r = min(max(r, 0.0), 1.0)
        return r, r


class NetworkEnv(BanditEnv):
    """Stochastic bandit whose reward is the normalized CTRM network throughput.

    Every pull draws fresh Rayleigh fading.  Expected values are estimated on
    a fixed bank of ``oracle_draws`` fading draws shared by all arms.
    """

    def __init__(self, topology: Topology, params: PhyParams | None = None, mode="STR",
                 l: int | None = None, rho=1.0, reward_upper_bound: float | None = None,
                 configs: Sequence[MloConfig] | None = None, oracle_draws: int = 200,
                 oracle_seed: int | None = None, state_cap: int = DEFAULT_STATE_CAP):
        self.topology = topology
        self.params = params or PhyParams()
        self.mode = Mode.parse(mode)
        self.l = self.params.n_bands if l is None else l
        self.configs = list(configs) if configs is not None else config_space(self.mode, self.params.n_bands, self.l)
        self.arity = (len(self.configs),) * topology.n_stas
        self.engine = ThroughputEngine(topology, self.params, rho, state_cap)
        if reward_upper_bound is None:
            reward_upper_bound = topology.n_stas * self.l * self.params.max_rate
        if reward_upper_bound <= 0:
            raise ValueError("reward_upper_bound must be positive")
        self.reward_upper_bound = float(reward_upper_bound)
        self.oracle_draws = oracle_draws
        self.oracle_seed = topology.rng_seed + 7919 if oracle_seed is None else oracle_seed
        self._bank: np.ndarray | None = None
        self._band_tables: dict[int, np.ndarray] = {}
        self._arm_cache: dict[Arm, float] = {}

    @property
    def separable(self) -> bool:
        return not any(c.bonded and bin(c.mask).count("1") > 1 for c in self.configs)

    def allocation(self, arm: Sequence[int]) -> list[MloConfig]:
        return [self.configs[c] for c in arm]

    def labels(self, arm):
        return tuple(str(self.configs[c]) for c in arm)

    def pull(self, arm, rng):
        fading = sample_fading(self.topology, rng, self.params)
        _, total = self.engine.throughput(self.allocation(arm), fading, self.l)
        total = float(total)
        return min(max(total / self.reward_upper_bound, 0.0), 1.0), total

    # -- noise-free evaluation ---------------------------------------------------
    @property
    def bank(self) -> np.ndarray:
        if self._bank is None:
            rng = np.random.default_rng(self.oracle_seed)
            self._bank = sample_fading(self.topology, rng, self.params, size=self.oracle_draws)
        return self._bank

    def band_table(self, band: int) -> np.ndarray:
        """Mean throughput on ``band`` for every subset of STAs (bit n = STA n), separable modes only."""
        table = self._band_tables.get(band)
        if table is None:
            n = self.topology.n_stas
            gains = self.engine.received_gains(self.bank)
            table = np.zeros(1 << n)
            for subset in range(1, 1 << n):
                vertices = tuple((s, (band,)) for s in range(n) if subset >> s & 1)
                comp = self.engine.component(vertices)
                rates = comp.per_state_rates(gains, self.params)
                per_vertex = np.einsum("s,sv,rsv->v", comp.ctrm.probabilities,
                                       comp.states.states.astype(float), rates) / len(gains)
                table[subset] = per_vertex.sum()
            self._band_tables[band] = table
        return table

    def band_subsets(self, arms: np.ndarray) -> np.ndarray:
        """(|arms|, B) subset index per band for a batch of arms."""
        masks = np.array([c.mask for c in self.configs])[arms]  # (A, N)
        n = arms.shape[1]
        out = np.zeros((len(arms), self.params.n_bands), dtype=np.int64)
        weights = np.int64(1) << np.arange(n, dtype=np.int64)
        for b in range(self.params.n_bands):
            out[:, b] = ((masks >> b) & 1) @ weights
        return out

    def expected_raw(self, arm):
        arm = tuple(int(c) for c in arm)
        value = self._arm_cache.get(arm)
        if value is None:
            if self.separable:
                subsets = self.band_subsets(np.array([arm]))[0]
                value = float(sum(self.band_table(b)[s] for b, s in enumerate(subsets)))
            else:
                _, totals = self.engine.throughput(self.allocation(arm), self.bank, self.l)
                value = float(np.mean(totals))
            self._arm_cache[arm] = value
        return value

    def expected_raw_many(self, arms: np.ndarray) -> np.ndarray:
        arms = np.asarray(arms, dtype=int)
        if self.separable:
            subsets = self.band_subsets(arms)
            return sum(self.band_table(b)[subsets[:, b]] for b in range(self.params.n_bands))
        return np.array([self.expected_raw(tuple(a)) for a in arms])

    def solo_throughput(self, sta: int, config: MloConfig) -> float:
        """Mean throughput of ``sta`` alone in an otherwise empty network."""
        bands = tuple(b for b in range(self.params.n_bands) if config.mask >> b & 1)
        if config.bonded and len(bands) > 1:
            vertex_sets = [((sta, bands),)]
        else:
            vertex_sets = [((sta, (b,)),) for b in bands]
        gains = self.engine.received_gains(self.bank)
        total = 0.0
        for vs in vertex_sets:
            comp = self.engine.component(vs)
            rates = comp.per_state_rates(gains, self.params)
            total += float(np.einsum("s,sv,rsv->", comp.ctrm.probabilities,
                                     comp.states.states.astype(float), rates)) / len(gains)
        return total


class ResidualEnv(BanditEnv):
    """View of ``base`` with some STAs frozen; layers are the remaining STAs in order."""

    def __init__(self, base: BanditEnv, fixed: Mapping[int, int]):
        self.base = base
        self.fixed = dict(fixed)
        for sta, c in self.fixed.items():
            if not 0 <= sta < base.height or not 0 <= c < base.arity[sta]:
                raise ValueError(f"invalid frozen assignment STA {sta} -> {c}")
        self.free = [n for n in range(base.height) if n not in self.fixed]
        self.arity = tuple(base.arity[n] for n in self.free)
        self.reward_upper_bound = base.reward_upper_bound

    def full_arm(self, arm: Sequence[int]) -> Arm:
        out = [0] * self.base.height
        for sta, c in self.fixed.items():
            out[sta] = c
        for sta, c in zip(self.free, arm):
            out[sta] = int(c)
        return tuple(out)

    def pull(self, arm, rng):
        return self.base.pull(self.full_arm(arm), rng)

    def expected_raw(self, arm):
        return self.base.expected_raw(self.full_arm(arm))

    def labels(self, arm):
        return self.base.labels(self.full_arm(arm))


@dataclass
class OracleResult:
    best: Arm
    value: float  # raw units (Mbps for network envs)
    normalized: float
    means: np.ndarray | None = field(default=None, repr=False)  # raw mean per arm index
    arity: tuple[int, ...] = ()

    def to_csv(self, path: str | Path, env: BanditEnv):
        if self.means is None:
            raise ValueError("no per-arm table to export")
        arms = all_arms(self.arity)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm_index", "config", "mean_mbps", "mean_normalized"])
            for i, (arm, m) in enumerate(zip(arms, self.means)):
                w.writerow([i, " ".join(env.labels(tuple(arm))), f"{m:.6f}",
                            f"{m / env.reward_upper_bound:.8f}"])


def exhaustive_search(env: BanditEnv, draws_per_arm: int | None = None, cap: int = 10**6,
                      rng: np.random.Generator | None = None) -> OracleResult:
    """Mean value of every arm and the argmax (lowest index on ties).

    Network environments evaluate each arm on the shared fading bank
    (``draws_per_arm`` resizes it).  Other environments use their exact means
    unless ``draws_per_arm`` asks for Monte-Carlo estimates.
    """
    size = arm_space_size(env.arity)
    if size > cap:
        raise ArmSpaceOverflowError(f"{size} arms exceed the exhaustive-search cap of {cap}")
    arms = all_arms(env.arity)
    if isinstance(env, NetworkEnv):
        if draws_per_arm is not None and draws_per_arm != env.oracle_draws:
            env.oracle_draws = draws_per_arm
            env._bank, env._band_tables, env._arm_cache = None, {}, {}
        means = env.expected_raw_many(arms)
    elif draws_per_arm is None:
        means = np.array([env.expected_raw(tuple(a)) for a in arms])
    else:
        rng = rng or np.random.default_rng(0)
        means = np.array([np.mean([env.pull(tuple(a), rng)[1] for _ in range(draws_per_arm)]) for a in arms])
    best = int(np.argmax(means))
    value = float(means[best])
    return OracleResult(tuple(int(c) for c in arms[best]), value, value / env.reward_upper_bound,
                        means, tuple(env.arity))


def _superset_max(values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    best = values.copy()
    arg = np.arange(len(values))
    for i in range(n):
        bit = 1 << i
        lo = np.flatnonzero((np.arange(len(values)) & bit) == 0)
        hi = lo | bit
        better = best[hi] > best[lo]
        best[lo[better]] = best[hi[better]]
        arg[lo[better]] = arg[hi[better]]
    return best, arg


def separable_optimum(env: NetworkEnv) -> OracleResult:
    """Exact optimum over the full arm space by dynamic programming over band subsets.

    Valid when throughput decomposes per band: STR with every non-empty mask
    allowed (each STA must appear in at least one band) or SLO (each STA in
    exactly one band).  Cost is O(B 4^N), practical up to N of about 12.
    """
    if not env.separable:
        raise ValueError("bonded configurations couple bands; use exhaustive_search")
    n, nb = env.topology.n_stas, env.params.n_bands
    masks = sorted(c.mask for c in env.configs)
    full = (1 << n) - 1
    universe = np.arange(1 << n)
    tables = [env.band_table(b) for b in range(nb)]
    if masks == list(range(1, 1 << nb)):
        cover = True
    elif masks == [1 << b for b in range(nb)]:
        cover = False
    else:
        raise ValueError("separable_optimum supports the full STR or the SLO configuration space")
    # g[k][U] = best value of bands k.. given that STAs in U still need a band.
    if cover:
        g_last, arg_last = _superset_max(tables[-1], n)
    else:
        g_last, arg_last = tables[-1].copy(), universe.copy()
    gs, args = [None] * nb, [None] * nb
    gs[-1], args[-1] = g_last, arg_last
    for k in range(nb - 2, -1, -1):
        best = np.full(1 << n, -np.inf)
        arg = np.zeros(1 << n, dtype=np.int64)
        targets = universe if k > 0 else np.array([full])
        for s in range(1 << n):
            if cover:
                cand = tables[k][s] + gs[k + 1][targets & ~s & full]
                valid = np.ones(len(targets), dtype=bool)
            else:
                valid = (targets & s) == s
                cand = tables[k][s] + gs[k + 1][targets & ~s & full]
            improve = valid & (cand > best[targets])
            best[targets[improve]] = cand[improve]
            arg[targets[improve]] = s
        gs[k], args[k] = best, arg
    subsets, remaining = [], full
    for k in range(nb):
        s = int(args[k][remaining])
        subsets.append(s)
        remaining &= ~s & full
    by_mask = {c.mask: i for i, c in enumerate(env.configs)}
    arm = tuple(by_mask[sum(1 << b for b in range(nb) if subsets[b] >> sta & 1)] for sta in range(n))
    value = env.expected_raw(arm)
    return OracleResult(arm, value, value / env.reward_upper_bound, None, tuple(env.arity))


def optimum(env: BanditEnv, cap: int = 10**6) -> OracleResult:
    """Exhaustive search when the arm space fits under ``cap``, else the band-subset DP."""
    if arm_space_size(env.arity) <= cap or not isinstance(env, NetworkEnv):
        return exhaustive_search(env, cap=cap)
    return separable_optimum(env)
