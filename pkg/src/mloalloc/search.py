"""Tree search over per-STA configurations.

The tree has one layer per STA: a node at depth h fixes the configurations
of STAs 0..h-1, and a terminal node (depth N) is one arm.  Only nodes that
were expanded are materialized; rollout segments are not stored.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .problem import Arm, BanditEnv


@dataclass
class BaiParams:
    epsilon: float = 0.02
    delta: float = 0.1
    height: int = 1
    budget: int = 2000
    eps_layer: float = field(init=False)
    delta_layer: float = field(init=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.height < 1:
            raise ValueError("tree height must be at least 1")
        self.eps_layer = self.epsilon / self.height
        self.delta_layer = 1.0 - (1.0 - self.delta) ** (1.0 / self.height)


class Node:
    __slots__ = ("depth", "config", "parent", "arity", "children", "n", "total", "sumsq",
                 "pair_visits", "pair_beta", "pair_challenger")

    def __init__(self, depth: int, config: int | None, parent: "Node | None", arity: int):
        self.depth = depth
        self.config = config
        self.parent = parent
        self.arity = arity
        self.children: dict[int, Node] = {}
        self.n = 0
        self.total = 0.0
        self.sumsq = 0.0
        # EB-TC bookkeeping keyed by (leader, challenger) config indices
        self.pair_visits: dict[tuple[int, int], int] = {}
        self.pair_beta: dict[tuple[int, int], float] = {}
        self.pair_challenger: dict[tuple[int, int], int] = {}

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else 0.0

    def fully_visited(self) -> bool:
        return len(self.children) == self.arity

    def unvisited(self) -> list[int]:
        return [c for c in range(self.arity) if c not in self.children]

    def path(self) -> list[int]:
        out, node = [], self
        while node.parent is not None:
            out.append(node.config)
            node = node.parent
        return out[::-1]

    def update(self, reward: float):
        self.n += 1
        self.total += reward
        self.sumsq += reward * reward

    def pair_beta_bar(self, leader: int, challenger: int) -> float:
        return self.pair_beta.get((leader, challenger), 0.5)


@dataclass
class RunTrace:
    slots: list[int] = field(default_factory=list)
    arms: list[Arm] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    raw: list[float] = field(default_factory=list)
    eta: list[int] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)
    expected: list[float] = field(default_factory=list)
    recommended: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.slots)

    def append(self, arm, reward, raw, eta, wall, expected=float("nan"), recommended=float("nan")):
        self.slots.append(len(self.slots) + 1)
        self.arms.append(tuple(int(c) for c in arm))
        self.rewards.append(float(reward))
        self.raw.append(float(raw))
        self.eta.append(int(eta))
        self.wall.append(float(wall))
        self.expected.append(float(expected))
        self.recommended.append(float(recommended))

    def to_csv(self, labels: Callable[[Arm], tuple[str, ...]] | None = None, include_wall: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["slot", "allocation", "reward", "raw_mbps", "eta", "mean_reward", "recommended_reward"]
        if include_wall:
            header.append("wall_s")
        w.writerow(header)
        for i in range(len(self)):
            arm = self.arms[i]
            alloc = " ".join(labels(arm)) if labels else " ".join(str(c + 1) for c in arm)
            row = [self.slots[i], alloc, f"{self.rewards[i]:.8f}", f"{self.raw[i]:.6f}", self.eta[i],
                   f"{self.expected[i]:.8f}", f"{self.recommended[i]:.8f}"]
            if include_wall:
                row.append(f"{self.wall[i]:.6f}")
            w.writerow(row)
        return buf.getvalue()


@dataclass
class SearchResult:
    allocation: Arm
    trace: RunTrace
    converged: bool = False
    stop_slot: int | None = None
    eta: int = 0
    root: Node | None = field(default=None, repr=False)
    partial: object = None

    def __iter__(self):
        return iter((self.allocation, self.trace, self.converged))


# -- EB-TC_eps primitives --------------------------------------------------------

def eb_leader(node: Node) -> int:
    """Child config with the largest empirical mean (lowest index on ties)."""
    children = node.children
    if len(children) != node.arity:
        raise ValueError("every child must be visited before choosing a leader")
    best, best_mu = None, -math.inf
    for c in range(node.arity):
        ch = children[c]
        if ch.n == 0:
            raise ValueError("every child must be visited before choosing a leader")
        mu = ch.total / ch.n
        if mu > best_mu:
            best, best_mu = c, mu
    return best


def transport_cost(node: Node, leader: int, other: int, eps_layer: float) -> float:
    b, o = node.children[leader], node.children[other]
    return (b.total / b.n - o.total / o.n + eps_layer) / math.sqrt(1.0 / b.n + 1.0 / o.n)


def tc_challenger(node: Node, leader: int, eps_layer: float) -> int:
    if node.arity < 2:
        raise ValueError("a challenger needs at least two children")
    best, best_cost = None, math.inf
    for c in range(node.arity):
        if c == leader:
            continue
        cost = transport_cost(node, leader, c, eps_layer)
        if cost < best_cost:
            best, best_cost = c, cost
    return best


def update_proportions(node: Node, leader: int, challenger: int) -> int:
    """Advance the pair's tracking counters and return the child to descend into."""
    key = (leader, challenger)
    t = node.pair_visits.get(key, 0) + 1
    node.pair_visits[key] = t
    n_b, n_o = node.children[leader].n, node.children[challenger].n
    beta = n_o / (n_b + n_o)
    beta_bar = ((t - 1) * node.pair_beta_bar(leader, challenger) + beta) / t
    node.pair_beta[key] = beta_bar
    picked = node.pair_challenger.get(key, 0)
    if picked <= (1.0 - beta_bar) * t:
        node.pair_challenger[key] = picked + 1
        return challenger
    return leader


def glr_threshold(n: int, n_children: int, delta_layer: float) -> float | None:
    """sqrt(2 g(n, delta)), or None where g is undefined for these arguments."""
    if n <= 0 or n_children < 2 or not 0 < delta_layer < 1:
        return None
    x = math.log((n_children - 1) / delta_layer) / 2.0
    inner = 4.0 + math.log(n / 2.0)
    if x <= 0 or inner <= 0:
        return None
    g = 2.0 * (x + math.log(x)) + 4.0 * math.log(inner)
    if g < 0:
        return None
    return math.sqrt(2.0 * g)


def glr_stop_check(node: Node, delta_layer: float, eps_layer: float) -> tuple[bool, int | None]:
    if not node.fully_visited():
        return False, None
    if node.arity == 1:
        return True, 0
    best = eb_leader(node)
    threshold = glr_threshold(node.n, node.arity, delta_layer)
    if threshold is None:
        return False, None
    stat = min(transport_cost(node, best, c, eps_layer) for c in range(node.arity) if c != best)
    if stat >= threshold:
        return True, best
    return False, None


# -- shared tree mechanics ---------------------------------------------------------

def _child(node: Node, config: int, env: BanditEnv) -> Node:
    ch = node.children.get(config)
    if ch is None:
        depth = node.depth + 1
        arity = env.arity[depth] if depth < env.height else 0
        ch = Node(depth, config, node, arity)
        node.children[config] = ch
    return ch


def _rollout(node: Node, env: BanditEnv, rng: np.random.Generator) -> Arm:
    tail = [int(rng.integers(env.arity[h])) for h in range(node.depth, env.height)]
    return tuple(node.path() + tail)


def _backprop(node: Node, reward: float):
    while node is not None:
        node.update(reward)
        node = node.parent


def greedy_path(root: Node, env: BanditEnv, start: Node | None = None) -> Arm:
    """Descend from ``start`` by empirical best child; unexplored layers get config 0."""
    node = start or root
    arm = node.path()
    while node is not None and node.depth < env.height:
        visited = [c for c in range(node.arity) if c in node.children and node.children[c].n > 0]
        if not visited:
            arm.extend([0] * (env.height - node.depth))
            break
        c = max(visited, key=lambda k: (node.children[k].mean, -k))
        arm.append(c)
        node = node.children[c]
    return tuple(arm)


def _expected(env: BanditEnv, arm: Arm, track: bool) -> float:
    if not track:
        return float("nan")
    try:
        return env.expected(arm)
    except NotImplementedError:
        return float("nan")


def _check_budget(budget: int):
    if budget < 1:
        raise ValueError("budget must allow at least one time slot")


# -- BAI-MCTS --------------------------------------------------------------------

def run_bai_mcts(env: BanditEnv, params: BaiParams, rng: np.random.Generator,
                 exploit_after_stop: bool = False, track_expected: bool = True) -> SearchResult:
    """Layer-wise EB-TC_eps tree search with a GLR_eps stopping rule per layer.

    Stops when every layer has converged or the budget is spent.  With
    ``exploit_after_stop`` the recommended allocation keeps being played until
    the budget so traces have a common length.
    """
    if params.height != env.height:
        raise ValueError(f"params.height={params.height} but the environment has {env.height} layers")
    _check_budget(params.budget)
    n_layers = env.height
    root = Node(0, None, None, env.arity[0])
    converged_path: list[Node] = [root]
    eta = 0
    trace = RunTrace()
    start = time.perf_counter()
    stop_slot = None
    eps_l, delta_l = params.eps_layer, params.delta_layer

    while eta != n_layers and len(trace) < params.budget:
        d = converged_path[eta]
        while d.depth < n_layers and d.fully_visited():
            if d.arity == 1:
                d = d.children[0]
                continue
            leader = eb_leader(d)
            challenger = tc_challenger(d, leader, eps_l)
            d = d.children[update_proportions(d, leader, challenger)]
        if d.depth < n_layers:
            options = d.unvisited()
            d = _child(d, options[int(rng.integers(len(options)))], env)
            arm = _rollout(d, env, rng)
        else:
            arm = tuple(d.path())
        reward, raw = env.pull(arm, rng)
        node = d
        while node.depth != 0:
            node.update(reward)
            if node.depth == eta + 1:
                stopped, best = glr_stop_check(node.parent, delta_l, eps_l)
                if stopped:
                    eta += 1
                    converged_path.append(node.parent.children[best])
            node = node.parent
        root.update(reward)
        rec = _expected(env, greedy_path(root, env, converged_path[eta]), track_expected) if track_expected else float("nan")
        trace.append(arm, reward, raw, eta, time.perf_counter() - start, _expected(env, arm, track_expected), rec)

    converged = eta == n_layers
    if converged:
        stop_slot = len(trace)
        final = tuple(converged_path[-1].path())
    else:
        final = greedy_path(root, env, converged_path[eta])
    if exploit_after_stop:
        final_value = _expected(env, final, track_expected)
        while len(trace) < params.budget:
            reward, raw = env.pull(final, rng)
            trace.append(final, reward, raw, eta, time.perf_counter() - start, final_value, final_value)
    return SearchResult(final, trace, converged, stop_slot, eta, root)


# -- baselines -------------------------------------------------------------------

def run_uct(env: BanditEnv, params: BaiParams, rng: np.random.Generator, c: float = math.sqrt(2.0),
            track_expected: bool = True) -> SearchResult:
    """UCB1 applied to the same tree; runs until the budget, no stopping rule."""
    _check_budget(params.budget)
    root = Node(0, None, None, env.arity[0])
    trace = RunTrace()
    start = time.perf_counter()
    for _ in range(params.budget):
        d = root
        while d.depth < env.height and d.fully_visited():
            log_n = math.log(d.n)
            best, best_score = None, -math.inf
            for k in range(d.arity):
                ch = d.children[k]
                score = ch.mean + c * math.sqrt(log_n / ch.n)
                if score > best_score:
                    best, best_score = k, score
            d = d.children[best]
        if d.depth < env.height:
            options = d.unvisited()
            d = _child(d, options[int(rng.integers(len(options)))], env)
            arm = _rollout(d, env, rng)
        else:
            arm = tuple(d.path())
        reward, raw = env.pull(arm, rng)
        _backprop(d, reward)
        rec = _expected(env, greedy_path(root, env), track_expected) if track_expected else float("nan")
        trace.append(arm, reward, raw, 0, time.perf_counter() - start, _expected(env, arm, track_expected), rec)
    return SearchResult(greedy_path(root, env), trace, False, None, 0, root)


@dataclass(frozen=True)
class NormalGammaPrior:
    mu0: float = 0.5
    lambda0: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0

    def posterior(self, n: int, total: float, sumsq: float) -> tuple[float, float, float, float]:
        """(mu_n, lambda_n, alpha_n, beta_n) after ``n`` observations with the given sums."""
        if n == 0:
            return self.mu0, self.lambda0, self.alpha0, self.beta0
        xbar = total / n
        ss = max(sumsq - n * xbar * xbar, 0.0)
        lam = self.lambda0 + n
        mu = (self.lambda0 * self.mu0 + n * xbar) / lam
        alpha = self.alpha0 + n / 2.0
        beta = self.beta0 + 0.5 * ss + self.lambda0 * n * (xbar - self.mu0) ** 2 / (2.0 * lam)
        return mu, lam, alpha, beta

    def sample_mean(self, n: int, total: float, sumsq: float, rng: np.random.Generator) -> float:
        mu, lam, alpha, beta = self.posterior(n, total, sumsq)
        tau = rng.gamma(alpha, 1.0 / beta)
        return float(rng.normal(mu, 1.0 / math.sqrt(lam * tau)))


def run_dng_mcts(env: BanditEnv, params: BaiParams, rng: np.random.Generator,
                 prior: NormalGammaPrior = NormalGammaPrior(), track_expected: bool = True) -> SearchResult:
    """Thompson sampling over Normal-Gamma posteriors at every tree node."""
    _check_budget(params.budget)
    root = Node(0, None, None, env.arity[0])
    trace = RunTrace()
    start = time.perf_counter()
    for _ in range(params.budget):
        d = root
        expanded = False
        while d.depth < env.height and not expanded:
            draws = []
            for k in range(d.arity):
                ch = d.children.get(k)
                if ch is None:
                    draws.append(prior.sample_mean(0, 0.0, 0.0, rng))
                else:
                    draws.append(prior.sample_mean(ch.n, ch.total, ch.sumsq, rng))
            k = int(np.argmax(draws))
            expanded = k not in d.children
            d = _child(d, k, env)
        arm = _rollout(d, env, rng) if d.depth < env.height else tuple(d.path())
        reward, raw = env.pull(arm, rng)
        _backprop(d, reward)
        rec = _expected(env, greedy_path(root, env), track_expected) if track_expected else float("nan")
        trace.append(arm, reward, raw, 0, time.perf_counter() - start, _expected(env, arm, track_expected), rec)
    return SearchResult(greedy_path(root, env), trace, False, None, 0, root)


def run_random(env: BanditEnv, params: BaiParams, rng: np.random.Generator,
               track_expected: bool = True) -> SearchResult:
    _check_budget(params.budget)
    trace = RunTrace()
    start = time.perf_counter()
    totals: dict[Arm, list[float]] = {}
    for _ in range(params.budget):
        arm = tuple(int(rng.integers(k)) for k in env.arity)
        reward, raw = env.pull(arm, rng)
        acc = totals.setdefault(arm, [0.0, 0])
        acc[0] += reward
        acc[1] += 1
        leader = max(totals, key=lambda a: (totals[a][0] / totals[a][1]))
        trace.append(arm, reward, raw, 0, time.perf_counter() - start, _expected(env, arm, track_expected),
                     _expected(env, leader, track_expected))
    best = max(totals, key=lambda a: totals[a][0] / totals[a][1])
    return SearchResult(best, trace, False, None, 0, None)


ALGORITHMS = {
    "bai-mcts": run_bai_mcts,
    "uct": run_uct,
    "dng-mcts": run_dng_mcts,
    "random": run_random,
}


def tree_to_dict(node: Node, max_depth: int | None = None) -> dict:
    out = {"depth": node.depth, "config": node.config, "n": node.n, "mean": node.mean}
    if node.pair_visits:
        out["pairs"] = {f"{b},{o}": [t, node.pair_beta[(b, o)], node.pair_challenger.get((b, o), 0)]
                        for (b, o), t in sorted(node.pair_visits.items())}
    if max_depth is None or node.depth < max_depth:
        out["children"] = [tree_to_dict(node.children[k], max_depth) for k in sorted(node.children)]
    return out
