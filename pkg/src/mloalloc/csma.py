"""Carrier-sensing graphs, feasible states and the CTRM throughput model.

A *vertex* is one logical link ``(sta, bands)``.  Under STR and SLO every
vertex occupies a single band; a bonded link occupies several and therefore
ties the conflict graphs of those bands together into one component.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import (
    FadingDraw,
    PhyParams,
    Topology,
    large_scale_gains,
    map_rate,
    sensing_gain_matrix,
)

Vertex = tuple[int, tuple[int, ...]]

DEFAULT_STATE_CAP = 20


class StateSpaceOverflowError(RuntimeError):
    pass


class InvalidAllocationError(ValueError):
    pass


@dataclass(frozen=True)
class CarrierSenseGraph:
    vertices: tuple[Vertex, ...]
    edges: frozenset[tuple[int, int]]
    channel: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.vertices)
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-edges are not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge {(i, j)} references a missing vertex")
        object.__setattr__(self, "edges", frozenset((min(i, j), max(i, j)) for i, j in self.edges))

    @property
    def n(self) -> int:
        return len(self.vertices)

    def neighbor_masks(self) -> list[int]:
        masks = [0] * self.n
        for i, j in self.edges:
            masks[i] |= 1 << j
            masks[j] |= 1 << i
        return masks

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a


@dataclass(frozen=True)
class FeasibleStateSet:
    states: np.ndarray  # (S, V) uint8, lexicographic row order
    index: Mapping[str, int] = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def bitstrings(self) -> list[str]:
        return ["".join(map(str, row)) for row in self.states]


@dataclass(frozen=True)
class CtrmResult:
    probabilities: np.ndarray
    access_intensity: np.ndarray


def _vertex_bands(config) -> tuple[int, bool]:
    return int(getattr(config, "mask", config)), bool(getattr(config, "bonded", False))


def allocation_vertices(allocation: Sequence, n_bands: int) -> list[Vertex]:
    """Expand per-STA configurations into logical link vertices."""
    vertices: list[Vertex] = []
    for sta, config in enumerate(allocation):
        mask, bonded = _vertex_bands(config)
        bands = tuple(b for b in range(n_bands) if mask >> b & 1)
        if bonded and len(bands) > 1:
            vertices.append((sta, bands))
        else:
            vertices.extend((sta, (b,)) for b in bands)
    return vertices


def build_graph(topology: Topology, allocation: Sequence, channel: int, params: PhyParams,
                sensing: np.ndarray | None = None) -> CarrierSenseGraph:
    """Conflict graph of the links that use band ``channel``.

    Two links conflict when either transmitter hears the other at or above the
    carrier-sense threshold.  Only large-scale fading enters the test.
    """
    if sensing is None:
        sensing = sensing_gain_matrix(topology, params)
    vertices = tuple(v for v in allocation_vertices(allocation, params.n_bands) if channel in v[1])
    return _graph_on(vertices, (channel,), sensing, params.carrier_sense_threshold_mw)


def _graph_on(vertices: Sequence[Vertex], channels: Sequence[int], sensing: np.ndarray,
              threshold: float) -> CarrierSenseGraph:
    edges = set()
    for i, (si, bi) in enumerate(vertices):
        for j in range(i + 1, len(vertices)):
            sj, bj = vertices[j]
            if si == sj:
                continue
            for c in set(bi) & set(bj):
                if sensing[c, si, sj] >= threshold or sensing[c, sj, si] >= threshold:
                    edges.add((i, j))
                    break
    return CarrierSenseGraph(tuple(vertices), frozenset(edges), tuple(channels))


def enumerate_feasible_states(graph: CarrierSenseGraph, cap: int = DEFAULT_STATE_CAP) -> FeasibleStateSet:
    """All independent sets of ``graph`` (including the empty one) in lexicographic order."""
    n = graph.n
    if n > cap:
        raise StateSpaceOverflowError(
            f"channel {graph.channel}: {n} vertices exceed the feasible-state cap of {cap}"
        )
    nbrs = graph.neighbor_masks()
    # Vertex 0 is the most significant position of the bit-string.
    sets = [0]
    for v in range(n - 1, -1, -1):
        bit = 1 << v
        sets.extend([s | bit for s in sets if not s & nbrs[v]])
    masks = np.array(sets, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(n)[None, :]) & 1
    keys = bits @ (np.int64(1) << (n - 1 - np.arange(n, dtype=np.int64)))
    states = bits[np.argsort(keys, kind="stable")].astype(np.uint8)
    index = {"".join(map(str, row)): i for i, row in enumerate(states)}
    return FeasibleStateSet(states, index)


def stationary_distribution(states: FeasibleStateSet, rho) -> CtrmResult:
    """Product-form stationary law: P(F) proportional to prod_k rho_k^F(k)."""
    a = states.states
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (a.shape[1],)).copy()
    if np.any(rho <= 0):
        raise ValueError("access intensities must be strictly positive")
    logw = a @ np.log(rho)
    w = np.exp(logw - logw.max()) if len(logw) else logw
    return CtrmResult(w / w.sum(), rho)


def link_throughput(states: FeasibleStateSet, ctrm: CtrmResult, per_state_rates) -> np.ndarray:
    """Per-vertex throughput sum_{F: F(k)=1} c_k(F) P(F).

    ``per_state_rates`` is an (S, V) array (or (..., S, V) for batched draws);
    entries for inactive vertices are ignored.
    """
    rates = np.asarray(per_state_rates, dtype=float)
    a = states.states.astype(float)
    return np.einsum("s,sv,...sv->...v", ctrm.probabilities, a, rates)


@dataclass
class Component:
    """Connected set of channels with its vertices, states and CTRM law cached."""

    vertices: tuple[Vertex, ...]
    graph: CarrierSenseGraph
    states: FeasibleStateSet
    ctrm: CtrmResult
    # per band in this component: (local vertex positions, sta ids, receiving ap ids)
    band_members: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]

    def per_state_rates(self, gains: np.ndarray, params: PhyParams) -> np.ndarray:
        """(..., S, V) rates for a gain array of shape (..., N, M, B) (received power in mW)."""
        a = self.states.states.astype(float)
        batch = gains.shape[:-3]
        out = np.zeros(batch + a.shape)
        noise = params.noise_power_mw
        for band, (pos, stas, aps) in self.band_members.items():
            g = gains[..., stas[:, None], aps[None, :], band]  # (..., Vc, Vc): tx j -> AP of k
            ac = a[:, pos]
            signal = np.diagonal(g, axis1=-2, axis2=-1)
            interference = np.einsum("sj,...jk->...sk", ac, g) - ac * signal[..., None, :]
            sinr = signal[..., None, :] / (interference + noise)
            out[..., pos] += map_rate(sinr, params) * ac
        return out


class ThroughputEngine:
    """Evaluates network throughput for one topology, caching per-component state spaces."""

    def __init__(self, topology: Topology, params: PhyParams | None = None, rho=1.0,
                 state_cap: int = DEFAULT_STATE_CAP):
        self.topology = topology
        self.params = params or PhyParams()
        self.rho = rho
        self.state_cap = state_cap
        self.sensing = sensing_gain_matrix(topology, self.params)
        self.large_scale = large_scale_gains(topology, self.params) * self.params.transmit_power_mw
        self._cache: dict[tuple[Vertex, ...], Component] = {}

    def _rho_for(self, vertices: Sequence[Vertex]) -> np.ndarray:
        if isinstance(self.rho, Mapping):
            return np.array([float(self.rho.get(v, self.rho.get(v[0], 1.0))) for v in vertices])
        return np.full(len(vertices), float(self.rho))

    def component(self, vertices: tuple[Vertex, ...]) -> Component:
        comp = self._cache.get(vertices)
        if comp is None:
            channels = sorted({b for _, bands in vertices for b in bands})
            graph = _graph_on(vertices, channels, self.sensing, self.params.carrier_sense_threshold_mw)
            states = enumerate_feasible_states(graph, self.state_cap)
            ctrm = stationary_distribution(states, self._rho_for(vertices))
            assoc = self.topology.association
            members = {}
            for band in channels:
                pos = np.array([i for i, (_, bs) in enumerate(vertices) if band in bs], dtype=int)
                stas = np.array([vertices[i][0] for i in pos], dtype=int)
                members[band] = (pos, stas, assoc[stas])
            comp = Component(vertices, graph, states, ctrm, members)
            self._cache[vertices] = comp
        return comp

    def components(self, allocation: Sequence, max_links: int | None = None) -> list[Component]:
        validate_allocation(allocation, self.topology.n_stas, self.params.n_bands, max_links)
        vertices = allocation_vertices(allocation, self.params.n_bands)
        # Union channels that share a multi-band vertex.
        parent = list(range(self.params.n_bands))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for _, bands in vertices:
            for b in bands[1:]:
                parent[find(b)] = find(bands[0])
        groups: dict[int, list[Vertex]] = {}
        for v in vertices:
            groups.setdefault(find(v[1][0]), []).append(v)
        return [self.component(tuple(vs)) for _, vs in sorted(groups.items())]

    def received_gains(self, fading) -> np.ndarray:
        """Received powers (mW), shape (..., N, M, B), for a draw or a stack of draws."""
        sta_ap = fading.sta_ap if isinstance(fading, FadingDraw) else np.asarray(fading)
        return self.large_scale * sta_ap

    def throughput(self, allocation: Sequence, fading, max_links: int | None = None):
        """Return (per-STA throughput, total) in Mbps.  Batched fading gives batched outputs."""
        gains = self.received_gains(fading)
        batch = gains.shape[:-3]
        per_sta = np.zeros(batch + (self.topology.n_stas,))
        for comp in self.components(allocation, max_links):
            t = link_throughput(comp.states, comp.ctrm, comp.per_state_rates(gains, self.params))
            for i, (sta, _) in enumerate(comp.vertices):
                per_sta[..., sta] += t[..., i]
        return per_sta, per_sta.sum(axis=-1)


def validate_allocation(allocation: Sequence, n_stas: int, n_bands: int, max_links: int | None = None):
    if len(allocation) != n_stas:
        raise InvalidAllocationError(f"allocation has {len(allocation)} entries for {n_stas} STAs")
    for sta, config in enumerate(allocation):
        mask, _ = _vertex_bands(config)
        if mask <= 0 or mask >= 1 << n_bands:
            raise InvalidAllocationError(f"STA {sta}: mask {mask:#b} is empty or outside {n_bands} bands")
        if max_links is not None and bin(mask).count("1") > max_links:
            raise InvalidAllocationError(f"STA {sta}: {bin(mask).count('1')} links exceed l={max_links}")


def network_throughput(topology: Topology, allocation: Sequence, fading, params: PhyParams | None = None,
                       rho=1.0, max_links: int | None = None, engine: ThroughputEngine | None = None):
    """Per-STA and total throughput (Mbps) for one allocation under one fading draw."""
    engine = engine or ThroughputEngine(topology, params, rho)
    return engine.throughput(allocation, fading, max_links)


def graph_to_dict(graph: CarrierSenseGraph, states: FeasibleStateSet | None = None) -> dict:
    out = {
        "channel": list(graph.channel),
        "vertices": [{"sta": s, "bands": list(b)} for s, b in graph.vertices],
        "edges": sorted([list(e) for e in graph.edges]),
    }
    if states is not None:
        out["states"] = states.bitstrings()
    return out


def dump_graphs(engine: ThroughputEngine, allocation: Sequence) -> str:
    comps = engine.components(allocation)
    return json.dumps([graph_to_dict(c.graph, c.states) for c in comps], indent=2)
