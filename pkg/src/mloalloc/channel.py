"""Physical-layer primitives: topology, fading, interference, SINR and rate mapping.

All powers are converted from dBm to mW once, at the boundary (``PhyParams``
properties); everything downstream works in linear units.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 3e8

# Links are (sta index, band index) pairs.
LinkId = tuple[int, int]


class InvalidScenarioError(ValueError):
    pass


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


DEFAULT_BANDS = (2.4e9, 5e9, 6e9)
DEFAULT_RATE_TABLE = ((2.0, 20.0), (8.0, 50.0), (15.0, 100.0), (22.0, 150.0))


@dataclass(frozen=True)
class PhyParams:
    transmit_power_dbm: float = 20.0
    noise_power_dbm: float = -95.0
    carrier_sense_threshold_dbm: float = -60.0
    bands: tuple[float, ...] = DEFAULT_BANDS
    rayleigh_scale: float = math.sqrt(0.5)
    rate_table: tuple[tuple[float, float], ...] = DEFAULT_RATE_TABLE
    min_distance: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(float(b) for b in self.bands))
        object.__setattr__(
            self, "rate_table", tuple((float(t), float(r)) for t, r in self.rate_table)
        )
        if not self.bands:
            raise ValueError("at least one band is required")
        if any(b <= 0 for b in self.bands):
            raise ValueError("carrier frequencies must be positive")
        thresholds = [t for t, _ in self.rate_table]
        if not self.rate_table or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("rate_table thresholds must be strictly increasing")
        if any(r <= 0 for _, r in self.rate_table):
            raise ValueError("rate_table rates must be positive")
        if self.min_distance <= 0:
            raise ValueError("min_distance must be positive")

    @property
    def transmit_power_mw(self) -> float:
        return dbm_to_mw(self.transmit_power_dbm)

    @property
    def noise_power_mw(self) -> float:
        return dbm_to_mw(self.noise_power_dbm)

    @property
    def carrier_sense_threshold_mw(self) -> float:
        return dbm_to_mw(self.carrier_sense_threshold_dbm)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def max_rate(self) -> float:
        return self.rate_table[-1][1]

    @property
    def thresholds_linear(self) -> np.ndarray:
        return db_to_linear([t for t, _ in self.rate_table])

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for _, r in self.rate_table])

    def with_overrides(self, **overrides) -> "PhyParams":
        return replace(self, **overrides)


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of a deployment.

    ``ap_positions`` overrides the default equilateral-triangle layout.
    """

    area_m: float = 10.0
    stas_per_ap: tuple[int, ...] = (2, 2, 2)
    ap_positions: tuple[tuple[float, float], ...] | None = None
    phy: PhyParams = field(default_factory=PhyParams)
    seed: int = 0

    @property
    def n_aps(self) -> int:
        return len(self.stas_per_ap)

    @property
    def n_stas(self) -> int:
        return int(sum(self.stas_per_ap))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        data = dict(data)
        phy = PhyParams(**data.pop("phy", {}))
        aps = data.pop("ap_positions", None)
        if aps == "triangle":
            aps = None
        if aps is not None:
            aps = tuple(tuple(float(c) for c in p) for p in aps)
        stas = tuple(int(n) for n in data.pop("stas_per_ap", (2, 2, 2)))
        return cls(stas_per_ap=stas, ap_positions=aps, phy=phy, **data)

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        phy = {
            "transmit_power_dbm": self.phy.transmit_power_dbm,
            "noise_power_dbm": self.phy.noise_power_dbm,
            "carrier_sense_threshold_dbm": self.phy.carrier_sense_threshold_dbm,
            "bands": list(self.phy.bands),
            "rayleigh_scale": self.phy.rayleigh_scale,
            "rate_table": [list(x) for x in self.phy.rate_table],
            "min_distance": self.phy.min_distance,
        }
        return {
            "area_m": self.area_m,
            "stas_per_ap": list(self.stas_per_ap),
            "ap_positions": None if self.ap_positions is None else [list(p) for p in self.ap_positions],
            "phy": phy,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray  # (M, 2)
    sta_positions: np.ndarray  # (N, 2)
    association: np.ndarray  # (N,) AP index of each STA
    rng_seed: int = 0

    def __post_init__(self):
        aps = np.asarray(self.ap_positions, dtype=float).reshape(-1, 2)
        stas = np.asarray(self.sta_positions, dtype=float).reshape(-1, 2)
        assoc = np.asarray(self.association, dtype=int).reshape(-1)
        if len(assoc) != len(stas):
            raise InvalidScenarioError("association must cover every STA exactly once")
        if len(stas) and (assoc.min() < 0 or assoc.max() >= len(aps)):
            raise InvalidScenarioError("association references an unknown AP")
        if not (np.isfinite(aps).all() and np.isfinite(stas).all()):
            raise InvalidScenarioError("positions must be finite")
        for name, value in (("ap_positions", aps), ("sta_positions", stas), ("association", assoc)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def n_stas(self) -> int:
        return len(self.sta_positions)

    def stas_of(self, ap: int) -> list[int]:
        return [int(n) for n in np.flatnonzero(self.association == ap)]

    def sta_ap_distances(self) -> np.ndarray:
        """(N, M) Euclidean distances from every STA to every AP."""
        diff = self.sta_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def sta_sta_distances(self) -> np.ndarray:
        diff = self.sta_positions[:, None, :] - self.sta_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def to_dict(self) -> dict:
        return {
            "ap_positions": self.ap_positions.tolist(),
            "sta_positions": self.sta_positions.tolist(),
            "association": self.association.tolist(),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        return cls(
            np.array(data["ap_positions"], dtype=float),
            np.array(data["sta_positions"], dtype=float),
            np.array(data["association"], dtype=int),
            int(data.get("rng_seed", 0)),
        )


def triangle_ap_positions(area_m: float, n_aps: int = 3) -> np.ndarray:
    """APs on a regular polygon centred in the square (a triangle for 3 APs)."""
    centre = area_m / 2.0
    radius = 0.3 * area_m
    angles = 2 * np.pi * np.arange(n_aps) / max(n_aps, 1)
    return np.column_stack([centre + radius * np.sin(angles), centre + radius * np.cos(angles)])


def generate_topology(scenario: ScenarioSpec, seed: int | None = None) -> Topology:
    """Place APs at the scenario's fixed positions and drop STAs uniformly in the square."""
    if scenario.area_m <= 0 or not math.isfinite(scenario.area_m):
        raise InvalidScenarioError(f"area must be positive, got {scenario.area_m}")
    if scenario.n_aps == 0 or scenario.n_stas == 0:
        raise InvalidScenarioError("scenario needs at least one AP and one STA")
    if any(n < 0 for n in scenario.stas_per_ap):
        raise InvalidScenarioError("STA counts must be non-negative")
    seed = scenario.seed if seed is None else seed
    if scenario.ap_positions is None:
        aps = triangle_ap_positions(scenario.area_m, scenario.n_aps)
    else:
        aps = np.asarray(scenario.ap_positions, dtype=float)
        if aps.shape != (scenario.n_aps, 2):
            raise InvalidScenarioError("ap_positions must give one 2-D point per AP")
    rng = np.random.default_rng(seed)
    stas = rng.uniform(0.0, scenario.area_m, size=(scenario.n_stas, 2))
    association = np.repeat(np.arange(scenario.n_aps), scenario.stas_per_ap)
    return Topology(aps, stas, association, int(seed))


def path_loss(fc, distance, min_distance: float = 0.1):
    """Large-scale power gain ``(c / (4 pi fc d^2))^2``.

    Distances below ``min_distance`` are clamped.  Accepts scalars or arrays.
    """
    fc = np.asarray(fc, dtype=float)
    d = np.maximum(np.asarray(distance, dtype=float), min_distance)
    if np.any(fc <= 0):
        raise ValueError("carrier frequency must be positive")
    out = (SPEED_OF_LIGHT / (4.0 * np.pi * fc * d**2)) ** 2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FadingDraw:
    """Small-scale power gains |h|^2 for every STA -> AP link on every band, shape (N, M, B)."""

    sta_ap: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.sta_ap, dtype=float)
        if np.any(g < 0) or not np.isfinite(g).all():
            raise ValueError("fading gains must be finite and non-negative")
        object.__setattr__(self, "sta_ap", g)

    @classmethod
    def unit(cls, topology: Topology, params: PhyParams) -> "FadingDraw":
        return cls(np.ones((topology.n_stas, topology.n_aps, params.n_bands)))


def sample_fading(topology: Topology, rng: np.random.Generator, params: PhyParams | None = None,
                  size: int | None = None) -> FadingDraw | np.ndarray:
    """Draw Rayleigh amplitudes and return their powers.

    With ``size`` a stacked array of shape (size, N, M, B) is returned instead of
    a single ``FadingDraw``.
    """
    params = params or PhyParams()
    shape = (topology.n_stas, topology.n_aps, params.n_bands)
    if size is None:
        return FadingDraw(rng.rayleigh(params.rayleigh_scale, size=shape) ** 2)
    return rng.rayleigh(params.rayleigh_scale, size=(size, *shape)) ** 2


def large_scale_gains(topology: Topology, params: PhyParams) -> np.ndarray:
    """(N, M, B) path-loss gains from each STA to each AP per band."""
    d = topology.sta_ap_distances()
    fc = np.asarray(params.bands)
    return path_loss(fc[None, None, :], d[:, :, None], params.min_distance)


def received_power(sta: int, ap: int, band: int, topology: Topology, fading: FadingDraw,
                   params: PhyParams) -> float:
    d = float(np.linalg.norm(topology.sta_positions[sta] - topology.ap_positions[ap]))
    g = path_loss(params.bands[band], d, params.min_distance)
    return g * float(fading.sta_ap[sta, ap, band]) * params.transmit_power_mw


def interference_power(link: LinkId, active: Iterable[LinkId], topology: Topology,
                       fading: FadingDraw, params: PhyParams) -> float:
    """Aggregate interference (mW) at the receiving AP of ``link`` from co-channel active links."""
    sta, band = link
    ap = int(topology.association[sta])
    total = 0.0
    for other_sta, other_band in active:
        if (other_sta, other_band) == (sta, band):
            continue
        if other_band != band:
            raise ValueError(f"interferer {(other_sta, other_band)} is not on band {band}")
        total += received_power(other_sta, ap, band, topology, fading, params)
    return total


def compute_sinr(link: LinkId, active: Iterable[LinkId], topology: Topology,
                 fading: FadingDraw, params: PhyParams) -> float:
    sta, band = link
    ap = int(topology.association[sta])
    signal = received_power(sta, ap, band, topology, fading, params)
    interference = interference_power(link, active, topology, fading, params)
    return signal / (interference + params.noise_power_mw)


def map_rate(gamma, params: PhyParams | None = None):
    """Largest table rate whose threshold is <= gamma (linear SINR); 0 below the table."""
    params = params or PhyParams()
    thresholds = params.thresholds_linear
    rates = np.concatenate([[0.0], params.rates])
    idx = np.searchsorted(thresholds, np.asarray(gamma, dtype=float), side="right")
    out = rates[idx]
    return float(out) if out.ndim == 0 else out


def sensing_gain_matrix(topology: Topology, params: PhyParams) -> np.ndarray:
    """(B, N, N) STA-to-STA received power (mW) used by the carrier-sensing test, fading fixed to 1."""
    d = topology.sta_sta_distances()
    fc = np.asarray(params.bands)
    g = path_loss(fc[:, None, None], d[None, :, :], params.min_distance)
    return g * params.transmit_power_mw


def summarize_positions(points: Sequence[Sequence[float]], digits: int = 2) -> list[list[float]]:
    return [[round(float(c), digits) for c in p] for p in points]
