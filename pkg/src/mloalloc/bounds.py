"""Sample-complexity and error-probability bounds for layered EB-TC search.

Rewards are treated as unit-variance Gaussians.  Characteristic times come
from the root of a convex decreasing function psi; the error bound follows
the gap-ladder construction (H terms, Q, p, h2) of anytime EB-TC analysis.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

PSI_TOL = 1e-9
H2_TOL = 1e-6


class BoundDomainError(ValueError):
    """A formula was evaluated outside its domain."""


class BracketError(RuntimeError):
    pass


@dataclass
class GaussianInstance:
    """Mean vector of one node's children, with the slack epsilon."""

    means: np.ndarray
    epsilon: float = 0.0
    gap_tol: float = 1e-12

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        if self.means.ndim != 1 or self.means.size < 2:
            raise ValueError("an instance needs at least two means")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("means must be finite")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.best = int(np.argmax(self.means))
        self.gaps = self.means[self.best] - self.means
        n_best = int(np.sum(self.gaps <= self.gap_tol))
        self.unique_best = n_best == 1
        # gap ladder 0 = D_1 < D_2 < ... < D_C and the size of each class
        ladder, sizes = [], []
        for g in np.sort(self.gaps):
            if ladder and g - ladder[-1] <= self.gap_tol:
                sizes[-1] += 1
            else:
                ladder.append(0.0 if not ladder else float(g))
                sizes.append(1)
        self.ladder = np.array(ladder)
        self.class_sizes = np.array(sizes)

    @property
    def n_arms(self) -> int:
        return int(self.means.size)

    @property
    def n_distinct(self) -> int:
        return int(self.ladder.size)

    @property
    def delta_max(self) -> float:
        return float(self.ladder[-1])

    def others(self) -> np.ndarray:
        return np.delete(self.gaps, self.best)

    def with_epsilon(self, epsilon: float) -> "GaussianInstance":
        return GaussianInstance(self.means, epsilon, self.gap_tol)


# -- characteristic time ---------------------------------------------------------

def psi_domain_edge(instance: GaussianInstance) -> float:
    m = float(np.min(instance.others() + instance.epsilon))
    if m <= 0:
        raise BoundDomainError("psi is undefined: a tied best arm with epsilon = 0")
    return 1.0 / (m * m)


def psi(r: float, instance: GaussianInstance) -> float:
    edge = psi_domain_edge(instance)
    if r <= edge:
        raise BoundDomainError(f"psi needs r > {edge:g}, got {r:g}")
    w = instance.others() + instance.epsilon
    return float(np.sum(1.0 / (r * w * w - 1.0) ** 2) - 1.0)


def _t_from_r(r: float, instance: GaussianInstance) -> float:
    w = instance.others() + instance.epsilon
    return float(2.0 * r / (1.0 + np.sum(1.0 / (r * w * w - 1.0))))


def characteristic_time(instance: GaussianInstance, tol: float = PSI_TOL,
                        max_iter: int = 2000) -> tuple[float, float]:
    """Root r* of psi and the characteristic time T_eps(mu)."""
    edge = psi_domain_edge(instance)
    lo = edge
    hi = 2.0 * edge
    for _ in range(200):
        if psi(hi, instance) < 0:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise BracketError("no sign change found for psi")
    r = hi
    for _ in range(max_iter):
        r = 0.5 * (lo + hi)
        v = psi(r, instance)
        if abs(v) <= tol:
            break
        if v > 0:
            lo = r
        else:
            hi = r
        if hi - lo <= np.finfo(float).eps * hi:
            break
    if abs(psi(r, instance)) > tol:
        raise BracketError(f"bisection stalled with residual {psi(r, instance):g}")
    return r, _t_from_r(r, instance)


def theorem1_bound(layer_instances: Sequence[GaussianInstance], eps: float, n_layers: int) -> float:
    """Sum over layers of T_{eps/N}, one worst-case instance per layer."""
    if len(layer_instances) != n_layers:
        raise ValueError(f"expected {n_layers} layer instances, got {len(layer_instances)}")
    return float(sum(characteristic_time(inst.with_epsilon(eps / n_layers))[1] for inst in layer_instances))


# -- anytime error bound ---------------------------------------------------------

def p(x: float) -> float:
    return x * math.exp(-x)


def gap_index(instance: GaussianInstance, eps: float) -> int:
    """d_mu(eps): the 1-based d with eps in [D_d, D_{d+1}), or C when none applies."""
    lad = instance.ladder
    for d in range(1, instance.n_distinct):
        if lad[d - 1] <= eps < lad[d]:
            return d
    return instance.n_distinct


def _delta(instance, k):
    return float(instance.ladder[k - 1])


def C_d(instance: GaussianInstance, d: int, eps0: float) -> float:
    return 2.0 / _delta(instance, d) - 1.0 / eps0


def C_dj(instance: GaussianInstance, d: int, j: int, eps0: float) -> float:
    dd, dj = _delta(instance, d), _delta(instance, j)
    return 2.0 * (dj / eps0 + 1.0) / (dd - dj) + 3.0 / eps0


def _size(instance, k):
    return int(instance.class_sizes[k - 1])


def _size_sum(instance, lo, hi):
    return sum(_size(instance, k) for k in range(lo, hi + 1))


def H_bar(instance: GaussianInstance, d: int, j: int, eps0: float) -> float:
    C = instance.n_distinct
    n_star = _size(instance, 1)
    c_j1 = C_d(instance, j + 1, eps0)
    c_d1j = C_dj(instance, d + 1, j, eps0)
    out = n_star * max(math.sqrt(2.0) / _delta(instance, j + 1), c_d1j) ** 2
    out += max(c_j1, c_d1j) ** 2 * (_size_sum(instance, 2, j) + _size_sum(instance, d + 1, C))
    for k in range(j + 1, d + 1):
        out += _size(instance, k) * max(c_j1, c_d1j, math.sqrt(2.0) / _delta(instance, k)) ** 2
    return out


def H_tilde(instance: GaussianInstance, d: int, j: int, eps0: float) -> float:
    C = instance.n_distinct
    n_star = _size(instance, 1)
    c_j1 = C_d(instance, j + 1, eps0)
    out = 2.0 * n_star / _delta(instance, j + 1) ** 2
    out += 2.0 * _size_sum(instance, 1, j) / (_delta(instance, d + 1) - _delta(instance, j)) ** 2
    out += _size_sum(instance, 2, j) * max(c_j1, 1.0 / eps0) ** 2
    for k in range(j + 1, C + 1):
        out += _size(instance, k) * max(c_j1, 1.0 / eps0, math.sqrt(2.0) / _delta(instance, k)) ** 2
    return out


def H_d(instance: GaussianInstance, d: int, eps0: float) -> float:
    if eps0 <= 0:
        raise BoundDomainError("eps0 must be positive")
    if not 1 <= d <= instance.n_distinct - 1:
        raise BoundDomainError(f"H_d needs 1 <= d <= {instance.n_distinct - 1}, got {d}")
    return min(max(H_bar(instance, d, j, eps0), H_tilde(instance, d, j, eps0)) for j in range(1, d + 1))


def Q(K: int, t: float, instance: GaussianInstance, eps: float) -> float:
    """Q(K, t, mu, eps) with eps0 = eps inside H.  Zero when d_mu(eps) = C."""
    if t <= 0:
        raise BoundDomainError(f"log t needs t > 0, got {t}")
    d = gap_index(instance, eps)
    if d == instance.n_distinct:
        return 0.0
    H = H_d(instance, d, eps)
    x = (t - 5.0 * K * K / 2.0) / (8.0 * H)
    val = K * (K + 1) / 2.0 * math.e ** 2 * (2.0 + math.log(t)) ** 2 * p(x)
    if not math.isfinite(val):
        raise BoundDomainError("Q is not finite")
    return val


def h2(x: float, y: float, z: float, tol: float = H2_TOL) -> float:
    """inf{u > 1 : u - log u - 2 log(2 + log(x u + y)) >= z} by doubling then bisection."""

    def ok(u):
        arg = x * u + y
        if arg <= 0:
            return False
        inner = 2.0 + math.log(arg)
        if inner <= 0:
            return False
        return u - math.log(u) - 2.0 * math.log(inner) >= z

    lo, hi = 1.0, 2.0
    while not ok(hi):
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise BoundDomainError("h2 has no finite solution")
    if ok(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def D_mu(instance: GaussianInstance, K: int, eps0: float) -> float:
    h1 = 8.0 * H_d(instance, 1, eps0)
    y = 5.0 * K * K / 2.0
    return h1 * h2(h1, y, 2.0 + math.log(K * (K + 1) / 2.0)) + y


def error_bound(instance: GaussianInstance, t: float, eps: float, eta: int, n_layers: int,
                layer_counts: Sequence[float] = (), layer_instances: Sequence[GaussianInstance] = (),
                delta: float = 0.1, n_children: int | None = None) -> float:
    """Upper bound on the probability of not recommending an eps-optimal arm.

    ``instance`` and ``t`` describe the node reached at layer ``eta``;
    ``layer_counts``/``layer_instances`` give the visit counts and child means
    of the best nodes at layers eta+1 .. N-1.  The caller is responsible for the
    large-count preconditions (t at least D_mu, and the unspecified burn-in count).
    """
    if not 0 <= eta <= n_layers - 1:
        raise ValueError(f"eta must lie in [0, {n_layers - 1}]")
    extra = n_layers - 1 - eta
    if len(layer_counts) != extra or len(layer_instances) != extra:
        raise ValueError(f"need {extra} counts and instances for layers eta+1..N-1")
    if eps >= instance.delta_max:
        return 0.0
    K = instance.n_arms if n_children is None else n_children
    eps_l = eps / n_layers
    out = 1.0 - (1.0 - delta) ** (eta / n_layers)
    for n_h, inst_h in zip(layer_counts, layer_instances):
        out *= (1.0 - Q(K, n_h, inst_h, eps_l)) / (4.0 * math.sqrt(2.0 * (K - 1)))
    out *= 1.0 - Q(K, t, instance, eps_l)
    if not math.isfinite(out):
        raise BoundDomainError("error bound is not finite")
    return min(max(out, 0.0), 1.0)


@dataclass
class BoundReport:
    layer_times: list[float]
    r_star: list[float]
    theorem1_sum: float
    predicted_slots: float
    error_probability: float | None = None
    h_terms: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def bound_report(layer_means: Sequence[Sequence[float]], eps: float, delta: float,
                 t: float | None = None, eta: int = 0, layer_counts: Sequence[float] | None = None) -> BoundReport:
    """Evaluate every bound for one worst-case child-mean vector per layer."""
    n_layers = len(layer_means)
    insts = [GaussianInstance(m) for m in layer_means]
    rs, ts = [], []
    for inst in insts:
        r, T = characteristic_time(inst.with_epsilon(eps / n_layers))
        rs.append(r)
        ts.append(T)
    total = float(sum(ts))
    delta_layer = 1.0 - (1.0 - delta) ** (1.0 / n_layers)
    report = BoundReport(ts, rs, total, total * math.log(1.0 / delta))
    root = insts[eta]
    eps_l = eps / n_layers
    d = gap_index(root, eps_l)
    if d < root.n_distinct:
        report.h_terms = {"d_mu": d, "H": H_d(root, d, eps_l), "H_1": H_d(root, 1, eps_l),
                          "D_mu": D_mu(root, root.n_arms, eps_l), "delta_layer": delta_layer}
    if t is not None:
        rest = insts[eta + 1:]
        counts = list(layer_counts) if layer_counts is not None else [t] * len(rest)
        report.error_probability = error_bound(root, t, eps, eta, n_layers, counts, rest, delta)
    return report
