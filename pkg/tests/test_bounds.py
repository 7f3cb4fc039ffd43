import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mloalloc.bounds import (BoundDomainError, GaussianInstance, D_mu, H_d, Q, bound_report, characteristic_time,
                             error_bound, gap_index, h2, p, psi, psi_domain_edge, theorem1_bound)

means_strategy = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=7)


def two_arm_time(gap, eps):
    # a single suboptimal arm gives r* = 2/w^2 and T = r*
    return 2.0 / (gap + eps) ** 2


class TestInstance:
    def test_ladder_and_classes(self):
        inst = GaussianInstance([0.9, 0.5, 0.5, 0.1, 0.9])
        np.testing.assert_allclose(inst.ladder, [0.0, 0.4, 0.8])
        assert list(inst.class_sizes) == [2, 2, 1]
        assert not inst.unique_best and inst.delta_max == pytest.approx(0.8)

    def test_rejects_bad_means(self):
        with pytest.raises(ValueError):
            GaussianInstance([0.5])
        with pytest.raises(ValueError):
            GaussianInstance([0.5, math.nan])


class TestPsi:
    def test_two_arm_root(self):
        assert psi(2.0, GaussianInstance([1.0, 0.0])) == pytest.approx(0.0, abs=1e-15)

    def test_pole_and_tail(self):
        inst = GaussianInstance([1.0, 0.6, 0.2])
        edge = psi_domain_edge(inst)
        assert psi(edge * (1 + 1e-6), inst) > 1e9
        assert psi(1e9, inst) == pytest.approx(-1.0, abs=1e-9)
        with pytest.raises(BoundDomainError):
            psi(edge, inst)

    @given(means_strategy, st.floats(0.001, 0.2))
    @settings(max_examples=60, deadline=None)
    def test_strictly_decreasing(self, means, eps):
        inst = GaussianInstance(means, eps)
        edge = psi_domain_edge(inst)
        grid = edge * (1 + np.geomspace(1e-3, 1e3, 60))
        vals = [psi(r, inst) for r in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_tied_best_without_slack(self):
        with pytest.raises(BoundDomainError):
            psi_domain_edge(GaussianInstance([0.5, 0.5, 0.1]))


class TestCharacteristicTime:
    def test_two_arm_unit_gap(self):
        r, T = characteristic_time(GaussianInstance([1.0, 0.0]))
        assert r == pytest.approx(2.0, abs=1e-8) and T == pytest.approx(2.0, abs=1e-8)

    @given(means_strategy, st.floats(0.001, 0.2))
    @settings(max_examples=60, deadline=None)
    def test_residual(self, means, eps):
        inst = GaussianInstance(means, eps)
        r, T = characteristic_time(inst)
        assert abs(psi(r, inst)) <= 1e-9
        assert T > 0

    @given(means_strategy)
    @settings(max_examples=40, deadline=None)
    def test_half_gaps_quadruple_time(self, means):
        inst = GaussianInstance(means, 0.0)
        if not inst.unique_best or inst.ladder[1] < 1e-3:
            return
        _, T = characteristic_time(inst)
        _, T_half = characteristic_time(GaussianInstance(np.asarray(means) / 2, 0.0))
        assert T_half == pytest.approx(4 * T, rel=1e-6)

    def test_epsilon_strictly_decreases_time(self):
        means = [0.8, 0.6, 0.55, 0.1]
        times = [characteristic_time(GaussianInstance(means, e))[1] for e in (0.0, 0.01, 0.05, 0.2)]
        assert all(a > b for a, b in zip(times, times[1:]))

    def test_two_arm_closed_form(self):
        for gap, eps in [(0.3, 0.0), (0.05, 0.01), (1.5, 0.2)]:
            assert characteristic_time(GaussianInstance([gap, 0.0], eps))[1] == pytest.approx(
                two_arm_time(gap, eps), rel=1e-8)


class TestLayeredSum:
    def test_single_layer(self):
        inst = GaussianInstance([0.7, 0.2, 0.1])
        assert theorem1_bound([inst], 0.05, 1) == pytest.approx(characteristic_time(inst.with_epsilon(0.05))[1])

    def test_identical_layers(self):
        inst = GaussianInstance([0.7, 0.2, 0.1])
        one = characteristic_time(inst.with_epsilon(0.05 / 3))[1]
        assert theorem1_bound([inst] * 3, 0.05, 3) == pytest.approx(3 * one)

    def test_two_by_two_tree(self):
        # layer 0 sees the row means, layer 1 the children of the best row
        layers = [GaussianInstance([0.65, 0.25]), GaussianInstance([0.9, 0.4])]
        want = two_arm_time(0.4, 0.05) + two_arm_time(0.5, 0.05)
        assert theorem1_bound(layers, 0.1, 2) == pytest.approx(want, rel=1e-8)

    def test_layer_count_mismatch(self):
        with pytest.raises(ValueError):
            theorem1_bound([GaussianInstance([1, 0])], 0.1, 2)


class TestErrorBound:
    inst = GaussianInstance([0.9, 0.6, 0.3, 0.0])

    def test_p(self):
        assert p(1.0) == pytest.approx(0.3679, abs=1e-4)
        assert p(1.0) == math.exp(-1)

    def test_gap_index(self):
        assert gap_index(self.inst, 0.1) == 1
        assert gap_index(self.inst, 0.35) == 2
        assert gap_index(self.inst, 5.0) == 4

    def test_no_error_when_eps_covers_all_gaps(self):
        assert error_bound(self.inst, 1e6, 0.9, 0, 1) == 0.0

    def test_last_layer_empty_product(self):
        N, delta, t, eps = 3, 0.1, 1e7, 0.06
        got = error_bound(self.inst, t, eps, N - 1, N, delta=delta)
        want = (1 - (1 - delta) ** ((N - 1) / N)) * (1 - Q(4, t, self.inst, eps / N))
        assert got == pytest.approx(want, rel=1e-12)
        assert 0 <= got <= 1

    def test_root_layer_factor_vanishes(self):
        # the eta = 0 factor 1 - (1 - delta)^0 is zero
        assert error_bound(self.inst, 1e7, 0.06, 0, 1) == 0.0

    def test_needs_counts_for_deeper_layers(self):
        with pytest.raises(ValueError):
            error_bound(self.inst, 1e7, 0.06, 0, 3)

    def test_q_non_increasing_past_peak(self):
        eps = 0.02
        H = H_d(self.inst, gap_index(self.inst, eps), eps)
        K = 4
        t_peak = 8 * H + 5 * K * K / 2
        grid = t_peak * np.geomspace(2, 1e4, 50)
        vals = [Q(K, t, self.inst, eps) for t in grid]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-6

    @pytest.mark.xfail(strict=True, reason="the (1 - Q) factors grow with t, so the product rises "
                                           "toward its limit instead of shrinking")
    def test_error_bound_non_increasing_past_peak(self):
        eps, N = 0.06, 2
        H = H_d(self.inst, gap_index(self.inst, eps / N), eps / N)
        t_peak = 8 * H + 40
        grid = t_peak * np.geomspace(1.5, 1e3, 40)
        vals = [error_bound(self.inst, t, eps, 1, N) for t in grid]
        assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))

    def test_q_domain(self):
        with pytest.raises(BoundDomainError):
            Q(4, 0.0, self.inst, 0.02)
        assert Q(4, 100.0, self.inst, 5.0) == 0.0

    def test_h_domain(self):
        with pytest.raises(BoundDomainError):
            H_d(self.inst, 0, 0.02)
        with pytest.raises(BoundDomainError):
            H_d(self.inst, 1, 0.0)


class TestH2:
    @pytest.mark.parametrize("x,y,z", [(10.0, 40.0, 3.0), (1e4, 10.0, 5.0), (1.0, 0.0, 0.5)])
    def test_infimum(self, x, y, z):
        u = h2(x, y, z)

        def lhs(v):
            return v - math.log(v) - 2 * math.log(2 + math.log(x * v + y))

        assert u > 1 and lhs(u) >= z
        if u - 1e-5 > 1:
            assert lhs(u - 1e-5) < z

    def test_d_mu_positive(self):
        assert D_mu(GaussianInstance([0.9, 0.6, 0.3]), 3, 0.01) > 0


class TestReport:
    def test_json(self):
        rep = bound_report([[0.65, 0.25], [0.9, 0.4]], 0.1, 0.01, t=1e6, eta=1)
        data = json.loads(rep.to_json())
        assert data["theorem1_sum"] == pytest.approx(two_arm_time(0.4, 0.05) + two_arm_time(0.5, 0.05))
        assert data["predicted_slots"] == pytest.approx(data["theorem1_sum"] * math.log(100))
        assert 0 <= data["error_probability"] <= 1
        assert all(v >= 0 for v in data["layer_times"])
