import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mloalloc.channel import PhyParams, ScenarioSpec, generate_topology
from mloalloc.problem import (ArmSpaceOverflowError, Mode, MloConfig, NetworkEnv, ResidualEnv, TableEnv,
                              all_arms, arm_index, arm_space_size, config_space, decode_arm,
                              exhaustive_search, optimum, separable_optimum)


def small_env(seed=0, stas=(1, 1, 1), mode="STR", **kw):
    topo = generate_topology(ScenarioSpec(stas_per_ap=stas), seed=seed)
    return NetworkEnv(topo, mode=mode, oracle_draws=kw.pop("oracle_draws", 40), **kw)


class TestConfigSpace:
    def test_str_labels(self):
        assert [c.mask for c in config_space("STR")] == [1, 2, 4, 3, 5, 6, 7]

    def test_sizes(self):
        assert len(config_space("SLO")) == 3
        assert len(config_space("bonding")) == 4
        assert len(config_space("STR", l=2)) == 6
        assert len(config_space("STR", n_bands=4)) == 15

    def test_bonded_pair(self):
        bonded = [c for c in config_space(Mode.BONDING) if c.bonded]
        assert len(bonded) == 1 and bonded[0].mask == 0b110 and bonded[0].n_links == 1
        assert config_space("bonding", bonded_mask=0b111)[-1].mask == 0b111

    def test_bits_highest_band_first(self):
        assert MloConfig(5).bits(3) == (1, 0, 1)
        assert MloConfig(1).bits(3) == (0, 0, 1)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            config_space("MIMO")

    def test_arm_space_for_six_stas(self):
        assert arm_space_size((7,) * 6) == 117_649


class TestArmEncoding:
    @given(st.lists(st.integers(1, 7), min_size=1, max_size=6), st.data())
    @settings(max_examples=80)
    def test_roundtrip(self, arity, data):
        arm = tuple(data.draw(st.integers(0, k - 1)) for k in arity)
        assert decode_arm(arm_index(arm, arity), arity) == arm

    def test_all_arms_in_index_order(self):
        arity = (3, 2, 4)
        arms = all_arms(arity)
        assert len(arms) == 24
        assert [arm_index(a, arity) for a in arms] == list(range(24))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            arm_index((3,), (3,))
        with pytest.raises(IndexError):
            decode_arm(9, (3, 3))


class TestNetworkEnv:
    def test_reward_bounded_and_deterministic(self):
        env = small_env(seed=1)
        arms = [tuple(a) for a in np.random.default_rng(0).integers(0, 7, size=(20, 3))]
        r1 = [env.pull(a, np.random.default_rng(i)) for i, a in enumerate(arms)]
        r2 = [env.pull(a, np.random.default_rng(i)) for i, a in enumerate(arms)]
        assert r1 == r2
        for norm, raw in r1:
            assert 0.0 <= norm <= 1.0
            assert norm == pytest.approx(raw / (3 * 3 * 150))

    def test_zero_power_gives_zero_reward(self):
        topo = generate_topology(ScenarioSpec(stas_per_ap=(1, 1, 1)), seed=0)
        env = NetworkEnv(topo, PhyParams(transmit_power_dbm=-300))
        assert env.pull((6, 6, 6), np.random.default_rng(0)) == (0.0, 0.0)

    def test_expected_matches_bank_average(self):
        env = small_env(seed=2)
        arm = (6, 3, 0)
        _, totals = env.engine.throughput(env.allocation(arm), env.bank, env.l)
        assert env.expected_raw(arm) == pytest.approx(float(np.mean(totals)), rel=1e-10)

    def test_pull_mean_tracks_expected(self):
        env = small_env(seed=2, oracle_draws=2000)
        arm = (6, 3, 0)
        rng = np.random.default_rng(5)
        mc = np.mean([env.pull(arm, rng)[1] for _ in range(2000)])
        assert mc == pytest.approx(env.expected_raw(arm), rel=0.03)

    def test_bad_upper_bound(self):
        topo = generate_topology(ScenarioSpec(stas_per_ap=(1, 0, 0)), seed=0)
        with pytest.raises(ValueError):
            NetworkEnv(topo, reward_upper_bound=0)

    def test_residual_env_freezes_stas(self):
        env = small_env(seed=3)
        res = ResidualEnv(env, {1: 5})
        assert res.arity == (7, 7) and res.height == 2
        assert res.full_arm((2, 4)) == (2, 5, 4)
        assert res.expected_raw((2, 4)) == env.expected_raw((2, 5, 4))
        with pytest.raises(ValueError):
            ResidualEnv(env, {3: 0})


class TestOracle:
    def test_exhaustive_on_table(self):
        env = TableEnv([[0.1, 0.7], [0.9, 0.2]])
        res = exhaustive_search(env)
        assert res.best == (1, 0) and res.value == 0.9

    def test_ties_choose_lowest_index(self):
        assert exhaustive_search(TableEnv([[0.5, 0.5], [0.5, 0.1]])).best == (0, 0)

    def test_cap(self):
        with pytest.raises(ArmSpaceOverflowError):
            exhaustive_search(TableEnv(np.zeros((7,) * 4)), cap=1000)

    @pytest.mark.parametrize("seed,mode", [(0, "STR"), (4, "STR"), (9, "STR"), (0, "SLO"), (6, "SLO")])
    def test_dp_matches_exhaustive(self, seed, mode):
        env = small_env(seed=seed, stas=(2, 1, 1), mode=mode)
        ex = exhaustive_search(env)
        dp = separable_optimum(env)
        assert dp.value == pytest.approx(ex.value, rel=1e-12)

    def test_dp_rejects_bonding(self):
        with pytest.raises(ValueError):
            separable_optimum(small_env(mode="bonding"))

    def test_optimum_normalized_at_most_one(self):
        res = optimum(small_env(seed=5))
        assert 0 < res.normalized <= 1

    def test_bonding_oracle_uses_exhaustive(self):
        env = small_env(seed=7, mode="bonding")
        res = optimum(env)
        assert res.means.shape == (4 ** 3,)

    def test_csv_export(self, tmp_path):
        env = small_env(seed=0, stas=(1, 1, 0))
        res = exhaustive_search(env)
        path = tmp_path / "arms.csv"
        res.to_csv(path, env)
        lines = path.read_text().splitlines()
        assert lines[0] == "arm_index,config,mean_mbps,mean_normalized"
        assert len(lines) == 50

    def test_str_never_worse_than_slo(self):
        # SLO allocations are a subset of STR ones, evaluated on the same fading bank
        for seed in range(4):
            str_v = optimum(small_env(seed=seed, mode="STR")).value
            slo_v = optimum(small_env(seed=seed, mode="SLO")).value
            assert str_v >= slo_v - 1e-9
