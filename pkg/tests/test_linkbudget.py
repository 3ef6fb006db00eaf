import numpy as np
import pytest

import flcellfree as fl
from flcellfree import linkbudget
from flcellfree.network import ChannelStats

from conftest import rand_instance
import oracles


def single_link_setup(B_hz=1.0):
    cfg = fl.SystemConfig(M=1, N=1, K=1, tau_c=200, tau_cp=1, tau_dp=1,
                          rho_d=1.0, rho_u=1.0, rho_p=1.0, B_hz=B_hz, D_km=0.1)
    stats = ChannelStats(
        beta=np.array([[1.0]]),
        sigma_hat_sq=np.array([[0.5]]),
        sigma_bar_sq=np.array([[0.5]]),
    )
    return cfg, stats


class TestRates:
    def test_zero_power_zero_rate(self, small_cfg, small_stats):
        rd = fl.rate_downlink(small_stats, np.zeros((4, 2)), small_cfg)
        ru = fl.rate_uplink(small_stats, np.zeros(4), small_cfg)
        assert np.all(rd == 0) and np.all(ru == 0)

    def test_single_link_downlink_value(self):
        # SINR = (1*0.5)^2 / (1*1*1*0.5 + 1) = 1/6
        cfg, stats = single_link_setup()
        rate = fl.rate_downlink(stats, np.array([[1.0]]), cfg)
        expected = (199 / 200) * np.log2(7 / 6)
        assert rate[0] == pytest.approx(expected, rel=1e-12)
        assert rate[0] == pytest.approx(0.22128, abs=5e-6)

    def test_single_link_uplink_value(self):
        # SINR = 0.25 / (0.5 + 0.5) = 0.25
        cfg, stats = single_link_setup()
        rate = fl.rate_uplink(stats, np.array([1.0]), cfg)
        expected = (199 / 200) * np.log2(1.25)
        assert rate[0] == pytest.approx(expected, rel=1e-12)
        assert rate[0] == pytest.approx(0.3203186, abs=5e-7)

    def test_bandwidth_scales_rates(self, small_cfg, small_stats):
        eta = np.full((4, 2), 1e-4)
        zeta = np.full(4, 0.5)
        cfg2 = small_cfg.with_(B_hz=2 * small_cfg.B_hz)
        assert np.allclose(2 * fl.rate_downlink(small_stats, eta, small_cfg),
                           fl.rate_downlink(small_stats, eta, cfg2))
        assert np.allclose(2 * fl.rate_uplink(small_stats, zeta, small_cfg),
                           fl.rate_uplink(small_stats, zeta, cfg2))

    def test_uplink_monotone_in_own_power(self):
        cfg, stats = single_link_setup()
        rates = [fl.rate_uplink(stats, np.array([z]), cfg)[0]
                 for z in np.linspace(0.05, 1.0, 8)]
        assert np.all(np.diff(rates) > 0)

    def test_downlink_monotone_single_user(self):
        cfg, stats = single_link_setup()
        rates = [fl.rate_downlink(stats, np.array([[e]]), cfg)[0]
                 for e in np.linspace(0.1, 2.0, 8)]
        assert np.all(np.diff(rates) > 0)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_naive_reimplementation(self, seed):
        rng = np.random.default_rng(seed)
        M = int(rng.integers(2, 17))
        N = int(rng.integers(1, 4))
        K = int(rng.integers(1, 5))
        cfg, stats = rand_instance(M, N, K, seed=seed)
        eta = rng.uniform(0, 1, (M, N)) / (linkbudget.power_weights(stats, cfg).sum(1, keepdims=True))
        zeta = rng.uniform(0, 1, N * K)
        rd = fl.rate_downlink(stats, eta, cfg)
        ru = fl.rate_uplink(stats, zeta, cfg)
        assert np.allclose(rd, oracles.naive_rate_downlink(stats, eta, cfg), rtol=1e-10)
        assert np.allclose(ru, oracles.naive_rate_uplink(stats, zeta, cfg), rtol=1e-10)

    def test_rejects_bad_shapes(self, small_cfg, small_stats):
        with pytest.raises(ValueError):
            fl.rate_downlink(small_stats, np.zeros((2, 4)), small_cfg)
        with pytest.raises(ValueError):
            fl.rate_uplink(small_stats, np.zeros(3), small_cfg)


class TestDelays:
    def test_compute_time_constants(self):
        cfg = fl.SystemConfig(M=1, N=1, K=1, D_km=0.1)
        d = fl.delays(np.array([1e7]), np.array([1e7]), np.array([3e9]), cfg)
        assert d.t_c[0] == pytest.approx(5e9 / 3e9)
        assert d.t_d[0] == pytest.approx(4.0)   # 4e7 bits / 1e7 bps
        assert d.iteration_time == pytest.approx(d.total.max())

    def test_rate_scaling(self):
        cfg = fl.SystemConfig(M=1, N=1, K=2, D_km=0.1)
        rd = np.array([1e7, 2e7])
        ru = np.array([5e6, 4e7])
        f = np.array([1e9, 2e9])
        d1 = fl.delays(rd, ru, f, cfg)
        d2 = fl.delays(2 * rd, 2 * ru, f, cfg)
        assert np.allclose(d2.t_d, d1.t_d / 2)
        assert np.allclose(d2.t_u, d1.t_u / 2)
        assert np.allclose(d2.t_c, d1.t_c)

    def test_zero_rate_is_an_error(self):
        cfg = fl.SystemConfig(M=1, N=1, K=1, D_km=0.1)
        with pytest.raises(ValueError):
            fl.delays(np.array([0.0]), np.array([1e7]), np.array([1e9]), cfg)
        with pytest.raises(ValueError):
            fl.delays(np.array([1e7]), np.array([1e7]), np.array([0.0]), cfg)

    def test_permutation_invariant_iteration_time(self):
        cfg = fl.SystemConfig(M=1, N=1, K=3, tau_dp=3, D_km=0.1)
        rd = np.array([1e7, 3e7, 2e7])
        ru = np.array([2e7, 1e7, 4e7])
        f = np.array([1e9, 3e9, 2e9])
        base = fl.delays(rd, ru, f, cfg).iteration_time
        perm = np.array([2, 0, 1])
        assert fl.delays(rd[perm], ru[perm], f[perm], cfg).iteration_time == base


class TestSyncConstraint:
    def _bd(self, t_d, t_c):
        t_d = np.asarray(t_d, float)
        t_c = np.asarray(t_c, float)
        total = t_d + t_c
        return linkbudget.DelayBreakdown(t_d=t_d, t_c=t_c, t_u=np.zeros_like(t_d),
                                         total=total, iteration_time=total.max())

    def test_identical_ues_satisfied(self):
        ok, slack = fl.check_sync_constraint(self._bd([2, 2], [3, 3]))
        assert ok and slack == pytest.approx(3.0)

    def test_hand_computed_violation(self):
        ok, slack = fl.check_sync_constraint(self._bd([1, 5], [3, 1]))
        assert not ok and slack == pytest.approx(-1.0)

    def test_no_compute_needs_equal_downloads(self):
        ok, _ = fl.check_sync_constraint(self._bd([2, 2], [0, 0]))
        assert ok
        ok, _ = fl.check_sync_constraint(self._bd([2, 2.1], [0, 0]))
        assert not ok


class TestValidator:
    def test_clean_allocation_passes(self, small_cfg, small_stats):
        from flcellfree.sca import equal_power_allocation

        alloc = equal_power_allocation(small_stats, small_cfg)
        assert fl.validate_allocation(alloc, small_stats, small_cfg) == []

    def test_flags_power_violations(self, small_cfg, small_stats):
        from flcellfree.sca import equal_power_allocation

        alloc = equal_power_allocation(small_stats, small_cfg)
        bad = fl.Allocation(eta=alloc.eta * 3.0, zeta=alloc.zeta, f=alloc.f)
        assert any("per-AP" in p for p in fl.validate_allocation(bad, small_stats, small_cfg))
        bad = fl.Allocation(eta=alloc.eta, zeta=alloc.zeta * 1.5, f=alloc.f)
        assert any("zeta" in p for p in fl.validate_allocation(bad, small_stats, small_cfg))
        bad = fl.Allocation(eta=alloc.eta, zeta=alloc.zeta, f=alloc.f * 100)
        problems = fl.validate_allocation(bad, small_stats, small_cfg)
        assert any("f_max" in p for p in problems) or any("sync" in p for p in problems)
