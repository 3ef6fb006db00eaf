import numpy as np
import pytest

import flcellfree as fl
from flcellfree import linkbudget, sca

from conftest import rand_instance


def sample_feasible_eta(rng, stats, cfg, n):
    """Downlink powers uniformly inside the per-AP power region."""
    w = linkbudget.power_weights(stats, cfg)
    etas = []
    for _ in range(n):
        eta = rng.uniform(0.0, 1.0, (cfg.M, cfg.N))
        usage = (w * eta).sum(axis=1).max()
        etas.append(eta * rng.uniform(0.0, 1.0) / max(usage, 1e-30))
    return etas


class TestReciprocalBounds:
    def test_tight_at_expansion(self):
        cfg = fl.SystemConfig()
        r0 = np.array([1e7, 3e7])
        h1 = sca.downlink_time_bound(r0, cfg)
        assert np.allclose(h1.value(r0), cfg.S_d_bits / r0, rtol=1e-14)
        f0 = np.array([1e9, 3e9])
        h2 = sca.compute_time_bound(f0, cfg)
        assert np.allclose(h2.value(f0), cfg.compute_cycles / f0, rtol=1e-14)

    def test_hand_computed_values(self):
        cfg = fl.SystemConfig()           # S_d = 4e7 bits, L*D*c = 5e9 cycles
        h1 = sca.downlink_time_bound(np.array([1e7]), cfg)
        assert h1.value(np.array([2e7]))[0] == pytest.approx(0.0, abs=1e-12)
        h2 = sca.compute_time_bound(np.array([3e9]), cfg)
        val = h2.value(np.array([1.5e9]))[0]
        assert val == pytest.approx(2.5, rel=1e-12)
        assert val <= 5e9 / 1.5e9

    def test_lower_bound_property(self):
        cfg = fl.SystemConfig()
        rng = np.random.default_rng(0)
        for _ in range(200):
            r0 = rng.uniform(1e5, 1e9)
            r = rng.uniform(1e5, 1e9)
            h1 = sca.downlink_time_bound(np.array([r0]), cfg)
            assert h1.value(np.array([r]))[0] <= cfg.S_d_bits / r + 1e-9

    def test_rejects_nonpositive_expansion(self):
        cfg = fl.SystemConfig()
        with pytest.raises(ValueError):
            sca.downlink_time_bound(np.array([0.0]), cfg)
        with pytest.raises(ValueError):
            sca.compute_time_bound(np.array([-1.0]), cfg)


class TestRateBounds:
    def test_tight_at_expansion(self, small_cfg, small_stats):
        it = sca.initial_point(small_stats, small_cfg)
        dlb = sca.downlink_rate_bound(it.v, small_stats, small_cfg)
        true_d = fl.rate_downlink(small_stats, it.v**2, small_cfg)
        assert np.allclose(dlb.value(it.v), true_d, rtol=1e-9)
        ulb = sca.uplink_rate_bound(it.u, small_stats, small_cfg)
        true_u = fl.rate_uplink(small_stats, it.u**2, small_cfg)
        assert np.allclose(ulb.value(it.u), true_u, rtol=1e-9)

    def test_sampled_lower_bound(self, small_cfg, small_stats):
        rng = np.random.default_rng(1)
        it = sca.initial_point(small_stats, small_cfg)
        dlb = sca.downlink_rate_bound(it.v, small_stats, small_cfg)
        for eta in sample_feasible_eta(rng, small_stats, small_cfg, 300):
            v = np.sqrt(eta)
            assert (dlb.value(v) <= fl.rate_downlink(small_stats, eta, small_cfg) + 1e-9).all()
        ulb = sca.uplink_rate_bound(it.u, small_stats, small_cfg)
        for _ in range(300):
            zeta = rng.uniform(0.0, 1.0, small_cfg.n_ues)
            u = np.sqrt(zeta)
            assert (ulb.value(u) <= fl.rate_uplink(small_stats, zeta, small_cfg) + 1e-9).all()

    def test_finite_at_zero_power(self, small_cfg, small_stats):
        it = sca.initial_point(small_stats, small_cfg)
        dlb = sca.downlink_rate_bound(it.v, small_stats, small_cfg)
        vals = dlb.value(np.zeros_like(it.v))
        assert np.isfinite(vals).all()
        ulb = sca.uplink_rate_bound(it.u, small_stats, small_cfg)
        assert np.isfinite(ulb.value(np.zeros_like(it.u))).all()

    def test_degenerate_expansion_rejected(self, small_cfg, small_stats):
        with pytest.raises(sca.DegenerateExpansionError):
            sca.downlink_rate_bound(np.zeros((small_cfg.M, small_cfg.N)),
                                    small_stats, small_cfg)
        with pytest.raises(sca.DegenerateExpansionError):
            sca.uplink_rate_bound(np.zeros(small_cfg.n_ues),
                                  small_stats, small_cfg)

    @pytest.mark.parametrize("seed", [3, 4])
    def test_other_instances(self, seed):
        cfg, stats = rand_instance(8, 3, 2, seed=seed)
        rng = np.random.default_rng(seed)
        it = sca.initial_point(stats, cfg)
        dlb = sca.downlink_rate_bound(it.v, stats, cfg)
        assert np.allclose(dlb.value(it.v), fl.rate_downlink(stats, it.v**2, cfg),
                           rtol=1e-9)
        for eta in sample_feasible_eta(rng, stats, cfg, 100):
            assert (dlb.value(np.sqrt(eta)) <=
                    fl.rate_downlink(stats, eta, cfg) + 1e-9).all()
