"""Closed-form achievable rates, delays and feasibility checks for one allocation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .network import ChannelStats

# Aggregation at the central server is modeled as instantaneous (its compute
# power dwarfs the UEs'); kept as a named constant so the delay model is auditable.
AGGREGATION_DELAY_S = 0.0


@dataclass(frozen=True)
class Allocation:
    """Decision variables: downlink powers, uplink powers, CPU frequencies."""

    eta: np.ndarray   # (M, N) downlink power coefficients, >= 0
    zeta: np.ndarray  # (N*K,) uplink power coefficients in [0, 1]
    f: np.ndarray     # (N*K,) processing frequencies in (0, f_max]


@dataclass(frozen=True)
class DelayBreakdown:
    t_d: np.ndarray        # per-UE downlink time (s)
    t_c: np.ndarray        # per-UE compute time (s)
    t_u: np.ndarray        # per-UE uplink time (s)
    total: np.ndarray      # per-UE sum (s)
    iteration_time: float  # max over UEs (s)


def power_weights(stats: ChannelStats, cfg: SystemConfig) -> np.ndarray:
    """Per-(AP, group) weight sum_{k in group} sigma_hat_sq, shape (M, N).

    The per-AP power constraint reads sum_n weights[m, n] * eta[m, n] <= 1.
    """
    return stats.sigma_hat_sq.reshape(cfg.M, cfg.N, cfg.K).sum(axis=2)


def ap_power_usage(eta: np.ndarray, stats: ChannelStats, cfg: SystemConfig) -> np.ndarray:
    """Left-hand side of the per-AP power constraint for each AP."""
    return (power_weights(stats, cfg) * eta).sum(axis=1)


def rate_downlink(stats: ChannelStats, eta: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Per-UE achievable downlink rate (bps) under multicast conjugate beamforming.

    The interference sum in the denominator runs over all groups, the UE's
    own group included.
    """
    if eta.shape != (cfg.M, cfg.N):
        raise ValueError("eta must have shape (M, N)")
    if (eta < 0).any():
        raise ValueError("eta must be nonnegative")
    v = np.sqrt(eta)
    sigma_hat = np.sqrt(stats.sigma_hat_sq)
    s_hat_group = sigma_hat.reshape(cfg.M, cfg.N, cfg.K).sum(axis=2)   # (M, N)
    group = np.repeat(np.arange(cfg.N), cfg.K)

    # signal: (sum_m v[m,n] * sigma_hat[m,u] * s_hat_group[m,n])^2
    amp = np.einsum("mu,mu->u", sigma_hat, (v * s_hat_group)[:, group])
    num = cfg.rho_d * amp**2

    # interference: sum_m beta[m,u] * sum_n' eta[m,n'] * s_hat_group[m,n']^2
    per_ap = (eta * s_hat_group**2).sum(axis=1)                        # (M,)
    den = cfg.rho_d * stats.beta.T @ per_ap + 1.0

    prelog = (cfg.tau_c - cfg.tau_cp) / cfg.tau_c * cfg.B_hz
    return prelog * np.log2(1.0 + num / den)


def rate_uplink(stats: ChannelStats, zeta: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Per-UE achievable uplink rate (bps) under matched filtering."""
    if zeta.shape != (cfg.n_ues,):
        raise ValueError("zeta must have shape (N*K,)")
    if (zeta < 0).any():
        raise ValueError("zeta must be nonnegative")
    total_var = stats.sigma_bar_sq.sum(axis=0)                         # (N*K,)
    num = cfg.rho_u * zeta * total_var**2
    cross = stats.sigma_bar_sq.T @ stats.beta                          # (u, u')
    den = cfg.rho_u * cross @ zeta + total_var
    prelog = (cfg.tau_c - cfg.tau_dp) / cfg.tau_c * cfg.B_hz
    return prelog * np.log2(1.0 + num / den)


def delays(rates_d: np.ndarray, rates_u: np.ndarray, f: np.ndarray,
           cfg: SystemConfig) -> DelayBreakdown:
    """Per-UE delay breakdown of one FL iteration.

    Zero rates or frequencies are rejected: the delay model has no finite
    value for them and the optimizer keeps its variables bounded away from
    zero, so hitting this is always a caller bug.
    """
    if (rates_d <= 0).any() or (rates_u <= 0).any():
        raise ValueError("delay model requires strictly positive rates")
    if (f <= 0).any():
        raise ValueError("delay model requires strictly positive frequencies")
    t_d = cfg.S_d_bits / rates_d
    t_c = cfg.compute_cycles / f
    t_u = cfg.S_u_bits / rates_u
    total = t_d + t_c + t_u + AGGREGATION_DELAY_S
    return DelayBreakdown(
        t_d=t_d, t_c=t_c, t_u=t_u, total=total, iteration_time=float(total.max())
    )


def check_sync_constraint(d: DelayBreakdown):
    """Uplink-switch feasibility: the earliest upload may not precede the
    latest download.  Returns (satisfied, slack); slack = min(t_d + t_c) - max(t_d).
    """
    slack = float((d.t_d + d.t_c).min() - d.t_d.max())
    return slack >= 0.0, slack


def validate_allocation(alloc: Allocation, stats: ChannelStats, cfg: SystemConfig,
                        rtol: float = 1e-6) -> list:
    """Check an allocation against the original problem constraints.

    Returns a list of human-readable violations (empty when feasible within
    the relative tolerance).
    """
    problems = []
    if (alloc.eta < -rtol).any():
        problems.append("negative downlink power coefficient")
    if (alloc.zeta < -rtol).any():
        problems.append("negative uplink power coefficient")
    if (alloc.zeta > 1.0 + rtol).any():
        problems.append(f"zeta exceeds 1 (max {alloc.zeta.max():.9g})")
    if (alloc.f <= 0).any():
        problems.append("nonpositive frequency")
    if (alloc.f > cfg.f_max * (1.0 + rtol)).any():
        problems.append(f"f exceeds f_max (max {alloc.f.max():.6g})")
    usage = ap_power_usage(np.maximum(alloc.eta, 0.0), stats, cfg)
    if (usage > 1.0 + rtol).any():
        problems.append(f"per-AP power constraint violated (max {usage.max():.9g})")

    rd = rate_downlink(stats, np.maximum(alloc.eta, 0.0), cfg)
    ru = rate_uplink(stats, np.clip(alloc.zeta, 0.0, None), cfg)
    if (rd <= 0).any() or (ru <= 0).any():
        problems.append("zero rate at allocation")
        return problems
    d = delays(rd, ru, alloc.f, cfg)
    _, slack = check_sync_constraint(d)
    if slack < -rtol * max(d.t_d.max(), 1e-30):
        problems.append(f"sync constraint violated (slack {slack:.3e} s)")
    return problems
