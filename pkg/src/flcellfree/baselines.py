"""Comparison schemes: two-stage cell-free allocation and colocated antennas."""

from __future__ import annotations

from typing import Optional

from . import sca
from .config import SystemConfig
from .network import ChannelStats

SCHEME_JOINT_CF = "joint_cf"
SCHEME_SEPARATE_CF = "separate_cf"
SCHEME_JOINT_COLOCATED = "joint_colocated"
SCHEMES = (SCHEME_JOINT_CF, SCHEME_SEPARATE_CF, SCHEME_JOINT_COLOCATED)


def separate_opt_cf(stats: ChannelStats, cfg: SystemConfig,
                    options: Optional[sca.ScaOptions] = None) -> sca.ScaResult:
    """Two-stage baseline.

    Stage 1 fixes equal downlink power share per group (per-AP power tight)
    and full uplink power, then picks the frequencies in closed form: the
    objective falls with every f, so each UE runs as fast as the upload
    window allows.  Stage 2 freezes those frequencies and optimizes the
    power amplitudes alone with the same inner machinery.
    """
    opts = options or sca.ScaOptions()
    start_alloc = sca.equal_power_allocation(stats, cfg)
    start = sca.iterate_from_allocation(start_alloc, stats, cfg)
    final, trace, status, kkt = sca._sca_loop(
        start, stats, cfg, opts, fixed_f=start_alloc.f)
    alloc, objective = sca._finalize(final, stats, cfg)
    return sca.ScaResult(
        allocation=alloc, objective_s=objective, trace=trace, status=status,
        outer_iters=len(trace) - 1, max_kkt_residual=kkt, path="separate",
    )


def joint_opt_colocated(stats_colocated: ChannelStats, cfg: SystemConfig,
                        options: Optional[sca.ScaOptions] = None) -> sca.ScaResult:
    """Joint allocation on a colocated-antenna deployment.

    Identical optimization path to the cell-free joint scheme; only the
    channel statistics differ (they must come from a colocated topology).
    """
    result = sca.solve(stats_colocated, cfg, options=options)
    return sca.ScaResult(
        allocation=result.allocation, objective_s=result.objective_s,
        trace=result.trace, status=result.status,
        outer_iters=result.outer_iters,
        max_kkt_residual=result.max_kkt_residual, path="colocated",
    )
