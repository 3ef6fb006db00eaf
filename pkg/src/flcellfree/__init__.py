"""Desk-scale simulator and optimizer for the iteration time of multiple
federated-learning groups served by a cell-free massive MIMO network."""

from .config import SystemConfig
from .network import (
    CELL_FREE,
    COLOCATED,
    ChannelStats,
    PlacementError,
    Topology,
    channel_stats,
    estimate_variances,
    generate_topology,
    large_scale_fading,
)
from .linkbudget import (
    AGGREGATION_DELAY_S,
    Allocation,
    DelayBreakdown,
    check_sync_constraint,
    delays,
    rate_downlink,
    rate_uplink,
    validate_allocation,
)

from .sca import ScaOptions, ScaResult, initial_point, solve
from .baselines import joint_opt_colocated, separate_opt_cf

__all__ = [
    "ScaOptions",
    "ScaResult",
    "initial_point",
    "solve",
    "separate_opt_cf",
    "joint_opt_colocated",
    "SystemConfig",
    "Topology",
    "ChannelStats",
    "PlacementError",
    "CELL_FREE",
    "COLOCATED",
    "generate_topology",
    "large_scale_fading",
    "estimate_variances",
    "channel_stats",
    "Allocation",
    "DelayBreakdown",
    "AGGREGATION_DELAY_S",
    "rate_downlink",
    "rate_uplink",
    "delays",
    "check_sync_constraint",
    "validate_allocation",
]
