"""Network drops: topologies, large-scale fading and channel-estimate variances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

CELL_FREE = "cell_free"
COLOCATED = "colocated"


class PlacementError(RuntimeError):
    """Raised when no AP layout satisfying the spacing constraint exists."""


@dataclass(frozen=True)
class Topology:
    ap_xy: np.ndarray      # (M, 2) km
    ue_xy: np.ndarray      # (N*K, 2) km
    group_of: np.ndarray   # (N*K,) int, UE index -> group index
    layout: str

    def validate(self, cfg: SystemConfig) -> None:
        if self.ap_xy.shape != (cfg.M, 2) or self.ue_xy.shape != (cfg.n_ues, 2):
            raise ValueError("topology dimensions do not match config")
        for xy in (self.ap_xy, self.ue_xy):
            if xy.min() < -1e-12 or xy.max() > cfg.D_km + 1e-12:
                raise ValueError("coordinates outside the service square")
        if self.layout == CELL_FREE and cfg.M > 1:
            d = _pairwise_dist_m(self.ap_xy)
            if d.min() < cfg.min_ap_spacing_m - 1e-9:
                raise ValueError("AP spacing constraint violated")
        if self.layout == COLOCATED:
            center = np.full((cfg.M, 2), cfg.D_km / 2.0)
            if not np.allclose(self.ap_xy, center):
                raise ValueError("colocated layout requires all APs at the center")


@dataclass(frozen=True)
class ChannelStats:
    """Per-(AP, UE) large-scale coefficients and estimate variances.

    All entries are noise-normalized linear gains (see SystemConfig).
    """

    beta: np.ndarray          # (M, N*K)
    sigma_hat_sq: np.ndarray  # (M, N*K) downlink-phase estimate variance
    sigma_bar_sq: np.ndarray  # (M, N*K) uplink-phase estimate variance

    def validate(self) -> None:
        if not (self.beta.shape == self.sigma_hat_sq.shape == self.sigma_bar_sq.shape):
            raise ValueError("inconsistent matrix shapes")
        if (self.beta <= 0).any():
            raise ValueError("beta must be strictly positive")
        if (self.sigma_hat_sq <= 0).any() or (self.sigma_hat_sq >= self.beta).any():
            raise ValueError("sigma_hat_sq must lie strictly inside (0, beta)")
        if (self.sigma_bar_sq <= 0).any() or (self.sigma_bar_sq >= self.beta).any():
            raise ValueError("sigma_bar_sq must lie strictly inside (0, beta)")

    def digest(self) -> str:
        """Content hash used to assert paired-drop discipline."""
        import hashlib

        h = hashlib.sha256()
        for a in (self.beta, self.sigma_hat_sq, self.sigma_bar_sq):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _pairwise_dist_m(xy_km: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(xy_km[:, None, :] - xy_km[None, :, :], axis=-1) * 1000.0
    return d[np.triu_indices(len(xy_km), k=1)]


def _place_aps_rejection(rng, M, d_km, spacing_m, budget):
    """Sequential dart throwing; returns None when the draw budget runs out."""
    pts = np.empty((M, 2))
    count = 0
    while budget > 0 and count < M:
        cand = rng.uniform(0.0, d_km, size=2)
        budget -= 1
        if count == 0:
            pts[0] = cand
            count = 1
            continue
        dist = np.linalg.norm(pts[:count] - cand, axis=1) * 1000.0
        if dist.min() >= spacing_m:
            pts[count] = cand
            count += 1
    return pts if count == M else None


def _place_aps_jittered_grid(rng, M, d_km, spacing_m):
    """Random cells of a regular grid plus jitter; spacing holds by construction."""
    g = math.ceil(math.sqrt(M))
    cell_km = d_km / g
    jitter_km = (cell_km - spacing_m / 1000.0) / 2.0
    if jitter_km <= 0:
        raise PlacementError(
            f"cannot place {M} APs with {spacing_m} m spacing in a "
            f"{d_km} km square; reduce M or the spacing"
        )
    jitter_km *= 1.0 - 1e-9  # keep the worst-case pair strictly feasible
    cells = rng.choice(g * g, size=M, replace=False)
    centers = (np.stack([cells // g, cells % g], axis=1) + 0.5) * cell_km
    pts = centers + rng.uniform(-jitter_km, jitter_km, size=(M, 2))
    return pts


def generate_topology(cfg: SystemConfig, seed: int, layout: str = CELL_FREE) -> Topology:
    """Draw a random drop: uniform i.i.d. UEs, APs spaced >= min_ap_spacing_m.

    AP placement uses rejection sampling when the spacing constraint is loose
    and falls back to a jittered grid when the requested density approaches
    the random-sequential-adsorption jamming limit (where plain rejection
    sampling cannot terminate).  Deterministic given the seed.
    """
    if layout not in (CELL_FREE, COLOCATED):
        raise ValueError(f"unknown layout {layout!r}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x70F0])
    ue_ss, ap_ss = ss.spawn(2)
    ue_rng = np.random.default_rng(ue_ss)
    ue_xy = ue_rng.uniform(0.0, cfg.D_km, size=(cfg.n_ues, 2))
    group_of = np.repeat(np.arange(cfg.N), cfg.K)

    if layout == COLOCATED:
        ap_xy = np.full((cfg.M, 2), cfg.D_km / 2.0)
    else:
        ap_rng = np.random.default_rng(ap_ss)
        area_m2 = (cfg.D_km * 1000.0 + cfg.min_ap_spacing_m) ** 2
        jamming = 0.547 * area_m2 / (math.pi * (cfg.min_ap_spacing_m / 2.0) ** 2)
        ap_xy = None
        if cfg.M == 1:
            ap_xy = ap_rng.uniform(0.0, cfg.D_km, size=(1, 2))
        elif cfg.M <= 0.6 * jamming:
            ap_xy = _place_aps_rejection(
                ap_rng, cfg.M, cfg.D_km, cfg.min_ap_spacing_m, budget=400 * cfg.M
            )
        if ap_xy is None:
            ap_xy = _place_aps_jittered_grid(ap_rng, cfg.M, cfg.D_km, cfg.min_ap_spacing_m)

    topo = Topology(ap_xy=ap_xy, ue_xy=ue_xy, group_of=group_of, layout=layout)
    topo.validate(cfg)
    return topo


def large_scale_fading(topo: Topology, cfg: SystemConfig, seed: int) -> np.ndarray:
    """Noise-normalized large-scale gains beta, shape (M, N*K).

    Log-distance path loss plus i.i.d. log-normal shadowing; for the
    colocated layout every antenna shares one shadowing draw per UE (they
    see the same obstructions).  Distances are clamped at min_ue_ap_dist_m.
    """
    diff = topo.ap_xy[:, None, :] - topo.ue_xy[None, :, :]
    dist_m = np.linalg.norm(diff, axis=-1) * 1000.0
    dist_m = np.maximum(dist_m, cfg.min_ue_ap_dist_m)
    pl_db = cfg.pl_const_db - cfg.pl_slope_db * np.log10(dist_m)

    sf_db = 0.0
    if cfg.shadow_sigma_db > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5FAD])
        )
        if topo.layout == COLOCATED:
            sf_db = np.broadcast_to(
                cfg.shadow_sigma_db * rng.standard_normal(dist_m.shape[1]),
                dist_m.shape,
            )
        else:
            sf_db = cfg.shadow_sigma_db * rng.standard_normal(dist_m.shape)

    return 10.0 ** ((pl_db + sf_db - cfg.noise_dbm) / 10.0)


def estimate_variances(beta: np.ndarray, cfg: SystemConfig):
    """Channel-estimate variances for both transmission phases.

    Downlink phase: every UE of a group sends the same pilot, so the
    denominator sums beta over the UE's whole group at each AP.  Uplink
    phase: dedicated orthogonal pilots, the denominator holds only the
    UE's own beta.
    """
    if beta.shape != (cfg.M, cfg.n_ues):
        raise ValueError("beta shape does not match config")
    group_sum = beta.reshape(cfg.M, cfg.N, cfg.K).sum(axis=2)      # (M, N)
    group_sum_per_ue = np.repeat(group_sum, cfg.K, axis=1)         # (M, N*K)
    a_cp = cfg.tau_cp * cfg.rho_p
    a_dp = cfg.tau_dp * cfg.rho_p
    sigma_hat_sq = a_cp * beta**2 / (a_cp * group_sum_per_ue + 1.0)
    sigma_bar_sq = a_dp * beta**2 / (a_dp * beta + 1.0)
    return sigma_hat_sq, sigma_bar_sq


def channel_stats(topo: Topology, cfg: SystemConfig, seed: int) -> ChannelStats:
    """Convenience: fading draw plus estimate variances for one drop."""
    beta = large_scale_fading(topo, cfg, seed)
    sigma_hat_sq, sigma_bar_sq = estimate_variances(beta, cfg)
    stats = ChannelStats(beta=beta, sigma_hat_sq=sigma_hat_sq, sigma_bar_sq=sigma_bar_sq)
    stats.validate()
    return stats
