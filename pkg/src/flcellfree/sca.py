"""Successive convex approximation of the min-max iteration-time problem.

The nonconvex problem (minimize the worst per-UE downlink + compute + uplink
delay over downlink powers eta, uplink powers zeta and CPU frequencies f) is
rewritten in epigraph form over amplitude variables v = sqrt(eta),
u = sqrt(zeta).  Each outer iteration replaces the nonconvex pieces by tight
concave under-estimators around the current point and solves the resulting
second-order cone program with the embedded conic backend.

Unit contract inside the conic program: rates in Mbps, frequencies in
Gcycles/s, times in seconds, update sizes in Mbit, per-iteration compute in
Gcycles; v is additionally column-scaled so the equal-power-share point maps
to 1.  All quantities are unscaled on extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import conic
from .config import SystemConfig
from .linkbudget import (
    Allocation,
    delays,
    power_weights,
    rate_downlink,
    rate_uplink,
)
from .network import ChannelStats

RATE_SCALE = 1e6   # bps per program rate unit
FREQ_SCALE = 1e9   # cycles/s per program frequency unit
SYNC_GAP_FLOOR_S = 1e-9

CONVERGED = "converged"
MAX_ITERS = "max_iters"
SUBPROBLEM_INFEASIBLE = "subproblem_infeasible"


class DegenerateExpansionError(ValueError):
    """Expansion point with a vanishing signal term; re-initialize the SCA."""


@dataclass(frozen=True)
class ScaIterate:
    """One point of the transformed epigraph problem (physical units)."""

    v: np.ndarray    # (M, N) sqrt of downlink powers
    u: np.ndarray    # (N*K,) sqrt of uplink powers
    f: np.ndarray    # (N*K,) CPU frequencies
    r_d: np.ndarray  # (N*K,) downlink rate variables (bps)
    r_u: np.ndarray  # (N*K,) uplink rate variables (bps)
    a: float         # iteration-time epigraph bound (s)
    b: float         # latest-download bound (s)
    q: float         # earliest upload-start bound (s)
    q1: np.ndarray   # (N*K,) per-UE download-time floor (s)
    q2: np.ndarray   # (N*K,) per-UE compute-time floor (s)


@dataclass
class ScaOptions:
    max_outer_iters: int = 50
    epsilon: Optional[float] = None        # default: cfg.epsilon
    warm_start: bool = True
    solver: conic.SolverOptions = field(default_factory=conic.SolverOptions)
    # seam for swapping in another conic backend: (program, SolverOptions)
    # -> ConicSolution with the same field contract
    subproblem_solver: Optional[object] = None

    def solve_subproblem(self, prog):
        solver = self.subproblem_solver or conic.solve_conic
        return solver(prog, options=self.solver)


@dataclass
class ScaResult:
    allocation: Allocation
    objective_s: float            # true iteration time of the allocation
    trace: List[float]            # per-outer-iteration epigraph objective
    status: str
    outer_iters: int
    max_kkt_residual: float = 0.0
    path: str = "cold"            # which start produced the result


# ---------------------------------------------------------------------------
# concave under-estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineBound:
    """Affine lower bound C*(2/x_i - x/x_i^2) on the convex map x -> C/x."""

    const: np.ndarray
    slope: np.ndarray

    def value(self, x):
        return self.const + self.slope * np.asarray(x)


def downlink_time_bound(expansion_r_d: np.ndarray, cfg: SystemConfig) -> AffineBound:
    """Lower bound on the per-UE download time S_d / r, tight at the expansion."""
    r0 = np.asarray(expansion_r_d, float)
    if (r0 <= 0).any():
        raise ValueError("expansion rates must be strictly positive")
    return AffineBound(const=2.0 * cfg.S_d_bits / r0, slope=-cfg.S_d_bits / r0**2)


def compute_time_bound(expansion_f: np.ndarray, cfg: SystemConfig) -> AffineBound:
    """Lower bound on the per-UE compute time L*D*c / f, tight at the expansion."""
    f0 = np.asarray(expansion_f, float)
    if (f0 <= 0).any():
        raise ValueError("expansion frequencies must be strictly positive")
    cycles = cfg.compute_cycles
    return AffineBound(const=2.0 * cycles / f0, slope=-cycles / f0**2)


@dataclass(frozen=True)
class DownlinkRateBound:
    """Concave lower bound on the downlink rate as a function of v.

    value(v) = kappa * (c0 + c_lin * S(v) - mu * (S(v)^2 + Q(v))) per UE,
    where S is the linear signal amplitude in the UE's own group column and
    Q = sum(quad_diag * v^2) + 1 is the convex interference quadratic.
    """

    kappa: float                 # pre-log factor * B / ln 2  (bps)
    group: np.ndarray            # (U,) group of each UE
    lin_coef: np.ndarray         # (U, M) coefficients of S(v) on v[:, group]
    quad_diag: np.ndarray        # (U, M, N) diagonal of Q
    c0: np.ndarray               # (U,)
    c_lin: np.ndarray            # (U,)
    mu: np.ndarray               # (U,)
    exp_lin: np.ndarray          # (U,) S at the expansion point
    exp_quad: np.ndarray         # (U,) Q at the expansion point

    def signal(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("um,um->u", self.lin_coef, v[:, self.group].T)

    def interference(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("umn,mn->u", self.quad_diag, v**2) + 1.0

    def value(self, v: np.ndarray) -> np.ndarray:
        s = self.signal(v)
        q = self.interference(v)
        return self.kappa * (self.c0 + self.c_lin * s - self.mu * (s**2 + q))


@dataclass(frozen=True)
class UplinkRateBound:
    """Concave lower bound on the uplink rate as a function of u (per UE)."""

    kappa: float
    lin_coef: np.ndarray         # (U,) coefficient of the UE's own u entry
    quad_diag: np.ndarray        # (U, U) diagonal of the interference quadratic
    quad_const: np.ndarray       # (U,) constant term of the quadratic
    c0: np.ndarray
    c_lin: np.ndarray
    mu: np.ndarray
    exp_lin: np.ndarray
    exp_quad: np.ndarray

    def signal(self, u: np.ndarray) -> np.ndarray:
        return self.lin_coef * u

    def interference(self, u: np.ndarray) -> np.ndarray:
        return self.quad_diag @ u**2 + self.quad_const

    def value(self, u: np.ndarray) -> np.ndarray:
        s = self.signal(u)
        q = self.interference(u)
        return self.kappa * (self.c0 + self.c_lin * s - self.mu * (s**2 + q))


def _bound_constants(exp_lin, exp_quad):
    gamma = exp_lin**2 / exp_quad
    c0 = np.log1p(gamma) - gamma
    c_lin = 2.0 * exp_lin / exp_quad
    mu = exp_lin**2 / (exp_quad * (exp_lin**2 + exp_quad))
    return c0, c_lin, mu


def downlink_rate_bound(expansion_v: np.ndarray, stats: ChannelStats,
                        cfg: SystemConfig) -> DownlinkRateBound:
    sigma_hat = np.sqrt(stats.sigma_hat_sq)
    s_hat_group = sigma_hat.reshape(cfg.M, cfg.N, cfg.K).sum(axis=2)   # (M, N)
    group = np.repeat(np.arange(cfg.N), cfg.K)
    # S_u(v) = sum_m lin_coef[u, m] * v[m, group_u]
    lin_coef = (np.sqrt(cfg.rho_d) * sigma_hat * s_hat_group[:, group]).T  # (U, M)
    # Q_u(v) = sum_{m,n} rho_d * beta[m,u] * s_hat_group[m,n]^2 * v[m,n]^2 + 1
    quad_diag = cfg.rho_d * stats.beta.T[:, :, None] * (s_hat_group**2)[None, :, :]

    exp_lin = np.einsum("um,um->u", lin_coef, expansion_v[:, group].T)
    exp_quad = np.einsum("umn,mn->u", quad_diag, expansion_v**2) + 1.0
    if (exp_lin <= 0).any():
        raise DegenerateExpansionError(
            "zero downlink signal at the expansion point; re-initialize"
        )
    c0, c_lin, mu = _bound_constants(exp_lin, exp_quad)
    kappa = (cfg.tau_c - cfg.tau_cp) / cfg.tau_c * cfg.B_hz / math.log(2.0)
    return DownlinkRateBound(kappa=kappa, group=group, lin_coef=lin_coef,
                             quad_diag=quad_diag, c0=c0, c_lin=c_lin, mu=mu,
                             exp_lin=exp_lin, exp_quad=exp_quad)


def uplink_rate_bound(expansion_u: np.ndarray, stats: ChannelStats,
                      cfg: SystemConfig) -> UplinkRateBound:
    total_var = stats.sigma_bar_sq.sum(axis=0)                 # (U,)
    lin_coef = np.sqrt(cfg.rho_u) * total_var
    quad_diag = cfg.rho_u * (stats.sigma_bar_sq.T @ stats.beta)  # (u, u')
    quad_const = total_var

    exp_lin = lin_coef * expansion_u
    exp_quad = quad_diag @ expansion_u**2 + quad_const
    if (exp_lin <= 0).any():
        raise DegenerateExpansionError(
            "zero uplink signal at the expansion point; re-initialize"
        )
    c0, c_lin, mu = _bound_constants(exp_lin, exp_quad)
    kappa = (cfg.tau_c - cfg.tau_dp) / cfg.tau_c * cfg.B_hz / math.log(2.0)
    return UplinkRateBound(kappa=kappa, lin_coef=lin_coef, quad_diag=quad_diag,
                           quad_const=quad_const, c0=c0, c_lin=c_lin, mu=mu,
                           exp_lin=exp_lin, exp_quad=exp_quad)


# ---------------------------------------------------------------------------
# feasible starting points
# ---------------------------------------------------------------------------

def equal_power_allocation(stats: ChannelStats, cfg: SystemConfig) -> Allocation:
    """Equal power share per group (per-AP constraint tight), full UE power,
    frequencies from the closed-form sync rule."""
    eta = 1.0 / (cfg.N * power_weights(stats, cfg))
    zeta = np.ones(cfg.n_ues)
    rd = rate_downlink(stats, eta, cfg)
    f = sync_frequencies(cfg.S_d_bits / rd, cfg)
    return Allocation(eta=eta, zeta=zeta, f=f)


def sync_frequencies(t_d: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Largest frequencies keeping every UE's compute window covering the gap
    to the slowest download: f = min(f_max, cycles / max(gap, floor))."""
    gap = t_d.max() - t_d
    return np.minimum(cfg.f_max, cfg.compute_cycles / np.maximum(gap, SYNC_GAP_FLOOR_S))


def iterate_from_allocation(alloc: Allocation, stats: ChannelStats,
                            cfg: SystemConfig) -> ScaIterate:
    """Lift a sync-feasible allocation into the epigraph variable space with
    rate variables set to the exact achievable rates."""
    rd = rate_downlink(stats, alloc.eta, cfg)
    ru = rate_uplink(stats, alloc.zeta, cfg)
    d = delays(rd, ru, alloc.f, cfg)
    return ScaIterate(
        v=np.sqrt(alloc.eta), u=np.sqrt(alloc.zeta), f=alloc.f.copy(),
        r_d=rd, r_u=ru, a=d.iteration_time, b=float(d.t_d.max()),
        q=float((d.t_d + d.t_c).min()), q1=d.t_d.copy(), q2=d.t_c.copy(),
    )


def initial_point(stats: ChannelStats, cfg: SystemConfig) -> ScaIterate:
    """Deterministic feasible starting point (sync holds by construction)."""
    return iterate_from_allocation(equal_power_allocation(stats, cfg), stats, cfg)


def random_initial_point(stats: ChannelStats, cfg: SystemConfig,
                         seed: int) -> ScaIterate:
    """Seeded random feasible start, for robustness studies.

    Downlink powers are a random share of the per-AP budget, uplink powers
    uniform in (0, 1]; the frequency rule then restores the upload window,
    so feasibility holds by construction.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CA]))
    w = power_weights(stats, cfg)
    shares = rng.uniform(0.1, 1.0, (cfg.M, cfg.N))
    shares *= rng.uniform(0.2, 1.0, (cfg.M, 1)) / shares.sum(axis=1, keepdims=True)
    eta = shares / w
    zeta = rng.uniform(0.1, 1.0, cfg.n_ues)
    rd = rate_downlink(stats, eta, cfg)
    f = sync_frequencies(cfg.S_d_bits / rd, cfg)
    return iterate_from_allocation(Allocation(eta=eta, zeta=zeta, f=f), stats, cfg)


# ---------------------------------------------------------------------------
# convex subproblem assembly
# ---------------------------------------------------------------------------

def _v_column_scale(stats: ChannelStats, cfg: SystemConfig) -> np.ndarray:
    """Per-(m, n) scale making the equal-share amplitude map to 1."""
    return 1.0 / np.sqrt(cfg.N * power_weights(stats, cfg))


def assemble_subproblem(expansion: ScaIterate, stats: ChannelStats,
                        cfg: SystemConfig, fixed_f: Optional[np.ndarray] = None,
                        with_sync: bool = True) -> conic.ConicProgram:
    """Build the convex (SOCP) inner problem around the expansion point.

    ``fixed_f`` freezes the frequencies at the given values (they leave the
    variable set entirely).  ``with_sync`` drops the upload-window chain,
    which yields a relaxation used only by tests.
    """
    M, N, U = cfg.M, cfg.N, cfg.n_ues
    dlb = downlink_rate_bound(expansion.v, stats, cfg)
    ulb = uplink_rate_bound(np.maximum(expansion.u, 1e-9), stats, cfg)
    h1 = downlink_time_bound(expansion.r_d, cfg)
    h2 = None if fixed_f is not None else compute_time_bound(expansion.f, cfg)

    vscale = _v_column_scale(stats, cfg)        # (M, N)
    s_d = cfg.S_d_bits / RATE_SCALE             # Mbit
    s_u = cfg.S_u_bits / RATE_SCALE
    cycles = cfg.compute_cycles / FREQ_SCALE    # Gcycles
    group = dlb.group

    bld = conic.ProgramBuilder()
    v_idx = bld.add_var("v", M * N).reshape(M, N)
    sv_idx = bld.add_var("sv", M * N).reshape(M, N)   # sv >= v^2 (scaled units)
    u_idx = bld.add_var("u", U)
    su_idx = bld.add_var("su", U)                     # su >= u^2
    f_idx = None if fixed_f is not None else bld.add_var("f", U)
    rd_idx = bld.add_var("r_d", U)
    ru_idx = bld.add_var("r_u", U)
    a_idx = bld.add_var("a", 1)[0]
    if with_sync:
        b_idx = bld.add_var("b", 1)[0]
        q_idx = bld.add_var("q", 1)[0]
        q1_idx = bld.add_var("q1", U)
        q2_idx = bld.add_var("q2", U)
    wdl_idx = bld.add_var("w_dl", U)
    wcp_idx = None if fixed_f is not None else bld.add_var("w_cp", U)
    wul_idx = bld.add_var("w_ul", U)
    bld.set_cost(a_idx, 1.0)

    au = np.arange(U)

    # ---- simple bounds -------------------------------------------------
    bld.add_group(conic.INEQ, (np.arange(M * N), v_idx.ravel()),
                  -np.ones(M * N), np.zeros(M * N), "downlink amplitude >= 0")
    bld.add_group(
        conic.INEQ,
        (np.concatenate([au, U + au]), np.concatenate([u_idx, u_idx])),
        np.concatenate([-np.ones(U), np.ones(U)]),
        np.concatenate([np.zeros(U), np.ones(U)]),
        "uplink amplitude in [0, 1]",
    )
    if f_idx is not None:
        bld.add_group(
            conic.INEQ,
            (np.concatenate([au, U + au]), np.concatenate([f_idx, f_idx])),
            np.concatenate([-np.ones(U), np.ones(U)]),
            np.concatenate([np.zeros(U), np.full(U, cfg.f_max / FREQ_SCALE)]),
            "frequency in [0, f_max]",
        )
    bld.add_group(
        conic.INEQ,
        (np.concatenate([au, U + au]), np.concatenate([rd_idx, ru_idx])),
        -np.ones(2 * U), np.zeros(2 * U), "rate variables >= 0",
    )

    # ---- total-delay epigraph: w_dl + w_cp + w_ul <= a ------------------
    if fixed_f is None:
        rows = np.concatenate([au] * 4)
        cols = np.concatenate([wdl_idx, wcp_idx, wul_idx, np.full(U, a_idx)])
        vals = np.concatenate([np.ones(3 * U), -np.ones(U)])
        rhs = np.zeros(U)
    else:
        rows = np.concatenate([au] * 3)
        cols = np.concatenate([wdl_idx, wul_idx, np.full(U, a_idx)])
        vals = np.concatenate([np.ones(2 * U), -np.ones(U)])
        rhs = -cycles / (np.asarray(fixed_f) / FREQ_SCALE)
    bld.add_group(conic.INEQ, (rows, cols), vals, rhs, "per-UE total delay <= a")

    if with_sync:
        # b <= q
        bld.add_group(conic.INEQ, ([0, 0], [b_idx, q_idx]), [1.0, -1.0], [0.0],
                      "download window precedes upload window")
        # q <= q1 + q2
        rows = np.concatenate([au] * 3)
        cols = np.concatenate([np.full(U, q_idx), q1_idx, q2_idx])
        vals = np.concatenate([np.ones(U), -np.ones(U), -np.ones(U)])
        bld.add_group(conic.INEQ, (rows, cols), vals, np.zeros(U),
                      "upload start covered by download + compute")
        # q1, q2 >= 0
        rows = np.concatenate([au, U + au])
        cols = np.concatenate([q1_idx, q2_idx])
        bld.add_group(conic.INEQ, (rows, cols), -np.ones(2 * U), np.zeros(2 * U),
                      "window parts >= 0")
        # q1 <= linearized download time (in Mbit/Mbps units)
        h1c = h1.const
        h1s = h1.slope * RATE_SCALE   # d(time)/d(r_program)
        rows = np.concatenate([au, au])
        cols = np.concatenate([q1_idx, rd_idx])
        vals = np.concatenate([np.ones(U), -h1s])
        bld.add_group(conic.INEQ, (rows, cols), vals, h1c,
                      "download-time floor (linearized)")
        # q2 <= linearized compute time (or its frozen value)
        if fixed_f is None:
            h2c = h2.const
            h2s = h2.slope * FREQ_SCALE
            rows = np.concatenate([au, au])
            cols = np.concatenate([q2_idx, f_idx])
            vals = np.concatenate([np.ones(U), -h2s])
            bld.add_group(conic.INEQ, (rows, cols), vals, h2c,
                          "compute-time floor (linearized)")
        else:
            bld.add_group(conic.INEQ, (au, q2_idx), np.ones(U),
                          cycles / (np.asarray(fixed_f) / FREQ_SCALE),
                          "compute-time floor (frozen f)")

    # ---- hyperbolic (rotated-cone) reciprocal rows ----------------------
    def hyperbolic(w_ids, x_ids, const, tag):
        nc = len(w_ids)
        rows = np.concatenate([3 * au[:nc], 3 * au[:nc] + 1])
        cols = np.concatenate([w_ids, x_ids])
        vals = -np.ones(2 * nc)
        rhs = np.zeros(3 * nc)
        rhs[2::3] = np.sqrt(2.0 * const)
        bld.add_group(conic.RSOC, (rows, cols), vals, rhs, tag,
                      dims=(3,) * nc, n_rows=3 * nc)

    hyperbolic(wdl_idx, rd_idx, s_d, "download time w*r >= S_d")
    if fixed_f is None:
        hyperbolic(wcp_idx, f_idx, cycles, "compute time w*f >= cycles")
    hyperbolic(wul_idx, ru_idx, s_u, "upload time w*r >= S_u")
    if with_sync:
        # latest-download bound b * r_d >= S_d hooks the cone onto b directly
        hyperbolic(np.full(U, b_idx), rd_idx, s_d, "window download time b*r >= S_d")

    # ---- squared-amplitude lifts (sv >= v^2, su >= u^2) ------------------
    def square_lift(s_ids, x_ids, tag):
        nc = len(s_ids)
        k = np.arange(nc)
        rows = np.concatenate([3 * k, 3 * k + 1, 3 * k + 2])
        cols = np.concatenate([s_ids, x_ids, s_ids])
        vals = np.concatenate([-np.ones(nc), -2.0 * np.ones(nc), -np.ones(nc)])
        rhs = np.zeros(3 * nc)
        rhs[0::3] = 1.0
        rhs[2::3] = -1.0
        bld.add_group(conic.SOC, (rows, cols), vals, rhs, tag,
                      dims=(3,) * nc, n_rows=3 * nc)

    square_lift(sv_idx.ravel(), v_idx.ravel(), "squared downlink amplitudes")
    square_lift(su_idx, u_idx, "squared uplink amplitudes")

    # ---- per-AP power (linear in the squares) ----------------------------
    # sum_n weights*v^2 = sum_n sv/N <= 1 in scaled units
    rows = np.repeat(np.arange(M), N)
    bld.add_group(conic.INEQ, (rows, sv_idx.ravel()),
                  np.full(M * N, 1.0 / N), np.ones(M), "per-AP power")

    # ---- linearized rate cones ------------------------------------------
    kap_d = dlb.kappa / RATE_SCALE
    kap_u = ulb.kappa / RATE_SCALE

    # downlink: signal^2/Q_i <= t' with t' affine in (v, sv, r_d)
    rhs = np.zeros(3 * U)
    rows2, cols2, vals2 = [], [], []
    for uu in range(U):
        base = 3 * uu
        qi = dlb.exp_quad[uu]
        denom = kap_d * dlb.mu[uu] * qi
        t_const = (kap_d * dlb.c0[uu] / denom) - 1.0 / qi
        lin_v = kap_d * dlb.c_lin[uu] * dlb.lin_coef[uu] * vscale[:, group[uu]] / denom
        lin_sv = (dlb.quad_diag[uu] * vscale**2 / qi).ravel()
        vcols = v_idx[:, group[uu]].tolist()
        svcols = sv_idx.ravel().tolist()
        for rr, shift in ((base, 1.0), (base + 2, -1.0)):
            rows2.extend([rr] * (M + M * N + 1))
            cols2.extend(vcols + svcols + [rd_idx[uu]])
            vals2.extend((-lin_v).tolist() + lin_sv.tolist() + [1.0 / denom])
            rhs[rr] = t_const + shift
        coef = 2.0 * dlb.lin_coef[uu] * vscale[:, group[uu]] / math.sqrt(qi)
        rows2.extend([base + 1] * M)
        cols2.extend(vcols)
        vals2.extend((-coef).tolist())
    bld.add_group(conic.SOC, (rows2, cols2), vals2, rhs,
                  "downlink rate lower bound (linearized)",
                  dims=(3,) * U, n_rows=3 * U)

    # uplink: signal^2/Xi_i <= t'' with t'' affine in (u, su, r_u)
    rhs = np.zeros(3 * U)
    rows2, cols2, vals2 = [], [], []
    for uu in range(U):
        base = 3 * uu
        xi = ulb.exp_quad[uu]
        denom = kap_u * ulb.mu[uu] * xi
        t_const = (kap_u * ulb.c0[uu] / denom) - ulb.quad_const[uu] / xi
        lin_u = kap_u * ulb.c_lin[uu] * ulb.lin_coef[uu] / denom
        lin_su = ulb.quad_diag[uu] / xi
        for rr, shift in ((base, 1.0), (base + 2, -1.0)):
            rows2.extend([rr] * (U + 2))
            cols2.extend([u_idx[uu]] + su_idx.tolist() + [ru_idx[uu]])
            vals2.extend([-lin_u] + lin_su.tolist() + [1.0 / denom])
            rhs[rr] = t_const + shift
        rows2.append(base + 1)
        cols2.append(u_idx[uu])
        vals2.append(-2.0 * ulb.lin_coef[uu] / math.sqrt(xi))
    bld.add_group(conic.SOC, (rows2, cols2), vals2, rhs,
                  "uplink rate lower bound (linearized)",
                  dims=(3,) * U, n_rows=3 * U)

    prog = bld.build()

    # fold per-UE expansion magnitudes into the columns so the subproblem
    # solution sits near the all-ones vector (keeps dual variables and the
    # KKT system well scaled across very uneven UEs)
    scale = np.ones(prog.n)
    t_d0 = cfg.S_d_bits / expansion.r_d
    t_u0 = cfg.S_u_bits / expansion.r_u
    t_c0 = cfg.compute_cycles / expansion.f
    scale[prog.var("r_d")] = expansion.r_d / RATE_SCALE
    scale[prog.var("r_u")] = expansion.r_u / RATE_SCALE
    if fixed_f is None:
        scale[prog.var("f")] = expansion.f / FREQ_SCALE
        scale[prog.var("w_cp")] = t_c0
    scale[prog.var("w_dl")] = t_d0
    scale[prog.var("w_ul")] = t_u0
    scale[prog.var("a")] = expansion.a
    if with_sync:
        scale[prog.var("b")] = max(expansion.b, 1e-12)
        scale[prog.var("q")] = max(expansion.q, 1e-12)
        scale[prog.var("q1")] = t_d0
        scale[prog.var("q2")] = np.maximum(t_c0, 1e-12)
    for g in prog.groups:
        g.A.data *= scale[g.A.indices]
    prog.c *= scale
    prog.col_scale = scale
    return prog


def expansion_vector(prog: conic.ConicProgram, it: ScaIterate,
                     stats: ChannelStats, cfg: SystemConfig,
                     fixed_f: Optional[np.ndarray] = None) -> np.ndarray:
    """Embed an iterate into the program's variable vector (auxiliaries set
    to their defining expressions); used to check expansion-point feasibility."""
    x = np.zeros(prog.n)
    vscale = _v_column_scale(stats, cfg)
    x[prog.var("v")] = (it.v / vscale).ravel()
    x[prog.var("sv")] = (it.v / vscale).ravel() ** 2
    x[prog.var("u")] = it.u
    x[prog.var("su")] = it.u**2
    if fixed_f is None:
        x[prog.var("f")] = it.f / FREQ_SCALE
    x[prog.var("r_d")] = it.r_d / RATE_SCALE
    x[prog.var("r_u")] = it.r_u / RATE_SCALE
    x[prog.var("a")] = it.a
    t_d = cfg.S_d_bits / it.r_d
    t_u = cfg.S_u_bits / it.r_u
    x[prog.var("w_dl")] = t_d
    if fixed_f is None:
        x[prog.var("w_cp")] = cfg.compute_cycles / it.f
    x[prog.var("w_ul")] = t_u
    if "b" in prog.variables:
        x[prog.var("b")] = it.b
        x[prog.var("q")] = it.q
        x[prog.var("q1")] = it.q1
        x[prog.var("q2")] = it.q2
    if prog.col_scale is not None:
        x /= prog.col_scale
    return x


def _extract_iterate(prog: conic.ConicProgram, sol: conic.ConicSolution,
                     stats: ChannelStats, cfg: SystemConfig,
                     fixed_f: Optional[np.ndarray]) -> ScaIterate:
    x = sol.x if prog.col_scale is None else sol.x * prog.col_scale
    vscale = _v_column_scale(stats, cfg)
    v = x[prog.var("v")].reshape(cfg.M, cfg.N) * vscale
    u = x[prog.var("u")]
    # round tiny negative amplitudes from solver tolerance up to zero
    v = np.where(v > 0.0, v, 0.0)
    u = np.clip(u, 0.0, 1.0)
    f = fixed_f.copy() if fixed_f is not None else x[prog.var("f")] * FREQ_SCALE
    return ScaIterate(
        v=v, u=u, f=f,
        r_d=x[prog.var("r_d")] * RATE_SCALE,
        r_u=x[prog.var("r_u")] * RATE_SCALE,
        a=float(x[prog.var("a")][0]),
        b=float(x[prog.var("b")][0]),
        q=float(x[prog.var("q")][0]),
        q1=x[prog.var("q1")].copy(),
        q2=x[prog.var("q2")].copy(),
    )


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def _sca_loop(start: ScaIterate, stats: ChannelStats, cfg: SystemConfig,
              opts: ScaOptions, fixed_f: Optional[np.ndarray] = None):
    """Iterate subproblems from a feasible start.

    Returns (final iterate, trace, status, max KKT residual).  A step is
    only accepted if it does not increase the epigraph objective, so the
    trace is non-increasing by construction.
    """
    eps = opts.epsilon if opts.epsilon is not None else cfg.epsilon
    current = start
    trace = [start.a]
    status = MAX_ITERS
    kkt_max = 0.0
    for _ in range(opts.max_outer_iters):
        prog = assemble_subproblem(current, stats, cfg, fixed_f=fixed_f)
        sol = opts.solve_subproblem(prog)
        res = conic.kkt_residuals(prog, sol)
        # rare hard subproblems (typically with degenerate lifted squares):
        # walk a ladder of alternative solver settings, keep the cleanest
        for retry_solver in (
                replace(opts.solver, step_frac=0.9),
                replace(opts.solver, reg=max(opts.solver.reg * 1e3, 1e-7)),
                replace(opts.solver, step_frac=0.9,
                        reg=max(opts.solver.reg * 1e3, 1e-7)),
                replace(opts.solver, init="ls", step_frac=0.95,
                        reg=max(opts.solver.reg * 1e3, 1e-7)),
        ):
            if sol.status == conic.OPTIMAL and max(res.values()) <= 5e-8:
                break
            sol2 = replace(opts, solver=retry_solver).solve_subproblem(prog)
            res2 = conic.kkt_residuals(prog, sol2)
            better_status = (sol2.status == conic.OPTIMAL,
                             sol.status == conic.OPTIMAL)
            if max(res2.values()) < max(res.values()) and \
                    better_status[0] >= better_status[1]:
                sol, res = sol2, res2
        if sol.status == conic.INFEASIBLE:
            status = SUBPROBLEM_INFEASIBLE
            break
        if sol.status not in (conic.OPTIMAL,):
            # accept a mildly inaccurate solve, otherwise stop at the
            # current (feasible) iterate
            if not (sol.pres <= 1e-6 and sol.rel_gap <= 1e-6):
                status = CONVERGED if len(trace) > 1 else SUBPROBLEM_INFEASIBLE
                break
        kkt_max = max(kkt_max, *res.values())
        new = _extract_iterate(prog, sol, stats, cfg, fixed_f)
        prev_a = trace[-1]
        if new.a > prev_a + 1e-9 * (1.0 + abs(prev_a)):
            status = CONVERGED  # numerical floor reached; keep previous point
            break
        trace.append(new.a)
        current = new
        if abs(new.a - prev_a) <= eps * (1.0 + abs(prev_a)):
            status = CONVERGED
            break
    return current, trace, status, kkt_max


def _finalize(it: ScaIterate, stats: ChannelStats, cfg: SystemConfig):
    """Map back to (eta, zeta, f), restore exact upload-window feasibility by
    the closed-form frequency rule (never increases any UE's total delay
    beyond the epigraph objective), and recompute the true iteration time."""
    eta = it.v**2
    zeta = np.clip(it.u**2, 0.0, 1.0)
    rd = rate_downlink(stats, eta, cfg)
    f = np.minimum(it.f, sync_frequencies(cfg.S_d_bits / rd, cfg))
    alloc = Allocation(eta=eta, zeta=zeta, f=f)
    ru = rate_uplink(stats, zeta, cfg)
    d = delays(rd, ru, f, cfg)
    return alloc, d.iteration_time


def solve(stats: ChannelStats, cfg: SystemConfig,
          options: Optional[ScaOptions] = None,
          warm_from: Optional[Allocation] = None) -> ScaResult:
    """Joint allocation of downlink power, uplink power and CPU frequency.

    Runs the SCA from the deterministic equal-share start and, when
    ``options.warm_start`` is set, also from the two-stage baseline solution,
    returning the better of the two results (which makes the joint scheme
    never worse than that baseline).  ``warm_from`` supplies a precomputed
    baseline allocation so callers that already ran it avoid the rework.
    """
    opts = options or ScaOptions()
    runs = []

    cold_final, cold_trace, cold_status, cold_kkt = _sca_loop(
        initial_point(stats, cfg), stats, cfg, opts)
    runs.append(("cold", cold_final, cold_trace, cold_status, cold_kkt))

    if opts.warm_start:
        if warm_from is None:
            from .baselines import separate_opt_cf

            warm_from = separate_opt_cf(
                stats, cfg, options=replace(opts, warm_start=False)).allocation
        warm_start_it = iterate_from_allocation(warm_from, stats, cfg)
        warm_final, warm_trace, warm_status, warm_kkt = _sca_loop(
            warm_start_it, stats, cfg, opts)
        runs.append(("warm", warm_final, warm_trace, warm_status, warm_kkt))

    results = []
    for path, final, trace, status, kkt in runs:
        alloc, objective = _finalize(final, stats, cfg)
        results.append(ScaResult(
            allocation=alloc, objective_s=objective, trace=trace,
            status=status, outer_iters=len(trace) - 1,
            max_kkt_residual=kkt, path=path,
        ))
    return min(results, key=lambda r: r.objective_s)
