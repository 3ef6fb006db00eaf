"""System-level configuration for the multi-group FL / cell-free MIMO simulator."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional


@dataclass(frozen=True)
class SystemConfig:
    """Scalar parameters of the network, the FL workload and the optimizer.

    Power/noise convention: channel gains produced by the network module are
    normalized by the noise power expressed in mW (i.e. beta_dB = PL_dB +
    shadowing_dB - noise_dbm), so ``rho_d``, ``rho_u``, ``rho_p`` must be
    given in mW.  Products rho*beta are then exactly the noise-normalized
    link powers that appear next to the "+1" terms of the SINR expressions.
    """

    M: int = 20                  # number of APs
    N: int = 3                   # number of FL groups
    K: int = 8                   # UEs per group (same for every group)
    D_km: float = 0.5            # side length of the square service area

    tau_c: int = 200             # coherence block length (samples)
    tau_cp: Optional[int] = None # downlink-phase pilot length; default N
    tau_dp: Optional[int] = None # uplink-phase pilot length; default N*K

    B_hz: float = 20e6           # bandwidth (not fixed by the model; configurable)
    noise_dbm: float = -92.0     # noise power
    rho_d: float = 1000.0        # max AP transmit power (mW)
    rho_u: float = 200.0         # max UE transmit power (mW)
    rho_p: float = 200.0         # pilot transmit power (mW)

    S_d_bits: float = 4e7        # global update size per group (5 MB decimal)
    S_u_bits: float = 4e7        # local update size per group
    L: int = 50                  # local computation rounds
    D_samples: float = 5e6       # local dataset size
    c_cycles: float = 20.0       # CPU cycles per sample
    f_max: float = 3e9           # max UE processing frequency (cycles/s)
    alpha_cpu: float = 2e-29     # CPU energy coefficient; recorded, not used

    min_ap_spacing_m: float = 50.0
    min_ue_ap_dist_m: float = 5.0  # clamp avoiding the path-loss singularity

    # log-distance path loss PL(dB) = pl_const_db - pl_slope_db*log10(d/1m),
    # i.i.d. log-normal shadowing
    pl_const_db: float = -30.5
    pl_slope_db: float = 36.7
    shadow_sigma_db: float = 4.0

    epsilon: float = 1e-3        # SCA relative-objective convergence threshold

    def __post_init__(self):
        if self.tau_cp is None:
            object.__setattr__(self, "tau_cp", self.N)
        if self.tau_dp is None:
            object.__setattr__(self, "tau_dp", self.N * self.K)
        self.validate()

    def validate(self) -> None:
        if min(self.M, self.N, self.K) < 1:
            raise ValueError("M, N, K must be positive")
        if self.tau_cp < self.N:
            raise ValueError(f"tau_cp={self.tau_cp} must be >= N={self.N}")
        if self.tau_dp < self.N * self.K:
            raise ValueError(f"tau_dp={self.tau_dp} must be >= N*K={self.N * self.K}")
        if not (self.tau_c > self.tau_cp and self.tau_c > self.tau_dp):
            raise ValueError("tau_c must exceed both pilot lengths")
        positives = {
            "D_km": self.D_km, "B_hz": self.B_hz, "rho_d": self.rho_d,
            "rho_u": self.rho_u, "rho_p": self.rho_p, "S_d_bits": self.S_d_bits,
            "S_u_bits": self.S_u_bits, "L": self.L, "D_samples": self.D_samples,
            "c_cycles": self.c_cycles, "f_max": self.f_max, "epsilon": self.epsilon,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")

    @property
    def n_ues(self) -> int:
        return self.N * self.K

    @property
    def compute_cycles(self) -> float:
        """Total CPU cycles of one local-update computation (L * D_n * c)."""
        return self.L * self.D_samples * self.c_cycles

    def with_(self, **kwargs) -> "SystemConfig":
        """Copy with replaced fields; pilot lengths re-derived unless given."""
        if "N" in kwargs or "K" in kwargs:
            kwargs.setdefault("tau_cp", None)
            kwargs.setdefault("tau_dp", None)
        return replace(self, **kwargs)
