"""Seeded Monte-Carlo experiment driver: drops, scheme comparison, emission."""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import baselines, sca
from .baselines import SCHEME_JOINT_CF, SCHEME_JOINT_COLOCATED, SCHEME_SEPARATE_CF, SCHEMES
from .config import SystemConfig
from .network import CELL_FREE, COLOCATED, channel_stats, generate_topology

CSV_HEADER = "drop_id,scheme,M,K,N,seed,iteration_time_s,sca_outer_iters,status,wall_ms"


@dataclass
class ExperimentSpec:
    sweep_variable: str                  # "M" or "K"
    sweep_values: List[int]
    base: SystemConfig
    schemes: List[str] = field(default_factory=lambda: list(SCHEMES))
    drops: int = 50
    master_seed: int = 1
    sca_options: Optional[sca.ScaOptions] = None
    wall_times: bool = False             # off by default: byte-reproducible CSVs

    def validate(self) -> None:
        if self.sweep_variable not in ("M", "K"):
            raise ValueError("sweep variable must be 'M' or 'K'")
        if not self.sweep_values or min(self.sweep_values) < 1:
            raise ValueError("sweep values must be positive")
        if self.drops < 1:
            raise ValueError("drops must be >= 1")
        unknown = set(self.schemes) - set(SCHEMES)
        if not self.schemes or unknown:
            raise ValueError(f"schemes must be a non-empty subset of {SCHEMES}")


@dataclass(frozen=True)
class ResultRow:
    drop_id: int
    scheme: str
    M: int
    K: int
    N: int
    seed: int
    iteration_time_s: float
    sca_outer_iters: int
    status: str
    wall_ms: int

    def csv_line(self) -> str:
        return (f"{self.drop_id},{self.scheme},{self.M},{self.K},{self.N},"
                f"{self.seed},{self.iteration_time_s!r},{self.sca_outer_iters},"
                f"{self.status},{self.wall_ms}")


def drop_seed(master_seed: int, sweep_value: int, drop_id: int) -> int:
    """Stable 63-bit per-drop seed; independent of sharding or scan order."""
    text = f"{master_seed}:{sweep_value}:{drop_id}".encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big") >> 1


def _config_for(spec: ExperimentSpec, sweep_value: int) -> SystemConfig:
    return spec.base.with_(**{spec.sweep_variable: int(sweep_value)})


def _run_drop(args) -> List[ResultRow]:
    spec, sweep_value, drop_id = args
    cfg = _config_for(spec, sweep_value)
    seed = drop_seed(spec.master_seed, sweep_value, drop_id)
    opts = spec.sca_options or sca.ScaOptions()

    # channel statistics are built once per drop and shared by the cell-free
    # schemes; the colocated scheme reuses the same drop seed (same UE draw)
    topo = generate_topology(cfg, seed, layout=CELL_FREE)
    stats = channel_stats(topo, cfg, seed)

    rows = []

    def record(scheme, result, wall_s):
        rows.append(ResultRow(
            drop_id=drop_id, scheme=scheme, M=cfg.M, K=cfg.K, N=cfg.N,
            seed=seed, iteration_time_s=result.objective_s,
            sca_outer_iters=result.outer_iters, status=result.status,
            wall_ms=int(wall_s * 1000) if spec.wall_times else 0,
        ))

    def error_row(scheme):
        rows.append(ResultRow(
            drop_id=drop_id, scheme=scheme, M=cfg.M, K=cfg.K, N=cfg.N,
            seed=seed, iteration_time_s=float("nan"), sca_outer_iters=0,
            status="error", wall_ms=0,
        ))

    def attempt(scheme, fn):
        # a failed drop is reported in its status column, never aborts the sweep
        t0 = time.perf_counter()
        try:
            record(scheme, fn(), time.perf_counter() - t0)
        except Exception:
            error_row(scheme)

    separate = None
    if SCHEME_SEPARATE_CF in spec.schemes or SCHEME_JOINT_CF in spec.schemes:
        t0 = time.perf_counter()
        try:
            separate = baselines.separate_opt_cf(stats, cfg, options=opts)
        except Exception:
            separate = None
        sep_wall = time.perf_counter() - t0
        if SCHEME_SEPARATE_CF in spec.schemes:
            if separate is not None:
                record(SCHEME_SEPARATE_CF, separate, sep_wall)
            else:
                error_row(SCHEME_SEPARATE_CF)
    if SCHEME_JOINT_CF in spec.schemes:
        warm = separate.allocation if separate is not None else None
        attempt(SCHEME_JOINT_CF,
                lambda: sca.solve(stats, cfg, options=opts, warm_from=warm))
    if SCHEME_JOINT_COLOCATED in spec.schemes:
        def colocated():
            topo_co = generate_topology(cfg, seed, layout=COLOCATED)
            stats_co = channel_stats(topo_co, cfg, seed)
            return baselines.joint_opt_colocated(stats_co, cfg, options=opts)

        attempt(SCHEME_JOINT_COLOCATED, colocated)
    return rows


def run(spec: ExperimentSpec, workers: int = 1):
    """Execute the sweep; returns (rows, summary).

    Rows are ordered by (sweep value, drop_id, scheme) regardless of worker
    scheduling, so identical seeds give identical output.
    """
    spec.validate()
    tasks = [(spec, v, d) for v in spec.sweep_values for d in range(spec.drops)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_drop, tasks, chunksize=1))
    else:
        chunks = [_run_drop(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r.M if spec.sweep_variable == "M" else r.K,
                             r.drop_id, r.scheme))
    return rows, summarize(spec, rows)


def summarize(spec: ExperimentSpec, rows: List[ResultRow]) -> dict:
    """Per-sweep-point statistics and pairwise percent reductions."""
    sweep_key = (lambda r: r.M) if spec.sweep_variable == "M" else (lambda r: r.K)
    values = sorted({sweep_key(r) for r in rows})
    out = {"sweep_variable": spec.sweep_variable, "points": []}
    for v in values:
        point = {"value": v, "schemes": {}, "reductions": {}}
        times = {}
        for scheme in spec.schemes:
            ts = np.array([r.iteration_time_s for r in rows
                           if sweep_key(r) == v and r.scheme == scheme])
            if len(ts) == 0:
                continue
            times[scheme] = ts
            point["schemes"][scheme] = {
                "median_s": float(np.median(ts)),
                "mean_s": float(ts.mean()),
                "drops": int(len(ts)),
            }
        for a in times:
            for b in times:
                if a != b:
                    med_a = np.median(times[a])
                    med_b = np.median(times[b])
                    pct = (1.0 - med_a / med_b) * 100.0
                    point["reductions"][f"{a}_vs_{b}"] = float(pct)
        # per-drop paired reductions of the joint scheme against the baseline
        if SCHEME_JOINT_CF in times and SCHEME_SEPARATE_CF in times:
            ja = times[SCHEME_JOINT_CF]
            se = times[SCHEME_SEPARATE_CF]
            paired = (1.0 - ja / se) * 100.0
            point["paired_reduction_max_pct"] = float(paired.max())
            point["paired_reduction_min_pct"] = float(paired.min())
        out["points"].append(point)
    return out


def emit(rows: List[ResultRow], summary: dict, out_dir: str,
         figure_tag: str = "sweep") -> Dict[str, str]:
    """Write the raw CSV, a plain-text summary, and per-figure plot data.

    Returns the written file paths.  Fails before writing anything when the
    result set is empty.
    """
    if not rows:
        raise ValueError("nothing to emit: empty result set")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    raw = os.path.join(out_dir, f"{figure_tag}_results.csv")
    with open(raw, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(r.csv_line() + "\n")
    paths["raw"] = raw

    summary_path = os.path.join(out_dir, f"{figure_tag}_summary.txt")
    with open(summary_path, "w") as fh:
        fh.write(f"sweep_variable {summary['sweep_variable']}\n")
        for point in summary["points"]:
            fh.write(f"\n{summary['sweep_variable']} = {point['value']}\n")
            for scheme, st in sorted(point["schemes"].items()):
                fh.write(f"  {scheme}: median_s {st['median_s']!r} "
                         f"mean_s {st['mean_s']!r} drops {st['drops']}\n")
            for pair, pct in sorted(point["reductions"].items()):
                fh.write(f"  reduction {pair}: {pct!r}\n")
            if "paired_reduction_max_pct" in point:
                fh.write(f"  paired_reduction_max_pct "
                         f"{point['paired_reduction_max_pct']!r}\n")
    paths["summary"] = summary_path

    fig = os.path.join(out_dir, f"{figure_tag}_figure_data.csv")
    with open(fig, "w") as fh:
        fh.write("sweep_value,scheme,median_time_s\n")
        for point in summary["points"]:
            for scheme, st in sorted(point["schemes"].items()):
                fh.write(f"{point['value']},{scheme},{st['median_s']!r}\n")
    paths["figure"] = fig
    return paths


def figure_spec(figure: int, base: SystemConfig, drops: int = 50,
                master_seed: int = 1, schemes=None,
                sca_options=None) -> ExperimentSpec:
    """Presets reproducing the two reported comparisons."""
    schemes = list(schemes) if schemes else list(SCHEMES)
    if figure == 2:
        base = base.with_(K=8, N=3)
        return ExperimentSpec("M", [20, 40, 60, 80], base, schemes, drops,
                              master_seed, sca_options)
    if figure == 3:
        base = base.with_(M=80, N=3)
        return ExperimentSpec("K", [4, 6, 8, 10], base, schemes, drops,
                              master_seed, sca_options)
    raise ValueError("figure must be 2 or 3")
