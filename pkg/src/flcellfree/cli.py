"""Command-line batch driver for the scheme-comparison experiments."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import conic, experiment, sca
from .baselines import SCHEMES
from .config import SystemConfig
from .network import PlacementError

_INT_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)
               if f.type in ("int", "Optional[int]")}


def load_config(path: str) -> dict:
    """key = value lines mirroring SystemConfig field names; # comments."""
    overrides = {}
    valid = {f.name for f in dataclasses.fields(SystemConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown parameter {key!r}")
            overrides[key] = int(value) if key in _INT_FIELDS else float(value)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flcf-sim",
        description="Monte-Carlo comparison of iteration-time allocation "
                    "schemes for multi-group FL over cell-free massive MIMO",
    )
    p.add_argument("--config", help="key=value parameter file")
    p.add_argument("--figure", type=int, choices=(2, 3), default=2,
                   help="which reported comparison to reproduce")
    p.add_argument("--schemes", default=",".join(SCHEMES),
                   help="comma-separated subset of " + ",".join(SCHEMES))
    p.add_argument("--drops", type=int, default=50)
    p.add_argument("--seed", type=int, default=1, help="master seed")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--bandwidth-hz", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None,
                   help="SCA relative-convergence threshold")
    p.add_argument("--max-outer-iters", type=int, default=50)
    p.add_argument("--subproblem-tol", type=float, default=None,
                   help="feasibility/gap tolerance of the inner conic solves")
    p.add_argument("--no-warm-start", action="store_true",
                   help="skip the restart from the two-stage baseline")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--wall-times", action="store_true",
                   help="record wall-clock per solve (breaks byte-level "
                        "reproducibility of the CSV)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = load_config(args.config) if args.config else {}
    if args.bandwidth_hz is not None:
        overrides["B_hz"] = args.bandwidth_hz
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    base = SystemConfig(**overrides) if overrides else SystemConfig()

    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    solver_opts = conic.SolverOptions()
    if args.subproblem_tol is not None:
        solver_opts.feastol = solver_opts.reltol = args.subproblem_tol
    opts = sca.ScaOptions(max_outer_iters=args.max_outer_iters,
                          warm_start=not args.no_warm_start,
                          solver=solver_opts)
    spec = experiment.figure_spec(args.figure, base, drops=args.drops,
                                  master_seed=args.seed, schemes=schemes,
                                  sca_options=opts)
    spec.wall_times = args.wall_times

    try:
        rows, summary = experiment.run(spec, workers=args.workers)
    except (ValueError, PlacementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = experiment.emit(rows, summary, args.out_dir,
                            figure_tag=f"figure{args.figure}")
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    n_bad = sum(r.status != sca.CONVERGED for r in rows)
    if n_bad:
        print(f"{n_bad} of {len(rows)} runs did not converge", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
