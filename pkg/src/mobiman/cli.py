"""Command-line surface: plan / run / ablate / validate / esdf-build."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .pipeline import build_esdf_file, run_ablation, run_pipeline
from .scenario import ScenarioError, load_scenario


def _add_common(p: argparse.ArgumentParser, need_out: bool = True) -> None:
    p.add_argument("--scenario", required=True, type=Path, help="scenario file (.scn)")
    if need_out:
        p.add_argument("--out", required=True, type=Path, help="run directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--strict-alg1", action="store_true",
                   help="stop the avoidance scan at the first flagged waypoint")
    p.add_argument("--raw-displacement", action="store_true",
                   help="use unnormalized displacement inner products in the "
                        "curvature and obstacle-velocity costs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mobiman",
                                 description="coordinated mobile-manipulation planning, "
                                             "avoidance, interpolation and control")
    sub = ap.add_subparsers(dest="verb", required=True)

    _add_common(sub.add_parser("plan", help="stop after path optimization"))
    _add_common(sub.add_parser("run", help="full pipeline including simulation"))

    ab = sub.add_parser("ablate", help="feedforward on/off x gain sweep")
    _add_common(ab)
    ab.add_argument("--kp", type=float, action="append", default=None,
                    help="proportional gain cell (repeatable; default 3.0 and 1.0)")

    va = sub.add_parser("validate", help="parse and validate a scenario file")
    va.add_argument("--scenario", required=True, type=Path)

    eb = sub.add_parser("esdf-build", help="occupancy voxel list -> ESDF file")
    eb.add_argument("--input", required=True, type=Path, help="voxel list (.txt)")
    eb.add_argument("--out", required=True, type=Path, help="output archive (.npz)")
    eb.add_argument("--max-dist", type=float, default=5.0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "validate":
            load_scenario(args.scenario)
            print(f"{args.scenario}: ok")
            return 0
        if args.verb == "esdf-build":
            build_esdf_file(args.input, args.out, args.max_dist)
            print(f"wrote {args.out}")
            return 0
        sc = load_scenario(args.scenario)
        base_dir = args.scenario.parent
        if args.verb == "ablate":
            kp = tuple(args.kp) if args.kp else (3.0, 1.0)
            cells = run_ablation(sc, args.out, kp_values=kp, seed=args.seed)
            for c in cells:
                print(f"{c.label}: p_max={c.metrics['p_max']:.4g} "
                      f"v_mean={c.metrics['v_mean']:.4g} a_mean={c.metrics['a_mean']:.4g}")
            return 0
        result = run_pipeline(sc, args.out, seed=args.seed, base_dir=base_dir,
                              strict_alg1=args.strict_alg1,
                              raw_displacement=args.raw_displacement,
                              stop_after="optimize" if args.verb == "plan" else "simulate")
        if result.failed_stage:
            print(f"FAILED at stage '{result.failed_stage}'; see {result.out_dir}/FAILED",
                  file=sys.stderr)
            return 1
        if result.metrics is not None:
            print(f"success = {result.metrics['success']} ({result.metrics['reason'] or 'n/a'})")
        return 0 if result.success else 1
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
