"""Command-line entry points: detect, fit, bench.

Exit codes: 0 success, 1 usage or parse error, 2 detection failure,
3 fitted model above tolerance. Every output JSON embeds the full run
configuration, seed included, so results are self-reproducing.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import assemble as asm
from . import bench
from . import detect as det
from . import fit as ft
from .expr import ParseError, parse
from .oracle import DomainBox, make_oracle

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DETECT = 2
EXIT_TOLERANCE = 3


def _parse_bounds(text: str, dims: int) -> list[float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return parts * dims
    if len(parts) != dims:
        raise ValueError(f"expected 1 or {dims} comma-separated bounds, got {len(parts)}")
    return parts


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", required=True, help="target expression over x1..xn")
    p.add_argument("--dims", type=int, required=True, help="number of variables")
    p.add_argument("--lo", default="-3", help="lower bounds (scalar or comma list)")
    p.add_argument("--hi", default="3", help="upper bounds (scalar or comma list)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol-detect", type=float, default=1e-8,
                   help="relative detection tolerance")
    p.add_argument("--tol-target", type=float, default=1e-6,
                   help="MSE tolerance for fitted models")
    p.add_argument("--samples-per-var", type=int, default=200)
    p.add_argument("--max-nodes", type=int, default=12,
                   help="skeleton complexity cap")
    p.add_argument("--kmax", type=int, default=3,
                   help="largest repeated-variable cut size")
    p.add_argument("--out", default=None, help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gsfit",
        description="Recover and refit the separable structure of a target function.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_det = sub.add_parser("detect", help="detect block/factor structure only")
    _add_common(p_det)

    p_fit = sub.add_parser("fit", help="detect, fit factors, assemble, validate")
    _add_common(p_fit)

    p_bench = sub.add_parser("bench", help="run the built-in benchmark suite")
    p_bench.add_argument("--cases", default="1-10",
                         help="cases to run, e.g. '4' or '1-3,9' (11 = stream demo)")
    p_bench.add_argument("--repeats", type=int, default=20)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--parallel", action="store_true")
    p_bench.add_argument("--detect-only", action="store_true",
                         help="skip fitting, check structure columns only")
    p_bench.add_argument("--out", default=None)
    return ap


def _run_config(args, dims: int, lo, hi) -> dict:
    return {
        "target": args.target,
        "dims": dims,
        "lo": lo,
        "hi": hi,
        "seed": args.seed,
        "tol_detect": args.tol_detect,
        "tol_target": args.tol_target,
        "samples_per_var": args.samples_per_var,
        "max_nodes": args.max_nodes,
        "kmax": args.kmax,
    }


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _setup(args):
    if args.dims < 1:
        raise ValueError("--dims must be at least 1")
    lo = _parse_bounds(args.lo, args.dims)
    hi = _parse_bounds(args.hi, args.dims)
    target = parse(args.target, args.dims)
    box = DomainBox(tuple(lo), tuple(hi))
    oracle = make_oracle(target, box)
    cfg = det.DetectConfig(tol=args.tol_detect, seed=args.seed, kmax=args.kmax)
    return oracle, cfg, _run_config(args, args.dims, lo, hi)


def cmd_detect(args) -> int:
    try:
        oracle, cfg, run_cfg = _setup(args)
    except (ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        structure = det.detect_structure(oracle, cfg)
    except det.DetectionError as err:
        print(f"detection failed: {err}", file=sys.stderr)
        return EXIT_DETECT
    _emit({"config": run_cfg, "structure": structure.to_dict()}, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        oracle, cfg, run_cfg = _setup(args)
    except (ParseError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        structure = det.detect_structure(oracle, cfg)
    except det.DetectionError as err:
        print(f"detection failed: {err}", file=sys.stderr)
        return EXIT_DETECT
    opt = ft.OptimizerConfig(target_tol=args.tol_target, seed=args.seed)
    model = asm.assemble_and_validate(
        structure, oracle, opt, seed=args.seed, max_nodes=args.max_nodes,
        samples_per_var=args.samples_per_var,
    )
    _emit(
        {
            "config": run_cfg,
            "structure": structure.to_dict(),
            "model": model.to_dict(),
            "oracle_evals": oracle.eval_count,
        },
        args.out,
    )
    return EXIT_OK if model.success else EXIT_TOLERANCE


def _parse_cases(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    bad = [c for c in out if c not in bench.CASES and c != 11]
    if bad:
        raise ValueError(f"unknown case numbers: {bad}")
    return sorted(set(out))


def cmd_bench(args) -> int:
    try:
        cases = _parse_cases(args.cases)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    report = bench.run_suite(
        repeats=args.repeats,
        base_seed=args.seed,
        cases=cases,
        parallel=args.parallel,
        detect_only=args.detect_only,
    )
    payload = report.to_dict()
    payload["config"] = {
        "cases": cases,
        "repeats": args.repeats,
        "seed": args.seed,
        "parallel": args.parallel,
        "detect_only": args.detect_only,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(json.dumps(payload, indent=2) + "\n")
    print(report.table())
    all_match = all(
        r.match_repeated and r.match_blocks and r.match_factors
        for r in report.reports
    )
    return EXIT_OK if all_match else EXIT_TOLERANCE


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    np.seterr(all="ignore")
    if args.command == "detect":
        return cmd_detect(args)
    if args.command == "fit":
        return cmd_fit(args)
    return cmd_bench(args)


if __name__ == "__main__":
    sys.exit(main())
