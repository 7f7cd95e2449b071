"""
Discrimax CLI
===============
Command-line front end for optimal discrimination designs.

    solve        run the exchange algorithm and write a result document
    verify       certify a design through its sensitivity function
    efficiency   cross-criterion efficiency matrix for a set of designs
    sensitivity  export ψ on the verification grid as CSV
    densities    given / least-favourable densities at each support point
    lambda-curve λ̄ as η₂ sweeps the support of f₁

Exit codes: 0 success (OPTIMAL), 3 solved/checked but NOT_OPTIMAL,
1 configuration or input error, 2 numerical failure.

Requirements:
    pip install numpy scipy pydantic

Usage:
    python cli.py solve configs/example-sec5-2-t.ini -o t.json --n 20
    python cli.py verify configs/example-otsu.ini --design "-1:0.253, -0.670:0.428, 0.142:0.247, 0.959:0.072"
    python cli.py efficiency configs/example-sec5-1-t.ini --designs t.json kl.json skl.json --criteria T,KL,SKL_A
    python cli.py sensitivity configs/example-otsu.ini --design xi.json --csv psi.csv
"""

from __future__ import annotations

import os
import csv
import sys
import json
import math
import logging
import argparse
from pathlib import Path

import numpy as np

from criteria import CriterionKind, inner_minimize, least_favorable_curves, round_design
from design_optimizer import solve_design
from divergence import lambda_curve
from equivalence import VERIFY_GRID_N, VERIFY_TOL, Verdict, verify, write_csv
from errors import ConfigError, DiscrimaxError, ZeroReference
from problem_config import load_config, read_design

# ─── Configuration ────────────────────────────────────────────────────────────

LOG_LEVEL = os.getenv("DISCRIMAX_LOG_LEVEL", "INFO").upper()
EXIT_OK = 0
EXIT_NOT_OPTIMAL = 3
LAMBDA_CURVE_POINTS = 101

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("cli")

# ─── Helpers ──────────────────────────────────────────────────────────────────


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}", origin="cli") from exc


def _write_rows(path: str | Path, header: list[str], rows: list[dict]) -> Path:
    """RFC-4180 CSV, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{float(row[h]):.17g}" for h in header])
    log.info("Wrote %d rows to %s", len(rows), path)
    return path


def _exit_for(verdict: Verdict) -> int:
    return EXIT_OK if verdict is Verdict.OPTIMAL else EXIT_NOT_OPTIMAL


def _print_verdict(sens) -> None:
    s = sens.summary()
    print(f"verdict:          {s['verdict']}")
    print(f"criterion value:  {s['value']:.10g}")
    print(f"theta2*:          {', '.join(f'{t:.6g}' for t in s['theta2_star'])}")
    print(f"max violation:    {s['max_violation']:.6g} at x = {s['argmax_x']:.6g}")
    bound = s["efficiency_bound"]
    note = " (heuristic for KL-type criteria)" if s["efficiency_bound_heuristic"] else ""
    print(f"efficiency bound: {'n/a' if bound is None else f'{bound:.6f}'}{note}")
    for q in s["qualifiers"]:
        print(f"qualifier:        {q}")


# ─── Commands ─────────────────────────────────────────────────────────────────


def cmd_solve(args) -> int:
    cfg = load_config(args.config, args.criterion)
    kind = cfg.kind
    problem = cfg.problem(kind)
    inner_cfg = cfg.inner_config()
    design, report, trace = solve_design(kind, problem, cfg.optimizer_config(), inner_cfg)
    sens = verify(kind, design, problem, args.tol, grid_n=args.grid_n, inner_cfg=inner_cfg, report=report)

    doc = {
        "points": list(design.points),
        "weights": list(design.weights),
        "criterion": kind.value,
        "value": report.value,
        "theta2_star": list(report.theta2_star),
        "report": report.summary(),
        "trace": trace.summary(),
        "verification": sens.summary(),
    }
    if args.n:
        doc["rounding"] = {"n": args.n, "counts": round_design(design, args.n)}

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    log.info("Wrote %s design to %s", kind.value, out)

    print(f"design:           {', '.join(f'{p:.6g}:{w:.6g}' for p, w in zip(design.points, design.weights))}")
    if args.n:
        print(f"rounded (n={args.n}):  {doc['rounding']['counts']}")
    _print_verdict(sens)
    return _exit_for(sens.verdict)


def cmd_verify(args) -> int:
    cfg = load_config(args.config, args.criterion)
    problem = cfg.problem(cfg.kind)
    design, _ = read_design(args.design, problem.space)
    sens = verify(cfg.kind, design, problem, args.tol, grid_n=args.grid_n, inner_cfg=cfg.inner_config())
    _print_verdict(sens)
    if args.csv:
        write_csv(sens, args.csv)
    return _exit_for(sens.verdict)


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config, args.criterion)
    problem = cfg.problem(cfg.kind)
    design, _ = read_design(args.design, problem.space)
    sens = verify(cfg.kind, design, problem, args.tol, grid_n=args.grid_n, inner_cfg=cfg.inner_config())
    write_csv(sens, args.csv)
    print(f"{sens.verdict.value}: max ψ = {sens.max_violation:.6g} at x = {sens.argmax_x:.6g}")
    return EXIT_OK


def efficiency_matrix(cfg, designs: list, metas: list[dict], kinds: list[CriterionKind]) -> list[list[float]]:
    """
    Rows are criteria, columns designs. The reference for a criterion is the
    design whose document names that criterion, otherwise the best design
    among those given.
    """
    inner_cfg = cfg.inner_config()
    matrix = []
    for kind in kinds:
        problem = cfg.problem(kind)
        values = [inner_minimize(kind, d, problem, inner_cfg).value for d in designs]
        tagged = [i for i, m in enumerate(metas) if str(m.get("criterion", "")).upper() == kind.value]
        ref = values[tagged[0]] if tagged else max(values)
        if not ref > 0:
            raise ZeroReference(f"{kind.value} value of the reference design is {ref:g}", origin="cli")
        matrix.append([v / ref for v in values])
        log.info("%s efficiencies: %s", kind.value, ", ".join(f"{e:.3f}" for e in matrix[-1]))
    return matrix


def cmd_efficiency(args) -> int:
    cfg = load_config(args.config)
    kinds = [CriterionKind.parse(t) for t in args.criteria.split(",") if t.strip()]
    if not kinds:
        raise ConfigError("--criteria is empty", origin="cli", field="criteria")
    space = cfg.problem(kinds[0]).space
    loaded = [read_design(spec, space) for spec in args.designs]
    designs, metas = [d for d, _ in loaded], [m for _, m in loaded]
    labels = [m.get("criterion") or (Path(spec).stem if Path(spec).is_file() else f"#{i + 1}")
              for i, (spec, m) in enumerate(zip(args.designs, metas))]
    matrix = efficiency_matrix(cfg, designs, metas, kinds)

    width = max(10, *(len(l) + 2 for l in labels))
    print(f"{'criterion':<10}" + "".join(f"{l:>{width}}" for l in labels))
    for kind, row in zip(kinds, matrix):
        print(f"{kind.value:<10}" + "".join(f"{e:>{width}.3f}" for e in row))

    if args.output:
        doc = {"criteria": [k.value for k in kinds], "designs": labels, "efficiency": matrix}
        Path(args.output).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_densities(args) -> int:
    cfg = load_config(args.config, args.criterion)
    kind = cfg.kind
    problem = cfg.problem(kind)
    design, _ = read_design(args.design, problem.space)
    if args.theta2:
        theta2 = _floats(args.theta2)
    else:
        theta2 = inner_minimize(kind, design, problem, cfg.inner_config()).theta2_star
    rows = least_favorable_curves(kind, problem, design, theta2, args.n_y)
    _write_rows(args.csv, ["x", "y", "f_given", "f_optimal", "eta1", "eta2", "lambda"], rows)
    return EXIT_OK


def cmd_lambda_curve(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.problem(CriterionKind.SKL_A)
    lo, hi = problem.space.domain.as_tuple()
    x = args.x if args.x is not None else 0.5 * (lo + hi)
    f1 = problem.f1_at(x)
    if args.eta2:
        eta2 = _floats(args.eta2)
    elif args.offsets:
        eta2 = [f1.eta + d for d in _floats(args.offsets)]
    else:
        a, b = f1.support.as_tuple()
        eta2 = np.linspace(a, b, LAMBDA_CURVE_POINTS + 2)[1:-1]
    rows = lambda_curve(f1, eta2, problem.solver)
    _write_rows(args.csv, ["eta2", "lambda", "value"], rows)
    finite = [r for r in rows if math.isfinite(r["value"])]
    print(f"x = {x:.6g}, eta1 = {f1.eta:.6g}: {len(finite)}/{len(rows)} feasible eta2 values")
    return EXIT_OK


# ─── Argument Parsing ─────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="discrimax", description="Optimal discrimination designs")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging and tracebacks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, criterion=True, tol=True):
        p.add_argument("config", help="problem config (.ini)")
        if criterion:
            p.add_argument("--criterion", help="override [criterion] tag")
        if tol:
            p.add_argument("--tol", type=float, default=VERIFY_TOL, help="relative verification tolerance")
            p.add_argument("--grid-n", type=int, default=VERIFY_GRID_N, help="verification grid size")

    p = sub.add_parser("solve", help="compute the optimal design")
    common(p)
    p.add_argument("-o", "--output", required=True, help="result JSON path")
    p.add_argument("--n", type=int, default=0, help="also round the design to n observations")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check a design against the equivalence theorem")
    common(p)
    p.add_argument("--design", required=True, help="JSON file, JSON literal or 'x:w, x:w, …'")
    p.add_argument("--csv", help="also write the sensitivity grid")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("efficiency", help="cross-criterion efficiency matrix")
    common(p, criterion=False, tol=False)
    p.add_argument("--designs", nargs="+", required=True)
    p.add_argument("--criteria", default="T,KL,SKL_A")
    p.add_argument("-o", "--output", help="also write the matrix as JSON")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("sensitivity", help="export the sensitivity function as CSV")
    common(p)
    p.add_argument("--design", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("densities", help="given and least-favourable densities (SKL_A / SKL_B)")
    common(p, tol=False)
    p.add_argument("--design", required=True)
    p.add_argument("--theta2", help="comma-separated θ₂; default is the inner minimiser")
    p.add_argument("--n-y", type=int, default=201)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_densities)

    p = sub.add_parser("lambda-curve", help="λ̄ against η₂ for f₁ at one design point")
    common(p, criterion=False, tol=False)
    p.add_argument("--x", type=float, help="design point (default: centre of the design space)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--eta2", help="comma-separated η₂ values")
    group.add_argument("--offsets", help="comma-separated η₂ − η₁ offsets")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_lambda_curve)

    return parser


# ─── Entry Point ──────────────────────────────────────────────────────────────


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else LOG_LEVEL)
    try:
        return args.func(args)
    except DiscrimaxError as exc:
        if args.verbose:
            log.exception("%s failed", args.command)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
