"""Command-line entry point: scenarios, single solves, oracles, and probes.

Exit codes: 0 when every asserted check passes, 1 when an assertion fails,
2 for configuration errors.  Diagnostic messages go to standard error; the
output directory can be overridden with the SUBELLIPTIC_OUT environment
variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import figures as _figures
from .envelope import inf_convolution, jensen_probe, sup_convolution
from .errors import ProbeAssertionError
from .functions import Polynomial, PolynomialFunction, Quadratic, ShiftedSquareProfile
from .geometry import make_system
from .grids import Box, Grid, GridFunction, read_field, write_field, write_field_csv
from .harness import comparison_check, lipschitz_probe, scenario_run, translation_max_map
from .metric import GaugeOracle, GraphOracle, nsw_probe, shrunken_domain
from .operators import (chain_rule_bound_probe, check_structure,
                        linear_perturbation_bound_probe, make_operator, make_profile)
from .scenarios import ScenarioError
from .solver import SolverParams, make_sub_super_pair, solve_dirichlet


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _outdir(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("SUBELLIPTIC_OUT")
    return Path(env) if env else Path("out")


def _parse_box(spec: str) -> Box:
    lo, hi = [], []
    for part in spec.split(";"):
        a, b = part.split(",")
        lo.append(float(a))
        hi.append(float(b))
    return Box(tuple(lo), tuple(hi))


def _parse_grid(spec: str, box: Box) -> Grid:
    return Grid(box, tuple(int(s) for s in spec.split(",")))


def _parse_boundary(spec: str, n: int):
    if spec.startswith("constant:"):
        return float(spec.split(":", 1)[1])
    if spec == "saddle":
        terms = [[1.0, [2 if k == 0 else 0 for k in range(n)]],
                 [-1.0, [2 if k == 1 else 0 for k in range(n)]]]
        return PolynomialFunction(Polynomial.from_table(terms, n))
    if spec.startswith("scaled-saddle:"):
        c = float(spec.split(":", 1)[1])
        terms = [[c, [2 if k == 0 else 0 for k in range(n)]],
                 [-c, [2 if k == 1 else 0 for k in range(n)]]]
        return PolynomialFunction(Polynomial.from_table(terms, n))
    if spec.startswith("poly:"):
        return PolynomialFunction(
            Polynomial.from_table(json.loads(spec.split(":", 1)[1]), n))
    raise ScenarioError(f"cannot parse boundary spec {spec!r}")


def _make_oracle(spec: str, sys_obj, box: Box, step: float):
    if spec in ("gauge", "gauge-auto"):
        group = "heisenberg" if sys_obj.name == "heisenberg1" else "euclidean"
        return GaugeOracle(group, n=sys_obj.n)
    if spec == "gauge-heisenberg":
        return GaugeOracle("heisenberg")
    if spec == "gauge-euclidean":
        return GaugeOracle("euclidean", n=sys_obj.n)
    if spec == "graph":
        return GraphOracle(sys_obj, box, step)
    raise ScenarioError(f"unknown oracle {spec!r}")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    try:
        report = scenario_run(args.scenario, outdir=_outdir(args),
                              figures=not args.no_figures)
    except ScenarioError as exc:
        _err(f"scenario error: {exc}")
        return 2
    print(report.to_text(), end="")
    if report.stage_errors and any("missing" not in m for _, m in report.stage_errors):
        return 2 if not report.verdicts else 1
    return 0 if report.passed else 1


def _cmd_solve(args) -> int:
    box = _parse_box(args.box)
    grid = _parse_grid(args.grid, box)
    sys_obj = make_system(args.system)
    op = make_operator(args.operator, sys_obj.m)
    boundary = _parse_boundary(args.boundary, sys_obj.n)
    params = SolverParams(tolerance=args.tolerance,
                          max_iterations=args.max_iterations,
                          coarse_warmstart=args.warmstart)
    history: list = []
    u = solve_dirichlet(op, sys_obj, grid, boundary, params, history=history)
    out = Path(args.out or "solution.field")
    write_field(u, out)
    write_field_csv(u, out.with_suffix(".csv"))
    with open(out.with_suffix(".history.csv"), "w") as fh:
        fh.write("iteration,residual\n")
        for it, res in history:
            fh.write(f"{it},{res:.17g}\n")
    if not args.no_figures:
        _figures.render_field_slice(out.with_suffix(".png"), u,
                                    title=f"{args.operator} on {args.system}")
    print(f"wrote {out}")
    return 0


def _cmd_distance(args) -> int:
    box = _parse_box(args.box)
    sys_obj = make_system(args.system)
    oracle = _make_oracle(args.oracle, sys_obj, box, args.step)
    rng = np.random.default_rng(args.seed)
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    rows = []
    for _ in range(args.pairs):
        x = rng.uniform(lo, hi)
        y = rng.uniform(lo, hi)
        rows.append((x, y, oracle.eval(x, y)))
    header = [f"x{i+1}" for i in range(sys_obj.n)] \
        + [f"y{i+1}" for i in range(sys_obj.n)] + ["d"]
    lines = [",".join(header)]
    for x, y, d in rows:
        lines.append(",".join(f"{c:.17g}" for c in (*x, *y, d)))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_convolve(args) -> int:
    u = read_field(args.field)
    sys_obj = make_system(args.system)
    oracle = _make_oracle(args.oracle, sys_obj, u.grid.box, args.step)
    conv = sup_convolution if args.mode == "sup" else inf_convolution
    res = conv(u, args.epsilon, oracle)
    out = Path(args.out or f"{args.mode}_envelope.field")
    write_field(res.field, out)
    write_field_csv(res.field, out.with_suffix(".csv"))
    if not args.no_figures:
        _figures.render_field_slice(out.with_suffix(".png"), res.field,
                                    title=f"{args.mode}-convolution eps={args.epsilon:g}")
    print(f"wrote {out}")
    return 0


def _cmd_check_structure(args) -> int:
    op = make_operator(args.operator, args.m)
    if args.phi:
        op.phi = make_profile(args.phi)
    report = check_structure(op, args.samples, seed=args.seed)
    print(f"operator: {report.operator}")
    print(f"samples: {report.samples}")
    for name, margin in sorted(report.worst_margins.items()):
        print(f"worst {name} margin: {margin:.6g}")
    print(f"violations: {len(report.violations)}")
    for check, idx, margin in report.violations[:20]:
        print(f"  {check} at sample {idx}: margin {margin:.6g}")
    return 0 if report.passed else 1


def _cmd_compare(args) -> int:
    a = read_field(args.field_a)
    b = read_field(args.field_b)
    mask = read_field(args.mask).interior_mask if args.mask else None
    try:
        res = comparison_check(a, b, interior_mask=mask, tolerance=args.tolerance)
    except ValueError as exc:
        _err(str(exc))
        return 2
    print(f"max_interior_gap: {res.max_interior_gap:.12g}")
    print(f"max_boundary_gap: {res.max_boundary_gap:.12g}")
    if not res.passed:
        _err(f"comparison failed at node {res.argmax_nodes[0]}")
        return 1
    return 0


def _cmd_probe(args) -> int:
    try:
        return _run_probe(args)
    except ProbeAssertionError as exc:
        _err(f"probe failed: {exc}")
        return 1


def _run_probe(args) -> int:
    name = args.name
    sys_obj = make_system(args.system)
    seed = args.seed

    if name == "nsw":
        oracle = GaugeOracle("heisenberg") if sys_obj.name == "heisenberg1" \
            else GaugeOracle("euclidean", n=sys_obj.n)
        res = nsw_probe(sys_obj, oracle, np.zeros(sys_obj.n), samples=args.samples,
                        seed=seed)
        print(f"exponent: {res.fit_exponent:.4f}  c1: {res.c1:.4g}  c2: {res.c2:.4g}")
        return 0

    if name in ("chainrule", "perturbation"):
        op = make_operator(args.operator, sys_obj.m)
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(-0.3, 0.3, size=sys_obj.n)
        Q = rng.normal(size=(sys_obj.n, sys_obj.n))
        omega = Quadratic(Q @ Q.T / 4, rng.uniform(0.3, 1.0, size=sys_obj.n), 0.0)
        if name == "chainrule":
            profile = ShiftedSquareProfile(lam=0.05, u0=omega.value(x0) - 1.0)
            res = chain_rule_bound_probe(op, sys_obj, omega, profile, x0)
            print(f"lhs: {res.lhs:.6g}  rhs: {res.rhs:.6g}  margin: {res.margin:.6g}")
        else:
            p = rng.uniform(-0.1, 0.1, size=sys_obj.n)
            res = linear_perturbation_bound_probe(op, sys_obj, omega, p, x0,
                                                  seed=seed)
            print(f"deviation: {res.lhs:.6g}  bound: {res.rhs:.6g}")
        return 0

    if name == "jensen":
        box = Box((-1.0,) * sys_obj.n, (1.0,) * sys_obj.n)
        grid = Grid(box, (21,) * sys_obj.n)
        center = np.zeros(sys_obj.n)
        w = GridFunction.from_callable(
            grid, lambda pts: -0.5 * np.sum((pts - center) ** 2, axis=-1))
        fraction = jensen_probe(w, center, r=0.5, delta=args.delta,
                                trials=args.trials, seed=seed)
        print(f"success fraction: {fraction:.3f}")
        return 0

    if name == "lipschitz":
        box = Box((-1.0,) * sys_obj.n, (1.0,) * sys_obj.n)
        grid = Grid(box, (13,) * sys_obj.n)
        op = make_operator(args.operator, sys_obj.m)
        boundary = _parse_boundary("scaled-saddle:0.25", sys_obj.n)
        u, v = make_sub_super_pair(op, sys_obj, grid, boundary, 0.05,
                                   SolverParams(tolerance=1e-7))
        oracle = GaugeOracle("heisenberg") if sys_obj.name == "heisenberg1" \
            else GaugeOracle("euclidean", n=sys_obj.n)
        delta = 0.1
        axis = np.linspace(-0.03, 0.03, 3)
        mesh = np.meshgrid(*([axis] * sys_obj.m), indexing="ij")
        shifts = np.stack([m.ravel() for m in mesh], axis=1)
        mask = shrunken_domain(oracle, delta, grid, squared=False, strict=True)
        table = translation_max_map(u, v, sys_obj, delta, shifts, shifts, mask=mask)
        res = lipschitz_probe(table, u, v, sys_obj)
        print(f"h ratio: {res.h_ratio:.4g} <= {res.slack * res.xu_norm:.4g}")
        print(f"l ratio: {res.l_ratio:.4g} <= {res.slack * res.xv_norm:.4g}")
        return 0

    _err(f"unknown probe {name!r}")
    return 2


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subelliptic",
        description="Numerical laboratory for degenerate PDEs on Hörmander systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario file")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("solve", help="solve a Dirichlet problem")
    p.add_argument("--system", default="heisenberg1")
    p.add_argument("--operator", default="sublaplacian")
    p.add_argument("--grid", default="17,17,17")
    p.add_argument("--box", default="-1,1;-1,1;-1,1")
    p.add_argument("--boundary", default="saddle")
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--max-iterations", type=int, default=200_000)
    p.add_argument("--warmstart", action="store_true")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("distance", help="tabulate oracle distances as CSV")
    p.add_argument("--system", default="heisenberg1")
    p.add_argument("--oracle", default="gauge")
    p.add_argument("--box", default="-1,1;-1,1;-1,1")
    p.add_argument("--step", type=float, default=1.0 / 16)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_distance)

    p = sub.add_parser("convolve", help="sup/inf-convolve a stored field")
    p.add_argument("--field", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--mode", choices=("sup", "inf"), default="sup")
    p.add_argument("--system", default="heisenberg1")
    p.add_argument("--oracle", default="gauge")
    p.add_argument("--step", type=float, default=1.0 / 16)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_convolve)

    p = sub.add_parser("check-structure", help="sample the structure conditions")
    p.add_argument("--operator", required=True)
    p.add_argument("--phi")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_check_structure)

    p = sub.add_parser("compare", help="comparison check between two field files")
    p.add_argument("field_a")
    p.add_argument("field_b")
    p.add_argument("--mask")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("probe", help="run a named probe")
    p.add_argument("name",
                   choices=("nsw", "lipschitz", "jensen", "chainrule", "perturbation"))
    p.add_argument("--system", default="heisenberg1")
    p.add_argument("--operator", default="sublaplacian")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        _err(f"config error: {exc}")
        return 2
    except (FileNotFoundError, ValueError, KeyError) as exc:
        _err(f"config error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
