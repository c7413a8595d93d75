"""Scenario files: JSON experiment descriptions and object builders.

A scenario bundles the system, oracle, operator, domain, solver settings,
envelope ladder, and the list of checks to run.  Custom systems and
operators are described by polynomial (optionally rational) coefficient
tables; presets are referenced by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .functions import Polynomial, PolynomialFunction
from .geometry import VectorFieldSystem, make_system
from .grids import Box, Grid
from .metric import DistanceOracle, GaugeOracle, GraphOracle
from .operators import QuasilinearOperator, make_operator, make_profile
from .solver import SolverParams


class ScenarioError(Exception):
    """Malformed or unresolvable scenario configuration."""


DEFAULT_CHECKS = ["structure", "comparison"]


@dataclass
class Scenario:
    scenario_id: str
    seed: int
    raw: dict

    system: VectorFieldSystem = None
    box: Box = None
    grid: Grid = None
    oracle: DistanceOracle = None
    operator: QuasilinearOperator = None
    boundary = None
    solver_params: SolverParams = None
    gap: float = 0.0
    epsilons: list = field(default_factory=list)
    translation: dict = field(default_factory=dict)
    checks: list = field(default_factory=lambda: list(DEFAULT_CHECKS))


def _require(cfg: dict, key: str, stage: str):
    if key not in cfg:
        raise ScenarioError(f"{stage}: missing required key {key!r}")
    return cfg[key]


def build_domain(cfg: dict):
    dom = _require(cfg, "domain", "domain")
    box = Box(tuple(lo for lo, _ in dom["box"]), tuple(hi for _, hi in dom["box"]))
    grid = Grid(box, tuple(dom["shape"]))
    return box, grid


def build_system(cfg: dict) -> VectorFieldSystem:
    spec = _require(cfg, "system", "system")
    if "preset" in spec:
        kwargs = {k: v for k, v in spec.items() if k not in ("preset",)}
        return make_system(spec["preset"], **kwargs)
    custom = _require(spec, "custom", "system")
    n, m = int(custom["n"]), int(custom["m"])
    table = custom["sigma"]
    polys = [[Polynomial.from_table(table[a][j], n) for j in range(m)]
             for a in range(n)]
    dpolys = [[[polys[a][j].derivative(b) for b in range(n)] for a in range(n)]
              for j in range(m)]

    def sigma(x):
        x = np.asarray(x, dtype=float)
        return np.array([[polys[a][j](x) for j in range(m)] for a in range(n)])

    def dsigma(x):
        x = np.asarray(x, dtype=float)
        return np.array([[[dpolys[j][a][b](x) for b in range(n)]
                          for a in range(n)] for j in range(m)])

    return VectorFieldSystem(n, m, sigma, dsigma, name=custom.get("name", "custom"))


def build_oracle(cfg: dict, sys: VectorFieldSystem, box: Box) -> DistanceOracle:
    spec = _require(cfg, "oracle", "oracle")
    kind = spec.get("kind", "gauge")
    if kind == "gauge":
        group = spec.get("group")
        if group is None:
            group = "heisenberg" if sys.name == "heisenberg1" else "euclidean"
        return GaugeOracle(group, n=sys.n)
    if kind == "graph":
        step = float(spec.get("step", min(box.edge_lengths()) / 64.0))
        return GraphOracle(sys, box, step, spacing=spec.get("spacing"))
    raise ScenarioError(f"oracle: unknown kind {kind!r}")


def _rational_entry(entry: dict, nvars: int):
    if isinstance(entry, list):
        num = Polynomial.from_table(entry, nvars)
        return lambda xi: num(xi)
    num = Polynomial.from_table(entry["num"], nvars)
    den = Polynomial.from_table(entry["den"], nvars) if "den" in entry else None
    if den is None:
        return lambda xi: num(xi)
    return lambda xi: num(xi) / den(xi)


def build_operator(cfg: dict, m: int) -> QuasilinearOperator:
    spec = _require(cfg, "operator", "operator")
    if "preset" in spec:
        op = make_operator(spec["preset"], m)
        if "phi" in spec:
            op.phi = make_profile(spec["phi"])
        return op
    custom = _require(spec, "custom", "operator")
    a_entries = [[_rational_entry(custom["A"][i][j], m) for j in range(m)]
                 for i in range(m)]
    h_entry = _rational_entry(custom["H"], m) if "H" in custom else (lambda xi: 0.0)
    phi = make_profile(custom.get("phi", "power:1"))

    def A(xi):
        return np.array([[a_entries[i][j](xi) for j in range(m)] for i in range(m)])

    return QuasilinearOperator(
        m=m, A=A, H=lambda xi: float(h_entry(xi)), phi=phi,
        name=custom.get("name", "custom"),
        zero_gradient_rule=custom.get("zero_gradient_rule", "evaluate"),
    )


def build_boundary(cfg: dict, n: int):
    spec = cfg.get("solver", {}).get("boundary", {"constant": 0.0})
    if "constant" in spec:
        return float(spec["constant"])
    if "poly" in spec:
        return PolynomialFunction(Polynomial.from_table(spec["poly"], n))
    raise ScenarioError("solver.boundary must give 'constant' or 'poly'")


def load_scenario(source) -> Scenario:
    """Load a scenario from a path, a bare bundled name, or a parsed dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = _resolve_path(str(source))
        raw = json.loads(path.read_text())
    scenario_id = raw.get("id", "unnamed")
    sc = Scenario(scenario_id=scenario_id, seed=int(raw.get("seed", 0)), raw=raw)
    return sc


def _resolve_path(source: str) -> Path:
    p = Path(source)
    if p.is_file():
        return p
    pj = p.with_suffix(".json")
    if pj.is_file():
        return pj
    name = p.name if p.suffix else p.name
    bundled = resources.files("subelliptic").joinpath(f"scenarios/{name}.json")
    if bundled.is_file():
        return Path(str(bundled))
    raise ScenarioError(f"cannot resolve scenario {source!r}")


def bundled_scenarios():
    base = resources.files("subelliptic").joinpath("scenarios")
    return sorted(p.stem for p in Path(str(base)).glob("*.json"))


def apply_settings(sc: Scenario, n: int) -> None:
    """Parse solver/envelope/translation settings (needs the dimension)."""
    raw = sc.raw
    solver_cfg = dict(raw.get("solver", {}))
    sc.boundary = build_boundary(raw, n)
    sc.gap = float(solver_cfg.get("gap", 0.0))
    sc.solver_params = SolverParams(
        tau=solver_cfg.get("tau"),
        tolerance=float(solver_cfg.get("tolerance", 1e-8)),
        max_iterations=int(solver_cfg.get("max_iterations", 200_000)),
        coarse_warmstart=bool(solver_cfg.get("warmstart", False)),
    )
    sc.epsilons = list(raw.get("envelope", {}).get("epsilons", []))
    sc.translation = dict(raw.get("translation", {}))
    sc.checks = list(raw.get("checks", DEFAULT_CHECKS))


def materialize(sc: Scenario) -> Scenario:
    """Build all configured objects; raises ScenarioError naming the stage."""
    raw = sc.raw
    for stage, build in (("system", lambda: build_system(raw)),):
        try:
            sc.system = build()
        except ScenarioError:
            raise
        except Exception as exc:
            raise ScenarioError(f"{stage}: {exc}") from exc
    try:
        sc.box, sc.grid = build_domain(raw)
    except Exception as exc:
        raise ScenarioError(f"domain: {exc}") from exc
    try:
        sc.oracle = build_oracle(raw, sc.system, sc.box)
    except Exception as exc:
        raise ScenarioError(f"oracle: {exc}") from exc
    try:
        sc.operator = build_operator(raw, sc.system.m)
    except Exception as exc:
        raise ScenarioError(f"operator: {exc}") from exc
    apply_settings(sc, sc.system.n)
    return sc
