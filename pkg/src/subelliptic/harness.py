"""Comparison, strong-maximum, and translation-maximum experiments.

This is the laboratory layer: it consumes solver outputs and envelope
regularizations, measures the inequality margins the theory predicts, and
assembles deterministic reports (text + CSV tables + figures).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .envelope import (ConvergenceReport, inf_convolution, jensen_probe,
                       semiconvexity_budget, semiconvexity_check, sup_convolution)
from .errors import ProbeAssertionError
from .geometry import VectorFieldSystem, flow_many
from .grids import Grid, GridFunction
from .metric import DistanceOracle, nsw_probe, shrunken_domain
from .operators import QuasilinearOperator, check_structure, growth_lower_bound
from .solver import _GridWorkspace, discrete_operator, make_sub_super_pair
from . import scenarios as _scen

ARGMAX_SLACK = 1e-9
LIPSCHITZ_SLACK = 1.2   # interpolation slack folded into the translation bounds


# ---------------------------------------------------------------------------
# elementary checks
# ---------------------------------------------------------------------------

@dataclass
class ComparisonResult:
    max_interior_gap: float
    max_boundary_gap: float
    argmax_nodes: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_interior_gap <= self.max_boundary_gap + self.tolerance


def comparison_check(u: GridFunction, v: GridFunction, interior_mask=None,
                     tolerance: float = 1e-9) -> ComparisonResult:
    """Interior max of u - v against the positive part of its boundary max.

    The boundary is the complement of the interior mask; passing means the
    interior gap does not exceed the boundary gap plus the tolerance.
    """
    if u.grid != v.grid:
        raise ValueError("grid mismatch between the two fields")
    mask = u.interior_mask if interior_mask is None else np.asarray(interior_mask, bool)
    if not mask.any():
        raise ValueError("interior mask is empty")
    diff = u.values - v.values
    interior_gap = float(np.max(diff[mask]))
    boundary = ~mask
    boundary_gap = float(np.max(np.maximum(diff[boundary], 0.0))) if boundary.any() else 0.0
    arg = np.argwhere(mask & (diff >= interior_gap - ARGMAX_SLACK))
    return ComparisonResult(interior_gap, boundary_gap,
                            [tuple(int(i) for i in a) for a in arg], tolerance)


@dataclass
class StrongMaxResult:
    certified: bool
    attained: str            # "interior" or "boundary"
    oscillation: float
    verdict: str             # "constant", "boundary-attained", or "violation"

    @property
    def passed(self) -> bool:
        return self.verdict in ("constant", "boundary-attained")


def strong_max_probe(op: QuasilinearOperator, sys: VectorFieldSystem,
                     u: GridFunction, tolerance: float) -> StrongMaxResult:
    """Constancy check for certified discrete subsolutions with interior maxima.

    If the maximum of u is attained at an interior node, the oscillation of
    u must not exceed 10x the certification tolerance; a boundary-attained
    maximum is reported as such and is consistent with the theory.
    """
    res, _ = discrete_operator(op, sys, u)
    interior = u.grid.interior_mask()
    certified = bool(np.max(res[interior]) <= tolerance)
    top = float(np.max(u.values))
    if top < 0:
        raise ValueError("probe requires a nonnegative maximum")
    scale = max(1.0, abs(top))
    at_max = u.values >= top - ARGMAX_SLACK * scale
    interior_hit = bool(np.any(at_max & interior))
    osc = float(np.max(u.values) - np.min(u.values))
    if not certified:
        return StrongMaxResult(False, "interior" if interior_hit else "boundary",
                               osc, "violation")
    if not interior_hit:
        return StrongMaxResult(True, "boundary", osc, "boundary-attained")
    verdict = "constant" if osc <= 10.0 * tolerance else "violation"
    return StrongMaxResult(True, "interior", osc, verdict)


def horizontal_sup_norm(sys: VectorFieldSystem, u: GridFunction) -> float:
    """Discrete sup norm of the horizontal gradient over interior nodes."""
    ws = _GridWorkspace(sys, u.grid)
    _, xi, _ = ws.horizontal_parts(u.values)
    norms = np.linalg.norm(xi, axis=-1)
    return float(np.max(norms[ws.interior]))


# ---------------------------------------------------------------------------
# translation maxima
# ---------------------------------------------------------------------------

@dataclass
class TranslationTable:
    h_list: np.ndarray
    l_list: np.ndarray
    M: np.ndarray
    valid: np.ndarray
    argmax: dict
    delta: float


def _translated_values(u: GridFunction, sys: VectorFieldSystem, shift,
                       mask, flow_steps: int):
    """u(exp_x(shift)) at masked nodes, multilinear off-grid; nan if exits."""
    pts = u.grid.nodes()[mask]
    ends, alive = flow_many(sys, pts, np.asarray(shift, float),
                            steps=flow_steps, box=u.grid.box)
    vals = np.full(pts.shape[0], np.nan)
    vals[alive] = u.at(ends[alive])
    return vals


def translation_max_map(u: GridFunction, v: GridFunction, sys: VectorFieldSystem,
                        delta: float, h_grid, l_grid, mask=None,
                        flow_steps: int = 16) -> TranslationTable:
    """Table of max over the shrunken domain of u(exp_x(h)) - v(exp_x(l)).

    Cells whose flows exit the domain at every masked node are marked
    invalid; each valid cell records its attaining node set.
    """
    if u.grid != v.grid:
        raise ValueError("grid mismatch between the two fields")
    h_list = np.atleast_2d(np.asarray(h_grid, dtype=float))
    l_list = np.atleast_2d(np.asarray(l_grid, dtype=float))
    if np.any(np.linalg.norm(h_list, axis=1) >= delta + 1e-12) or \
       np.any(np.linalg.norm(l_list, axis=1) >= delta + 1e-12):
        raise ValueError("all shifts must have norm < delta")
    if mask is None:
        mask = u.grid.interior_mask()
    if not mask.any():
        raise ValueError("empty shrunken-domain mask")

    u_fields = [_translated_values(u, sys, h, mask, flow_steps) for h in h_list]
    v_fields = [_translated_values(v, sys, l, mask, flow_steps) for l in l_list]
    idx = np.argwhere(mask)

    K, L = len(h_list), len(l_list)
    M = np.full((K, L), np.nan)
    valid = np.zeros((K, L), dtype=bool)
    argmax = {}
    for i in range(K):
        for j in range(L):
            diff = u_fields[i] - v_fields[j]
            ok = np.isfinite(diff)
            if not ok.any():
                continue
            top = float(np.max(diff[ok]))
            M[i, j] = top
            valid[i, j] = True
            hit = ok & (diff >= top - ARGMAX_SLACK)
            argmax[(i, j)] = [tuple(int(c) for c in a) for a in idx[hit]]
    return TranslationTable(h_list, l_list, M, valid, argmax, float(delta))


@dataclass
class LipschitzResult:
    h_ratio: float
    l_ratio: float
    xu_norm: float
    xv_norm: float
    slack: float

    @property
    def passed(self) -> bool:
        return (self.h_ratio <= self.slack * self.xu_norm + 1e-12 and
                self.l_ratio <= self.slack * self.xv_norm + 1e-12)


def lipschitz_probe(table: TranslationTable, u: GridFunction, v: GridFunction,
                    sys: VectorFieldSystem,
                    slack: float = LIPSCHITZ_SLACK) -> LipschitzResult:
    """Translation-Lipschitz ratios of the max table against gradient norms.

    Fits max |M(h,l) - M(h',l)| / |h - h'| over valid pairs (and the mirror
    in l) and asserts the ratios against ``slack`` times the measured
    discrete horizontal sup norms.
    """
    if table.h_list.shape[0] < 3 or table.l_list.shape[0] < 3:
        raise ValueError("insufficient table: need at least 3 shifts per slot")
    xu = horizontal_sup_norm(sys, u)
    xv = horizontal_sup_norm(sys, v)

    def max_ratio(values, shifts, axis):
        worst = 0.0
        n = values.shape[axis]
        for a in range(n):
            for b in range(a + 1, n):
                dh = np.linalg.norm(shifts[a] - shifts[b])
                if dh < 1e-14:
                    continue
                va = np.take(values, a, axis=axis)
                vb = np.take(values, b, axis=axis)
                ok = np.isfinite(va) & np.isfinite(vb)
                if ok.any():
                    worst = max(worst, float(np.max(np.abs(va[ok] - vb[ok])) / dh))
        return worst

    h_ratio = max_ratio(table.M, table.h_list, axis=0)
    l_ratio = max_ratio(table.M, table.l_list, axis=1)
    result = LipschitzResult(h_ratio, l_ratio, xu, xv, slack)
    if not result.passed:
        raise ProbeAssertionError(
            f"translation Lipschitz ratios exceed bound: h {h_ratio:.6g} vs "
            f"{slack * xu:.6g}, l {l_ratio:.6g} vs {slack * xv:.6g}")
    return result


def boundary_gap_bound(u: GridFunction, v: GridFunction, sys: VectorFieldSystem,
                       h, oracle: DistanceOracle, delta: float, tau: float,
                       flow_steps: int = 16):
    """Rim-adjacent translation gap against -tau + 2 delta (|Xu| + |Xv|).

    Evaluates u_h - v_h on interior nodes within oracle distance delta of
    the rim and returns (worst gap, bound); the bound carries the
    interpolation slack factor.
    """
    grid = u.grid
    inner = shrunken_domain(oracle, delta, grid, squared=False, strict=True)
    near_rim = grid.interior_mask() & ~inner
    if not near_rim.any():
        raise ValueError("no rim-adjacent nodes at this delta")
    uh = _translated_values(u, sys, h, near_rim, flow_steps)
    vh = _translated_values(v, sys, h, near_rim, flow_steps)
    diff = uh - vh
    ok = np.isfinite(diff)
    worst = float(np.max(diff[ok])) if ok.any() else np.nan
    grad_part = 2.0 * delta * (horizontal_sup_norm(sys, u)
                               + horizontal_sup_norm(sys, v))
    return worst, -tau + LIPSCHITZ_SLACK * grad_part


# ---------------------------------------------------------------------------
# scenario reports
# ---------------------------------------------------------------------------

@dataclass
class ScenarioReport:
    scenario_id: str
    seed: int
    max_interior_gap: float = np.nan
    max_boundary_gap: float = np.nan
    argmax_nodes: list = dc_field(default_factory=list)
    fitted_constants: dict = dc_field(default_factory=dict)
    violations: list = dc_field(default_factory=list)
    verdicts: dict = dc_field(default_factory=dict)
    stage_errors: list = dc_field(default_factory=list)
    tables: dict = dc_field(default_factory=dict)
    runtime_ms: float = 0.0

    @property
    def passed(self) -> bool:
        return (not self.stage_errors and not self.violations
                and all(v == "pass" for v in self.verdicts.values()))

    def to_text(self) -> str:
        # runtime is deliberately omitted: identical config + seed must give
        # byte-identical report text
        lines = [f"scenario: {self.scenario_id}", f"seed: {self.seed}"]
        lines.append(f"max_interior_gap: {_fmt(self.max_interior_gap)}")
        lines.append(f"max_boundary_gap: {_fmt(self.max_boundary_gap)}")
        lines.append("argmax_nodes: " + "; ".join(str(a) for a in self.argmax_nodes[:8]))
        lines.append("[verdicts]")
        for k in sorted(self.verdicts):
            lines.append(f"  {k}: {self.verdicts[k]}")
        lines.append("[fitted_constants]")
        for k in sorted(self.fitted_constants):
            lines.append(f"  {k}: {_fmt(self.fitted_constants[k])}")
        lines.append("[violations]")
        for check, where, margin in self.violations:
            lines.append(f"  {check} @ {where}: {_fmt(margin)}")
        lines.append("[stage_errors]")
        for stage, msg in self.stage_errors:
            lines.append(f"  {stage}: {msg}")
        lines.append(f"result: {'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"

    def write(self, outdir, figures: bool = True) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.txt").write_text(self.to_text())
        for name, (header, rows) in sorted(self.tables.items()):
            with open(outdir / f"{name}.csv", "w") as fh:
                fh.write(",".join(header) + "\n")
                for row in rows:
                    fh.write(",".join(_fmt(x) for x in row) + "\n")
        with open(outdir / "run.log", "w") as fh:
            fh.write(f"runtime_ms: {self.runtime_ms:.1f}\n")
        if figures:
            from . import figures as _figures

            _figures.render_report_figures(self, outdir)
        return outdir / "report.txt"


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "nan"
    return f"{float(x):.12g}"


def scenario_run(source, outdir=None, figures: bool = True) -> ScenarioReport:
    """Execute a scenario end to end; stage failures are recorded, not raised.

    The pipeline builds the system, oracle, and operator, runs the
    configured checks, and (when ``outdir`` is given) writes the report,
    CSV tables, and matplotlib figures there.  Deterministic for a given
    config and seed.
    """
    t0 = time.perf_counter()
    sc = _scen.load_scenario(source)
    report = ScenarioReport(sc.scenario_id, sc.seed)
    state: dict = {}

    def stage(name, fn, requires=()):
        if any(r not in state for r in requires):
            return None
        try:
            out = fn()
            state[name] = out
            return out
        except Exception as exc:
            report.stage_errors.append((name, f"{type(exc).__name__}: {exc}"))
            return None

    stage("system", lambda: _scen.build_system(sc.raw))
    stage("domain", lambda: _scen.build_domain(sc.raw))
    stage("oracle", lambda: _scen.build_oracle(sc.raw, state["system"],
                                               state["domain"][0]),
          requires=("system", "domain"))
    stage("operator", lambda: _scen.build_operator(sc.raw, state["system"].m),
          requires=("system",))
    if "system" in state:
        stage("settings", lambda: _scen.apply_settings(sc, state["system"].n))

    for check in sc.raw.get("checks", _scen.DEFAULT_CHECKS):
        _run_check(check, sc, state, report)

    report.runtime_ms = 1000.0 * (time.perf_counter() - t0)
    if outdir is not None:
        report.write(outdir, figures=figures)
    return report


def _run_check(check: str, sc, state: dict, report: ScenarioReport) -> None:
    try:
        handler = _CHECKS[check]
    except KeyError:
        report.stage_errors.append((check, "unknown check"))
        return
    missing = [r for r in handler.requires if r not in state]
    if missing:
        report.stage_errors.append((check, f"skipped: missing {', '.join(missing)}"))
        return
    try:
        handler(check, sc, state, report)
        report.verdicts.setdefault(check, "pass")
    except ProbeAssertionError as exc:
        report.verdicts[check] = "fail"
        report.violations.append((check, "-", str(exc)))
    except Exception as exc:
        report.stage_errors.append((check, f"{type(exc).__name__}: {exc}"))


class _Check:
    def __init__(self, fn, requires):
        self.fn = fn
        self.requires = requires

    def __call__(self, *args):
        return self.fn(*args)


def _check(name, requires=()):
    def deco(fn):
        _CHECKS[name] = _Check(fn, requires)
        return fn

    return deco


_CHECKS: dict = {}


@_check("structure", requires=("operator",))
def _chk_structure(check, sc, state, report):
    cfg = sc.raw.get("structure", {})
    rep = check_structure(state["operator"], int(cfg.get("samples", 2000)),
                          seed=sc.seed)
    report.fitted_constants["structure_worst_margin"] = max(
        rep.worst_margins.values())
    for item in rep.violations[:32]:
        report.violations.append(("structure", item[1], item[2]))
    if rep.violations:
        report.verdicts[check] = "fail"


@_check("growth", requires=("operator",))
def _chk_growth(check, sc, state, report):
    rng = np.random.default_rng(sc.seed + 1)
    op = state["operator"]
    worst = np.inf
    for theta in (0.5, 1.0, 2.0):
        dirs = rng.normal(size=(200, op.m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        mags = np.exp(rng.uniform(np.log(theta), np.log(4 * theta), size=200))
        rep = growth_lower_bound(op, theta, dirs * mags[:, None], seed=sc.seed)
        worst = min(worst, rep.worst_margin)
    report.fitted_constants["growth_worst_margin"] = worst
    if worst < -1e-12:
        raise ProbeAssertionError(f"growth margin {worst:.3e} below -1e-12")


@_check("hormander", requires=("system", "domain"))
def _chk_hormander(check, sc, state, report):
    from .geometry import hormander_rank

    sysm = state["system"]
    box, _ = state["domain"]
    rng = np.random.default_rng(sc.seed + 2)
    pts = rng.uniform(np.asarray(box.lo) * 0.9, np.asarray(box.hi) * 0.9,
                      size=(20, sysm.n))
    steps = []
    for p in pts:
        rank, step = hormander_rank(sysm, p, max_order=4)
        if rank != sysm.n:
            raise ProbeAssertionError(f"rank deficit at {p}: {rank} < {sysm.n}")
        steps.append(step)
    report.fitted_constants["hormander_max_step"] = max(steps)


@_check("nsw", requires=("system", "oracle", "domain"))
def _chk_nsw(check, sc, state, report):
    box, _ = state["domain"]
    center = 0.5 * (np.asarray(box.lo) + np.asarray(box.hi))
    res = nsw_probe(state["system"], state["oracle"], center,
                    samples=int(sc.raw.get("nsw", {}).get("samples", 200)),
                    seed=sc.seed)
    report.fitted_constants["nsw_exponent"] = res.fit_exponent
    report.fitted_constants["nsw_c1"] = res.c1
    report.fitted_constants["nsw_c2"] = res.c2
    report.tables["nsw"] = (("exponent", "c1", "c2", "pairs"),
                            [(res.fit_exponent, res.c1, res.c2, res.n_pairs)])


@_check("solve", requires=("system", "operator", "domain"))
def _chk_solve(check, sc, state, report):
    _, grid = state["domain"]
    u_sub, v_super = make_sub_super_pair(
        state["operator"], state["system"], grid, sc.boundary, sc.gap,
        sc.solver_params)
    state["pair"] = (u_sub, v_super)
    res_u, _ = discrete_operator(state["operator"], state["system"], u_sub)
    report.fitted_constants["sub_residual"] = float(
        np.max(np.abs(res_u[grid.interior_mask()])))


@_check("comparison", requires=("pair",))
def _chk_comparison(check, sc, state, report):
    u_sub, v_super = state["pair"]
    res = comparison_check(u_sub, v_super, tolerance=1e-6)
    report.max_interior_gap = res.max_interior_gap
    report.max_boundary_gap = res.max_boundary_gap
    report.argmax_nodes = res.argmax_nodes[:16]
    if not res.passed:
        raise ProbeAssertionError(
            f"interior gap {res.max_interior_gap:.6g} exceeds boundary gap "
            f"{res.max_boundary_gap:.6g} + 1e-6")


@_check("strong-max", requires=("pair", "operator", "system"))
def _chk_strong_max(check, sc, state, report):
    u_sub, _ = state["pair"]
    shifted = u_sub.copy_with(values=u_sub.values - np.min(u_sub.values))
    res = strong_max_probe(state["operator"], state["system"], shifted,
                           tolerance=10 * sc.solver_params.tolerance)
    report.fitted_constants["strong_max_oscillation"] = res.oscillation
    report.verdicts["strong-max"] = "pass" if res.passed else "fail"
    if not res.passed:
        raise ProbeAssertionError(f"strong maximum probe verdict {res.verdict}")


@_check("envelope", requires=("pair", "oracle", "domain"))
def _chk_envelope(check, sc, state, report):
    u_sub, v_super = state["pair"]
    oracle = state["oracle"]
    _, grid = state["domain"]
    epsilons = sc.epsilons or [0.1, 0.05]
    r0 = 2.0 * max(u_sub.sup_norm(), v_super.sup_norm())
    rows = []
    prev_sup = None
    for eps in epsilons:
        sup_res = sup_convolution(u_sub, eps, oracle)
        inf_res = inf_convolution(v_super, eps, oracle)
        if np.min(sup_res.field.values - u_sub.values) < -1e-12:
            raise ProbeAssertionError("sup-convolution fails u <= u^eps")
        if np.max(inf_res.field.values - v_super.values) > 1e-12:
            raise ProbeAssertionError("inf-convolution fails v_eps <= v")
        if prev_sup is not None and \
                np.max(sup_res.field.values - prev_sup) > 1e-12:
            raise ProbeAssertionError("sup-convolution not monotone in eps")
        prev_sup = sup_res.field.values
        lam_ok, lam = semiconvexity_check(sup_res.field, lambda_cap=np.inf)
        budget = semiconvexity_budget(sup_res, oracle)
        if lam > budget / eps + 1e-6:
            raise ProbeAssertionError(
                f"semiconvexity {lam:.6g} exceeds budget {budget / eps:.6g}")
        mask = shrunken_domain(oracle, (1 + 4 * r0) * eps, grid)
        if mask.any():
            comp = comparison_check(sup_res.field, inf_res.field, mask,
                                    tolerance=1e-6)
            verdict = "pass" if comp.passed else "fail"
        else:
            verdict = "empty-mask"
        rows.append((eps, float(np.max(sup_res.field.values - u_sub.values)),
                     lam, budget / eps, int(mask.sum()), verdict))
        if verdict == "fail":
            raise ProbeAssertionError(f"envelope comparison failed at eps={eps}")
    report.tables["envelope"] = (
        ("epsilon", "sup_deviation", "lambda", "lambda_budget", "mask_nodes",
         "comparison"), rows)
    report.fitted_constants["envelope_lambda_last"] = rows[-1][2]


@_check("translation", requires=("pair", "system", "oracle", "domain"))
def _chk_translation(check, sc, state, report):
    u_sub, v_super = state["pair"]
    sysm = state["system"]
    _, grid = state["domain"]
    cfg = sc.translation
    delta = float(cfg.get("delta", 0.06))
    h_norm = float(cfg.get("h_norm", 0.4 * delta))
    npts = int(cfg.get("points", 3))
    axis = np.linspace(-h_norm, h_norm, npts)
    mesh = np.meshgrid(*([axis] * sysm.m), indexing="ij")
    shifts = np.stack([m.ravel() for m in mesh], axis=1)
    keep = np.linalg.norm(shifts, axis=1) < delta
    shifts = shifts[keep]
    mask = shrunken_domain(state["oracle"], delta, grid, squared=False,
                           strict=True)
    table = translation_max_map(u_sub, v_super, sysm, delta, shifts, shifts,
                                mask=mask)
    state["mtable"] = table
    rows = []
    for i, h in enumerate(table.h_list):
        for j, l in enumerate(table.l_list):
            rows.append(tuple(h) + tuple(l)
                        + (table.M[i, j], int(table.valid[i, j])))
    header = tuple(f"h{k+1}" for k in range(sysm.m)) \
        + tuple(f"l{k+1}" for k in range(sysm.m)) + ("M", "valid")
    report.tables["mtable"] = (header, rows)


@_check("lipschitz", requires=("mtable", "pair", "system"))
def _chk_lipschitz(check, sc, state, report):
    u_sub, v_super = state["pair"]
    res = lipschitz_probe(state["mtable"], u_sub, v_super, state["system"])
    report.fitted_constants["lipschitz_h_ratio"] = res.h_ratio
    report.fitted_constants["lipschitz_l_ratio"] = res.l_ratio
    report.fitted_constants["xu_sup"] = res.xu_norm
    report.fitted_constants["xv_sup"] = res.xv_norm


@_check("jensen", requires=("pair", "oracle"))
def _chk_jensen(check, sc, state, report):
    u_sub, _ = state["pair"]
    oracle = state["oracle"]
    eps = (sc.epsilons or [0.1])[0]
    res = sup_convolution(u_sub, eps, oracle)
    w = res.field
    flat = int(np.argmax(w.values))
    xhat = w.grid.nodes().reshape(-1, w.grid.n)[flat]
    r = 4.0 * float(np.max(w.grid.spacing))
    fraction = jensen_probe(w, xhat, r=r, delta=0.05, trials=32, seed=sc.seed)
    report.fitted_constants["jensen_fraction"] = fraction
