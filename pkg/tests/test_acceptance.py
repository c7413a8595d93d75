"""Acceptance criteria, one test per criterion, run at desk scale.

Each test prints a single PASS line with its measured quantities (visible
under ``pytest -s``); a failed assertion marks the criterion red.
"""

import time

import numpy as np
import pytest

import subelliptic as se
from subelliptic.errors import ProbeAssertionError
from subelliptic.metric import heisenberg_gauge


def _report(name, detail):
    print(f"ACCEPTANCE {name}: PASS  [{detail}]")


def test_criterion_01_hormander_certification():
    t0 = time.perf_counter()
    heis = se.heisenberg_system()
    gru = se.grushin_system()
    rng = np.random.default_rng(11)
    for _ in range(100):
        assert se.hormander_rank(heis, rng.uniform(-1, 1, 3), 2) == (3, 2)
    for _ in range(20):
        y = rng.uniform(-1, 1)
        assert se.hormander_rank(gru, np.array([0.0, y]), 2) == (2, 2)
        x = rng.uniform(0.15, 1.0) * rng.choice([-1, 1])
        assert se.hormander_rank(gru, np.array([x, y]), 2)[1] == 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report("1 hormander", f"heisenberg (3,2) x100, grushin split, {elapsed:.2f}s")


def test_criterion_02_structure_suites():
    t0 = time.perf_counter()
    ok_sub = se.check_structure(se.sublaplacian_operator(2), 10_000, seed=3)
    assert ok_sub.passed
    ok_inf = se.check_structure(se.infinity_operator(2), 10_000, seed=3)
    assert ok_inf.passed
    wrong = se.infinity_operator(2)
    wrong.phi = se.operators.power_profile(1)
    bad = se.check_structure(wrong, 10_000, seed=3)
    assert len(bad.violations) >= 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _report("2 structure", f"clean suites pass, wrong profile: "
            f"{len(bad.violations)} violations, {elapsed:.1f}s")


def test_criterion_03_growth_lower_bound():
    rng = np.random.default_rng(5)
    worst = np.inf
    for op in (se.sublaplacian_operator(2), se.infinity_operator(2)):
        for theta in (0.5, 1.0, 2.0):
            dirs = rng.normal(size=(1000, 2))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            mags = np.exp(rng.uniform(np.log(theta), np.log(3 * theta), 1000))
            rep = se.growth_lower_bound(op, theta, dirs * mags[:, None])
            assert rep.worst_margin >= -1e-12
            assert not rep.rejected
            worst = min(worst, rep.worst_margin)
    _report("3 growth", f"worst margin {worst:.2e} >= -1e-12")


def test_criterion_04_fundamental_solution():
    t0 = time.perf_counter()
    heis = se.heisenberg_system()
    op = se.sublaplacian_operator(2)
    fs = se.GaugePower(-2.0)
    rng = np.random.default_rng(13)
    worst = 0.0
    kept = 0
    while kept < 100:
        p = rng.uniform(-1.5, 1.5, 3)
        if heisenberg_gauge(p) < 0.5:
            continue
        kept += 1
        worst = max(worst, abs(se.evaluate_operator(op, heis, fs, p)))
    assert worst <= 1e-6

    box = se.Box((0.8125, -0.4375, -0.4375), (1.6875, 0.4375, 0.4375))
    hs, resids = [], []
    for h_inv in (16, 32, 64):
        grid = se.Grid(box, (int(0.875 * h_inv) + 1,) * 3)
        gf = se.GridFunction.from_callable(grid, lambda p, f=fs: [f.value(q) for q in p])
        r = se.residual(op, heis, gf)
        hs.append(1.0 / h_inv)
        resids.append(float(np.max(np.abs(r.values))))
    order = float(np.polyfit(np.log(hs), np.log(resids), 1)[0])
    elapsed = time.perf_counter() - t0
    assert order >= 1.5
    assert elapsed < 60.0
    _report("4 fundamental solution",
            f"smooth residual {worst:.2e} <= 1e-6, grid order {order:.2f}, "
            f"{elapsed:.0f}s")


def test_criterion_05_envelope_suite():
    t0 = time.perf_counter()
    gauge = se.GaugeOracle("heisenberg")
    grid = se.Grid(se.Box((-0.6,) * 3, (0.6,) * 3), (64, 64, 64))
    u = se.GridFunction.from_callable(
        grid, lambda p: np.minimum(0.1, 0.5 * heisenberg_gauge(p)))
    ladder = (0.1, 0.05, 0.025)
    results = {}
    lam_rows = []
    for eps in ladder:
        res = se.sup_convolution(u, eps, gauge)
        assert np.min(res.field.values - u.values) >= 0.0          # ordering
        results[eps] = res
        ok, lam = se.semiconvexity_check(res.field, np.inf)
        budget = se.semiconvexity_budget(res, gauge) / eps
        assert lam <= budget + 1e-9                                # Lambda <= C_d/eps
        lam_rows.append((eps, lam, budget))
    for big, small in zip(ladder, ladder[1:]):                     # monotone in eps
        assert np.all(results[small].field.values
                      <= results[big].field.values + 1e-12)

    rng = np.random.default_rng(2)
    pert = 0.02 * np.sin(7.0 * grid.nodes()[..., 0]) \
        + 0.01 * rng.uniform(-1, 1, grid.shape)
    u2 = u.copy_with(values=u.values + pert)
    a = results[0.1].field.values
    b = se.sup_convolution(u2, 0.1, gauge).field.values
    assert np.max(np.abs(a - b)) <= np.max(np.abs(pert)) + 1e-12   # contraction

    # Euclidean Moreau closed form on the same 64^3 resolution
    egrid = se.Grid(se.Box((-0.5,) * 3, (0.5,) * 3), (64, 64, 64))
    eoracle = se.GaugeOracle("euclidean", n=3)
    avec = np.array([0.2, 0.15, 0.1])
    ulin = se.GridFunction.from_callable(egrid, lambda p: p @ avec)
    eps = 0.05
    env = se.sup_convolution(ulin, eps, eoracle)
    inner = np.all(np.abs(egrid.nodes()) <= 0.35, axis=-1)   # away from the rim
    expect = ulin.values + eps * (avec @ avec) / 2
    moreau_err = float(np.max(np.abs(env.field.values[inner] - expect[inner])))
    tol = 2.0 * float(np.max(egrid.spacing)) * np.linalg.norm(avec)
    assert moreau_err <= tol

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _report("5 envelope suite",
            f"lambda vs budget {lam_rows[0][1]:.2f}<={lam_rows[0][2]:.0f}, "
            f"moreau err {moreau_err:.2e} <= {tol:.2e}, {elapsed:.0f}s on 64^3")


def test_criterion_06_nsw_probe():
    eu = se.euclidean_system(2)
    res_e = se.nsw_probe(eu, se.GaugeOracle("euclidean", n=2), np.zeros(2),
                         samples=200, seed=0)
    assert abs(res_e.fit_exponent - 1.0) <= 0.05
    heis = se.heisenberg_system()
    res_h = se.nsw_probe(heis, se.GaugeOracle("heisenberg"), np.zeros(3),
                         samples=200, seed=0)
    assert 0.5 <= res_h.fit_exponent <= 1.0
    for res in (res_e, res_h):
        assert np.isfinite(res.c1) and np.isfinite(res.c2)
        assert 0 < res.c1 and 0 < res.c2
    _report("6 nsw", f"euclid slope {res_e.fit_exponent:.3f}, heis slope "
            f"{res_h.fit_exponent:.3f}, constants finite")


def test_criterion_07_discrete_comparison_33cubed():
    t0 = time.perf_counter()
    heis = se.heisenberg_system()
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (33, 33, 33))
    gauge = se.GaugeOracle("heisenberg")
    f = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))

    # rim-distance field computed once; the eps masks are thresholds of it
    nodes = grid.nodes()
    rim_d2 = np.full(grid.shape, np.inf)
    interior = grid.interior_mask()
    rim_d2[interior] = gauge.min_d2_to_set(nodes[interior], nodes[grid.rim_mask()])

    ladder = (0.1, 0.05, 0.025)
    for opname, tol in (("sublaplacian", 1e-9), ("pnorm:4", 1e-8)):
        op = se.make_operator(opname, 2)
        params = se.SolverParams(tolerance=tol)
        u_f = se.solve_dirichlet(op, heis, grid, f, params)
        u_g = se.solve_dirichlet(op, heis, grid,
                                 lambda p: f.value(p) + 0.1, params)
        assert np.all(u_f.values <= u_g.values + 1e-6)             # nodewise

        r0 = 2.0 * max(u_f.sup_norm(), u_g.sup_norm())
        for eps in ladder:
            sup_res = se.sup_convolution(u_f, eps, gauge)
            inf_res = se.inf_convolution(u_g, eps, gauge)
            mask = interior & (rim_d2 >= (1 + 4 * r0) * eps)
            assert mask.any()
            comp = se.comparison_check(sup_res.field, inf_res.field, mask,
                                       tolerance=1e-6)
            assert comp.passed, f"{opname} eps={eps}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0
    _report("7 comparison", f"sublaplacian + pnorm:4 on 33^3, full eps ladder, "
            f"{elapsed:.0f}s")


def test_criterion_08_translation_lipschitz_bundled():
    ratios = []
    for name in ("euclidean-identity", "heisenberg-sublaplacian-comparison",
                 "heisenberg-pnorm4-comparison"):
        rep = se.scenario_run(name, outdir=None, figures=False)
        assert rep.verdicts.get("lipschitz") == "pass", name
        assert rep.verdicts.get("translation") == "pass", name
        h_ratio = rep.fitted_constants["lipschitz_h_ratio"]
        l_ratio = rep.fitted_constants["lipschitz_l_ratio"]
        assert h_ratio <= 1.2 * rep.fitted_constants["xu_sup"] + 1e-12
        assert l_ratio <= 1.2 * rep.fitted_constants["xv_sup"] + 1e-12
        ratios.append((name, h_ratio, l_ratio))
    _report("8 lipschitz", "; ".join(f"{n}: h {h:.3f} l {l:.3f}"
                                     for n, h, l in ratios))


def test_criterion_09_perturbed_operator_convergence():
    heis = se.heisenberg_system()
    op = se.sublaplacian_operator(2)
    f = se.Quadratic(np.diag([2.0, 2.0, 2.0]), np.zeros(3))
    hs = [np.array([10.0 ** -k, 0.7 * 10.0 ** -k]) for k in range(1, 5)]
    rows = se.perturbed_operator_convergence(heis, op, np.zeros(3), f, hs)
    devs = [dev for _, dev in rows]
    assert all(b < a for a, b in zip(devs, devs[1:]))              # strict decrease
    slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log(devs), 1)[0])
    assert slope >= 1.0
    _report("9 perturbed operator", f"deviations {devs[0]:.2e}..{devs[-1]:.2e}, "
            f"slope {slope:.2f} >= 1")


def test_criterion_10_inequality_probes():
    systems = {"euclid": se.euclidean_system(2), "heis": se.heisenberg_system()}
    presets = ("sublaplacian", "infinity", "pnorm:4")
    rng = np.random.default_rng(17)
    checked = 0
    for preset in presets:
        op = se.make_operator(preset, 2)
        for k in range(50):
            sysname = "euclid" if k % 2 == 0 else "heis"
            sysm = systems[sysname]
            x0 = rng.uniform(-0.4, 0.4, sysm.n)
            while True:
                G = rng.normal(size=(sysm.n, sysm.n))
                omega = se.Quadratic(G @ G.T / 3.0,
                                     rng.uniform(-1.0, 1.0, sysm.n))
                jet = se.horizontal_jet(sysm, omega, x0)
                if np.linalg.norm(jet.grad) >= 0.2:
                    break
            lam = rng.uniform(0.01, 0.3)
            profile = se.ShiftedSquareProfile(
                lam=lam, u0=omega.value(x0) - rng.uniform(0.0, 2.0))
            res = se.chain_rule_bound_probe(op, sysm, omega, profile, x0)
            assert res.margin >= -1e-9

            p = rng.uniform(-0.3, 0.3, sysm.n)
            res2 = se.linear_perturbation_bound_probe(op, sysm, omega, p, x0,
                                                      seed=int(k))
            assert res2.margin >= 0.0
            checked += 1
    _report("10 probes", f"{checked} randomized configurations, "
            "nonnegative margins throughout")
