import numpy as np
import pytest

import subelliptic as se


def test_euclidean_harmonic_polynomial_is_exact(euclid2, sublap2):
    grid = se.Grid(se.Box((-1.0, -1.0), (1.0, 1.0)), (17, 17))
    poly = se.Quadratic(np.diag([2.0, -2.0]), np.zeros(2))      # x^2 - y^2
    u = se.solve_dirichlet(sublap2, euclid2, grid, poly,
                           se.SolverParams(tolerance=1e-10))
    exact = se.GridFunction.from_callable(
        grid, lambda p: p[..., 0] ** 2 - p[..., 1] ** 2)
    assert np.max(np.abs(u.values - exact.values)) <= 1e-8


def test_constant_data_one_iteration(euclid2, heis, sublap2, infinity2, pnorm4):
    for sys, ops in ((euclid2, (sublap2, infinity2, pnorm4)),
                     (heis, (sublap2, infinity2, pnorm4))):
        grid = se.Grid(se.Box((-1.0,) * sys.n, (1.0,) * sys.n), (9,) * sys.n)
        for op in ops:
            hist = []
            u = se.solve_dirichlet(op, sys, grid, 0.4, history=hist)
            assert np.array_equal(u.values, np.full(grid.shape, 0.4))
            assert len(hist) == 1 and hist[0][1] == 0.0


def test_residual_of_solution_below_tolerance(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (13, 13, 13))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    u = se.solve_dirichlet(sublap2, heis, grid, bd, se.SolverParams(tolerance=1e-9))
    r = se.residual(sublap2, heis, u)
    assert np.max(np.abs(r.values)) <= 1e-9
    assert np.all(r.values[grid.rim_mask()] == 0.0)


def test_residual_exact_polynomial_cancellation(euclid2, sublap2):
    grid = se.Grid(se.Box((-1.0, -1.0), (1.0, 1.0)), (17, 17))
    exact = se.GridFunction.from_callable(
        grid, lambda p: p[..., 0] ** 2 - p[..., 1] ** 2)
    r = se.residual(sublap2, euclid2, exact)
    assert np.max(np.abs(r.values)) <= 1e-10


def test_residual_of_noise_is_loud_but_not_an_error(euclid2, sublap2, rng):
    grid = se.Grid(se.Box((-1.0, -1.0), (1.0, 1.0)), (17, 17))
    noisy = se.GridFunction(grid, rng.normal(size=grid.shape))
    r = se.residual(sublap2, euclid2, noisy)
    assert np.max(np.abs(r.values)) > 1.0


ANNULUS_BOX = se.Box((0.8125, -0.4375, -0.4375), (1.6875, 0.4375, 0.4375))


def test_heisenberg_fundamental_solution_dirichlet(heis, sublap2):
    # annulus-like box excluding the gauge origin; data N^-2
    fs = se.GaugePower(-2.0)
    errs = []
    for nodes in (15, 29):
        grid = se.Grid(ANNULUS_BOX, (nodes,) * 3)
        u = se.solve_dirichlet(sublap2, heis, grid, fs,
                               se.SolverParams(tolerance=1e-10))
        exact = se.GridFunction.from_callable(grid, lambda p, f=fs: [f.value(q) for q in p])
        errs.append(np.max(np.abs(u.values - exact.values)))
    assert errs[1] <= 0.5 * errs[0]


def test_grid_refinement_residual_order(heis, sublap2):
    fs = se.GaugePower(-2.0)
    hs, resids = [], []
    for h_inv in (16, 32, 64):
        grid = se.Grid(ANNULUS_BOX, (int(0.875 * h_inv) + 1,) * 3)
        gf = se.GridFunction.from_callable(grid, lambda p, f=fs: [f.value(q) for q in p])
        r = se.residual(sublap2, heis, gf)
        hs.append(1.0 / h_inv)
        resids.append(float(np.max(np.abs(r.values))))
    order = np.polyfit(np.log(hs), np.log(resids), 1)[0]
    assert order >= 1.5


def test_sub_super_pair_linear_superposition(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (9, 9, 9))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    u0, v0 = se.make_sub_super_pair(sublap2, heis, grid, bd, 0.0,
                                    se.SolverParams(tolerance=1e-10))
    assert np.max(np.abs(u0.values - v0.values)) <= 1e-9
    u, v = se.make_sub_super_pair(sublap2, heis, grid, bd, 0.1,
                                  se.SolverParams(tolerance=1e-10))
    assert np.max(np.abs(v.values - u.values - 0.1)) <= 1e-8


def test_sub_super_pair_pnorm_certified(heis, pnorm4):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (13, 13, 13))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    u, v = se.make_sub_super_pair(pnorm4, heis, grid, bd, 0.1,
                                  se.SolverParams(tolerance=1e-7))
    rim = grid.rim_mask()
    assert np.all(v.values[rim] >= u.values[rim])
    res_u, _ = se.solver.discrete_operator(pnorm4, heis, u)
    res_v, _ = se.solver.discrete_operator(pnorm4, heis, v)
    interior = grid.interior_mask()
    assert np.max(res_u[interior]) <= 1e-6
    assert np.min(res_v[interior]) >= -1e-6


def test_discrete_comparison_ordered_boundary_data(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (13, 13, 13))
    f1 = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))

    def f2(p):
        p = np.asarray(p, dtype=float)
        return f1.value(p) + 0.02 * (1.5 + np.sin(3 * p[0]))

    u1 = se.solve_dirichlet(sublap2, heis, grid, f1, se.SolverParams(tolerance=1e-10))
    u2 = se.solve_dirichlet(sublap2, heis, grid, f2, se.SolverParams(tolerance=1e-10))
    assert np.all(u1.values <= u2.values + 1e-8)


def test_infinity_solver_small_grid(heis, infinity2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (11, 11, 11))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    u = se.solve_dirichlet(infinity2, heis, grid, bd, se.SolverParams(tolerance=1e-7))
    res, _ = se.solver.discrete_operator(infinity2, heis, u)
    assert np.max(np.abs(res[grid.interior_mask()])) <= 1e-7


def test_nonconvergence_error(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (9, 9, 9))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    with pytest.raises(se.NonconvergenceError) as info:
        se.solve_dirichlet(sublap2, heis, grid, bd,
                           se.SolverParams(tolerance=1e-12, max_iterations=3,
                                           accelerate=False))
    assert info.value.residual > 0


def test_boundary_data_must_be_finite(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (9, 9, 9))
    with pytest.raises(ValueError):
        se.solve_dirichlet(sublap2, heis, grid, lambda p: np.inf)


def test_pseudo_time_path_agrees_with_policy(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (9, 9, 9))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    fast = se.solve_dirichlet(sublap2, heis, grid, bd,
                              se.SolverParams(tolerance=1e-9))
    slow = se.solve_dirichlet(sublap2, heis, grid, bd,
                              se.SolverParams(tolerance=1e-9, accelerate=False))
    assert np.max(np.abs(fast.values - slow.values)) <= 1e-7


def test_solver_history_is_monotone_overall(heis, sublap2):
    grid = se.Grid(se.Box((-1.0,) * 3, (1.0,) * 3), (13, 13, 13))
    bd = se.Quadratic(np.diag([0.5, -0.5, 0.6]), np.zeros(3))
    hist = []
    se.solve_dirichlet(sublap2, heis, grid, bd, se.SolverParams(tolerance=1e-9),
                       history=hist)
    assert hist[-1][1] <= 1e-9
    assert hist[0][1] > hist[-1][1]
