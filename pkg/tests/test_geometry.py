import numpy as np
import pytest
import sympy as sp

import subelliptic as se
from subelliptic.geometry import flow_many


def _sympy_bracket(sigma_exprs, coords, i, j):
    """Symbolic [X_i, X_j] from the columns of a sympy sigma matrix."""
    n = len(coords)
    col_i = [sigma_exprs[a][i] for a in range(n)]
    col_j = [sigma_exprs[a][j] for a in range(n)]
    out = []
    for a in range(n):
        expr = sum(col_i[b] * sp.diff(col_j[a], coords[b])
                   - col_j[b] * sp.diff(col_i[a], coords[b]) for b in range(n))
        out.append(sp.simplify(expr))
    return out


def test_bracket_euclidean_commutes(euclid2, rng):
    br = se.lie_bracket(euclid2, 0, 1)
    for _ in range(5):
        assert np.allclose(br(rng.uniform(-1, 1, 2)), 0.0)


def test_bracket_heisenberg_matches_symbolic(heis, rng):
    x, y, t = sp.symbols("x y t")
    sigma = [[1, 0], [0, 1], [-y / 2, x / 2]]
    sym = _sympy_bracket(sigma, (x, y, t), 0, 1)
    assert sym == [0, 0, 1]
    for _ in range(10):
        p = rng.uniform(-1, 1, 3)
        assert np.allclose(se.lie_bracket(heis, 0, 1)(p), [0.0, 0.0, 1.0], atol=1e-12)


def test_bracket_grushin_matches_symbolic(grushin, rng):
    x, y = sp.symbols("x y")
    sigma = [[1, 0], [0, x]]
    sym = _sympy_bracket(sigma, (x, y), 0, 1)
    assert sym == [0, 1]
    for _ in range(10):
        p = rng.uniform(-1, 1, 2)
        assert np.allclose(se.lie_bracket(grushin, 0, 1)(p), [0.0, 1.0], atol=1e-12)


def test_bracket_antisymmetry(heis, rng):
    bij = se.lie_bracket(heis, 0, 1)
    bji = se.lie_bracket(heis, 1, 0)
    for _ in range(20):
        p = rng.uniform(-1, 1, 3)
        assert np.allclose(bij(p), -np.asarray(bji(p)), atol=1e-14)


def test_bracket_index_out_of_range(heis):
    with pytest.raises(IndexError):
        se.lie_bracket(heis, 0, 2)


def test_rank_euclidean(euclid2, rng):
    rank, step = se.hormander_rank(euclid2, rng.uniform(-1, 1, 2), 3)
    assert (rank, step) == (2, 1)


def test_rank_heisenberg_random_points(heis, rng):
    for _ in range(100):
        rank, step = se.hormander_rank(heis, rng.uniform(-1, 1, 3), 2)
        assert (rank, step) == (3, 2)


def test_rank_grushin_step_structure(grushin, rng):
    assert se.hormander_rank(grushin, np.array([0.0, 0.0]), 2) == (2, 2)
    for _ in range(20):
        y = rng.uniform(-1, 1)
        assert se.hormander_rank(grushin, np.array([0.0, y]), 2)[1] == 2
        x = rng.uniform(0.2, 1.0) * rng.choice([-1, 1])
        assert se.hormander_rank(grushin, np.array([x, y]), 2)[1] == 1


def test_rank_deficiency_is_a_result():
    # single field in R^2 never spans
    sys = se.VectorFieldSystem(
        2, 1, lambda x: np.array([[1.0], [0.0]]),
        lambda x: np.zeros((1, 2, 2)), name="line")
    rank, step = se.hormander_rank(sys, np.zeros(2), 3)
    assert rank == 1 and step is None


def test_exp_flow_euclidean_translation(euclid2, rng):
    x = rng.uniform(-1, 1, 2)
    h = rng.uniform(-0.5, 0.5, 2)
    assert np.allclose(se.exp_flow(euclid2, x, h), x + h, atol=1e-13)


def test_exp_flow_heisenberg_closed_form(heis):
    assert np.allclose(se.exp_flow(heis, np.zeros(3), np.array([1.0, 1.0])),
                       [1.0, 1.0, 0.0], atol=1e-12)
    assert np.allclose(se.exp_flow(heis, np.zeros(3), np.array([1.0, 0.0])),
                       [1.0, 0.0, 0.0], atol=1e-12)
    # closed form: t gains (x0 h2 - y0 h1)/2
    x0 = np.array([0.4, -0.3, 0.2])
    h = np.array([0.5, 0.7])
    expect = x0 + [h[0], h[1], (x0[0] * h[1] - x0[1] * h[0]) / 2]
    assert np.allclose(se.exp_flow(heis, x0, h), expect, atol=1e-12)


def test_exp_flow_zero_is_exact(heis):
    x = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(se.exp_flow(heis, x, np.zeros(2)), x)


def test_exp_flow_reversal(heis, rng):
    x = rng.uniform(-0.5, 0.5, 3)
    h = rng.uniform(-0.5, 0.5, 2)
    back = se.exp_flow(heis, se.exp_flow(heis, x, h), -h)
    assert np.max(np.abs(back - x)) < 1e-12


def test_exp_flow_group_law_single_direction(heis, grushin, rng):
    for sys in (heis, grushin):
        x = rng.uniform(-0.3, 0.3, sys.n)
        e0 = np.zeros(sys.m)
        e0[0] = 1.0
        s, t = 0.3, 0.45
        once = se.exp_flow(sys, x, (s + t) * e0)
        twice = se.exp_flow(sys, se.exp_flow(sys, x, s * e0), t * e0)
        assert np.max(np.abs(once - twice)) < 1e-10


def test_exp_flow_domain_exit(heis):
    box = se.Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    with pytest.raises(se.FlowExitsDomainError) as info:
        se.exp_flow(heis, np.array([0.4, 0.0, 0.0]), np.array([1.0, 0.0]), box=box)
    assert 0.0 < info.value.exit_time <= 1.0


def test_flow_many_marks_exits(heis):
    box = se.Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    pts = np.array([[0.0, 0.0, 0.0], [0.45, 0.0, 0.0]])
    ends, alive = flow_many(heis, pts, np.array([0.2, 0.0]), box=box)
    assert alive.tolist() == [True, False]
    assert np.allclose(ends[0], [0.2, 0.0, 0.0], atol=1e-12)


def test_flow_jacobian_identity_cases(heis, euclid2, rng):
    assert np.array_equal(se.flow_jacobian(heis, rng.uniform(-1, 1, 3), np.zeros(2)),
                          np.eye(3))
    J = se.flow_jacobian(euclid2, rng.uniform(-1, 1, 2), np.array([0.3, -0.2]))
    assert np.allclose(J, np.eye(2), atol=1e-13)


def test_flow_jacobian_matches_finite_differences(heis):
    x = np.zeros(3)
    h = np.array([1.0, 0.0])
    J = se.flow_jacobian(heis, x, h)
    fd = np.zeros((3, 3))
    for b in range(3):
        e = np.zeros(3)
        e[b] = 1e-6
        fd[:, b] = (se.exp_flow(heis, x + e, h) - se.exp_flow(heis, x - e, h)) / 2e-6
    assert np.max(np.abs(J - fd)) < 1e-6


def test_pullback_identity_map(heis, rng):
    pulled = se.pullback_system(heis, se.DiffeoMap.identity(3))
    for _ in range(5):
        p = rng.uniform(-1, 1, 3)
        assert np.allclose(pulled.field_matrix(p), heis.field_matrix(p), atol=1e-12)


def test_pullback_translation_constant_fields(euclid2, rng):
    pulled = se.pullback_system(euclid2, se.DiffeoMap.translation([0.3, -0.7]))
    p = rng.uniform(-1, 1, 2)
    assert np.allclose(pulled.field_matrix(p), np.eye(2), atol=1e-12)


def test_pullback_chain_rule_heisenberg(heis, rng):
    # Xhat_i (f o Theta) = (X_i f) o Theta on f = x^2 + y t
    theta = se.DiffeoMap.from_flow(heis, np.array([0.007, 0.007]))
    pulled = se.pullback_system(heis, theta)
    grad_f = lambda p: np.array([2 * p[0], p[2], p[1]])
    f = lambda p: p[0] ** 2 + p[1] * p[2]
    worst = 0.0
    for _ in range(20):
        t = rng.uniform(-0.5, 0.5, 3)
        e = 1e-6
        g = np.array([(f(theta.forward(t + dv)) - f(theta.forward(t - dv))) / (2 * e)
                      for dv in np.eye(3) * e])
        lhs = pulled.field_matrix(t).T @ g
        rhs = heis.field_matrix(theta.forward(t)).T @ grad_f(theta.forward(t))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    assert worst <= 1e-5


def test_pullback_chain_rule_many_smooth_functions(heis, rng):
    theta = se.DiffeoMap.from_flow(heis, np.array([-0.01, 0.004]))
    pulled = se.pullback_system(heis, theta)
    worst = 0.0
    for trial in range(5):
        c = rng.uniform(-1, 1, 6)
        f = lambda p: c[0]*p[0] + c[1]*p[1] + c[2]*p[2] + c[3]*p[0]*p[1] \
            + c[4]*p[1]*p[2] + c[5]*p[0]**2
        grad_f = lambda p: np.array([c[0] + c[3]*p[1] + 2*c[5]*p[0],
                                     c[1] + c[3]*p[0] + c[4]*p[2],
                                     c[2] + c[4]*p[1]])
        for _ in range(10):
            t = rng.uniform(-0.5, 0.5, 3)
            e = 1e-6
            g = np.array([(f(theta.forward(t + dv)) - f(theta.forward(t - dv))) / (2 * e)
                          for dv in np.eye(3) * e])
            lhs = pulled.field_matrix(t).T @ g
            rhs = heis.field_matrix(theta.forward(t)).T @ grad_f(theta.forward(t))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    assert worst <= 1e-5


def test_bch_flow_composition_consistency(heis, rng):
    # exp_x(h) vs exp_{exp_x(h')}(h - h'): first-order remainder O(|h-h'|(|h|+|h'|))
    for _ in range(10):
        x = rng.uniform(-0.3, 0.3, 3)
        h = rng.uniform(-0.08, 0.08, 2)
        hp = h + rng.uniform(-0.02, 0.02, 2)
        direct = se.exp_flow(heis, x, h)
        composed = se.exp_flow(heis, se.exp_flow(heis, x, hp), h - hp)
        gap = np.linalg.norm(direct - composed)
        bound = 4.0 * np.linalg.norm(h - hp) * (np.linalg.norm(h) + np.linalg.norm(hp))
        assert gap <= bound + 1e-12


def test_perturbed_operator_euclidean_exact(euclid2, sublap2):
    f = se.Quadratic(np.array([[2.0, 0.3], [0.3, -1.0]]), np.array([0.1, 0.2]))
    rows = se.perturbed_operator_convergence(
        euclid2, sublap2, np.zeros(2), f,
        [np.array([0.1, 0.05]), np.array([0.01, 0.0]), np.zeros(2)])
    assert rows[-1] == (0.0, 0.0)
    for _, dev in rows:
        assert dev <= 1e-9


def test_perturbed_operator_heisenberg_converges(heis, sublap2):
    f = se.Quadratic(np.diag([2.0, 2.0, 2.0]), np.zeros(3))
    hs = [np.array([10.0 ** -k, 0.5 * 10.0 ** -k]) for k in range(1, 5)]
    rows = se.perturbed_operator_convergence(heis, sublap2, np.zeros(3), f, hs)
    devs = [dev for _, dev in rows]
    assert all(b < a for a, b in zip(devs, devs[1:]))
    slope = np.polyfit(np.log([r[0] for r in rows]), np.log(devs), 1)[0]
    assert slope >= 1.0


def test_system_validation(heis, grushin, rng):
    pts = rng.uniform(-0.8, 0.8, size=(5, 3))
    heis.validate(pts)
    grushin.validate(rng.uniform(-0.8, 0.8, size=(5, 2)))
    bad = se.VectorFieldSystem(
        2, 1, lambda x: np.array([[x[0]], [0.0]]),
        lambda x: np.zeros((1, 2, 2)), name="bad-dsigma")
    with pytest.raises(ValueError):
        bad.validate([np.array([0.5, 0.0])])
