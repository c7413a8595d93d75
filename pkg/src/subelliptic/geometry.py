"""Hörmander vector-field systems: brackets, rank, flows, and pullbacks.

A system of m smooth vector fields on an n-dimensional box is described by
the coefficient matrix ``sigma(x)`` (n x m, columns are the fields) and the
Jacobians of its columns ``dsigma(x)`` (m x n x n).  Points and horizontal
coefficient vectors are plain numpy arrays of shape (n,) and (m,).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grids import Box

FD_STEP = 1e-5          # central-difference step for derived Jacobians
RANK_RTOL = 1e-8        # singular values below RANK_RTOL * s_max count as zero
DEFAULT_FLOW_STEPS = 64


class FlowExitsDomainError(Exception):
    """Integration left the domain box; carries the exit time in [0, 1]."""

    def __init__(self, exit_time: float):
        super().__init__(f"flow exited the domain box at time {exit_time:.6g}")
        self.exit_time = exit_time


class SingularJacobianError(Exception):
    pass


@dataclass(eq=False)
class VectorFieldSystem:
    """m vector fields X_j = sigma^j . grad on an n-dimensional domain.

    ``sigma(x)`` returns the n x m coefficient matrix; ``dsigma(x)`` returns
    the stacked column Jacobians, shape (m, n, n), entry [j, a, b] being
    d sigma^j_a / d x_b.  ``vectorized`` marks sigma as accepting stacked
    points of shape (..., n) and returning (..., n, m).
    """

    n: int
    m: int
    sigma: Callable
    dsigma: Callable
    name: str = "custom"
    vectorized: bool = False
    _tower: dict = field(default_factory=dict, repr=False)

    def sigma_at(self, pts: np.ndarray) -> np.ndarray:
        """sigma evaluated at stacked points (..., n) -> (..., n, m)."""
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            return np.asarray(self.sigma(pts), dtype=float)
        if self.vectorized:
            return np.asarray(self.sigma(pts), dtype=float)
        flat = pts.reshape(-1, self.n)
        out = np.stack([np.asarray(self.sigma(p), dtype=float) for p in flat])
        return out.reshape(pts.shape[:-1] + (self.n, self.m))

    def field_matrix(self, x) -> np.ndarray:
        return np.asarray(self.sigma(np.asarray(x, dtype=float)), dtype=float)

    def validate(self, points, fd_tol: float = 1e-6) -> None:
        """Cross-check dsigma against central differences of sigma.

        Also rejects systems whose whole coefficient matrix vanishes at a
        sampled point (bracket generation needs sigma(x) != 0; single
        columns may vanish, as for the Grushin field x*d_y on {x = 0}).
        """
        for x in np.atleast_2d(np.asarray(points, dtype=float)):
            sig = self.field_matrix(x)
            if not np.any(np.abs(sig) > 0):
                raise ValueError(f"sigma vanishes identically at {x}")
            ds = np.asarray(self.dsigma(x), dtype=float)
            fd = _fd_column_jacobians(self, x)
            err = np.max(np.abs(ds - fd))
            if err > fd_tol * max(1.0, np.max(np.abs(ds))):
                raise ValueError(f"dsigma inconsistent with sigma at {x}: err={err:.3g}")


def _fd_column_jacobians(sys: VectorFieldSystem, x, step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((sys.m, sys.n, sys.n))
    for b in range(sys.n):
        e = np.zeros(sys.n)
        e[b] = step
        diff = (sys.field_matrix(x + e) - sys.field_matrix(x - e)) / (2 * step)
        out[:, :, b] = diff.T
    return out


def finite_difference_dsigma(sigma: Callable, n: int, m: int, step: float = FD_STEP):
    """dsigma evaluator for user systems that only supply sigma."""

    def dsig(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((m, n, n))
        for b in range(n):
            e = np.zeros(n)
            e[b] = step
            diff = (np.asarray(sigma(x + e), float) - np.asarray(sigma(x - e), float)) / (2 * step)
            out[:, :, b] = diff.T
        return out

    return dsig


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def euclidean_system(n: int = 2) -> VectorFieldSystem:
    """Coordinate fields d_1 .. d_n (m = n, constant sigma = identity)."""
    eye = np.eye(n)
    zeros = np.zeros((n, n, n))

    def sigma(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return eye.copy()
        return np.broadcast_to(eye, x.shape[:-1] + (n, n)).copy()

    return VectorFieldSystem(n, n, sigma, lambda x: zeros.copy(),
                             name=f"euclidean{n}", vectorized=True)


def heisenberg_system() -> VectorFieldSystem:
    """First Heisenberg group fields X1 = dx - (y/2) dt, X2 = dy + (x/2) dt."""

    def sigma(p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        out = np.zeros(p.shape[:-1] + (3, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        out[..., 2, 0] = -p[..., 1] / 2.0
        out[..., 2, 1] = p[..., 0] / 2.0
        return out[0] if single else out

    d1 = np.zeros((3, 3))
    d1[2, 1] = -0.5
    d2 = np.zeros((3, 3))
    d2[2, 0] = 0.5
    ds = np.stack([d1, d2])

    return VectorFieldSystem(3, 2, sigma, lambda x: ds.copy(),
                             name="heisenberg1", vectorized=True)


def grushin_system() -> VectorFieldSystem:
    """Grushin plane fields X1 = dx, X2 = x dy; X2 vanishes on {x = 0}."""

    def sigma(p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        out = np.zeros(p.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = p[..., 0]
        return out[0] if single else out

    d2 = np.zeros((2, 2))
    d2[1, 0] = 1.0
    ds = np.stack([np.zeros((2, 2)), d2])

    return VectorFieldSystem(2, 2, sigma, lambda x: ds.copy(),
                             name="grushin", vectorized=True)


SYSTEM_PRESETS = {
    "euclidean": euclidean_system,
    "heisenberg1": heisenberg_system,
    "grushin": grushin_system,
}


def make_system(name: str, **kwargs) -> VectorFieldSystem:
    if name not in SYSTEM_PRESETS:
        raise KeyError(f"unknown system preset {name!r}; have {sorted(SYSTEM_PRESETS)}")
    return SYSTEM_PRESETS[name](**kwargs)


# ---------------------------------------------------------------------------
# brackets and the Hörmander rank
# ---------------------------------------------------------------------------

def lie_bracket(sys: VectorFieldSystem, i: int, j: int) -> Callable:
    """Commutator [X_i, X_j] as a point -> n-vector callable (0-based fields).

    [X_i, X_j](x) = Dsigma^j(x) sigma^i(x) - Dsigma^i(x) sigma^j(x).
    """
    if not (0 <= i < sys.m and 0 <= j < sys.m):
        raise IndexError(f"field index out of range: ({i}, {j}) with m={sys.m}")

    def bracket(x):
        x = np.asarray(x, dtype=float)
        sig = sys.field_matrix(x)
        ds = np.asarray(sys.dsigma(x), dtype=float)
        return ds[j] @ sig[:, i] - ds[i] @ sig[:, j]

    return bracket


def _numeric_jacobian(f: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    n = x.size
    out = np.zeros((n, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = step
        out[:, b] = (np.asarray(f(x + e), float) - np.asarray(f(x - e), float)) / (2 * step)
    return out


def _bracket_of(f: Callable, g: Callable) -> Callable:
    def bracket(x):
        x = np.asarray(x, dtype=float)
        return _numeric_jacobian(g, x) @ np.asarray(f(x), float) \
            - _numeric_jacobian(f, x) @ np.asarray(g(x), float)

    return bracket


def _bracket_tower(sys: VectorFieldSystem, max_order: int):
    """Breadth-first iterated brackets up to max_order, deduplicated on samples.

    Elements are (order, callable).  Duplicates (including sign flips) and
    identically-zero candidates are dropped by comparing values on a fixed
    pseudo-random sample set.
    """
    if max_order in sys._tower:
        return sys._tower[max_order]

    rng = np.random.default_rng(0)
    samples = rng.uniform(-0.7, 0.7, size=(6, sys.n))

    def signature(f):
        return np.concatenate([np.asarray(f(s), float) for s in samples])

    base = [(1, (lambda k: lambda x: sys.field_matrix(x)[:, k])(k)) for k in range(sys.m)]
    tower = list(base)
    sigs = [signature(f) for _, f in tower]

    frontier = list(base)
    for order in range(2, max_order + 1):
        new_frontier = []
        for _, f in frontier:
            for _, g in base:
                cand = _bracket_of(f, g)
                cand_sig = signature(cand)
                scale = max(1.0, max(np.max(np.abs(s)) for s in sigs))
                if np.max(np.abs(cand_sig)) <= 1e-10 * scale:
                    continue
                if any(np.allclose(cand_sig, s, atol=1e-9 * scale) or
                       np.allclose(cand_sig, -s, atol=1e-9 * scale) for s in sigs):
                    continue
                tower.append((order, cand))
                sigs.append(cand_sig)
                new_frontier.append((order, cand))
        frontier = new_frontier
        if not frontier:
            break

    sys._tower[max_order] = tower
    return tower


def hormander_rank(sys: VectorFieldSystem, x, max_order: int):
    """Span rank of iterated brackets at x and the least order achieving n.

    Returns ``(rank, step)``; ``step`` is None when the span never reaches
    full dimension up to ``max_order``.  Rank uses singular values with the
    scale-invariant cutoff RANK_RTOL * s_max.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    x = np.asarray(x, dtype=float)
    tower = _bracket_tower(sys, max_order)
    vectors = np.stack([np.asarray(f(x), float) for _, f in tower], axis=1)
    orders = np.asarray([o for o, _ in tower])

    def rank_of(cols):
        if cols.shape[1] == 0:
            return 0
        s = np.linalg.svd(cols, compute_uv=False)
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s > RANK_RTOL * s[0]))

    step = None
    for order in range(1, max_order + 1):
        r = rank_of(vectors[:, orders <= order])
        if r == sys.n:
            step = order
            break
    rank = rank_of(vectors)
    return rank, step


# ---------------------------------------------------------------------------
# exponential flows
# ---------------------------------------------------------------------------

def flow_many(sys: VectorFieldSystem, pts, h, steps: int = DEFAULT_FLOW_STEPS,
              box: Optional[Box] = None):
    """Classical RK4 time-1 flow of sum_i h_i X_i from stacked start points.

    Returns ``(end_points, alive)``; rows that left ``box`` (checked at step
    boundaries) are frozen at their last inside position with alive=False.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
    h = np.asarray(h, dtype=float)
    if h.shape != (sys.m,):
        raise ValueError(f"h must have shape ({sys.m},)")
    alive = np.ones(pts.shape[0], dtype=bool)
    if not np.any(np.abs(h) > 0):
        return pts, alive

    dt = 1.0 / steps

    def vel(p):
        return sys.sigma_at(p) @ h

    for k in range(steps):
        cur = pts[alive]
        if cur.size == 0:
            break
        k1 = vel(cur)
        k2 = vel(cur + 0.5 * dt * k1)
        k3 = vel(cur + 0.5 * dt * k2)
        k4 = vel(cur + dt * k3)
        nxt = cur + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if box is not None:
            inside = box.contains(nxt)
            idx = np.flatnonzero(alive)
            pts[idx[inside]] = nxt[inside]
            alive[idx[~inside]] = False
        else:
            pts[alive] = nxt
    return pts, alive


def exp_flow(sys: VectorFieldSystem, x, h, steps: int = DEFAULT_FLOW_STEPS,
             box: Optional[Box] = None) -> np.ndarray:
    """Time-1 point of the flow of sum_i h_i X_i started at x.

    Fourth-order one-step integration with a fixed step count; raises
    FlowExitsDomainError (with the exit time) if the trajectory leaves
    ``box``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=float)
    pts = x[None, :].copy()
    h = np.asarray(h, dtype=float)
    if h.shape != (sys.m,):
        raise ValueError(f"h must have shape ({sys.m},)")
    if not np.any(np.abs(h) > 0):
        return x.copy()
    dt = 1.0 / steps

    def vel(p):
        return sys.field_matrix(p) @ h

    cur = x.copy()
    for k in range(steps):
        k1 = vel(cur)
        k2 = vel(cur + 0.5 * dt * k1)
        k3 = vel(cur + 0.5 * dt * k2)
        k4 = vel(cur + dt * k3)
        nxt = cur + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if box is not None and not box.contains(nxt):
            raise FlowExitsDomainError((k + 1) * dt)
        cur = nxt
    return cur


def flow_jacobian(sys: VectorFieldSystem, x, h, steps: int = DEFAULT_FLOW_STEPS,
                  box: Optional[Box] = None) -> np.ndarray:
    """Jacobian of y -> exp_flow(y, h) at x via the variational equation.

    Integrates J' = (sum_i h_i Dsigma^i(gamma)) J alongside the flow; at
    h = 0 this is the identity.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if not np.any(np.abs(h) > 0):
        return np.eye(sys.n)
    dt = 1.0 / steps

    def rhs(state):
        p, J = state
        A = np.einsum("i,iab->ab", h, np.asarray(sys.dsigma(p), float))
        return (sys.field_matrix(p) @ h, A @ J)

    p = x.copy()
    J = np.eye(sys.n)
    for k in range(steps):
        s1 = rhs((p, J))
        s2 = rhs((p + 0.5 * dt * s1[0], J + 0.5 * dt * s1[1]))
        s3 = rhs((p + 0.5 * dt * s2[0], J + 0.5 * dt * s2[1]))
        s4 = rhs((p + dt * s3[0], J + dt * s3[1]))
        p = p + (dt / 6.0) * (s1[0] + 2 * s2[0] + 2 * s3[0] + s4[0])
        J = J + (dt / 6.0) * (s1[1] + 2 * s2[1] + 2 * s3[1] + s4[1])
        if box is not None and not box.contains(p):
            raise FlowExitsDomainError((k + 1) * dt)
    return J


# ---------------------------------------------------------------------------
# pullbacks along diffeomorphisms
# ---------------------------------------------------------------------------

@dataclass
class DiffeoMap:
    """Invertible smooth map with its Jacobian, on a working region."""

    forward: Callable
    inverse: Callable
    jacobian: Callable

    @classmethod
    def identity(cls, n: int) -> "DiffeoMap":
        eye = np.eye(n)
        return cls(lambda x: np.asarray(x, float).copy(),
                   lambda x: np.asarray(x, float).copy(),
                   lambda x: eye.copy())

    @classmethod
    def translation(cls, v) -> "DiffeoMap":
        v = np.asarray(v, dtype=float)
        eye = np.eye(v.size)
        return cls(lambda x: np.asarray(x, float) + v,
                   lambda x: np.asarray(x, float) - v,
                   lambda x: eye.copy())

    @classmethod
    def from_flow(cls, sys: VectorFieldSystem, h,
                  steps: int = DEFAULT_FLOW_STEPS) -> "DiffeoMap":
        """Time-1 flow map y -> exp_flow(y, h); exact inverse flows by -h."""
        h = np.asarray(h, dtype=float)
        return cls(lambda x: exp_flow(sys, x, h, steps=steps),
                   lambda x: exp_flow(sys, x, -h, steps=steps),
                   lambda x: flow_jacobian(sys, x, h, steps=steps))


def pullback_system(sys: VectorFieldSystem, theta: DiffeoMap) -> VectorFieldSystem:
    """System with fields Xhat_i(t) = (dTheta)_t^{-1} X_i(Theta(t)).

    For every smooth f the chain rule Xhat_i (f o Theta) = (X_i f) o Theta
    holds; the pulled-back dsigma is produced by central differences.
    """

    def sigma_hat(t):
        t = np.asarray(t, dtype=float)
        J = np.asarray(theta.jacobian(t), dtype=float)
        try:
            return np.linalg.solve(J, sys.field_matrix(theta.forward(t)))
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"map Jacobian singular at {t}") from exc

    return VectorFieldSystem(
        sys.n, sys.m, sigma_hat,
        finite_difference_dsigma(sigma_hat, sys.n, sys.m),
        name=f"{sys.name}:pullback",
    )


def perturbed_operator_convergence(sys: VectorFieldSystem, op, x0, f,
                                   h_sequence, sample_radius: float = 0.02,
                                   n_samples: int = 8, seed: int = 0,
                                   flow_steps: int = 32):
    """Deviation of the flow-perturbed operator from the plain one near x0.

    For each horizontal shift h the operator is rebuilt on the system pulled
    back along the time-1 flow map of h, then both operators are evaluated
    on the C^2 function ``f`` at x0 and a fixed sample cloud around it.
    Returns a list of (|h|, sup deviation) rows; deviations shrink as h -> 0.
    """
    from .operators import evaluate_operator

    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    pts = [x0] + [x0 + rng.uniform(-sample_radius, sample_radius, size=sys.n)
                  for _ in range(n_samples)]
    base = np.asarray([evaluate_operator(op, sys, f, p) for p in pts])

    rows = []
    for h in h_sequence:
        h = np.asarray(h, dtype=float)
        if not np.any(np.abs(h) > 0):
            rows.append((0.0, 0.0))
            continue
        theta = DiffeoMap.from_flow(sys, h, steps=flow_steps)
        pulled = pullback_system(sys, theta)
        vals = np.asarray([evaluate_operator(op, pulled, f, p) for p in pts])
        rows.append((float(np.linalg.norm(h)), float(np.max(np.abs(vals - base)))))
    return rows
