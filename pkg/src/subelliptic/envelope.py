"""Sup/inf-convolutions against a distance oracle, and their diagnostics.

The envelopes are computed by windowed brute force over grid nodes: the
candidate set for u^eps(x) is restricted to the ball d(x,y)^2 <= 4 R0 eps
(R0 = 2 sup|u|), padded by two grid-step gauge lengths so that the argmax
of a node stays feasible at its neighbors.  Argmax locations are recorded
alongside values; ties break to the lexicographically smallest node index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ProbeAssertionError
from .grids import Grid, GridFunction
from .metric import DistanceOracle, GaugeOracle, shrunken_domain


@dataclass
class EnvelopeResult:
    """Envelope field plus the flat node index of the attaining point."""

    field: GridFunction
    argmax: np.ndarray
    epsilon: float
    window_d2: float
    sign: int = +1  # +1 sup-convolution, -1 inf-convolution


def _slab_d2(oracle: DistanceOracle, grid: Grid, coords, x_slices, delta):
    """Squared distances d2(x, x + delta) on the slab, vectorized per oracle."""
    if isinstance(oracle, GaugeOracle) and oracle.group == "euclidean":
        return float(np.dot(delta, delta))
    if isinstance(oracle, GaugeOracle) and oracle.group == "heisenberg":
        x1 = coords[0][x_slices]
        x2 = coords[1][x_slices]
        rho2 = delta[0] ** 2 + delta[1] ** 2
        c = -delta[2] + 0.5 * (delta[1] * x1 - delta[0] * x2)
        return np.sqrt(rho2 * rho2 + 16.0 * c * c)
    pts = np.stack([c[x_slices] for c in coords], axis=-1)
    return oracle.pairwise_d2(pts, pts + delta)


def _offset_ranges(oracle, grid, window_d2):
    bounds = oracle.offset_window(window_d2, grid.box)
    shape = np.asarray(grid.shape)
    if bounds is None:
        radii = shape - 1
    else:
        radii = np.minimum(np.floor(bounds / grid.spacing).astype(int) + 1, shape - 1)
    return [range(-int(r), int(r) + 1) for r in radii]


def _min_slab_d2(oracle, grid, delta) -> float:
    """Interval lower bound of d2(x, x+delta) over the box, for offset pruning."""
    if isinstance(oracle, GaugeOracle) and oracle.group == "euclidean":
        return float(np.dot(delta, delta))
    if isinstance(oracle, GaugeOracle) and oracle.group == "heisenberg":
        lo = np.asarray(grid.box.lo)
        hi = np.asarray(grid.box.hi)
        corners = [0.5 * (delta[1] * a - delta[0] * b)
                   for a in (lo[0], hi[0]) for b in (lo[1], hi[1])]
        c_lo = -delta[2] + min(corners)
        c_hi = -delta[2] + max(corners)
        c_min = 0.0 if c_lo <= 0.0 <= c_hi else min(abs(c_lo), abs(c_hi))
        rho2 = delta[0] ** 2 + delta[1] ** 2
        return float(np.sqrt(rho2 * rho2 + 16.0 * c_min * c_min))
    return 0.0


def sup_convolution(u: GridFunction, epsilon: float,
                    oracle: DistanceOracle) -> EnvelopeResult:
    """u^eps(x) = max_y { u(y) - d(x,y)^2 / (2 eps) } over grid nodes.

    Candidates are swept over the index offsets covering the window
    d^2 <= 4 R0 eps; the restriction is lossless (out-of-window candidates
    never beat y = x), so the result is the true grid maximum.  Offsets are
    visited in lexicographic order with strict improvement, which makes
    ties resolve to the lexicographically smallest attaining node.
    Always >= u pointwise and nondecreasing in eps.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grid = u.grid
    r0 = 2.0 * u.sup_norm()
    window = 4.0 * r0 * epsilon

    vals = u.values
    coords = [grid.nodes()[..., a] for a in range(grid.n)]
    flat_idx = np.arange(vals.size).reshape(grid.shape)

    best = np.full(grid.shape, -np.inf)
    argb = np.zeros(grid.shape, dtype=np.int64)
    shape = grid.shape
    inv2eps = 1.0 / (2.0 * epsilon)

    for delta_idx in itertools.product(*_offset_ranges(oracle, grid, window)):
        delta = np.asarray(delta_idx) * grid.spacing
        if any(delta_idx) and _min_slab_d2(oracle, grid, delta) > window:
            continue
        x_slices = tuple(slice(max(0, -d), s - max(0, d))
                         for d, s in zip(delta_idx, shape))
        if any(sl.start >= sl.stop for sl in x_slices):
            continue
        y_slices = tuple(slice(max(0, d), s + min(0, d))
                         for d, s in zip(delta_idx, shape))
        d2 = _slab_d2(oracle, grid, coords, x_slices, delta)
        cand = vals[y_slices] - d2 * inv2eps
        best_view = best[x_slices]
        better = cand > best_view
        if np.any(better):
            np.copyto(best_view, cand, where=better)
            np.copyto(argb[x_slices], np.broadcast_to(flat_idx[y_slices],
                                                      better.shape), where=better)

    out = u.copy_with(values=best)
    return EnvelopeResult(out, argb, float(epsilon), float(window), sign=+1)


def inf_convolution(v: GridFunction, epsilon: float,
                    oracle: DistanceOracle) -> EnvelopeResult:
    """v_eps(x) = min_y { v(y) + d(x,y)^2 / (2 eps) }; equals -((-v)^eps)."""
    neg = v.copy_with(values=-v.values)
    res = sup_convolution(neg, epsilon, oracle)
    field = res.field.copy_with(values=-res.field.values)
    return EnvelopeResult(field, res.argmax, res.epsilon, res.window_d2, sign=-1)


def semiconvexity_budget(result: EnvelopeResult, oracle: DistanceOracle) -> float:
    """Constant C with Lambda(u^eps) <= C / eps, from realized argmax pairs.

    C is half the largest discrete second difference of d^2(., y*) over the
    attained maximizers y*, which is the discrete shadow of the bound on
    the second x-derivatives of the squared metric.
    """
    grid = result.field.grid
    nodes = grid.nodes().reshape(-1, grid.n)
    ystar = nodes[result.argmax.reshape(-1)].reshape(result.argmax.shape + (grid.n,))
    xpts = grid.nodes()
    worst = 0.0
    for dvec in _second_difference_directions(grid.n):
        step = np.asarray(dvec) * grid.spacing
        inner = tuple(slice(1, -1) if d else slice(None) for d in np.abs(dvec))
        x0 = xpts[inner]
        y0 = ystar[inner]
        mid = oracle.pairwise_d2(x0, y0)
        plus = oracle.pairwise_d2(x0 + step, y0)
        minus = oracle.pairwise_d2(x0 - step, y0)
        sd = (plus - 2.0 * mid + minus) / float(step @ step)
        if sd.size:
            worst = max(worst, float(np.max(sd)))
    return 0.5 * worst


def _second_difference_directions(n: int):
    dirs = []
    for a in range(n):
        e = np.zeros(n, dtype=int)
        e[a] = 1
        dirs.append(e)
    for a in range(n):
        for b in range(a + 1, n):
            for sb in (1, -1):
                e = np.zeros(n, dtype=int)
                e[a] = 1
                e[b] = sb
                dirs.append(e)
    return dirs


def semiconvexity_check(w: GridFunction, lambda_cap: float, tol: float = 1e-9):
    """Least Lambda making all second differences of w + Lambda |x|^2/2 >= -tol.

    Directions are the grid axes and all two-axis diagonals.  Returns
    ``(is_semiconvex, lambda_found)`` with failure when the cap is exceeded.
    """
    grid = w.grid
    if any(s < 3 for s in grid.shape):
        raise ValueError("need at least 3 nodes per axis")
    vals = w.values
    lam = 0.0
    for dvec in _second_difference_directions(grid.n):
        step = np.asarray(dvec) * grid.spacing
        len2 = float(step @ step)
        plus = tuple(slice(2, None) if d == 1 else (slice(0, -2) if d == -1 else slice(None))
                     for d in dvec)
        minus = tuple(slice(0, -2) if d == 1 else (slice(2, None) if d == -1 else slice(None))
                      for d in dvec)
        mid = tuple(slice(1, -1) if d else slice(None) for d in np.abs(dvec))
        sd = vals[plus] - 2.0 * vals[mid] + vals[minus]
        need = (-sd - tol) / len2
        if need.size:
            lam = max(lam, float(np.max(need)))
    lam = max(lam, 0.0)
    return lam <= lambda_cap, lam


@dataclass
class ConvergenceRow:
    epsilon: float
    deviation: float
    mask_nodes: int

    @property
    def empty_mask(self) -> bool:
        return self.mask_nodes == 0


@dataclass
class ConvergenceReport:
    rows: list

    @property
    def nonincreasing(self) -> bool:
        devs = [r.deviation for r in self.rows if not r.empty_mask]
        return all(b <= a + 1e-12 for a, b in zip(devs, devs[1:]))


def convergence_report(u: GridFunction, oracle: DistanceOracle,
                       epsilon_sequence) -> ConvergenceReport:
    """Sup-norm of u^eps - u on the shrunken mask, one row per epsilon.

    The mask for eps keeps nodes at squared oracle distance at least
    (1 + 4 R0) eps from the rim; empty masks are flagged, not fatal.
    """
    eps = list(epsilon_sequence)
    if any(b >= a for a, b in zip(eps, eps[1:])) or any(e <= 0 for e in eps):
        raise ValueError("epsilon sequence must be positive and decreasing")
    r0 = 2.0 * u.sup_norm()
    rows = []
    for e in eps:
        res = sup_convolution(u, e, oracle)
        mask = shrunken_domain(oracle, (1.0 + 4.0 * r0) * e, u.grid)
        n = int(mask.sum())
        dev = float(np.max(np.abs(res.field.values[mask] - u.values[mask]))) if n else np.nan
        rows.append(ConvergenceRow(float(e), dev, n))
    return ConvergenceReport(rows)


def jensen_probe(w: GridFunction, xhat, r: float, delta: float, trials: int,
                 seed: int = 0, sd_cap: float = 1e6,
                 argmax_tol: float = 1e-6) -> float:
    """Fraction of linear tilts whose maximizer near xhat is cleanly quadratic.

    Samples |p| < delta, maximizes w + <p, x> over the grid ball B_r(xhat),
    and accepts the perturbation when the maximizer is strictly inside the
    ball, has a full stencil, and all its second differences are bounded by
    ``sd_cap``.  Raises ProbeAssertionError when no perturbation succeeds.
    """
    grid = w.grid
    xhat = np.asarray(xhat, dtype=float)
    scale = max(1.0, w.sup_norm())
    if w.at(xhat) < np.max(w.values) - argmax_tol * scale:
        raise ValueError("xhat is not a maximal point of w within grid tolerance")

    nodes = grid.nodes().reshape(-1, grid.n)
    dist = np.linalg.norm(nodes - xhat, axis=1)
    ball = np.flatnonzero(dist <= r)
    if ball.size == 0:
        raise ValueError("ball contains no grid nodes")
    strict = dist[ball] <= r - float(np.max(grid.spacing))
    shape = np.asarray(grid.shape)

    rng = np.random.default_rng(seed)
    flat_vals = w.values.reshape(-1)
    successes = 0
    n_trials = max(1, trials)
    for _ in range(n_trials):
        if delta == 0.0:
            p = np.zeros(grid.n)
        else:
            p = rng.normal(size=grid.n)
            p *= delta * rng.uniform(0, 1) / max(np.linalg.norm(p), 1e-300)
        tilted = flat_vals[ball] + nodes[ball] @ p
        k = int(np.argmax(tilted))   # first occurrence = smallest flat index
        if not strict[k]:
            continue
        idx = np.unravel_index(ball[k], grid.shape)
        if np.any(np.asarray(idx) < 1) or np.any(np.asarray(idx) >= shape - 1):
            continue
        ok = True
        for dvec in _second_difference_directions(grid.n):
            step = np.asarray(dvec) * grid.spacing
            plus = tuple(np.asarray(idx) + dvec)
            minus = tuple(np.asarray(idx) - dvec)
            if np.any(np.asarray(plus) < 0) or np.any(np.asarray(plus) >= shape) \
                    or np.any(np.asarray(minus) < 0) or np.any(np.asarray(minus) >= shape):
                ok = False
                break
            sd = abs(w.values[plus] - 2 * w.values[idx] + w.values[minus]) / float(step @ step)
            if sd > sd_cap:
                ok = False
                break
        if ok:
            successes += 1
    fraction = successes / n_trials
    if fraction <= 0.0:
        raise ProbeAssertionError("no linear perturbation produced a usable maximizer")
    return fraction
