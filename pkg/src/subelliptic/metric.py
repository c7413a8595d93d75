"""Computable symmetric stand-ins for the smoothed Carnot-Carathéodory metric.

Two oracle kinds are provided: closed-form homogeneous gauges on group
presets, and a horizontal lattice-graph shortest-path estimate for general
systems.  Both are symmetric by construction and expose the squared
distance directly, which is what the envelope machinery consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.csgraph import dijkstra

from .errors import ProbeAssertionError
from .geometry import VectorFieldSystem, exp_flow, flow_many, hormander_rank
from .grids import Box, Grid

_CHUNK = 4_000_000  # pairwise evaluations per block in min-distance sweeps


class UnreachableTargetError(Exception):
    """Horizontal graph does not connect the two query points."""


def heisenberg_gauge(x, y=None):
    """Homogeneous gauge N(y^{-1} x), N(a,b,c) = ((a^2+b^2)^2 + 16 c^2)^{1/4}.

    Broadcasts over leading axes.  With ``y`` omitted, returns the gauge of
    the group element ``x`` itself.
    """
    x = np.asarray(x, dtype=float)
    if y is None:
        a, b, c = x[..., 0], x[..., 1], x[..., 2]
    else:
        y = np.asarray(y, dtype=float)
        a = x[..., 0] - y[..., 0]
        b = x[..., 1] - y[..., 1]
        c = x[..., 2] - y[..., 2] + (y[..., 1] * x[..., 0] - y[..., 0] * x[..., 1]) / 2.0
    return ((a * a + b * b) ** 2 + 16.0 * c * c) ** 0.25


def gauge_distance_heisenberg(x, y) -> float:
    """Symmetrized Heisenberg gauge distance between two points in R^3."""
    return float(0.5 * (heisenberg_gauge(x, y) + heisenberg_gauge(y, x)))


class DistanceOracle:
    """Symmetric distance evaluator; ``kind`` is 'gauge' or 'graph'."""

    kind = "abstract"

    def __init__(self):
        self.params: dict = {}

    def eval(self, x, y) -> float:
        raise NotImplementedError

    def d2(self, x, y) -> float:
        return self.eval(x, y) ** 2

    def pairwise_d2(self, X, Y) -> np.ndarray:
        """Elementwise squared distances for broadcast-compatible stacks."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        X, Y = np.broadcast_arrays(X, Y)
        flatX = X.reshape(-1, X.shape[-1])
        flatY = Y.reshape(-1, Y.shape[-1])
        out = np.array([self.d2(a, b) for a, b in zip(flatX, flatY)])
        return out.reshape(X.shape[:-1])

    def min_d2_to_set(self, points, set_points) -> np.ndarray:
        """min over the set of squared distances, one value per query point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        set_points = np.atleast_2d(np.asarray(set_points, dtype=float))
        best = np.full(points.shape[0], np.inf)
        block = max(1, _CHUNK // max(1, points.shape[0]))
        for start in range(0, set_points.shape[0], block):
            Y = set_points[start:start + block]
            d2 = self.pairwise_d2(points[:, None, :], Y[None, :, :])
            best = np.minimum(best, d2.min(axis=1))
        return best

    def offset_window(self, w: float, box: Box) -> Optional[np.ndarray]:
        """Per-axis bound r with d2(x, x+delta) <= w => |delta_i| <= r_i on the box.

        None means no usable bound (callers fall back to the full grid).
        """
        return None


class GaugeOracle(DistanceOracle):
    """Closed-form gauge oracle; ``group`` is 'euclidean' or 'heisenberg'."""

    kind = "gauge"

    def __init__(self, group: str, n: int = None):
        super().__init__()
        if group not in ("euclidean", "heisenberg"):
            raise ValueError(f"unknown gauge group {group!r}")
        self.group = group
        self.n = 3 if group == "heisenberg" else (n or 2)
        self.params = {"group": group, "n": self.n}

    def _raw(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.group == "euclidean":
            return np.linalg.norm(X - Y, axis=-1)
        return heisenberg_gauge(X, Y)

    def eval(self, x, y) -> float:
        return float(0.5 * (self._raw(x, y) + self._raw(y, x)))

    def pairwise_d2(self, X, Y) -> np.ndarray:
        d = 0.5 * (self._raw(X, Y) + self._raw(Y, X))
        return d * d

    def offset_window(self, w, box):
        if self.group == "euclidean":
            return np.full(self.n, np.sqrt(w))
        r_xy = np.sqrt(w)
        b = np.maximum(np.abs(np.asarray(box.lo)), np.abs(np.asarray(box.hi)))
        r_t = w / 4.0 + 0.5 * (b[0] + b[1]) * r_xy
        return np.array([r_xy, r_xy, r_t])

    def measure_triangle_slack(self, box: Box, trials: int = 1000, seed: int = 0) -> float:
        """Largest observed d(x,z) / (d(x,y)+d(y,z)): the quasi-triangle constant."""
        rng = np.random.default_rng(seed)
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        pts = rng.uniform(lo, hi, size=(trials, 3, len(lo)))
        worst = 0.0
        for x, y, z in pts:
            through = self.eval(x, y) + self.eval(y, z)
            if through > 0:
                worst = max(worst, self.eval(x, z) / through)
        self.params["triangle_slack"] = worst
        return worst


class GraphOracle(DistanceOracle):
    """Shortest horizontal paths on a snapped lattice graph.

    Nodes are lattice points; each node connects to the snapped endpoints of
    exp_flow(p, +-step e_i) with edge weight ``step``.  Edges are inserted
    undirected, which makes the node metric exactly symmetric and exactly a
    metric on the connected component.
    """

    kind = "graph"

    def __init__(self, sys: VectorFieldSystem, box: Box, step: float,
                 spacing=None, flow_steps: int = 4):
        super().__init__()
        if step <= 0:
            raise ValueError("step must be positive")
        self.sys = sys
        self.box = box
        self.step = float(step)
        edges = box.edge_lengths()
        if spacing is None:
            spacing = np.full(box.n, self.step)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (box.n,))
        shape = tuple(int(max(2, round(e / s) + 1)) for e, s in zip(edges, spacing))
        self.grid = Grid(box, shape)
        self.params = {"step": self.step, "shape": shape,
                       "spacing": tuple(self.grid.spacing)}
        self._graph = self._build_graph(flow_steps)
        self._row_cache: dict = {}

    def _build_graph(self, flow_steps: int):
        nodes = self.grid.nodes().reshape(-1, self.grid.n)
        n_nodes = nodes.shape[0]
        rows, cols = [], []
        for i in range(self.sys.m):
            for sign in (1.0, -1.0):
                h = np.zeros(self.sys.m)
                h[i] = sign * self.step
                ends, alive = flow_many(self.sys, nodes, h, steps=flow_steps,
                                        box=self.box)
                snapped = self.grid.snap_index(ends)
                flat = np.ravel_multi_index(tuple(snapped.T), self.grid.shape)
                src = np.flatnonzero(alive & (flat != np.arange(n_nodes)))
                rows.append(src)
                cols.append(flat[src])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        # undirected, deduplicated, constant weight = step
        und_rows = np.concatenate([rows, cols])
        und_cols = np.concatenate([cols, rows])
        pairs = np.unique(np.stack([und_rows, und_cols], axis=1), axis=0)
        data = np.full(pairs.shape[0], self.step)
        return sparse.csr_matrix((data, (pairs[:, 0], pairs[:, 1])),
                                 shape=(n_nodes, n_nodes))

    def _flat_index(self, x) -> int:
        idx = self.grid.snap_index(np.asarray(x, dtype=float))
        return int(np.ravel_multi_index(tuple(idx), self.grid.shape))

    def _row(self, src: int) -> np.ndarray:
        if src not in self._row_cache:
            self._row_cache[src] = dijkstra(self._graph, indices=src)
        return self._row_cache[src]

    def eval(self, x, y) -> float:
        a, b = self._flat_index(x), self._flat_index(y)
        if a == b:
            return 0.0
        d = self._row(a)[b]
        if not np.isfinite(d):
            raise UnreachableTargetError(
                f"no horizontal path between {x} and {y} at step {self.step}")
        return float(d)

    def min_d2_to_set(self, points, set_points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        set_points = np.atleast_2d(np.asarray(set_points, dtype=float))
        sources = np.unique([self._flat_index(p) for p in set_points])
        dist = dijkstra(self._graph, indices=sources, min_only=True)
        out = np.array([dist[self._flat_index(p)] for p in points])
        return out ** 2


def heisenberg_graph_spacing(step: float):
    """Lattice spacings tuned to the stratification: vertical cell step^2.

    The elementary square loop of horizontal moves then gains exactly one
    vertical node; exact multiples of step^2/2 look natural but conserve a
    parity invariant that splits the graph into two components.
    """
    return (step, step, step * step)


def cc_distance_graph(sys: VectorFieldSystem, x, y, step: float,
                      box: Optional[Box] = None, spacing=None) -> float:
    """Graph shortest-path estimate of the CC distance between x and y.

    Convenience wrapper constructing (and caching) a GraphOracle; pass the
    same explicit ``box`` across calls to compare refinements.  For the
    Heisenberg preset the lattice defaults to the stratified spacing.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if box is None:
        lo = np.minimum(x, y) - max(0.5, 4 * step)
        hi = np.maximum(x, y) + max(0.5, 4 * step)
        box = Box(tuple(lo), tuple(hi))
    if spacing is None and sys.name == "heisenberg1":
        spacing = heisenberg_graph_spacing(step)
    key = (id(sys), tuple(box.lo), tuple(box.hi), float(step),
           None if spacing is None else tuple(np.atleast_1d(spacing)))
    oracle = _graph_cache.get(key)
    if oracle is None:
        oracle = GraphOracle(sys, box, step, spacing=spacing)
        _graph_cache[key] = oracle
    return oracle.eval(x, y)


_graph_cache: dict = {}


@dataclass
class NSWResult:
    fit_exponent: float
    c1: float
    c2: float
    step_r: int
    n_pairs: int


def nsw_probe(sys: VectorFieldSystem, oracle: DistanceOracle, x, samples: int,
              seed: int = 0, h_norm: float = 0.1, box: Optional[Box] = None,
              step_r: Optional[int] = None) -> NSWResult:
    """Two-sided flow/metric comparison: fits d(exp_x(h), exp_x(l)) ~ |h-l|^s.

    Draws ``samples`` pairs (h, l) with norms at most ``h_norm``, evaluates
    the oracle between the two flow endpoints, and fits the log-log slope.
    Returns the empirical constants c1 = min d/|h-l| and c2 = max
    d/|h-l|^{1/r}; raises ProbeAssertionError unless the slope lies in
    [1/r - 0.1, 1 + 0.1].
    """
    if samples < 20:
        raise ValueError("need at least 20 samples")
    x = np.asarray(x, dtype=float)
    if step_r is None:
        _, step_r = hormander_rank(sys, x, max_order=4)
        if step_r is None:
            raise ValueError("system is not bracket generating at x up to order 4")
    rng = np.random.default_rng(seed)

    seps, dists = [], []
    for _ in range(samples):
        h = rng.uniform(-1, 1, size=sys.m)
        l = rng.uniform(-1, 1, size=sys.m)
        h *= h_norm * rng.uniform(0.05, 1.0) / max(np.linalg.norm(h), 1e-12)
        l *= h_norm * rng.uniform(0.05, 1.0) / max(np.linalg.norm(l), 1e-12)
        sep = np.linalg.norm(h - l)
        if sep < 1e-12:
            continue
        ph = exp_flow(sys, x, h, box=box)
        pl = exp_flow(sys, x, l, box=box)
        d = oracle.eval(ph, pl)
        if d > 0:
            seps.append(sep)
            dists.append(d)

    if not seps:
        raise ValueError("degenerate input: all sampled pairs have h = l")
    seps = np.asarray(seps)
    dists = np.asarray(dists)
    slope = float(np.polyfit(np.log(seps), np.log(dists), 1)[0])
    c1 = float(np.min(dists / seps))
    c2 = float(np.max(dists / seps ** (1.0 / step_r)))
    lo, hi = 1.0 / step_r - 0.1, 1.0 + 0.1
    if not (lo <= slope <= hi):
        raise ProbeAssertionError(
            f"fitted exponent {slope:.4f} outside [{lo:.3f}, {hi:.3f}]")
    return NSWResult(slope, c1, c2, step_r, len(seps))


def shrunken_domain(oracle: DistanceOracle, epsilon: float, grid: Grid,
                    squared: bool = True, strict: bool = False) -> np.ndarray:
    """Mask of nodes at oracle distance (squared by default) >= epsilon from the rim.

    Monotone in epsilon: larger epsilon gives a subset.  The result can be
    empty when epsilon exceeds the squared inradius; callers should check.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    interior = grid.interior_mask()
    if epsilon == 0:
        return interior
    nodes = grid.nodes()
    rim_pts = nodes[grid.rim_mask()]
    inner_pts = nodes[interior]
    d2 = oracle.min_d2_to_set(inner_pts, rim_pts)
    val = d2 if squared else np.sqrt(d2)
    keep = (val > epsilon) if strict else (val >= epsilon)
    mask = np.zeros(grid.shape, dtype=bool)
    mask[interior] = keep
    return mask
