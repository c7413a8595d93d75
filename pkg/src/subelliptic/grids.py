"""Uniform Cartesian grids, sampled scalar fields, and field-file I/O."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

HEADER_MAGIC = b"SEFIELD1\n"


class BoundaryStencilError(Exception):
    """Raised when a grid derivative is requested at a node without a full stencil."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo_1, hi_1] x ... x [lo_n, hi_n]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in self.lo)
        hi = tuple(float(b) for b in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must be nonempty and of equal length")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return len(self.lo)

    def contains(self, pts, slack: float = 0.0):
        """Boolean inside-test, broadcasting over leading axes of ``pts``."""
        pts = np.asarray(pts, dtype=float)
        lo = np.asarray(self.lo) - slack
        hi = np.asarray(self.hi) + slack
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    def edge_lengths(self):
        return np.asarray(self.hi) - np.asarray(self.lo)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice over a box with ``shape[i]`` nodes along axis i."""

    box: Box
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(k) for k in self.shape)
        if len(shape) != self.box.n:
            raise ValueError("shape rank must match box dimension")
        if any(k < 2 for k in shape):
            raise ValueError("need at least 2 nodes per axis")
        object.__setattr__(self, "shape", shape)

    @property
    def n(self) -> int:
        return self.box.n

    @property
    def spacing(self):
        return self.box.edge_lengths() / (np.asarray(self.shape) - 1)

    def axes(self):
        return [
            np.linspace(self.box.lo[i], self.box.hi[i], self.shape[i])
            for i in range(self.n)
        ]

    def nodes(self):
        """All node coordinates, shape ``(*self.shape, n)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def rim_mask(self):
        """Boolean mask of nodes on the outermost layer."""
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.n):
            sl = [slice(None)] * self.n
            sl[axis] = 0
            mask[tuple(sl)] = True
            sl[axis] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_mask(self):
        return ~self.rim_mask()

    def node_index(self, x, tol: float = 1e-8):
        """Index of the node at ``x``; raises if ``x`` is not a node."""
        x = np.asarray(x, dtype=float)
        rel = (x - np.asarray(self.box.lo)) / self.spacing
        idx = np.rint(rel).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise BoundaryStencilError(f"point {x} outside grid")
        if np.max(np.abs(rel - idx)) > tol:
            raise BoundaryStencilError(f"point {x} is not a grid node")
        return tuple(idx)

    def snap_index(self, pts):
        """Nearest-node multi-indices for points, clipped to the lattice."""
        pts = np.asarray(pts, dtype=float)
        rel = (pts - np.asarray(self.box.lo)) / self.spacing
        idx = np.rint(rel).astype(int)
        return np.clip(idx, 0, np.asarray(self.shape) - 1)


def multilinear_weights(grid: Grid, pts):
    """Flat corner indices and weights of the multilinear interpolation stencil.

    Returns ``(corners, weights)`` of shape (..., 2^n); points outside the
    box are clamped to it, so callers must mask exterior points themselves
    when that matters.
    """
    pts = np.asarray(pts, dtype=float)
    rel = (pts - np.asarray(grid.box.lo)) / grid.spacing
    rel = np.clip(rel, 0.0, np.asarray(grid.shape) - 1.000000001)
    base = np.floor(rel).astype(int)
    base = np.minimum(base, np.asarray(grid.shape) - 2)
    frac = rel - base

    n = grid.n
    strides = np.ones(n, dtype=np.int64)
    for axis in range(n - 2, -1, -1):
        strides[axis] = strides[axis + 1] * grid.shape[axis + 1]
    base_flat = np.einsum("...a,a->...", base, strides).astype(np.int64)

    corners = np.empty(pts.shape[:-1] + (1 << n,), dtype=np.int64)
    weights = np.empty(pts.shape[:-1] + (1 << n,), dtype=float)
    for corner in range(1 << n):
        offset = 0
        weight = np.ones(pts.shape[:-1], dtype=float)
        for axis in range(n):
            bit = (corner >> axis) & 1
            offset += bit * strides[axis]
            weight = weight * (frac[..., axis] if bit else 1.0 - frac[..., axis])
        corners[..., corner] = base_flat + offset
        weights[..., corner] = weight
    return corners, weights


def interpolate(grid: Grid, values, pts):
    """Multilinear interpolation of node values at arbitrary points."""
    corners, weights = multilinear_weights(grid, pts)
    flat = np.asarray(values, dtype=float).reshape(-1)
    return np.einsum("...c,...c->...", flat[corners], weights)


@dataclass
class GridFunction:
    """Scalar field sampled on a grid, with an interior/boundary mask."""

    grid: Grid
    values: np.ndarray
    interior_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("values shape must match grid shape")
        if self.interior_mask is None:
            self.interior_mask = self.grid.interior_mask()
        self.interior_mask = np.asarray(self.interior_mask, dtype=bool)
        if self.interior_mask.shape != self.grid.shape:
            raise ValueError("mask shape must match grid shape")

    @classmethod
    def from_callable(cls, grid: Grid, fn, interior_mask=None):
        nodes = grid.nodes()
        flat = nodes.reshape(-1, grid.n)
        try:
            vals = np.asarray(fn(flat), dtype=float).reshape(grid.shape)
        except Exception:
            vals = np.array([fn(p) for p in flat], dtype=float).reshape(grid.shape)
        return cls(grid, vals, interior_mask)

    def copy_with(self, values=None, interior_mask=None) -> "GridFunction":
        return GridFunction(
            self.grid,
            self.values.copy() if values is None else values,
            self.interior_mask.copy() if interior_mask is None else interior_mask,
        )

    def sup_norm(self, mask=None) -> float:
        sel = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(sel))) if sel.size else 0.0

    def at(self, pts):
        return interpolate(self.grid, self.values, pts)


# -- field-file format: magic + JSON header line + raw float64 values + uint8 mask --

def write_field(gf: GridFunction, path) -> None:
    header = {
        "n": gf.grid.n,
        "shape": list(gf.grid.shape),
        "lo": list(gf.grid.box.lo),
        "hi": list(gf.grid.box.hi),
        "mask": "uint8",
    }
    with open(path, "wb") as fh:
        fh.write(HEADER_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(gf.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(gf.interior_mask, dtype=np.uint8).tobytes())


def read_field(path) -> GridFunction:
    with open(path, "rb") as fh:
        magic = fh.read(len(HEADER_MAGIC))
        if magic != HEADER_MAGIC:
            raise ValueError(f"{path}: not a field file")
        header = json.loads(fh.readline().decode())
        shape = tuple(header["shape"])
        count = int(np.prod(shape))
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
        mask = np.frombuffer(fh.read(count), dtype=np.uint8).reshape(shape).astype(bool)
    grid = Grid(Box(tuple(header["lo"]), tuple(header["hi"])), shape)
    return GridFunction(grid, values.copy(), mask)


def write_field_csv(gf: GridFunction, path) -> None:
    """Human-readable mirror: one row per node, coordinates then value then mask."""
    nodes = gf.grid.nodes().reshape(-1, gf.grid.n)
    vals = gf.values.reshape(-1)
    mask = gf.interior_mask.reshape(-1).astype(int)
    buf = io.StringIO()
    cols = [f"x{i+1}" for i in range(gf.grid.n)] + ["value", "interior"]
    buf.write(",".join(cols) + "\n")
    for row, v, m in zip(nodes, vals, mask):
        coords = ",".join(f"{c:.17g}" for c in row)
        buf.write(f"{coords},{v:.17g},{m}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
