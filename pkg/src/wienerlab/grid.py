"""Structured uniform grids, node sets and geometric masks.

The computational domain is always a box discretized by a uniform spacing h.
Open sets, obstacle sets and balls are represented as sets of grid nodes
(closed convention: a node on the sphere |x - c| = rho belongs to the ball).
A "field" throughout the package is a float array with one value per node,
flat C-order indexing.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

_SNAP_RTOL = 1e-9


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class BallSpec:
    """Closed ball |x - center| <= radius."""

    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius < 0 or not np.all(np.isfinite(self.center)):
            raise GridError("ball needs finite center and radius >= 0")


@dataclass(frozen=True)
class AnnulusSpec:
    """Closed annulus inner <= |x - center| <= outer."""

    center: tuple
    inner: float
    outer: float

    def __post_init__(self):
        if not 0 <= self.inner <= self.outer:
            raise GridError("annulus needs 0 <= inner <= outer")


@dataclass(frozen=True)
class HalfSpaceSpec:
    """Closed half-space x . normal <= offset."""

    normal: tuple
    offset: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.normal)) or not np.isfinite(self.offset):
            raise GridError("half-space needs finite normal and offset")


class Grid:
    """Uniform tensor grid on a box, N in {2, 3}.

    Nodes sit at origin + index * h per axis; flat indices are C-ordered.
    Immutable after construction and safe to share between threads.
    """

    def __init__(self, dim, box, h, n_cells):
        self.dim = int(dim)
        self.box = np.asarray(box, dtype=float)
        self.h = float(h)
        self.n_cells = tuple(int(n) for n in n_cells)
        self.shape = tuple(n + 1 for n in self.n_cells)
        self.origin = self.box[:, 0].copy()
        self.n_nodes = int(np.prod(self.shape))
        self.cell_volume = self.h**self.dim
        self.axes = tuple(
            self.origin[d] + self.h * np.arange(self.shape[d]) for d in range(self.dim)
        )

    def __repr__(self):
        return f"Grid(dim={self.dim}, shape={self.shape}, h={self.h:g})"

    def compatible(self, other):
        return (
            self.dim == other.dim
            and self.shape == other.shape
            and abs(self.h - other.h) <= 1e-12 * self.h
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * self.h)
        )

    # -- node coordinates ---------------------------------------------------

    def node_coords(self, idx=None):
        """Coordinates of the given flat node indices, shape (m, dim)."""
        if idx is None:
            idx = np.arange(self.n_nodes)
        idx = np.asarray(idx, dtype=np.int64)
        multi = np.unravel_index(idx, self.shape)
        return np.stack(
            [self.origin[d] + self.h * multi[d] for d in range(self.dim)], axis=-1
        )

    def nearest_node(self, point):
        """Flat index of the grid node closest to ``point``."""
        point = np.asarray(point, dtype=float)
        multi = np.clip(
            np.rint((point - self.origin) / self.h).astype(np.int64),
            0,
            np.asarray(self.shape) - 1,
        )
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def cell_center_axes(self):
        """Per-axis coordinates of cell centers (axis arrays of length n_cells)."""
        return tuple(
            self.origin[d] + self.h * (np.arange(self.n_cells[d]) + 0.5)
            for d in range(self.dim)
        )

    def node_distance_sq(self, point):
        """|x - point|^2 on the node lattice, shape = self.shape."""
        point = np.asarray(point, dtype=float)
        out = np.zeros(self.shape)
        for d in range(self.dim):
            delta = (self.axes[d] - point[d]) ** 2
            out += delta.reshape([-1 if k == d else 1 for k in range(self.dim)])
        return out

    def cell_distance_sq(self, point):
        """|x - point|^2 on the cell-center lattice, shape = self.n_cells."""
        point = np.asarray(point, dtype=float)
        centers = self.cell_center_axes()
        out = np.zeros(self.n_cells)
        for d in range(self.dim):
            delta = (centers[d] - point[d]) ** 2
            out += delta.reshape([-1 if k == d else 1 for k in range(self.dim)])
        return out


def build_grid(dim, box, h):
    """Build a uniform grid over ``box`` with spacing ``h``.

    If h does not divide an axis length (relative tolerance 1e-9), the spacing
    is snapped down to the largest value <= h that gives an integer number of
    cells on every axis, with a warning.
    """
    if dim not in (2, 3):
        raise GridError(f"dimension must be 2 or 3, got {dim}")
    box = np.asarray(box, dtype=float)
    if box.shape != (dim, 2):
        raise GridError(f"box must have shape ({dim}, 2), got {box.shape}")
    lengths = box[:, 1] - box[:, 0]
    if np.any(lengths <= 0) or not np.all(np.isfinite(lengths)):
        raise GridError("box must be nondegenerate")
    if not (h > 0 and np.isfinite(h)):
        raise GridError("spacing must be positive")

    ratios = lengths / h
    if np.all(np.abs(ratios - np.rint(ratios)) <= _SNAP_RTOL * np.maximum(1.0, ratios)):
        n_cells = np.rint(ratios).astype(int)
        h_eff = h
    else:
        n_candidates = np.ceil(ratios - _SNAP_RTOL).astype(int)
        h_eff = float(np.min(lengths / n_candidates))
        ratios = lengths / h_eff
        if np.any(np.abs(ratios - np.rint(ratios)) > _SNAP_RTOL * np.maximum(1.0, ratios)):
            raise GridError(
                "box axis lengths are incommensurable: no common spacing <= h "
                "divides every axis"
            )
        n_cells = np.rint(ratios).astype(int)
        warnings.warn(
            f"spacing {h:g} does not divide the box; snapped down to {h_eff:g}",
            stacklevel=2,
        )
    if np.any(n_cells < 2):
        raise GridError("each axis needs at least 3 nodes (2 cells)")
    return Grid(dim, box, h_eff, n_cells)


class NodeSet:
    """Sorted set of flat node indices on a fixed grid."""

    def __init__(self, grid, indices):
        self.grid = grid
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= grid.n_nodes):
            raise GridError("node index out of range for grid")
        self.indices = idx

    @classmethod
    def from_mask(cls, grid, mask):
        out = cls.__new__(cls)
        out.grid = grid
        out.indices = np.flatnonzero(np.asarray(mask, dtype=bool).ravel()).astype(np.int64)
        return out

    def as_mask(self):
        """Boolean lattice mask, shape = grid.shape."""
        mask = np.zeros(self.grid.n_nodes, dtype=bool)
        mask[self.indices] = True
        return mask.reshape(self.grid.shape)

    def __len__(self):
        return int(self.indices.size)

    def __contains__(self, idx):
        pos = np.searchsorted(self.indices, idx)
        return pos < self.indices.size and self.indices[pos] == idx

    def _check(self, other):
        if not self.grid.compatible(other.grid):
            raise GridError("node sets live on different grids")

    def union(self, other):
        self._check(other)
        return NodeSet(self.grid, np.union1d(self.indices, other.indices))

    def intersect(self, other):
        self._check(other)
        return NodeSet(self.grid, np.intersect1d(self.indices, other.indices))

    def difference(self, other):
        self._check(other)
        return NodeSet(self.grid, np.setdiff1d(self.indices, other.indices))

    def issubset(self, other):
        self._check(other)
        return np.all(np.isin(self.indices, other.indices))

    def coords(self):
        return self.grid.node_coords(self.indices)

    def __repr__(self):
        return f"NodeSet({len(self)} nodes)"


def full_domain(grid):
    return NodeSet(grid, np.arange(grid.n_nodes))


def mask(grid, shape):
    """Nodes whose coordinates satisfy the shape predicate (closed conditions).

    ``shape`` is a BallSpec, AnnulusSpec, HalfSpaceSpec or a callable taking an
    (m, dim) coordinate array and returning a boolean array. An empty result is
    legal.
    """
    if isinstance(shape, BallSpec):
        m = grid.node_distance_sq(shape.center) <= shape.radius**2 * (1 + 1e-14) + 1e-300
    elif isinstance(shape, AnnulusSpec):
        d2 = grid.node_distance_sq(shape.center)
        m = (d2 >= shape.inner**2 * (1 - 1e-14)) & (d2 <= shape.outer**2 * (1 + 1e-14))
    elif isinstance(shape, HalfSpaceSpec):
        normal = np.asarray(shape.normal, dtype=float)
        proj = np.zeros(grid.shape)
        for d in range(grid.dim):
            proj += (normal[d] * grid.axes[d]).reshape(
                [-1 if k == d else 1 for k in range(grid.dim)]
            )
        m = proj <= shape.offset + 1e-14 * (1 + abs(shape.offset))
    elif callable(shape):
        m = np.asarray(shape(grid.node_coords()), dtype=bool).reshape(grid.shape)
    else:
        raise GridError(f"unsupported shape {shape!r}")
    return NodeSet.from_mask(grid, m)


def boundary_nodes(grid, domain):
    """Nodes of ``domain`` with at least one axis-neighbor outside it.

    A missing neighbor (node on the grid box face) counts as outside.
    """
    if len(domain) == 0:
        raise GridError("domain is empty")
    m = domain.as_mask()
    interior = m.copy()
    for d in range(grid.dim):
        nb_plus = np.zeros_like(m)
        nb_minus = np.zeros_like(m)
        sl_lo = [slice(None)] * grid.dim
        sl_hi = [slice(None)] * grid.dim
        sl_lo[d] = slice(None, -1)
        sl_hi[d] = slice(1, None)
        nb_plus[tuple(sl_lo)] = m[tuple(sl_hi)]
        nb_minus[tuple(sl_hi)] = m[tuple(sl_lo)]
        interior &= nb_plus & nb_minus
    return NodeSet.from_mask(grid, m & ~interior)


def cells_of(grid, domain):
    """Boolean cell mask (shape grid.n_cells): cells with all corners in domain."""
    m = domain.as_mask()
    out = None
    for offsets in itertools.product((0, 1), repeat=grid.dim):
        sl = tuple(
            slice(o, n + o) for o, n in zip(offsets, grid.n_cells)
        )
        corner = m[sl]
        out = corner.copy() if out is None else (out & corner)
    return out


def solver_interior(grid, domain):
    """Nodes all of whose incident cells are domain cells.

    This is the free-node set used by the solvers: pinning the complement makes
    every assembled cell's remaining corners carry prescribed values, which the
    capacity laws and the obstacle/classical equivalence rely on. Grid box face
    nodes are never interior.
    """
    cells = cells_of(grid, domain)
    padded = np.zeros(tuple(n + 2 for n in grid.n_cells), dtype=bool)
    padded[tuple(slice(1, -1) for _ in range(grid.dim))] = cells
    out = None
    for offsets in itertools.product((0, 1), repeat=grid.dim):
        sl = tuple(slice(o, n + 1 + o) for o, n in zip(offsets, grid.n_cells))
        piece = padded[sl]
        out = piece.copy() if out is None else (out & piece)
    return NodeSet.from_mask(grid, out)


def cell_corner_indices(grid, cell_mask):
    """Flat node indices of the 2^dim corners of each cell in ``cell_mask``.

    Returns (m, 2^dim) int64 array; corner order matches
    itertools.product((0, 1), repeat=dim).
    """
    cells = np.argwhere(cell_mask)
    if cells.size == 0:
        return np.zeros((0, 2**grid.dim), dtype=np.int64)
    corners = []
    for offsets in itertools.product((0, 1), repeat=grid.dim):
        multi = tuple(cells[:, d] + offsets[d] for d in range(grid.dim))
        corners.append(np.ravel_multi_index(multi, grid.shape))
    return np.stack(corners, axis=1).astype(np.int64)
