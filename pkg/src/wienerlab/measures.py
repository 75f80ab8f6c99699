"""Measures mu in M_0, Kato data nu, measure quadratures and Kato norms.

A measure is either a nonnegative density (mass/volume units, sampled at cell
midpoints), the obstacle measure infty_E carried by a node set E, zero, or a
signed density used as Kato datum nu. Densities can carry a restriction
support; restriction is the mu_E operation mu_E(B) = mu(B intersect E).

Two quadratures of int u v dmu are provided: the consistent mass matrix
(exact basis products, midpoint density) and a lumped nodal diagonal. The
solvers use the lumped variant: it keeps the discrete operator an M-matrix,
so comparison principles and the capacity law suite hold at solver precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve

from .grid import BallSpec, GridError, cell_corner_indices, cells_of


class MeasureError(ValueError):
    pass


class MeasureSpec:
    """A member of M_0 (zero / density / obstacle) or a signed Kato datum."""

    def __init__(self, kind, density=None, support=None, obstacle_set=None):
        if kind not in ("zero", "density", "obstacle", "signed_density"):
            raise MeasureError(f"unknown measure kind {kind!r}")
        self.kind = kind
        self._density = density
        self.support = support
        self.obstacle_set = obstacle_set

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def density(cls, f, support=None):
        """Nonnegative density, constant or callable on (m, dim) points."""
        return cls("density", density=f, support=support)

    @classmethod
    def obstacle(cls, nodes):
        """The measure infty_E carried by the node set E."""
        return cls("obstacle", obstacle_set=nodes)

    @classmethod
    def signed_density(cls, g):
        return cls("signed_density", density=g)

    @property
    def is_nonnegative(self):
        return self.kind in ("zero", "density", "obstacle")

    def sample_density(self, points, check_sign=True):
        points = np.atleast_2d(points)
        if self.kind == "zero":
            return np.zeros(points.shape[0])
        if self.kind == "obstacle":
            raise MeasureError("obstacle measure has no density")
        f = self._density
        vals = np.full(points.shape[0], float(f)) if np.isscalar(f) else np.asarray(
            f(points), dtype=float
        )
        if vals.shape != (points.shape[0],):
            raise MeasureError("density callable must return one value per point")
        if check_sign and self.kind == "density" and np.any(vals < 0):
            raise MeasureError("negative density sample in a nonnegative measure")
        return vals

    def restricted(self, E):
        """mu_E: the measure restricted to the node set E."""
        if self.kind == "zero":
            return MeasureSpec.zero()
        if self.kind == "obstacle":
            return MeasureSpec.obstacle(self.obstacle_set.intersect(E))
        support = E if self.support is None else self.support.intersect(E)
        out = MeasureSpec(self.kind, density=self._density, support=support)
        return out

    def scaled(self, c):
        if self.kind == "zero":
            return self
        if self.kind == "obstacle":
            raise MeasureError("cannot scale an obstacle measure")
        f = self._density
        g = (lambda pts, _f=f: c * _f(pts)) if callable(f) else c * float(f)
        return MeasureSpec(self.kind, density=g, support=self.support)

    def __repr__(self):
        return f"MeasureSpec({self.kind})"


@dataclass
class KatoNorm:
    """Kato norm of a signed density over a ball."""

    value: float
    ball: BallSpec
    kind: str  # 'riesz' for N=3, 'log' for N=2
    rescale: float
    argmax_node: int | None


def _cell_support_weight(grid, mu):
    """Per-cell 0/1 weight from the restriction support (any corner inside)."""
    if mu.support is None:
        return None
    m = mu.support.as_mask()
    out = None
    import itertools

    for offsets in itertools.product((0, 1), repeat=grid.dim):
        sl = tuple(slice(o, n + o) for o, n in zip(offsets, grid.n_cells))
        corner = m[sl]
        out = corner.copy() if out is None else (out | corner)
    return out


def mass_matrix(grid, domain, mu, lumped=False):
    """Quadrature of int u v dmu over the cells of ``domain``.

    Consistent variant: M[i][j] = sum_cells f(midpoint) int phi_i phi_j, with a
    restricted density contributing on cells having at least one corner in the
    support. Lumped variant: diagonal m_a = sum_{cells owning a} f(mid) (h/2)^N
    with nodes outside the support zeroed; returned as a CSR diagonal.
    """
    n = grid.n_nodes
    if mu.kind == "zero":
        return sp.csr_matrix((n, n))
    if mu.kind == "obstacle":
        raise MeasureError("obstacle measure is imposed by constraints, not a matrix")
    if lumped:
        return sp.diags(lumped_mass_diagonal(grid, domain, mu), format="csr")

    from .elliptic import reference_tensors

    cmask = cells_of(grid, domain)
    corners = cell_corner_indices(grid, cmask)
    if corners.shape[0] == 0:
        return sp.csr_matrix((n, n))
    centers = grid.origin + grid.h * (np.argwhere(cmask) + 0.5)
    vals = mu.sample_density(centers, check_sign=(mu.kind == "density"))
    w = _cell_support_weight(grid, mu)
    if w is not None:
        vals = vals * w[cmask]
    _, mass, _ = reference_tensors(grid.dim, grid.h)
    nc = corners.shape[1]
    elem = vals[:, None, None] * mass[None, :, :]
    rows = np.repeat(corners, nc, axis=1).ravel()
    cols = np.tile(corners, (1, nc)).ravel()
    M = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return M


def lumped_mass_diagonal(grid, domain, mu):
    """Nodal masses m_a of the lumped measure quadrature (length n_nodes)."""
    n = grid.n_nodes
    diag = np.zeros(n)
    if mu.kind == "zero":
        return diag
    if mu.kind == "obstacle":
        raise MeasureError("obstacle measure is imposed by constraints, not a matrix")
    cmask = cells_of(grid, domain)
    corners = cell_corner_indices(grid, cmask)
    if corners.shape[0] == 0:
        return diag
    centers = grid.origin + grid.h * (np.argwhere(cmask) + 0.5)
    vals = mu.sample_density(centers, check_sign=(mu.kind == "density"))
    share = (grid.h / 2.0) ** grid.dim
    for c in range(corners.shape[1]):
        np.add.at(diag, corners[:, c], vals * share)
    if mu.support is not None:
        keep = np.zeros(n, dtype=bool)
        keep[mu.support.indices] = True
        diag[~keep] = 0.0
    return diag


def restrict(mu, E):
    """mu_E(B) = mu(B intersect E); node-set intersection for obstacles."""
    return mu.restricted(E)


# -- Kato norms --------------------------------------------------------------


def _kernel_table(grid, kind, rescale):
    """Kernel values on the cell-to-node offset lattice, plus incident-cell fix.

    Table axis length is 2 * n_cells; entry t corresponds to the offset
    (t - n_cells + 0.5) * h. The 2^N entries whose offsets are (+-h/2, ...)
    belong to cells incident to the node; their midpoint value is replaced by
    the mean of the kernel over the ball of volume 2^N h^N centered at the
    node, which removes the singular quadrature error.
    """
    h = grid.h
    dim = grid.dim
    axes = [(np.arange(2 * nc) - nc + 0.5) * h for nc in grid.n_cells]
    d2 = np.zeros(tuple(2 * nc for nc in grid.n_cells))
    for d in range(dim):
        d2 = d2 + (axes[d] ** 2).reshape([-1 if k == d else 1 for k in range(dim)])
    dist = np.sqrt(d2)
    if kind == "riesz":
        table = 1.0 / dist
        r_eq = h * (6.0 / math.pi) ** (1.0 / 3.0)
        mean_near = 2.0 * math.pi * r_eq**2 / (8.0 * h**3)
    else:
        table = np.log(rescale / dist)
        r_eq = 2.0 * h / math.sqrt(math.pi)
        mean_near = math.log(rescale / r_eq) + 0.5
    near = np.isclose(dist, h * math.sqrt(dim) / 2.0, rtol=1e-12, atol=0)
    table[near] = mean_near
    return table


def _convolve_kernel(grid, cell_masses, table):
    """out[node] = sum_cells cell_masses[cell] * table[cell - node offset]."""
    kt = table[tuple(slice(None, None, -1) for _ in range(grid.dim))]
    conv = fftconvolve(cell_masses, kt, mode="full")
    sl = tuple(slice(nc - 1, 2 * nc) for nc in grid.n_cells)
    return conv[sl]


def kato_norm(nu, grid, ball, rescale=None):
    """Kato norm of a signed density over a ball.

    N=3 uses the Riesz kernel |y - x|^{-1}; N=2 uses log(L0 / |y - x|) with a
    rescale length L0 >= diam(ball) (default 4 * radius, the scale of the
    logarithmic Green bound on the ball). The sup runs over grid nodes in the
    ball; cell sums run over cells with midpoint in the ball. Ties in the sup
    break to the lowest node index.
    """
    if nu.kind not in ("signed_density", "density", "zero"):
        raise MeasureError("Kato norm needs a density datum (obstacle is not Kato)")
    kind = "riesz" if grid.dim == 3 else "log"
    if kind == "log":
        if rescale is None:
            rescale = 4.0 * ball.radius
        if rescale < 2.0 * ball.radius:
            raise MeasureError("log-kernel rescale must be >= ball diameter")
    if nu.kind == "zero":
        return KatoNorm(0.0, ball, kind, rescale if rescale else 0.0, None)

    node_in = grid.node_distance_sq(ball.center) <= ball.radius**2 * (1 + 1e-14)
    cell_in = grid.cell_distance_sq(ball.center) <= ball.radius**2 * (1 + 1e-14)
    if not node_in.any():
        return KatoNorm(0.0, ball, kind, rescale if rescale else 0.0, None)

    centers_multi = np.argwhere(cell_in)
    masses = np.zeros(grid.n_cells)
    if centers_multi.size:
        pts = grid.origin + grid.h * (centers_multi + 0.5)
        vals = np.abs(nu.sample_density(pts, check_sign=False))
        masses[cell_in] = vals
    if nu.support is not None:
        w = _cell_support_weight(grid, nu)
        masses *= w

    table = _kernel_table(grid, kind, rescale)
    sums = _convolve_kernel(grid, masses, table) * grid.cell_volume
    sums = np.where(node_in, sums, -np.inf).ravel()
    arg = int(np.argmax(sums))
    value = float(max(sums[arg], 0.0))
    return KatoNorm(value, ball, kind, rescale if rescale else 0.0, arg)


def kato_vanishing_profile(nu, grid, center, radii, rescale=None):
    """Kato norms on shrinking balls around ``center``.

    ``radii`` must be decreasing; a single rescale length (default 4 * largest
    radius) is shared by every entry so the values are integrals of one fixed
    kernel over shrinking sets.
    """
    radii = list(radii)
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise MeasureError("radii must be strictly decreasing")
    if rescale is None and grid.dim == 2:
        rescale = 4.0 * radii[0]
    return [kato_norm(nu, grid, BallSpec(tuple(center), r), rescale=rescale) for r in radii]
