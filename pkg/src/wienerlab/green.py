"""Approximate Green functions on balls and their capacity-type bounds.

G^y_rho solves a(v, G) = average of v over B_rho(y) for all v vanishing on
the boundary; rho = 0 degenerates to a unit nodal load. Pointwise values of a
Green field follow the ball-average convention (radius 2h), which keeps the
kernel symmetry exact at solver precision.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .capacity import harmonic_capacity
from .elliptic import EllipticCoefficients, assemble_stiffness, pinned_solve
from .grid import BallSpec, GridError, mask


@dataclass
class GreenField:
    """Approximate Green function on a ball domain."""

    values: np.ndarray
    grid: object
    y: tuple
    rho: float
    ball: BallSpec
    coeffs: EllipticCoefficients
    residual: float
    load: np.ndarray
    meta: dict = field(default_factory=dict)

    def value_at(self, point, rho=None):
        """Ball-average value at ``point`` (averaging radius 2h by default)."""
        rho = 2.0 * self.grid.h if rho is None else rho
        b = average_load(self.grid, point, rho, warn=False)
        return float(b @ self.values)


def average_load(grid, center, rho, warn=True):
    """Normalized load b_i = int_{B_rho(center)} phi_i dx / |B_rho(center)|.

    Cellwise quadrature: cells with midpoint in the ball contribute (h/2)^N to
    each corner; the vector is normalized so that sum(b) = 1 exactly. A radius
    below the spacing degrades to a unit load at the nearest node.
    """
    b = np.zeros(grid.n_nodes)
    if rho > 0:
        cell_in = grid.cell_distance_sq(center) <= rho**2 * (1 + 1e-14)
        count = int(cell_in.sum())
        if count:
            from .grid import cell_corner_indices

            corners = cell_corner_indices(grid, cell_in)
            share = (grid.h / 2.0) ** grid.dim
            for c in range(corners.shape[1]):
                np.add.at(b, corners[:, c], share)
            return b / (count * grid.cell_volume)
        if warn:
            warnings.warn("averaging radius below the spacing: using a nodal load")
    b[grid.nearest_node(center)] = 1.0
    return b


# The pinned complement of a Moore-interior free set places the effective
# homogeneous-Dirichlet radius about 0.87 h inside the nominal sphere; padding
# the pinning mask by this much recenters it at the nominal radius while every
# node of the sphere layer still lands in the pinned-zero set.
BOUNDARY_OFFSET = 0.8


def approximate_green(grid, ball, coeffs, y, rho=None, rel_tol=1e-8, stiffness=None):
    """Green field for the ball domain with singularity averaged over B_rho(y).

    Default rho = 2h resolves the averaged load with at least one interior
    cell on every tested grid.
    """
    y = tuple(np.asarray(y, dtype=float))
    if rho is None:
        rho = 2.0 * grid.h
    dist = math.dist(y, ball.center)
    if dist + max(rho, 0.0) > ball.radius * (1 + 1e-12):
        raise GridError("averaging ball B_rho(y) must sit inside the domain ball")
    domain = mask(grid, BallSpec(ball.center, ball.radius + BOUNDARY_OFFSET * grid.h))
    K = stiffness or assemble_stiffness(grid, domain, coeffs)
    b = average_load(grid, y, rho)
    u, info = pinned_solve(K, [], rhs=b, rel_tol=rel_tol)
    return GreenField(
        values=u,
        grid=grid,
        y=y,
        rho=float(rho),
        ball=ball,
        coeffs=coeffs,
        residual=info["rel_residual"],
        load=b,
        meta={"iterations": info["iterations"]},
    )


@dataclass
class GreenBoundReport:
    """Empirical constants sandwiching G by 1/Cap on a sphere |x-y| = r."""

    k_upper: float
    k_lower: float
    k: float
    alpha: float
    cap: float
    shell_nodes: int
    r: float
    q: float


def check_green_bounds(G, q, r, rel_tol=1e-8):
    """Empirical constants for the two-sided Green bound on the shell |x-y|=r.

    k_upper makes G <= k_upper / (lambda Cap(B_r(y), B_R)); k_lower makes
    G >= 1 / (k_lower Lambda Cap); alpha is the smallest constant with
    G <= (alpha/lambda) |x-y|^{2-N} (N=3) or (alpha/lambda) log(4R/|x-y|)
    (N=2) over the nodes at distance >= max(rho, 2h) from the singularity.
    Cap here is the Dirichlet-integral capacity, which makes the empirical
    constants invariant under scaling the coefficients.
    """
    grid = G.grid
    ball = G.ball
    y = np.asarray(G.y)
    if r < grid.h:
        raise GridError(f"shell radius {r:g} is below the spacing {grid.h:g}")
    if math.dist(G.y, ball.center) + r / q > ball.radius * (1 + 1e-12):
        raise GridError("B_{r/q}(y) must sit inside the domain ball")
    d = np.sqrt(grid.node_distance_sq(tuple(y))).ravel()
    shell = np.abs(d - r) <= grid.h * math.sqrt(grid.dim)
    dom_mask = mask(grid, ball).as_mask().ravel()
    shell &= dom_mask
    if not shell.any():
        raise GridError(f"no nodes near the sphere of radius {r:g}")

    inner = mask(grid, BallSpec(G.y, r))
    domain = mask(grid, ball)
    cap = harmonic_capacity(
        inner, domain, EllipticCoefficients.laplacian(grid.dim), rel_tol=rel_tol
    ).value

    g_shell = G.values[shell]
    lam, Lam = G.coeffs.lam, G.coeffs.Lam
    k_upper = float(np.max(g_shell) * lam * cap)
    g_min = float(np.min(g_shell))
    k_lower = math.inf if g_min <= 0 else 1.0 / (g_min * Lam * cap)

    far = dom_mask & (d >= max(G.rho, 2 * grid.h))
    if grid.dim == 3:
        envelope = d[far] ** (2 - grid.dim)
    else:
        envelope = np.log(4.0 * ball.radius / np.maximum(d[far], 1e-300))
    ratios = G.values[far] / envelope
    alpha = float(lam * np.max(ratios))

    return GreenBoundReport(
        k_upper=k_upper,
        k_lower=k_lower,
        k=max(k_upper, k_lower),
        alpha=alpha,
        cap=cap,
        shell_nodes=int(shell.sum()),
        r=float(r),
        q=float(q),
    )


def green_bounds_family(grid, ball, coeffs, pairs, q, rho=None, rel_tol=1e-8):
    """Bound reports for a family of (y, r) pairs plus the uniform constants.

    Returns (reports, K, alpha) where K and alpha are the smallest constants
    working across the whole family.
    """
    pin_ball = BallSpec(ball.center, ball.radius + BOUNDARY_OFFSET * grid.h)
    K_stiff = assemble_stiffness(grid, mask(grid, pin_ball), coeffs)
    reports = []
    for y, r in pairs:
        G = approximate_green(grid, ball, coeffs, y, rho=rho, rel_tol=rel_tol, stiffness=K_stiff)
        reports.append(check_green_bounds(G, q, r, rel_tol=rel_tol))
    return reports, max(r.k for r in reports), max(r.alpha for r in reports)
