"""Relaxed Dirichlet problems Lu + mu u = nu and the classical-case bridge.

A relaxed problem couples the elliptic form with a nonnegative measure mu:
density measures enter as an absorption term, the obstacle measure infty_E
pins u = 0 on E. With g prescribed on the boundary layer the discrete weak
solution is the unique minimizer of a(v,v) + int v^2 dmu - 2 <nu, v> over
fields agreeing with g off the interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import EllipticCoefficients, assemble_stiffness, pinned_solve
from .grid import GridError, NodeSet, cell_corner_indices, cells_of
from .measures import MeasureSpec, lumped_mass_diagonal


class CompatibilityError(ValueError):
    pass


@dataclass
class RelaxedProblem:
    grid: object
    domain: NodeSet
    coeffs: EllipticCoefficients
    mu: MeasureSpec
    nu: MeasureSpec
    g: object = 0.0  # boundary datum: scalar, callable(points) or nodal array

    def boundary_values(self):
        if np.isscalar(self.g):
            return np.full(self.grid.n_nodes, float(self.g))
        if callable(self.g):
            return np.asarray(self.g(self.grid.node_coords()), dtype=float)
        vals = np.asarray(self.g, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise GridError("boundary datum array must have one value per node")
        return vals


@dataclass
class Solution:
    u: np.ndarray
    residual: float
    energy: float
    mu_term: float
    functional: float
    iterations: int = 0
    meta: dict = field(default_factory=dict)


def load_vector(grid, domain, nu):
    """b_i = int nu phi_i dx over domain cells, midpoint density sampling."""
    b = np.zeros(grid.n_nodes)
    if nu.kind == "zero":
        return b
    cmask = cells_of(grid, domain)
    corners = cell_corner_indices(grid, cmask)
    if corners.shape[0] == 0:
        return b
    centers = grid.origin + grid.h * (np.argwhere(cmask) + 0.5)
    vals = nu.sample_density(centers, check_sign=False)
    share = (grid.h / 2.0) ** grid.dim
    for c in range(corners.shape[1]):
        np.add.at(b, corners[:, c], vals * share)
    return b


def solve_relaxed(problem, rel_tol=1e-8, x0=None, stiffness=None):
    """Weak solution of Lu + mu u = nu with u = g off the solver interior.

    Obstacle mu = infty_E additionally pins u = 0 on E; the boundary datum
    must vanish on pinned obstacle nodes (no admissible field otherwise).
    """
    grid = problem.grid
    if not problem.mu.is_nonnegative:
        raise CompatibilityError("mu must be a nonnegative measure")
    K = stiffness or assemble_stiffness(grid, problem.domain, problem.coeffs)
    g_vals = problem.boundary_values()
    complement = np.setdiff1d(np.arange(grid.n_nodes), K.free_nodes)
    b = load_vector(grid, problem.domain, problem.nu)

    pins = [(complement, g_vals[complement])]
    diag = None
    if problem.mu.kind == "obstacle":
        E = problem.mu.obstacle_set
        conflict = np.intersect1d(E.indices, complement)
        if conflict.size and np.max(np.abs(g_vals[conflict])) > 1e-13:
            raise CompatibilityError(
                "boundary datum must vanish where the obstacle meets the boundary"
            )
        pins.append((E.indices, 0.0))
    elif problem.mu.kind == "density":
        diag = lumped_mass_diagonal(grid, problem.domain, problem.mu)

    u, info = pinned_solve(K, pins, rhs=b, extra_diag=diag, rel_tol=rel_tol, x0=x0)
    energy = K.energy(u)
    mu_term = float(diag @ (u * u)) if diag is not None else 0.0
    functional = energy + mu_term - 2.0 * float(b @ u)
    return Solution(
        u=u,
        residual=info["rel_residual"],
        energy=energy,
        mu_term=mu_term,
        functional=functional,
        iterations=info["iterations"],
        meta={"free_count": info["free_count"], "load": b},
    )


def dirichlet_solve(grid, coeffs, free, ambient, nu, g=0.0, rel_tol=1e-8, x0=None):
    """Classical Dirichlet solve: given free nodes, pin everything else.

    The form is assembled over the cells of ``ambient`` (extension by the
    pinned values across the staircase boundary), which is the discrete
    realization of extension by zero for H^1_0 of the open set.
    """
    K = assemble_stiffness(grid, ambient, coeffs)
    g_vals = (
        np.full(grid.n_nodes, float(g))
        if np.isscalar(g)
        else np.asarray(g, dtype=float)
    )
    pinned = np.setdiff1d(np.arange(grid.n_nodes), free.indices)
    b = load_vector(grid, ambient, nu)
    A_full = K.full
    u = np.zeros(grid.n_nodes)
    u[pinned] = g_vals[pinned]
    from .elliptic import solve_spd

    idx = free.indices
    A_ff = A_full[idx][:, idx].tocsr()
    b_f = b[idx] - (A_full @ u)[idx]
    x, info = solve_spd(A_ff, b_f, rel_tol=rel_tol, x0=None if x0 is None else x0[idx])
    u[idx] = x
    return Solution(
        u=u,
        residual=info["rel_residual"],
        energy=K.energy(u),
        mu_term=0.0,
        functional=K.energy(u) - 2.0 * float(b @ u),
        iterations=info["iterations"],
        meta={"free_count": idx.size, "load": b},
    )


def minimize_functional_check(problem, solution, n_fields=20, steps=(0.1, -0.1, 0.01, -0.01), seed=0):
    """Verify F(u) <= F(u + t w) for random admissible perturbations w.

    Also reports the quadratic-structure defect: for an exact minimizer
    F(u + t w) - F(u) = t^2 (a(w,w) + int w^2 dmu).
    """
    grid = problem.grid
    K = assemble_stiffness(grid, problem.domain, problem.coeffs)
    diag = (
        lumped_mass_diagonal(grid, problem.domain, problem.mu)
        if problem.mu.kind == "density"
        else np.zeros(grid.n_nodes)
    )
    b = load_vector(grid, problem.domain, problem.nu)

    def functional(v):
        return K.energy(v) + float(diag @ (v * v)) - 2.0 * float(b @ v)

    free = np.asarray(K.free_nodes)
    if problem.mu.kind == "obstacle":
        keep = ~np.isin(free, problem.mu.obstacle_set.indices)
        free = free[keep]
    rng = np.random.default_rng(seed)
    f_u = functional(solution.u)
    violations = []
    quad_defects = []
    for k in range(n_fields):
        w = np.zeros(grid.n_nodes)
        w[free] = rng.standard_normal(free.size)
        w /= max(np.linalg.norm(w), 1e-300)
        quad = K.energy(w) + float(diag @ (w * w))
        for t in steps:
            gap = functional(solution.u + t * w) - f_u
            if gap < -1e-10 * max(1.0, abs(f_u)):
                violations.append((k, t, gap))
            quad_defects.append(abs(gap - t * t * quad))
    return {
        "violations": violations,
        "passed": not violations,
        "max_quadratic_defect": float(max(quad_defects)),
        "functional_value": f_u,
    }


@dataclass
class OscillationReport:
    osc: float
    ball_average: float
    node_count: int


def local_oscillation(grid, u, center, radius):
    """max - min of u over the nodes of B_radius(center), plus the ball average.

    The average realizes the pointwise-value convention (representative by
    shrinking ball means).
    """
    d2 = grid.node_distance_sq(center).ravel()
    sel = d2 <= radius**2 * (1 + 1e-14)
    if not sel.any():
        raise GridError("ball contains no grid nodes")
    vals = np.asarray(u, dtype=float)[sel]
    return OscillationReport(
        osc=float(vals.max() - vals.min()),
        ball_average=float(vals.mean()),
        node_count=int(sel.sum()),
    )


def pointwise_value(grid, u, point, rho=None):
    """Ball-average representative of u at a point (default radius 2h)."""
    rho = 2.0 * grid.h if rho is None else rho
    return local_oscillation(grid, u, point, rho).ball_average
