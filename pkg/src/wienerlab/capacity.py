"""Capacitary potentials, harmonic and mu-capacity, capacity laws, Poincare.

Cap(E, Omega) minimizes the form energy over fields equal to 1 on E and 0 on
the complement of Omega's solver interior; Cap_mu(E, Omega) minimizes energy
plus the mu_E term over fields equal to 1 off the interior. Constraints are
imposed by node pinning (row/column elimination), never by penalty, and the
measure term uses the lumped nodal quadrature so the monotonicity and
submodularity laws hold at solver precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .elliptic import (
    EllipticCoefficients,
    assemble_stiffness,
    cell_gradient_energies,
    cell_l2,
    pinned_solve,
)
from .grid import BallSpec, GridError, NodeSet, mask
from .measures import MeasureSpec, lumped_mass_diagonal

DEFAULT_REL_TOL = 1e-8


@dataclass
class CapacityReport:
    """Result of a capacitary minimization."""

    value: float
    potential: np.ndarray
    target: NodeSet
    domain: NodeSet
    residual: float
    measure: MeasureSpec
    iterations: int = 0
    conflicts: int = 0
    meta: dict = field(default_factory=dict)


def harmonic_capacity(E, domain, coeffs=None, rel_tol=DEFAULT_REL_TOL, stiffness=None):
    """Capacity of the node set E in ``domain``: min a(u, u), u = 1 on E.

    E nodes outside the solver interior keep the boundary value 0 (with a
    warning); an empty E gives value 0 with the zero potential.
    """
    grid = domain.grid
    coeffs = coeffs or EllipticCoefficients.laplacian(grid.dim)
    K = stiffness or assemble_stiffness(grid, domain, coeffs)
    if len(E) == 0:
        zero = np.zeros(grid.n_nodes)
        return CapacityReport(0.0, zero, E, domain, 0.0, MeasureSpec.zero())
    if not E.issubset(domain):
        raise GridError("target set must be contained in the domain")
    free_mask = np.zeros(grid.n_nodes, dtype=bool)
    free_mask[K.free_nodes] = True
    pin_idx = E.indices[free_mask[E.indices]]
    conflicts = len(E) - pin_idx.size
    if conflicts:
        warnings.warn(
            f"{conflicts} target nodes lie on the pinned boundary layer and keep 0"
        )
    if pin_idx.size == 0:
        zero = np.zeros(grid.n_nodes)
        return CapacityReport(0.0, zero, E, domain, 0.0, MeasureSpec.zero(), conflicts=conflicts)
    u, info = pinned_solve(K, [(pin_idx, 1.0)], rel_tol=rel_tol)
    return CapacityReport(
        K.energy(u),
        u,
        E,
        domain,
        info["rel_residual"],
        MeasureSpec.zero(),
        iterations=info["iterations"],
        conflicts=conflicts,
    )


def mu_capacity(E, domain, coeffs, mu, rel_tol=DEFAULT_REL_TOL, stiffness=None):
    """Cap_mu(E, Omega): min of energy + int u^2 dmu_E over u = 1 off the interior.

    Density mu: unconstrained interior solve of (K + M_{mu_E}) u = 0 with u = 1
    pinned off the interior. Obstacle mu = infty_{E'}: the constraint u = 0 on
    E' intersect E replaces the measure term.
    """
    grid = domain.grid
    coeffs = coeffs or EllipticCoefficients.laplacian(grid.dim)
    K = stiffness or assemble_stiffness(grid, domain, coeffs)
    if not E.issubset(domain):
        raise GridError("target set must be contained in the domain")
    complement = NodeSet(grid, np.setdiff1d(np.arange(grid.n_nodes), K.free_nodes))
    mu_E = mu.restricted(E)

    if mu.kind == "obstacle":
        free_mask = np.zeros(grid.n_nodes, dtype=bool)
        free_mask[K.free_nodes] = True
        zero_idx = mu_E.obstacle_set.indices
        zero_idx = zero_idx[free_mask[zero_idx]]
        conflicts = len(mu_E.obstacle_set) - zero_idx.size
        u, info = pinned_solve(
            K, [(complement, 1.0), (zero_idx, 0.0)], rel_tol=rel_tol
        )
        value = K.energy(u)
        mu_term = 0.0
    else:
        diag = lumped_mass_diagonal(grid, domain, mu_E)
        u, info = pinned_solve(K, [(complement, 1.0)], extra_diag=diag, rel_tol=rel_tol)
        mu_term = float(diag @ (u * u))
        value = K.energy(u) + mu_term
        conflicts = 0
    return CapacityReport(
        value,
        u,
        E,
        domain,
        info["rel_residual"],
        mu_E,
        iterations=info["iterations"],
        conflicts=conflicts,
        meta={"mu_term": mu_term},
    )


def zero_capacity_threshold(grid, domain, coeffs, rel_tol, center, stiffness=None):
    """Capacity below which a discrete set counts as zero capacity.

    10 * rel_tol * Cap(B_h(center), domain): single nodes in N=2 carry a
    small positive discrete capacity that vanishes only under refinement, so
    classification works with profiles rather than a fixed-h cutoff.
    """
    probe = mask(grid, BallSpec(tuple(center), grid.h * 1.0001))
    cap = harmonic_capacity(probe, domain, coeffs, rel_tol=rel_tol, stiffness=stiffness)
    return 10.0 * rel_tol * cap.value


@dataclass
class LawCheck:
    name: str
    lhs: float
    rhs: float
    passed: bool


def _leq(lhs, rhs, rel_slack):
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return lhs <= rhs + rel_slack * scale


def check_capacity_laws(domain, coeffs, E, F, mu, nu_meas, omega_prime, rel_tol=DEFAULT_REL_TOL):
    """Evaluate the mu-capacity laws on one instance, slack 5 rel_tol relative.

    (a) 0 <= Cap_mu(E) <= Cap(E); (b) monotone in the set; (c) submodular;
    (d) antitone in the domain (E must lie in omega_prime); (e) monotone in the
    measure (nu_meas must dominate mu). Violations are reported, not raised.
    """
    grid = domain.grid
    K = assemble_stiffness(grid, domain, coeffs)
    slack = 5.0 * rel_tol

    cap_mu = lambda S, dom=domain, meas=mu, stif=K: mu_capacity(
        S, dom, coeffs, meas, rel_tol=rel_tol, stiffness=stif
    ).value
    EuF = E.union(F)
    EiF = E.intersect(F)

    c_e = cap_mu(E)
    c_f = cap_mu(F)
    c_u = cap_mu(EuF)
    c_i = cap_mu(EiF)
    c_harm = harmonic_capacity(E, domain, coeffs, rel_tol=rel_tol, stiffness=K).value
    c_nu = mu_capacity(E, domain, coeffs, nu_meas, rel_tol=rel_tol, stiffness=K).value

    checks = [
        LawCheck("a_nonneg", 0.0, c_e, _leq(0.0, c_e, slack)),
        LawCheck("a_upper", c_e, c_harm, _leq(c_e, c_harm, slack)),
        LawCheck("b_lower", c_i, min(c_e, c_f), _leq(c_i, min(c_e, c_f), slack)),
        LawCheck("b_upper", max(c_e, c_f), c_u, _leq(max(c_e, c_f), c_u, slack)),
        LawCheck("c_submodular", c_u + c_i, c_e + c_f, _leq(c_u + c_i, c_e + c_f, slack)),
        LawCheck("e_measure", c_e, c_nu, _leq(c_e, c_nu, slack)),
    ]
    if omega_prime is not None:
        if not E.issubset(omega_prime):
            raise GridError("law (d) needs E contained in the inner domain")
        c_inner = mu_capacity(E, omega_prime, coeffs, mu, rel_tol=rel_tol).value
        checks.append(LawCheck("d_domain", c_e, c_inner, _leq(c_e, c_inner, slack)))
    return checks


@dataclass
class PoincareReport:
    ratio: float
    lhs: float
    rhs: float
    cap_mu: float
    threshold: float
    degenerate: bool


def poincare_check(u, ball, mu, coeffs=None, rel_tol=DEFAULT_REL_TOL, grid=None):
    """Ratio of int_{B_r} u^2 against (r^N / Cap_mu(B_r, B_2r)) * local energy.

    The sup of this ratio over a field family is an empirical constant for the
    capacitary Poincare inequality. If Cap_mu falls below the zero-capacity
    threshold the inequality is vacuous and the report says degenerate.
    """
    if grid is None:
        raise GridError("poincare_check needs the grid")
    coeffs = coeffs or EllipticCoefficients.laplacian(grid.dim)
    u = np.asarray(u, dtype=float)
    r = ball.radius
    inner = mask(grid, ball)
    outer = mask(grid, BallSpec(ball.center, 2.0 * r))
    cap = mu_capacity(inner, outer, coeffs, mu, rel_tol=rel_tol)
    threshold = zero_capacity_threshold(grid, outer, coeffs, rel_tol, ball.center)

    cell_in = grid.cell_distance_sq(ball.center) <= r**2
    lhs = float(np.sum(cell_l2(grid, u, cell_in)))
    grad = float(np.sum(cell_gradient_energies(grid, u, cell_in)))
    if mu.kind == "obstacle":
        # The measure term of infty_E is 0 on fields vanishing on E, else +inf.
        on_set = mu.obstacle_set.intersect(inner).indices
        if on_set.size and not np.allclose(u[on_set], 0.0, atol=1e-12):
            mu_term = np.inf
        else:
            mu_term = 0.0
    elif mu.kind == "zero":
        mu_term = 0.0
    else:
        diag = lumped_mass_diagonal(grid, outer, mu.restricted(inner))
        mu_term = float(diag @ (u * u))
    core = grad + mu_term

    if cap.value <= threshold:
        return PoincareReport(0.0, lhs, 0.0, cap.value, threshold, True)
    rhs = (r**grid.dim / cap.value) * core
    if lhs == 0.0 or not np.isfinite(core):
        ratio = 0.0
    elif rhs == 0.0:
        ratio = np.inf
    else:
        ratio = lhs / rhs
    return PoincareReport(float(ratio), lhs, float(rhs), cap.value, threshold, False)
