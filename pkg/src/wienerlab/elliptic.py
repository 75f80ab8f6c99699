"""Bilinear form assembly and the SPD solver.

The operator is Lu = -sum_ij D_j(a_ij D_i u) with bounded measurable a_ij,
|a_ij| <= Lambda and sum a_ij xi_i xi_j >= lambda |xi|^2. Discretization uses
multilinear (tensor-product) nodal elements on the uniform grid with the
coefficient sampled at cell midpoints; the per-cell basis-product integrals
are exact, so constant-coefficient assembly is exact and linear fields have
exactly reproduced energies.
"""

from __future__ import annotations

import itertools
import math
import warnings

import numpy as np
import scipy.sparse as sp

from .grid import GridError, cell_corner_indices, cells_of, solver_interior

_CHUNK_CELLS = 200_000


class EllipticityError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


def _probe_directions(dim):
    """Fixed probe set of unit vectors for ellipticity sampling."""
    probes = list(np.eye(dim))
    for i in range(dim):
        for j in range(i + 1, dim):
            for s in (1.0, -1.0):
                v = np.zeros(dim)
                v[i] = 1.0
                v[j] = s
                probes.append(v / math.sqrt(2.0))
    return np.asarray(probes)


class EllipticCoefficients:
    """Coefficient field a_ij(x) with declared bounds lambda, Lambda.

    ``matrix`` is either a constant (dim, dim) array or a callable mapping an
    (m, dim) coordinate array to an (m, dim, dim) array. Non-symmetric input is
    symmetrized with a warning: only the symmetric part enters the solver.
    """

    def __init__(self, dim, matrix, lam, Lam):
        self.dim = int(dim)
        if not (0 < lam <= Lam):
            raise EllipticityError("need 0 < lambda <= Lambda")
        self.lam = float(lam)
        self.Lam = float(Lam)
        if callable(matrix):
            self._func = matrix
            self._const = None
        else:
            mat = np.asarray(matrix, dtype=float)
            if mat.shape != (dim, dim):
                raise EllipticityError(f"constant coefficient must be ({dim},{dim})")
            if not np.allclose(mat, mat.T, rtol=0, atol=1e-14 * max(1.0, Lam)):
                warnings.warn("non-symmetric coefficients: using the symmetric part")
                mat = 0.5 * (mat + mat.T)
            self._func = None
            self._const = mat

    @classmethod
    def laplacian(cls, dim):
        return cls(dim, np.eye(dim), 1.0, 1.0)

    @classmethod
    def diagonal(cls, dim, diag):
        d = np.asarray(diag, dtype=float)
        return cls(dim, np.diag(d), float(d.min()), float(d.max()))

    @property
    def is_constant(self):
        return self._const is not None

    def sample(self, points):
        """(m, dim, dim) symmetric coefficient samples at ``points``."""
        points = np.atleast_2d(points)
        if self._const is not None:
            return np.broadcast_to(self._const, (points.shape[0], self.dim, self.dim))
        a = np.asarray(self._func(points), dtype=float)
        if a.shape != (points.shape[0], self.dim, self.dim):
            raise EllipticityError(
                f"coefficient callable returned shape {a.shape}, expected "
                f"({points.shape[0]}, {self.dim}, {self.dim})"
            )
        sym = 0.5 * (a + np.swapaxes(a, 1, 2))
        if not np.allclose(a, sym, rtol=0, atol=1e-14 * max(1.0, self.Lam)):
            warnings.warn("non-symmetric coefficients: using the symmetric part")
        return sym

    def check_bounds(self, points):
        """Verify |a_ij| <= Lambda and the probe ellipticity at ``points``."""
        a = self.sample(points)
        slack = 1e-12 * max(1.0, self.Lam)
        if np.any(np.abs(a) > self.Lam + slack):
            raise EllipticityError("coefficient bound |a_ij| <= Lambda violated")
        probes = _probe_directions(self.dim)
        quad = np.einsum("mij,pi,pj->mp", a, probes, probes)
        if np.any(quad < self.lam - slack):
            raise EllipticityError("ellipticity constant lambda violated at a sample point")


def reference_tensors(dim, h):
    """Exact per-cell integrals of the multilinear basis on a cube of side h.

    Returns (grad, mass, load): grad[i, j, a, b] = int D_i phi_a D_j phi_b,
    mass[a, b] = int phi_a phi_b, load[a] = int phi_a; corner order matches
    itertools.product((0, 1), repeat=dim).
    """
    corners = list(itertools.product((0, 1), repeat=dim))
    n = len(corners)
    grad = np.zeros((dim, dim, n, n))
    mass = np.zeros((n, n))
    load = np.full(n, (h / 2.0) ** dim)

    def f00(o, p):
        return h / 3.0 if o == p else h / 6.0

    def f11(o, p):
        return (1.0 if o == p else -1.0) / h

    def f10(o):  # int l'_o l_p dt, independent of p
        return 0.5 if o == 1 else -0.5

    for a, ca in enumerate(corners):
        for b, cb in enumerate(corners):
            mass[a, b] = math.prod(f00(ca[d], cb[d]) for d in range(dim))
            for i in range(dim):
                for j in range(dim):
                    val = 1.0
                    for d in range(dim):
                        if d == i and d == j:
                            val *= f11(ca[d], cb[d])
                        elif d == i:
                            val *= f10(ca[d])
                        elif d == j:
                            val *= f10(cb[d])
                        else:
                            val *= f00(ca[d], cb[d])
                    grad[i, j, a, b] = val
    return grad, mass, load


class StiffnessMatrix:
    """Assembled bilinear form over the cells of a node domain.

    ``full`` couples all grid nodes (entries only from domain cells). The free
    set is the solver interior of the domain; restriction is lazy so that
    domains without interior can still be assembled and inspected.
    """

    def __init__(self, grid, domain, coeffs, full):
        self.grid = grid
        self.domain = domain
        self.coeffs = coeffs
        self.full = full
        self._free = None
        self._restricted = None

    @property
    def free_nodes(self):
        if self._free is None:
            self._free = solver_interior(self.grid, self.domain).indices
        return self._free

    def restricted(self):
        """CSR submatrix on the free nodes; raises if the interior is empty."""
        if self._restricted is None:
            free = self.free_nodes
            if free.size == 0:
                raise GridError("domain has empty solver interior")
            self._restricted = self.full[free][:, free].tocsr()
        return self._restricted

    def energy(self, u):
        """Exact bilinear form value a(u, u) of a nodal field."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.grid.n_nodes,):
            raise GridError("field does not match the grid")
        return float(u @ (self.full @ u))

    def energy_pair(self, u, v):
        return float(u @ (self.full @ v))

    def triplet_text(self):
        """Matrix as sorted 'row col value' lines (debugging format)."""
        coo = self.full.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [
            f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}"
            for k in order
            if coo.data[k] != 0.0
        ]
        return "\n".join(lines) + "\n"


def assemble_stiffness(grid, domain, coeffs):
    """Assemble K[i][j] = a(phi_i, phi_j) over the cells of ``domain``.

    Coefficients are sampled at cell midpoints and checked against the declared
    bounds there.
    """
    if coeffs.dim != grid.dim:
        raise EllipticityError("coefficient dimension does not match grid")
    cmask = cells_of(grid, domain)
    corners = cell_corner_indices(grid, cmask)
    m = corners.shape[0]
    if m == 0:
        raise GridError("domain contains no full cells")
    grad, _, _ = reference_tensors(grid.dim, grid.h)
    n_corner = 2**grid.dim

    centers_multi = np.argwhere(cmask)
    centers = grid.origin + grid.h * (centers_multi + 0.5)

    n = grid.n_nodes
    acc = None
    for start in range(0, m, _CHUNK_CELLS):
        stop = min(start + _CHUNK_CELLS, m)
        pts = centers[start:stop]
        coeffs.check_bounds(pts)
        a = coeffs.sample(pts)
        elem = np.einsum("mij,ijab->mab", a, grad)
        idx = corners[start:stop]
        rows = np.repeat(idx, n_corner, axis=1).ravel()
        cols = np.tile(idx, (1, n_corner)).ravel()
        part = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        acc = part if acc is None else acc + part
    acc.sum_duplicates()
    return StiffnessMatrix(grid, domain, coeffs, acc)


def solve_spd(matrix, rhs, rel_tol=1e-8, x0=None, max_iter=None):
    """Diagonally preconditioned conjugate gradients for an SPD system.

    Stops when ||b - Ax|| <= rel_tol * ||b||; raises SolverError if the cap
    (default 50 sqrt(n)) is hit. Deterministic: fixed iteration order, no
    randomness. Returns (x, info dict).
    """
    A = matrix.restricted() if isinstance(matrix, StiffnessMatrix) else sp.csr_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise GridError(f"system shape {A.shape} does not match rhs length {n}")
    if not (0 < rel_tol <= 1e-2):
        raise SolverError(f"rel_tol must be in (0, 1e-2], got {rel_tol}")
    if max_iter is None:
        max_iter = int(50 * math.sqrt(n)) + 10

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), {"iterations": 0, "residual": 0.0, "rel_residual": 0.0}

    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("system is not positive definite (nonpositive diagonal)")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    target = rel_tol * b_norm

    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise SolverError("system is not positive definite (p^T A p <= 0)")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r))
        if res <= target:
            return x, {"iterations": it, "residual": res, "rel_residual": res / b_norm}
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"conjugate gradients did not reach {rel_tol:g} within {max_iter} iterations "
        f"(relative residual {res / b_norm:.3e})"
    )


def energy_of(matrix, u):
    """a(u, u) for a nodal field, exact bilinear-form evaluation."""
    if isinstance(matrix, StiffnessMatrix):
        return matrix.energy(u)
    u = np.asarray(u, dtype=float)
    return float(u @ (sp.csr_matrix(matrix) @ u))


def pinned_solve(K, pins, rhs=None, extra_diag=None, rel_tol=1e-8, x0=None):
    """Solve the form's Euler equation with prescribed nodal values.

    ``pins`` is a sequence of (nodes, value) pairs applied in order (later pins
    win); nodes outside the solver interior are implicitly pinned at their
    assigned value (default 0). ``extra_diag`` adds a nonnegative diagonal
    (lumped measure term) to the operator. Returns (u, info).
    """
    grid = K.grid
    n = grid.n_nodes
    u = np.zeros(n)
    pinned_mask = np.zeros(n, dtype=bool)
    for nodes, value in pins:
        idx = nodes.indices if hasattr(nodes, "indices") else np.asarray(nodes, np.int64)
        u[idx] = value
        pinned_mask[idx] = True

    free = K.free_nodes
    free = free[~pinned_mask[free]]
    if free.size == 0:
        # every interior node is pinned: the field is fully determined
        return u, {"iterations": 0, "residual": 0.0, "rel_residual": 0.0, "free_count": 0}

    A = K.full
    if extra_diag is not None:
        A = A + sp.diags(extra_diag, format="csr")
    A_ff = A[free][:, free].tocsr()
    b = np.zeros(n) if rhs is None else np.asarray(rhs, dtype=float).copy()
    b_f = b[free] - (A @ u)[free]
    x0_f = None if x0 is None else np.asarray(x0, dtype=float)[free]
    x, info = solve_spd(A_ff, b_f, rel_tol=rel_tol, x0=x0_f)
    u[free] = x
    info = dict(info)
    info["free_count"] = int(free.size)
    return u, info


# -- field integrals over cell subsets ---------------------------------------


def cell_gradient_energies(grid, u, cell_mask):
    """Exact int_cell |Du|^2 of the multilinear interpolant, one value per cell."""
    grad, _, _ = reference_tensors(grid.dim, grid.h)
    t_lap = sum(grad[i, i] for i in range(grid.dim))
    corners = cell_corner_indices(grid, cell_mask)
    if corners.shape[0] == 0:
        return np.zeros(0)
    vals = np.asarray(u, dtype=float)[corners]
    return np.einsum("ma,ab,mb->m", vals, t_lap, vals)


def cell_l2(grid, u, cell_mask):
    """Exact int_cell u^2 of the multilinear interpolant, one value per cell."""
    _, mass, _ = reference_tensors(grid.dim, grid.h)
    corners = cell_corner_indices(grid, cell_mask)
    if corners.shape[0] == 0:
        return np.zeros(0)
    vals = np.asarray(u, dtype=float)[corners]
    return np.einsum("ma,ab,mb->m", vals, mass, vals)


def cell_average_at_centers(grid, u, cell_mask):
    """Multilinear interpolant at cell centers = mean of the corner values."""
    corners = cell_corner_indices(grid, cell_mask)
    if corners.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(u, dtype=float)[corners].mean(axis=1)
