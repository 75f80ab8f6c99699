import numpy as np
import pytest

from wienerlab.elliptic import EllipticCoefficients, assemble_stiffness
from wienerlab.green import (
    approximate_green,
    average_load,
    check_green_bounds,
    green_bounds_family,
)
from wienerlab.grid import BallSpec, GridError, build_grid, mask


def disc_grid(n, dim=2, R=1.0):
    h = R / n
    return build_grid(dim, [[-R - 3 * h, R + 3 * h]] * dim, h), BallSpec((0.0,) * dim, R)


def test_load_normalization_exact():
    g, ball = disc_grid(16)
    for rho in (2 * g.h, 4 * g.h, 0.3):
        b = average_load(g, (0.0, 0.0), rho)
        assert float(b.sum()) == pytest.approx(1.0, abs=1e-13)


def test_tiny_radius_degrades_to_nodal_load():
    g, _ = disc_grid(16)
    with pytest.warns(UserWarning, match="nodal load"):
        b = average_load(g, (0.0, 0.0), 0.2 * g.h)
    assert b.max() == 1.0 and np.count_nonzero(b) == 1


def test_disc_green_matches_radial_formula():
    # exact disc kernel at the center: G = ln(1/|x|) / (2 pi)
    g, ball = disc_grid(64)
    G = approximate_green(
        g, ball, EllipticCoefficients.laplacian(2), (0.0, 0.0), rho=0.0, rel_tol=1e-10
    )
    d = np.sqrt(g.node_distance_sq((0.0, 0.0))).ravel()
    sel = (d >= 0.3) & (d <= 0.8)
    exact = np.log(1.0 / d[sel]) / (2 * np.pi)
    assert np.max(np.abs(G.values[sel] - exact) / exact) <= 0.03


def test_green_positive_and_zero_beyond_sphere():
    g, ball = disc_grid(24)
    G = approximate_green(g, ball, EllipticCoefficients.laplacian(2), (0.2, 0.1), rel_tol=1e-10)
    assert G.values.min() >= -1e-10
    d = np.sqrt(g.node_distance_sq(ball.center)).ravel()
    assert np.max(np.abs(G.values[d >= ball.radius])) == 0.0


def test_green_symmetry_through_ball_averages():
    g, ball = disc_grid(24)
    coeffs = EllipticCoefficients.laplacian(2)
    rel_tol = 1e-10
    y1, y2 = (0.25, 0.0), (-0.1, 0.3)
    G1 = approximate_green(g, ball, coeffs, y1, rel_tol=rel_tol)
    G2 = approximate_green(g, ball, coeffs, y2, rel_tol=rel_tol)
    a = G1.value_at(y2)
    b = G2.value_at(y1)
    assert a == pytest.approx(b, rel=5 * 1e-8)


def test_normalization_identity_on_random_test_fields():
    g, ball = disc_grid(20)
    coeffs = EllipticCoefficients.laplacian(2)
    rel_tol = 1e-9
    K = assemble_stiffness(
        g, mask(g, BallSpec(ball.center, ball.radius + 0.8 * g.h)), coeffs
    )
    G = approximate_green(g, ball, coeffs, (0.1, -0.2), rel_tol=rel_tol, stiffness=K)
    rng = np.random.default_rng(12)
    free = K.free_nodes
    b_norm = np.linalg.norm(G.load)
    for _ in range(10):
        v = np.zeros(g.n_nodes)
        v[free] = rng.standard_normal(free.size)
        v /= np.linalg.norm(v)
        lhs = float(v @ (K.full @ G.values))
        rhs = float(G.load @ v)
        # |v^T (K G - b)| <= ||v|| ||residual|| <= rel_tol ||b||
        assert abs(lhs - rhs) <= 2 * rel_tol * b_norm


def test_monotone_in_domain_nodewise():
    g, _ = disc_grid(24)
    coeffs = EllipticCoefficients.laplacian(2)
    small = approximate_green(g, BallSpec((0.0, 0.0), 0.6), coeffs, (0.0, 0.0), rel_tol=1e-10)
    big = approximate_green(g, BallSpec((0.0, 0.0), 0.9), coeffs, (0.0, 0.0), rel_tol=1e-10)
    assert np.all(big.values >= small.values - 1e-9)


def test_uniform_convergence_off_singularity():
    g, ball = disc_grid(96)
    coeffs = EllipticCoefficients.laplacian(2)
    d = np.sqrt(g.node_distance_sq((0.0, 0.0))).ravel()
    rhos = [1 / 4, 1 / 8, 1 / 16]
    fields = [
        approximate_green(g, ball, coeffs, (0.0, 0.0), rho=r, rel_tol=1e-11)
        for r in rhos
    ]
    off = d >= 4 * rhos[0]  # common region off every averaging ball
    gaps = [
        np.max(np.abs(a.values[off] - b.values[off]))
        for a, b in zip(fields, fields[1:])
    ]
    assert gaps[1] <= gaps[0]


def test_bound_constants_sandwich_2d_3d():
    for dim, n, ratios in ((2, 32, (0.25, 0.5)), (3, 20, (0.25, 0.5))):
        g, ball = disc_grid(n, dim=dim)
        coeffs = EllipticCoefficients.laplacian(dim)
        G = approximate_green(g, ball, coeffs, (0.0,) * dim, rel_tol=1e-9)
        for rr in ratios:
            rep = check_green_bounds(G, 0.5, rr * ball.radius, rel_tol=1e-9)
            # G Cap values on the shell sit within [0.5, 2]
            assert rep.k_upper <= 2.0
            assert 1.0 / rep.k_lower >= 0.5
            assert np.isfinite(rep.alpha) and rep.alpha > 0


def test_bound_constants_invariant_under_coefficient_scale():
    g, ball = disc_grid(24)
    y = (0.0, 0.0)
    r = 0.25
    vals = {}
    for c in (1.0, 5.0):
        coeffs = EllipticCoefficients(2, c * np.eye(2), c, c)
        G = approximate_green(g, ball, coeffs, y, rel_tol=1e-11)
        vals[c] = check_green_bounds(G, 0.5, r, rel_tol=1e-11)
    assert vals[5.0].k == pytest.approx(vals[1.0].k, rel=1e-6)
    assert vals[5.0].alpha == pytest.approx(vals[1.0].alpha, rel=1e-6)


def test_family_runner_collects_uniform_constants():
    g, ball = disc_grid(24)
    pairs = [((0.0, 0.0), 0.25), ((0.2, 0.0), 0.2), ((0.0, -0.1), 0.3)]
    reports, K, alpha = green_bounds_family(
        g, ball, EllipticCoefficients.laplacian(2), pairs, q=0.5, rel_tol=1e-9
    )
    assert len(reports) == 3
    assert K >= max(r.k_upper for r in reports) - 1e-12
    assert alpha == pytest.approx(max(r.alpha for r in reports))


def test_singularity_must_sit_inside_ball():
    g, ball = disc_grid(16)
    with pytest.raises(GridError):
        approximate_green(g, ball, EllipticCoefficients.laplacian(2), (0.95, 0.0), rho=0.2)


def test_shell_below_spacing_rejected():
    g, ball = disc_grid(8)
    G = approximate_green(g, ball, EllipticCoefficients.laplacian(2), (0.0, 0.0))
    with pytest.raises(GridError):
        check_green_bounds(G, 0.5, 0.5 * g.h)
