import numpy as np
import pytest

from wienerlab.grid import BallSpec, build_grid, full_domain, mask
from wienerlab.measures import (
    MeasureError,
    MeasureSpec,
    kato_norm,
    kato_vanishing_profile,
    lumped_mass_diagonal,
    mass_matrix,
    restrict,
)


def grid2(h=0.25):
    return build_grid(2, [[0, 1], [0, 1]], h)


def test_zero_measure_gives_zero_matrix():
    g = grid2()
    M = mass_matrix(g, full_domain(g), MeasureSpec.zero())
    assert M.nnz == 0
    assert np.all(lumped_mass_diagonal(g, full_domain(g), MeasureSpec.zero()) == 0)


def test_unit_density_total_mass():
    g = grid2()
    dom = full_domain(g)
    ones = np.ones(g.n_nodes)
    M = mass_matrix(g, dom, MeasureSpec.density(1.0))
    assert float(ones @ (M @ ones)) == pytest.approx(1.0, abs=1e-12)
    diag = lumped_mass_diagonal(g, dom, MeasureSpec.density(1.0))
    assert float(diag.sum()) == pytest.approx(1.0, abs=1e-12)


def test_density_scales_linearly():
    g = grid2()
    dom = full_domain(g)
    M1 = mass_matrix(g, dom, MeasureSpec.density(1.0))
    M5 = mass_matrix(g, dom, MeasureSpec.density(5.0))
    assert np.allclose((M5 - 5.0 * M1).data, 0.0, atol=1e-14)


def test_negative_density_rejected():
    g = grid2()
    with pytest.raises(MeasureError):
        mass_matrix(g, full_domain(g), MeasureSpec.density(lambda p: -np.ones(len(p))))


def test_mass_matrix_psd():
    g = grid2(0.1)
    M = mass_matrix(g, full_domain(g), MeasureSpec.density(lambda p: 1.0 + p[:, 0]))
    rng = np.random.default_rng(4)
    for _ in range(10):
        u = rng.standard_normal(g.n_nodes)
        assert float(u @ (M @ u)) >= -1e-14


def test_restrict_identity_and_idempotence():
    g = grid2(0.1)
    dom = full_domain(g)
    mu = MeasureSpec.density(2.0)
    everywhere = restrict(mu, dom)
    M_full = mass_matrix(g, dom, mu)
    M_rest = mass_matrix(g, dom, everywhere)
    assert np.allclose((M_full - M_rest).data if (M_full - M_rest).nnz else [0], 0.0)

    E = mask(g, BallSpec((0.5, 0.5), 0.3))
    once = restrict(mu, E)
    twice = restrict(once, E)
    M1 = mass_matrix(g, dom, once)
    M2 = mass_matrix(g, dom, twice)
    assert (M1 - M2).nnz == 0 or np.allclose((M1 - M2).data, 0.0)


def test_restrict_zero_and_obstacle():
    g = grid2(0.1)
    E = mask(g, BallSpec((0.5, 0.5), 0.3))
    F = mask(g, BallSpec((0.3, 0.5), 0.3))
    assert restrict(MeasureSpec.zero(), E).kind == "zero"
    inter = restrict(MeasureSpec.obstacle(F), E)
    assert inter.kind == "obstacle"
    assert np.array_equal(inter.obstacle_set.indices, F.intersect(E).indices)


def test_measure_ordering_transfers_to_forms():
    g = grid2(0.1)
    dom = full_domain(g)
    f1 = MeasureSpec.density(lambda p: 1.0 + p[:, 0])
    f2 = MeasureSpec.density(lambda p: 2.0 + p[:, 0])
    M1 = mass_matrix(g, dom, f1)
    M2 = mass_matrix(g, dom, f2)
    rng = np.random.default_rng(9)
    for _ in range(10):
        u = rng.standard_normal(g.n_nodes)
        assert float(u @ (M1 @ u)) <= float(u @ (M2 @ u)) + 1e-14


def test_kato_norm_zero_measure():
    g = build_grid(3, [[-0.6, 0.6]] * 3, 0.05)
    kn = kato_norm(MeasureSpec.zero(), g, BallSpec((0, 0, 0), 0.5))
    assert kn.value == 0.0


def test_kato_norm_uniform_ball_oracle_3d():
    # radial quadrature oracle: int_0^R 4 pi r dr * c = 2 pi c R^2
    R, c = 0.5, 3.0
    h = R / 20
    g = build_grid(3, [[-R - 2 * h, R + 2 * h]] * 3, h)
    kn = kato_norm(MeasureSpec.signed_density(c), g, BallSpec((0.0, 0.0, 0.0), R))
    exact = 2 * np.pi * c * R**2
    assert kn.value == pytest.approx(exact, rel=0.03)
    assert kn.argmax_node == g.nearest_node((0.0, 0.0, 0.0))


def test_kato_norm_homogeneous_scaling():
    R = 0.5
    g = build_grid(3, [[-0.6, 0.6]] * 3, 0.1)
    ball = BallSpec((0.0, 0.0, 0.0), R)
    one = kato_norm(MeasureSpec.signed_density(1.0), g, ball)
    two = kato_norm(MeasureSpec.signed_density(2.0), g, ball)
    assert two.value == pytest.approx(2.0 * one.value, rel=1e-12)


def test_kato_norm_monotone_in_ball():
    g = build_grid(2, [[-0.6, 0.6]] * 2, 0.05)
    nu = MeasureSpec.signed_density(lambda p: 1.0 + np.abs(p[:, 0]))
    small = kato_norm(nu, g, BallSpec((0.0, 0.0), 0.25), rescale=2.0)
    big = kato_norm(nu, g, BallSpec((0.0, 0.0), 0.5), rescale=2.0)
    assert small.value <= big.value + 1e-12


def test_kato_norm_rejects_obstacle():
    g = grid2()
    with pytest.raises(MeasureError):
        kato_norm(
            MeasureSpec.obstacle(mask(g, BallSpec((0.5, 0.5), 0.2))),
            g,
            BallSpec((0.5, 0.5), 0.4),
        )


def test_kato_profile_decays_to_zero():
    R = 0.5
    h = R / 20
    g = build_grid(3, [[-R - 2 * h, R + 2 * h]] * 3, h)
    nu = MeasureSpec.signed_density(1.0)
    radii = [R / 2**k for k in range(5)]
    profile = kato_vanishing_profile(nu, g, (0.0, 0.0, 0.0), radii)
    values = [p.value for p in profile]
    assert all(a > b for a, b in zip(values, values[1:]))
    # N=3 bound: value <= 2 pi ||nu||_inf r^2 (+ one-cell slack at tiny radii)
    for r, v in zip(radii, values):
        assert v <= 2 * np.pi * r**2 + 10 * g.h**2


def test_kato_profile_zero_and_doubling():
    g = build_grid(2, [[-0.6, 0.6]] * 2, 0.05)
    radii = [0.5, 0.25, 0.125]
    zeros = kato_vanishing_profile(MeasureSpec.zero(), g, (0, 0), radii)
    assert all(p.value == 0.0 for p in zeros)
    ones = kato_vanishing_profile(MeasureSpec.signed_density(1.0), g, (0, 0), radii)
    twos = kato_vanishing_profile(MeasureSpec.signed_density(2.0), g, (0, 0), radii)
    for a, b in zip(ones, twos):
        assert b.value == pytest.approx(2 * a.value, rel=1e-12)


def test_kato_profile_requires_decreasing_radii():
    g = grid2()
    with pytest.raises(MeasureError):
        kato_vanishing_profile(MeasureSpec.zero(), g, (0.5, 0.5), [0.1, 0.2])


def test_log_kernel_rescale_floor():
    g = grid2(0.1)
    with pytest.raises(MeasureError):
        kato_norm(
            MeasureSpec.signed_density(1.0),
            g,
            BallSpec((0.5, 0.5), 0.4),
            rescale=0.5,
        )
