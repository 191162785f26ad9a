import math

import numpy as np
import pytest

from rodlimit import norms
from rodlimit.energy import skew, sym
from rodlimit.norms import RodField

from .conftest import random_field


P = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def test_scaled_matrix_abs_examples():
    A = sym(np.arange(9.0).reshape(3, 3))
    for h in (1.0, 0.5, 0.1):
        assert abs(norms.scaled_matrix_abs(P, h) - math.sqrt(2)) <= 1e-14
    assert abs(norms.scaled_matrix_abs(A, 0.5) - 2 * np.linalg.norm(A)) <= 1e-12
    B = np.arange(9.0).reshape(3, 3)
    assert abs(norms.scaled_matrix_abs(B, 1.0) - np.linalg.norm(B)) <= 1e-12


def test_gradient_of_x_perp(grid):
    h = 0.25
    F = norms.scaled_gradient(grid, grid.x_perp(), h).values
    np.testing.assert_allclose(sym(F), 0.0, atol=1e-12)
    np.testing.assert_allclose(F[..., 1, 2], -1 / h, atol=1e-12)
    np.testing.assert_allclose(F[..., 2, 1], 1 / h, atol=1e-12)


def test_gradient_of_constant_vanishes(grid):
    u = np.ones((grid.n1, grid.N, 3)) * np.array([1.0, -2.0, 0.5])
    assert np.max(np.abs(norms.scaled_gradient(grid, u, 0.3).values)) <= 1e-12


def test_gradient_of_beam_field(grid):
    x = grid.x1
    v2, v3 = np.sin(2 * np.pi * x), np.cos(4 * np.pi * x)
    u = np.zeros((grid.n1, grid.N, 3))
    u[:, :, 1] = v2[:, None]
    u[:, :, 2] = v3[:, None]
    F = norms.scaled_gradient(grid, u, 0.1).values
    np.testing.assert_allclose(F[..., 0, 0], 0.0, atol=1e-12)
    np.testing.assert_allclose(F[..., 1, 0], np.broadcast_to((2 * np.pi * np.cos(2 * np.pi * x))[:, None], F.shape[:2]),
                               atol=1e-12)
    np.testing.assert_allclose(F[..., 2, 0], np.broadcast_to((-4 * np.pi * np.sin(4 * np.pi * x))[:, None], F.shape[:2]),
                               atol=1e-11)


def test_nodal_gradient_recovery_close(grid):
    u = grid.x_perp()
    F = norms.scaled_gradient(grid, u, 1.0, at="nodes").values
    np.testing.assert_allclose(F[..., 1, 2], -1.0, atol=1e-12)


def test_constant_skew_field_norm(grid):
    vals = np.broadcast_to(P, (grid.n1, grid.N, 3, 3)).copy()
    for h in (1.0, 0.2):
        rep = norms.field_norms(grid, RodField(vals, h, "matrix"), ["L2h"])
        assert abs(rep.values["L2h"] - math.sqrt(2) * math.sqrt(grid.L)) <= 1e-10


def test_h_one_scaled_is_plain(grid):
    vals = random_field(grid, 5)[..., None] * np.ones(3)
    rep = norms.field_norms(grid, RodField(vals, 1.0, "matrix"), ["L2", "L2h"])
    assert abs(rep.values["L2"] - rep.values["L2h"]) <= 1e-12 * rep.values["L2"]


def test_scaled_vs_plain_orientation(grid):
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((grid.n1, grid.N, 3, 3))
    S = sym(vals)
    K = skew(vals)
    h = 0.3
    rs = norms.field_norms(grid, RodField(S, h, "matrix"), ["L2", "L2h", "dual"])
    assert rs.values["L2h"] >= rs.values["L2"] >= rs.values["dual"]
    rk = norms.field_norms(grid, RodField(K, h, "matrix"), ["L2", "L2h", "dual"])
    assert abs(rk.values["L2h"] - rk.values["L2"]) <= 1e-12 * rk.values["L2"]


def test_rotational_moment_examples(grid, disk_moments):
    h = 0.2
    val = norms.rotational_moment(grid, grid.x_perp(), h)
    assert abs(val - grid.L * (disk_moments.I2 + disk_moments.I3) / h) <= 1e-2 * val
    # the consistent mass integrates the nodal interpolant; exact on the discrete x_perp
    assert abs(val - grid.inner(grid.x_perp(), grid.x_perp()) / h) <= 1e-12 * val
    c = np.ones((grid.n1, grid.N, 3))
    assert abs(norms.rotational_moment(grid, c, h)) <= 1e-12


def test_korn_rigid_rotation_cancels(grid):
    for h in (1.0, 0.5, 0.125):
        lhs, rhs, ratio = norms.korn_measure(grid, 0.7 * grid.x_perp(), h)
        assert lhs <= 1e-12 * (1 / h) and ratio == 0.0
        lhs_u, _, ratio_u = norms.korn_measure(grid, grid.x_perp(), h, corrected=False)
        assert lhs_u > 0.1 and ratio_u == math.inf


def test_korn_zero_field(grid):
    assert norms.korn_measure(grid, np.zeros((grid.n1, grid.N, 3)), 0.5) == (0.0, 0.0, 0.0)


def test_korn_gradient_field_ratio_finite(grid):
    rows = []
    phi = np.cos(2 * np.pi * grid.x1)[:, None] * (grid.nodes[:, 0] ** 2)[None]
    for h in (1.0, 0.5, 0.25, 0.125):
        u = np.zeros((grid.n1, grid.N, 3))
        u[:, :, 0] = grid.d1(phi)
        d2, d3 = grid.recover(phi[..., None])
        u[:, :, 1] = h * d2[..., 0]
        u[:, :, 2] = h * d3[..., 0]
        _, _, r = norms.korn_measure(grid, u, h)
        assert math.isfinite(r)
        rows.append(r)
    assert all(r > 0 for r in rows)


def test_korn_constant_bounds_family(grid):
    h = 0.5
    C = norms.korn_constant(grid, h)
    for seed in range(4):
        _, _, r = norms.korn_measure(grid, random_field(grid, seed), h)
        assert r <= C * (1 + 1e-8)


def test_korn_integral_weighted_bounded(grid):
    vals = []
    for h in (1.0, 0.5, 0.25, 0.125):
        u = grid.x_perp() + 1e-2 * random_field(grid, 1)
        vals.append(norms.korn_measure(grid, u, h, "integral")[2] * h)
    vals = np.array(vals)
    assert np.all(np.isfinite(vals))
    with pytest.raises(ValueError):
        norms.korn_measure(grid, grid.x_perp(), 1.0, "other")


def test_aggregate_norm_homogeneous(grid):
    u = random_field(grid, 2, 1e-3)
    a = norms.aggregate_norm(grid, u, 0.2)
    b = norms.aggregate_norm(grid, 3 * u, 0.2)
    assert abs(b - 3 * a) <= 1e-10 * b


def test_field_norm_capabilities(grid):
    F = norms.scaled_gradient(grid, random_field(grid, 0), 0.5)
    with pytest.raises(norms.CapabilityError):
        norms.field_norms(grid, F, [("H", 1)])
    with pytest.raises(ValueError):
        norms.field_norms(grid, RodField(random_field(grid, 0), 0.5), ["bogus"])
    with pytest.raises(norms.CapabilityError):
        norms.anisotropic_norm(grid, random_field(grid, 0), 4, 0)


def test_sobolev_norm_of_mode(grid):
    u = np.zeros((grid.n1, grid.N, 3))
    u[:, :, 0] = np.sin(2 * np.pi * grid.x1)[:, None]
    rep = norms.field_norms(grid, RodField(u, 1.0), ["L2", ("Hani", 0, 1)])
    k = 2 * np.pi
    assert abs(rep.values["Hani_0_1"] - rep.values["L2"] * math.sqrt(1 + k ** 2)) <= 1e-10 * k
