import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rodlimit import energy
from rodlimit.energy import D2W_tilde, D3W_tilde, DW_tilde, W_tilde, dot, skew, sym

rng = np.random.default_rng(42)
Z3 = np.zeros((3, 3))


def _small(n, r=0.05):
    F = rng.standard_normal((n, 3, 3))
    return r * rng.uniform(0.1, 1.0, (n, 1, 1)) * F / np.linalg.norm(F, axis=(1, 2))[:, None, None]


def _unit(n):
    G = rng.standard_normal((n, 3, 3))
    return G / np.linalg.norm(G, axis=(1, 2))[:, None, None]


def test_zero_is_minimum():
    assert W_tilde(Z3) == 0.0
    assert np.all(DW_tilde(Z3) == 0.0)


def test_rotations_have_zero_energy():
    R = Rotation.random(50, random_state=1).as_matrix()
    assert np.max(np.abs(W_tilde(R - np.eye(3)))) <= 1e-12


def test_frame_invariance():
    R = Rotation.random(100, random_state=2).as_matrix()
    F = np.eye(3) + _small(100, 0.3)
    lhs = W_tilde(R @ F - np.eye(3))
    rhs = W_tilde(F - np.eye(3))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_distance_examples():
    d, R = energy.distance_to_SO3(np.eye(3))
    assert d == 0.0 and np.allclose(R, np.eye(3))
    d, R = energy.distance_to_SO3(np.diag([2.0, 1.0, 1.0]))
    assert abs(d - 1.0) <= 1e-14 and np.allclose(R, np.eye(3), atol=1e-14)
    Q = Rotation.random(random_state=5).as_matrix()
    d, R = energy.distance_to_SO3(Q)
    assert d <= 1e-14 and np.allclose(R, Q, atol=1e-14)


def test_distance_reflection_branch():
    # singular values (1, 1, 0.5) with det < 0: the nearest rotation flips the smallest one
    d, R = energy.distance_to_SO3(np.diag([1.0, 1.0, -0.5]))
    assert np.linalg.det(R) > 0
    assert abs(d - 1.5) <= 1e-14


def test_coercivity_equality_with_half():
    F = _small(200, 0.2)
    d, _ = energy.distance_to_SO3(np.eye(3) + F)
    np.testing.assert_allclose(W_tilde(F), 0.5 * d ** 2, rtol=1e-10, atol=1e-18)


def test_axial_stretch_value():
    e = 1e-2
    F = np.diag([e, 0.0, 0.0])
    assert abs(W_tilde(F) - 0.5 * e ** 2) <= 1e-6 * 0.5 * e ** 2


def test_d2_at_zero_is_sym():
    G = rng.standard_normal((20, 3, 3))
    np.testing.assert_allclose(D2W_tilde(np.zeros_like(G), G), sym(G), atol=1e-12)
    np.testing.assert_allclose(D2W_tilde(np.zeros_like(G), skew(G)), 0.0, atol=1e-12)


def test_first_derivative_finite_differences():
    F, G = _small(200), _unit(200)
    s = 1e-5
    fd = (W_tilde(F + s * G) - W_tilde(F - s * G)) / (2 * s)
    an = dot(DW_tilde(F), G)
    scale = np.maximum(np.abs(an), np.linalg.norm(DW_tilde(F), axis=(1, 2)))
    assert np.max(np.abs(fd - an) / scale) <= 1e-6


def test_second_derivative_finite_differences():
    F, G = _small(200), _unit(200)
    s = 1e-5
    fd = (DW_tilde(F + s * G) - DW_tilde(F - s * G)) / (2 * s)
    an = D2W_tilde(F, G)
    rel = np.linalg.norm(fd - an, axis=(1, 2)) / np.linalg.norm(an, axis=(1, 2))
    assert np.max(rel) <= 1e-4


def test_third_derivative_finite_differences():
    F, G, H = _small(200), _unit(200), _unit(200)
    s = 1e-4
    fd = (D2W_tilde(F + s * H, G) - D2W_tilde(F - s * H, G)) / (2 * s)
    an = D3W_tilde(F, G, H)
    scale = np.linalg.norm(an, axis=(1, 2)) + 1e-2
    assert np.max(np.linalg.norm(fd - an, axis=(1, 2)) / scale) <= 1e-4


def test_third_derivative_symmetric_in_arguments():
    F, G, H, K = _small(50), _unit(50), _unit(50), _unit(50)
    a = dot(D3W_tilde(F, G, H), K)
    np.testing.assert_allclose(a, dot(D3W_tilde(F, G, K), H), atol=1e-12)
    np.testing.assert_allclose(a, dot(D3W_tilde(F, H, G), K), atol=1e-12)


def test_third_derivative_at_zero_skew_contraction():
    A, B = _unit(100), _unit(100)
    P = skew(rng.standard_normal((100, 3, 3)))
    form = energy.D3_at_zero_skew_formula(A, B, P)
    lhs = dot(D3W_tilde(np.zeros_like(A), A, B), P)
    # the derivative of 1/2 dist^2 is half of the closed-form contraction
    np.testing.assert_allclose(lhs, 0.5 * form, atol=1e-12)
    s = 1e-4
    fd = dot((D2W_tilde(s * B, A) - D2W_tilde(-s * B, A)) / (2 * s), P)
    np.testing.assert_allclose(fd, lhs, atol=1e-4)
    S1, S2 = sym(A), sym(B)
    np.testing.assert_allclose(energy.D3_at_zero_skew_formula(S1, S2, P), 0.0, atol=1e-15)


def test_third_derivative_from_energy_differences():
    # mixed third difference of W~ itself, independent of the derivative code
    A, B = _unit(1)[0], _unit(1)[0]
    P = skew(rng.standard_normal((3, 3)))
    s = 1e-3
    fd = sum(i * j * k * W_tilde(s * (i * A + j * B + k * P))
             for i in (1, -1) for j in (1, -1) for k in (1, -1)) / (8 * s ** 3)
    assert abs(fd - dot(D3W_tilde(Z3, A, B), P)) <= 1e-4 * (1 + abs(fd))


def test_fourth_derivative_by_differences():
    F, G, H, K = _small(1)[0], _unit(1)[0], _unit(1)[0], _unit(1)[0]
    a = energy.D4W_tilde_fd(F, G, H, K)
    b = energy.D4W_tilde_fd(F, G, K, H)
    assert np.linalg.norm(a - b) <= 1e-5 * (1 + np.linalg.norm(a))


def test_polar_split_matches_svd():
    F = _small(100, 0.3)
    Y = energy.polar_deviation(F)
    _, R = energy.distance_to_SO3(np.eye(3) + F)
    np.testing.assert_allclose(Y, R - np.eye(3), atol=1e-14)


def test_polar_split_tiny_gradients_precise():
    # the nonlinear part Z is quadratic in F: relative accuracy survives for |F| ~ 1e-9
    F = 1e-9 * _unit(10)
    Z = energy.polar_split(F)
    assert np.all(np.linalg.norm(Z, axis=(1, 2)) < 1e-16)
    Z2 = energy.polar_split(2 * F)
    rel = np.linalg.norm(Z2 - 4 * Z, axis=(1, 2)) / np.linalg.norm(4 * Z, axis=(1, 2))
    assert np.max(rel) <= 1e-6


def test_domain_guard():
    with pytest.raises(energy.DomainError):
        W_tilde(np.diag([-1.5, 0.0, 0.0]), delta=0.1)


def test_d3_scaled_norm_order_h():
    vals = [energy.d3_operator_norm(h, samples=12, sweeps=15) / h for h in (1, .5, .25, .125)]
    assert max(vals) / min(vals) < 1.1


def test_d3_decomposition():
    lhs, diff = energy.d3_decomposition_check(Z3, 0.5, samples=5)
    assert diff == 0.0 and lhs > 0
    ratios = []
    for r in (1e-3, 1e-2):
        for _ in range(3):
            G = r * _unit(1)[0]
            _, d = energy.d3_decomposition_check(G, 1.0, samples=5)
            ratios.append(d / r)
    assert max(ratios) / min(ratios) < 2.0
    with pytest.raises(energy.DomainError):
        energy.d3_decomposition_check(np.eye(3), 1.0)


def test_scaled_abs_of_skew_is_h_independent():
    P = skew(rng.standard_normal((3, 3)))
    for h in (1.0, 0.3, 0.01):
        assert abs(energy.scaled_abs(P, h) - np.linalg.norm(P)) <= 1e-14
