import numpy as np
import pytest

from rodlimit import rod3d
from rodlimit.energy import D2W_tilde

from .conftest import random_field


H = 0.5


def smooth_field(grid, amp, shift=0.0):
    """Low-mode field: one x1 wave times quadratic section profiles."""
    x2, x3 = grid.nodes[:, 0], grid.nodes[:, 1]
    c = np.cos(2 * np.pi * (grid.x1 + shift))[:, None]
    s = np.sin(2 * np.pi * (grid.x1 + shift))[:, None]
    u = np.empty((grid.n1, grid.N, 3))
    u[:, :, 0] = s * (x2 - 0.5 * x3 ** 2)[None]
    u[:, :, 1] = c * (1.0 + x2 * x3)[None]
    u[:, :, 2] = s * (0.5 + x2 ** 2)[None]
    return amp * u


def _rigid_basis(grid):
    out = []
    for i in range(3):
        e = np.zeros((grid.n1, grid.N, 3))
        e[:, :, i] = 1.0
        out.append(e)
    out.append(grid.x_perp())
    return out


def test_mass_partition_of_unity(square_grid):
    ones = np.ones((square_grid.n1, square_grid.N, 3))
    assert abs(square_grid.mass(ones)[..., 0].sum() - 1.0) <= 1e-10
    assert abs(square_grid.volume() - 1.0) <= 1e-10


def test_grid_rejects_odd_planes(disk):
    with pytest.raises(ValueError):
        rod3d.assemble_grid(disk, 1.0, 7)
    with pytest.raises(ValueError):
        rod3d.assemble_grid(disk, -1.0, 8)


def test_d1_constant_and_sine(grid):
    c = np.full((grid.n1, grid.N, 3), 2.5)
    assert np.max(np.abs(grid.d1(c))) <= 1e-13
    u = np.zeros((grid.n1, grid.N, 3))
    u[:, :, 0] = np.sin(2 * np.pi * grid.x1)[:, None]
    exact = 2 * np.pi * np.cos(2 * np.pi * grid.x1)[:, None]
    assert np.max(np.abs(grid.d1(u)[:, :, 0] - exact)) <= 1e-12


def test_elliptic_zero_load(grid):
    w = rod3d.solve_linear_elliptic(grid, H)
    assert np.all(w == 0.0)


def test_elliptic_recovers_field_modulo_kernel(grid):
    # kernel of the scaled strain on periodic fields: translations and x_perp
    r = random_field(grid, 7)
    ell = rod3d.apply_stiffness(grid, H, r)
    w = rod3d.EllipticSolver(grid, H).solve_functional(ell)
    d = (w - r).ravel()
    B = np.stack([b.ravel() for b in _rigid_basis(grid)], axis=1)
    coef, *_ = np.linalg.lstsq(B, d, rcond=None)
    assert np.linalg.norm(d - B @ coef) <= 1e-9 * np.linalg.norm(r)
    # the result satisfies the constraints of B
    for b in _rigid_basis(grid):
        assert abs(grid.inner(w, b)) <= 1e-10 * grid.l2(r)


def test_elliptic_compatibility_error(grid):
    f = np.ones((grid.n1, grid.N, 3))
    with pytest.raises(rod3d.CompatibilityError):
        rod3d.solve_linear_elliptic(grid, H, f=f, space="X_h")


def test_modal_and_quadrature_stiffness_agree(grid):
    u = random_field(grid, 1)
    a = rod3d.apply_stiffness(grid, H, u)
    b = rod3d.apply_stiffness_quadrature(grid, H, u)
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


def test_linearized_at_zero_through_energy(grid):
    u = random_field(grid, 2)
    F = grid.gradient(u, H)
    via_energy = grid.gradient_adjoint(D2W_tilde(np.zeros_like(F), F), H) / H ** 2
    a = rod3d.apply_stiffness(grid, H, u)
    assert np.max(np.abs(a - via_energy)) <= 1e-11 * np.max(np.abs(a))


def test_internal_force_is_energy_gradient(grid):
    u = random_field(grid, 3, 1e-3)
    v = random_field(grid, 4, 1e-3)
    s = 1e-3
    fd = (rod3d.elastic_energy(grid, H, u + s * v) - rod3d.elastic_energy(grid, H, u - s * v)) / (2 * s)
    an = float(np.sum(rod3d.internal_force(grid, H, u) * v))
    assert abs(fd - an) <= 1e-6 * abs(an)


def test_tangent_is_force_derivative(grid):
    from rodlimit.energy import Linearization
    u = random_field(grid, 5, 1e-3)
    v = random_field(grid, 6, 1e-3)
    s = 1e-3
    fd = (rod3d.internal_force(grid, H, u + s * v) - rod3d.internal_force(grid, H, u - s * v)) / (2 * s)
    lin = Linearization(grid.gradient(u, H))
    an = rod3d.tangent_apply(grid, H, lin, v)
    assert np.max(np.abs(fd - an)) <= 1e-6 * np.max(np.abs(an))


def test_nonlinear_zero_data(grid):
    z = np.zeros((grid.n1, grid.N, 3))
    tr = rod3d.solve_nonlinear_wave(grid, H, None, z, z, 0.05, 0.01)
    assert np.all(tr.diagnostics["final"].u == 0.0)
    assert max(abs(e) for e in tr.energy) == 0.0


def test_nonlinear_energy_balance(grid):
    u0 = smooth_field(grid, 1e-3)
    u1 = smooth_field(grid, 2e-3, shift=0.3)
    E = []
    for dt in (0.01, 0.005):
        tr = rod3d.solve_nonlinear_wave(grid, H, None, u0, u1, 0.1, dt, stride=0)
        E.append(np.max(np.abs(np.array(tr.energy) - tr.energy[0])) / tr.energy[0])
    assert E[0] <= 1e-8
    # second order in dt (or at round-off)
    assert E[1] <= 0.35 * E[0] or E[1] <= 1e-13


def test_nonlinear_small_amplitude_matches_linear(grid):
    u0, u1 = smooth_field(grid, 1.0), smooth_field(grid, 1.0, shift=0.3)
    diffs = []
    for a in (1e-2, 1e-3):
        nl = rod3d.solve_nonlinear_wave(grid, H, None, a * u0, a * u1, 0.05, 0.005)
        li = rod3d.solve_linearized_wave(grid, H, 0.05, 0.005, a * u0, a * u1)
        diffs.append(np.max(np.abs(nl.diagnostics["final"].u - li.states[-1].u)) / a)
    # the relative difference is of first order in the amplitude
    assert 5.0 <= diffs[0] / diffs[1] <= 20.0


def test_linearized_zero_data(grid):
    z = np.zeros((grid.n1, grid.N, 3))
    tr = rod3d.solve_linearized_wave(grid, H, 0.05, 0.01, z, z)
    assert all(np.all(s.u == 0.0) for s in tr.states)


def test_linearized_matches_modal_reference(grid):
    w0 = smooth_field(grid, 1e-3)
    w1 = smooth_field(grid, 1e-3, shift=0.3)
    T = 0.05
    ref = rod3d.modal_reference(grid, H, w0, w1, [T])[0]
    errs = []
    for dt in (0.005, 0.0025):
        tr = rod3d.solve_linearized_wave(grid, H, T, dt, w0, w1)
        errs.append(np.max(np.abs(tr.states[-1].u - ref)))
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] <= 0.1 * np.max(np.abs(ref))


def test_linearized_energy_conserved(grid):
    tr = rod3d.solve_linearized_wave(grid, H, 0.05, 0.005, random_field(grid, 14), random_field(grid, 15))
    E = np.array(tr.energy)
    assert np.max(np.abs(E - E[0])) <= 1e-9 * E[0]


def test_momentum_diagnostics_zero_solution(grid):
    z = np.zeros((grid.n1, grid.N, 3))
    tr = rod3d.solve_nonlinear_wave(grid, H, None, z, z, 0.03, 0.01)
    d = rod3d.momentum_diagnostics(grid, tr, H)
    for k in ("mean", "rotational_moment", "rotational_balance_residual"):
        assert np.all(d[k] == 0.0)


def test_momentum_diagnostics_free_rotation(grid):
    # free linear motion: the rotational moment evolves linearly in time
    u0 = random_field(grid, 16, 1e-4)
    u1 = 1e-3 * grid.x_perp() + random_field(grid, 17, 1e-4)
    tr = rod3d.solve_nonlinear_wave(grid, H, None, u0, u1, 0.05, 0.005, linear=True)
    d = rod3d.momentum_diagnostics(grid, tr, H)
    scale = np.max(np.abs(d["rotational_moment"]))
    assert np.max(np.abs(d["rotational_balance_residual"])) <= 1e-9 * scale


def test_momentum_balance_defect_is_quadratic(grid):
    # the nonlinear stress is not orthogonal to P; its moment defect is O(amplitude^2)
    res = []
    for a in (1e-3, 1e-4):
        u0 = a * random_field(grid, 16, 0.1)
        u1 = a * (grid.x_perp() + random_field(grid, 17, 0.1))
        tr = rod3d.solve_nonlinear_wave(grid, H, None, u0, u1, 0.05, 0.005)
        d = rod3d.momentum_diagnostics(grid, tr, H)
        res.append(np.max(np.abs(d["rotational_balance_residual"])))
    assert 50.0 <= res[0] / res[1] <= 200.0


def test_section_forcing_moments(grid):
    # a force of the form (0, g(x1)) has vanishing first section moments
    f = np.zeros((grid.n1, grid.N, 3))
    f[:, :, 1] = np.cos(2 * np.pi * grid.x1)[:, None]
    for k in (0, 1):
        xk = np.zeros_like(f)
        xk[:, :, 1] = grid.nodes[None, :, k]
        assert abs(grid.inner(f, xk)) <= 1e-12


def test_checkpoint_resume_matches_single_run(grid, tmp_path):
    u0 = smooth_field(grid, 1e-3)
    u1 = smooth_field(grid, 2e-3, shift=0.3)
    full = rod3d.solve_nonlinear_wave(grid, H, None, u0, u1, 0.06, 0.005, stride=0)
    ck = tmp_path / "ck.npz"
    rod3d.solve_nonlinear_wave(grid, H, None, u0, u1, 0.03, 0.005, stride=0,
                               checkpoint=ck, checkpoint_stride=6)
    st, step, _ = rod3d.load_checkpoint(ck)
    assert step == 6 and abs(st.t - 0.03) <= 1e-14
    res = rod3d.solve_nonlinear_wave(grid, H, None, u0, u1, 0.06, 0.005, stride=0, resume=ck)
    a, b = full.diagnostics["final"], res.diagnostics["final"]
    assert abs(a.t - b.t) <= 1e-14
    np.testing.assert_allclose(b.u, a.u, atol=1e-12 * np.max(np.abs(a.u)))
    np.testing.assert_allclose(b.u_t, a.u_t, atol=1e-12 * np.max(np.abs(a.u_t)))
    with pytest.raises(ValueError):
        rod3d.solve_nonlinear_wave(grid, 0.25, None, u0, u1, 0.06, 0.005, resume=ck)
