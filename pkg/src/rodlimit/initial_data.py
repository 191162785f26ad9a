"""Compatible initial data for the rod system by fixed-point iteration.

Given u3, u4 (from the beam time derivatives) and the forcing, the fields
u0, u1, u2 in B (mean-free and moment-free) solve

    (1/h^2)(DW~(grad_h u0), grad_h phi)            = (h^2 f(0) - u2, phi)
    (1/h^2)(D2W~(grad_h u0) grad_h u1, grad_h phi) = (h^2 f'(0) - u3, phi)
    (1/h^2)(D2W~(grad_h u0) grad_h u2, grad_h phi) = (h^2 f''(0) - u4, phi)
        - (1/h^2)(D3W~(grad_h u0)[grad_h u1, grad_h u1], grad_h phi)
        - (gamma/h^3)(D2W~(grad_h u0) P, grad_h phi)

for phi in B.  The scalar corrections gamma_2..4 then add multiples of
x_perp so that the identities hold for all mean-free test functions.
"""

import csv
from dataclasses import dataclass, field
import math
from pathlib import Path

import numpy as np

from . import beam1d
from .energy import Linearization, G_nonlinear, P, sym
from .rod3d import EllipticSolver, SolverError, apply_stiffness


class DivergenceError(RuntimeError):
    pass


# relative increment below which iterations only move round-off
ROUNDOFF = 1e3 * np.finfo(float).eps


def b_norm(grid, u, h):
    """||(1/h) e_h(u)||_{L2}, the norm of the constraint space B."""
    E = sym(grid.gradient(u, h)) / h
    return math.sqrt(float(grid.quad_integral(np.einsum("...ij,...ij->...", E, E))))


def rotation_measure(grid):
    """mu = int_Omega |x_perp|^2 = L (I2 + I3)."""
    xp = grid.x_perp()
    return grid.inner(xp, xp)


@dataclass
class IterationLog:
    residuals: list = field(default_factory=list)
    factors: list = field(default_factory=list)

    def append(self, r):
        if self.residuals and self.residuals[-1] > 0:
            self.factors.append(r / self.residuals[-1])
        self.residuals.append(r)

    def measured_factor(self, floor):
        """Largest ratio of successive increments while both are above the
        round-off floor."""
        vals = [f for f, r0 in zip(self.factors, self.residuals[:-1])
                if r0 > floor and r0 * f > floor]
        return max(vals) if vals else 0.0

    def rows(self):
        out = []
        for n, r in enumerate(self.residuals):
            out.append((n, r, self.factors[n - 1] if 0 < n <= len(self.factors) else float("nan")))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "factor"])
            for row in self.rows():
                w.writerow([row[0], repr(row[1]), repr(row[2])])


@dataclass
class InitialDataSet:
    u0: np.ndarray
    u1: np.ndarray
    u2: np.ndarray          # in B (before the gamma_2 correction)
    u3: np.ndarray
    u4: np.ndarray
    h: float
    gamma_h: float = 0.0
    gamma2: float = 0.0
    gamma3: float = 0.0
    gamma4: float = 0.0
    log: IterationLog = field(default_factory=IterationLog)
    inner_logs: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    contraction_factor: float = 0.0

    def save(self, path):
        """Fields and scalars as npz, the outer iteration log as CSV next to it."""
        path = Path(path)
        np.savez(path, u0=self.u0, u1=self.u1, u2=self.u2, u3=self.u3, u4=self.u4, h=self.h,
                 gamma_h=self.gamma_h, gamma2=self.gamma2, gamma3=self.gamma3,
                 gamma4=self.gamma4, contraction_factor=self.contraction_factor)
        self.log.write_csv(path.with_suffix(".log.csv"))

    @classmethod
    def load(cls, path):
        path = Path(path)
        with np.load(path) as z:
            kw = {k: (z[k].copy() if z[k].ndim else float(z[k])) for k in z.files}
        out = cls(**kw)
        lp = path.with_suffix(".log.csv")
        if lp.exists():
            with open(lp, newline="") as fh:
                for row in csv.DictReader(fh):
                    out.log.append(float(row["residual"]))
        return out


# ---------------------------------------------------------------- u3, u4

def beam_displacement(grid, c, h, blocks=(2, 3)):
    """h^2 (0, v) + h^3 (-x2 v2' - x3 v3', 0, 0) on the grid for coefficients c."""
    v = beam1d.to_grid(c, grid.L, grid.n1, 0)          # (2, n1)
    dv = beam1d.to_grid(c, grid.L, grid.n1, 1)
    x2, x3 = grid.nodes[:, 0], grid.nodes[:, 1]
    u = np.zeros((grid.n1, grid.N, 3))
    if 2 in blocks:
        u[:, :, 1] = h ** 2 * v[0][:, None]
        u[:, :, 2] = h ** 2 * v[1][:, None]
    if 3 in blocks:
        u[:, :, 0] = -h ** 3 * (x2[None, :] * dv[0][:, None] + x3[None, :] * dv[1][:, None])
    return u


def build_u34(v3, v4, h, grid):
    return beam_displacement(grid, v3, h), beam_displacement(grid, v4, h)


def forcing_field(grid, g, t=0.0, order=0):
    """Nodal values of d_t^order f_h = (0, g) at time t."""
    if g is None:
        return np.zeros((grid.n1, grid.N, 3))
    K = grid.n_modes - 1
    c = g.coeffs(t, order, K)
    vals = beam1d.to_grid(c, grid.L, grid.n1, 0)
    f = np.zeros((grid.n1, grid.N, 3))
    f[:, :, 1] = vals[0][:, None]
    f[:, :, 2] = vals[1][:, None]
    return f


# ---------------------------------------------------------------- u0

def fixed_point_u0(grid, h, f, tol=1e-11, maxiter=60, solver=None, delta=0.1,
                   w_start=None, load=None):
    """Picard iteration w <- L_h^{-1}(f, G_h(w)) from w = 0 (or w_start).

    f is a nodal vector field (the load (f, phi)); `load` may instead give
    the nodal functional directly.  Stops when the B-norm of the increment
    is at most tol ||w||_B (tol is clamped at the round-off level ROUNDOFF).
    """
    solver = solver or EllipticSolver(grid, h, "B")
    ell = grid.mass(f) if load is None else load
    w = np.zeros_like(ell) if w_start is None else w_start.copy()
    log = IterationLog()
    high = 0
    for it in range(maxiter):
        if np.any(w):
            G = G_nonlinear(grid.gradient(w, h), delta) / h ** 2
            rhs = ell - grid.gradient_adjoint(G, h)
        else:
            rhs = ell
        w_new = solver.solve_functional(rhs)
        inc = b_norm(grid, w_new - w, h)
        log.append(inc)
        w = w_new
        size = b_norm(grid, w, h)
        if inc <= max(tol, ROUNDOFF) * size or size == 0.0:
            break
        if log.factors and log.factors[-1] > 0.9:
            high += 1
            if high >= 3:
                raise DivergenceError(
                    "fixed-point map is not contracting; data too large for the smallness regime")
        else:
            high = 0
    else:
        raise DivergenceError(f"no convergence in {maxiter} iterations")
    return w, log


def _frozen_solve(grid, h, solver, lin, ell, tol, maxiter, extra=None):
    """Solve (1/h^2)(D2W~(F0) grad_h w, grad_h phi) = ell(phi) on B by iterating
    with the constant operator L_h."""
    w = solver.solve_functional(ell)
    log = IterationLog()
    for it in range(maxiter):
        corr = grid.gradient_adjoint(lin.d2_minus_sym(grid.gradient(w, h)), h) / h ** 2
        w_new = solver.solve_functional(ell - corr)
        inc = b_norm(grid, w_new - w, h)
        log.append(inc)
        w = w_new
        if inc <= max(tol, ROUNDOFF) * b_norm(grid, w, h) or not np.any(w):
            return w, log
    raise DivergenceError("frozen-coefficient iteration did not converge")


def gamma_h(grid, h, lin, mu=None):
    """Scalar multiplying x_perp in the corrected u2: -(1/(mu h^3)) (DW~(grad_h u0), P)."""
    mu = rotation_measure(grid) if mu is None else mu
    S = lin.stress()
    return -float(grid.quad_integral(np.einsum("...ij,ij->...", S, P))) / (mu * h ** 3)


def fixed_point_u012(grid, h, g, u3, u4, tol=1e-11, maxiter=60, delta=0.1, solver=None,
                     mu=None, theta=1.0):
    """Coupled construction of (u0, u1, u2): Gauss-Seidel sweeps over the
    three equations, u0 by its own Picard iteration."""
    if u3.shape != (grid.n1, grid.N, 3) or u4.shape != u3.shape:
        raise ValueError("u3/u4 do not live on this grid")
    solver = solver or EllipticSolver(grid, h, "B")
    s = h ** (1.0 + theta)
    f0 = s * forcing_field(grid, g, 0.0, 0)
    f1 = s * forcing_field(grid, g, 0.0, 1)
    f2 = s * forcing_field(grid, g, 0.0, 2)
    ell1 = grid.mass(f1 - u3)
    ell2 = grid.mass(f2 - u4)
    u0 = np.zeros_like(u3)
    u1 = np.zeros_like(u3)
    u2 = np.zeros_like(u3)
    outer = IterationLog()
    inner = []
    gam = 0.0
    for it in range(maxiter):
        u0n, l0 = fixed_point_u0(grid, h, f0 - u2, tol, maxiter, solver, delta,
                                 w_start=u0 if np.any(u0) else None)
        lin = Linearization(grid.gradient(u0n, h), delta)
        u1n, l1 = _frozen_solve(grid, h, solver, lin, ell1, tol, maxiter)
        gam = gamma_h(grid, h, lin, mu)
        F1 = grid.gradient(u1n, h)
        extra = (lin.d3(F1, F1) + gam / h * lin.d2(np.broadcast_to(P, F1.shape))) / h ** 2
        ell = ell2 - grid.gradient_adjoint(extra, h)
        u2n, l2 = _frozen_solve(grid, h, solver, lin, ell, tol, maxiter)
        inc = max(b_norm(grid, u0n - u0, h), b_norm(grid, u1n - u1, h), b_norm(grid, u2n - u2, h))
        inner.append((l0, l1, l2))
        outer.append(inc)
        u0, u1, u2 = u0n, u1n, u2n
        size = max(b_norm(grid, u0, h), b_norm(grid, u1, h), b_norm(grid, u2, h))
        if inc <= max(tol, ROUNDOFF) * size or size == 0.0:
            break
    else:
        raise DivergenceError("coupled initial-data iteration did not converge")
    data = InitialDataSet(u0, u1, u2, u3, u4, h, gamma_h=gam, log=outer, inner_logs=inner)
    floor = ROUNDOFF * size
    factors = [outer.measured_factor(floor)] + [lg.measured_factor(floor) for tr in inner for lg in tr]
    data.contraction_factor = max(factors)
    data.residuals = defining_residuals(grid, h, data, g, delta, theta, space="B", solver=solver)
    return data


# ---------------------------------------------------------------- gamma corrections

def gamma_corrections(grid, h, data, u3=None, u4=None, mu=None, delta=0.1):
    """gamma_2, gamma_3, gamma_4 and the corrected fields
    (u2 + gamma_2 x_perp, u3 + gamma_3 x_perp, u4 + gamma_4 x_perp)."""
    u3 = data.u3 if u3 is None else u3
    u4 = data.u4 if u4 is None else u4
    mu = rotation_measure(grid) if mu is None else mu
    xp = grid.x_perp()
    lin = Linearization(grid.gradient(data.u0, h), delta)

    def pair_P(S):
        return float(grid.quad_integral(np.einsum("...ij,ij->...", S, P)))

    g2 = -pair_P(lin.stress()) / (mu * h ** 3)
    F1 = grid.gradient(data.u1, h)
    g3 = -pair_P(lin.d2(F1)) / (mu * h ** 3)
    u2c = data.u2 + g2 * xp
    F2 = grid.gradient(u2c, h)
    g4 = -(pair_P(lin.d2(F2)) + pair_P(lin.d3(F1, F1))) / (mu * h ** 3)
    data.gamma2, data.gamma3, data.gamma4 = g2, g3, g4
    return g2, g3, g4, u2c, u3 + g3 * xp, u4 + g4 * xp


def defining_residuals(grid, h, data, g, delta=0.1, theta=1.0, space="B", corrected=None,
                       solver=None):
    """Relative residuals of the three defining identities.

    The part seen by B-test functions is measured in the increment norm,
    ||L_h^{-1} R||_B / ||u_k||_B, so it is directly comparable with the
    fixed-point tolerance.  With space 'all' the fields must be the
    gamma-corrected ones, passed as corrected = (u2, u3bar, u4bar), and the
    pairing with x_perp is added (relative to the termwise magnitude)."""
    solver = solver or EllipticSolver(grid, h, "B")
    s = h ** (1.0 + theta)
    f = [s * forcing_field(grid, g, 0.0, k) for k in range(3)]
    lin = Linearization(grid.gradient(data.u0, h), delta)
    if corrected is None:
        u2, u3, u4 = data.u2, data.u3, data.u4
        gam = data.gamma_h
    else:
        u2, u3, u4 = corrected
        gam = 0.0
    F1 = grid.gradient(data.u1, h)
    F2 = grid.gradient(u2, h)
    # nonlinear remainders at quadrature points, linear parts applied modally
    S0 = lin.nonlinear_stress()
    S1 = lin.d2_minus_sym(F1)
    S2 = lin.d2_minus_sym(F2) + lin.d3(F1, F1)
    if gam:
        S2 = S2 + gam / h * lin.d2_minus_sym(np.broadcast_to(P, F2.shape))
    terms = [(S0, f[0] - u2, data.u0), (S1, f[1] - u3, data.u1), (S2, f[2] - u4, u2)]
    xp = grid.x_perp()
    out = {}
    for name, (S, fld, u) in zip(("u0", "u1", "u2"), terms):
        A = apply_stiffness(grid, h, u) + grid.gradient_adjoint(S, h) / h ** 2
        B = grid.mass(fld)
        w = solver.solve_functional(_restrict(grid, A - B, "B"))
        ref = b_norm(grid, u, h)
        val = b_norm(grid, w, h) / ref if ref > 0 else b_norm(grid, w, h)
        if space == "all":
            scale = float(np.sum(np.abs(A * xp)) + np.sum(np.abs(B * xp)))
            diff = abs(float(np.sum((A - B) * xp)))
            val = max(val, diff / scale if scale > 0 else diff)
        out[name] = float(val)
    return out


def _restrict(grid, R, space):
    """Remove the components of a residual functional that B-test functions
    cannot see (mode-0 constants and x_perp), or keep everything."""
    if space == "all":
        return R
    modes = grid.to_modes(R)
    C = grid.constraint_rows("B")
    m0 = modes[0].real
    lam = np.linalg.lstsq(C.T, m0, rcond=None)[0]
    modes[0] = (m0 - C.T @ lam).astype(complex)
    return grid.from_modes(modes)


def check_identities(grid, h, data, g, corrected, n_samples=8, seed=0, delta=0.1, theta=1.0):
    """Residuals of the corrected identities against x_perp and random
    mean-free test functions (relative to the size of each term)."""
    rng = np.random.default_rng(seed)
    s = h ** (1.0 + theta)
    f = [s * forcing_field(grid, g, 0.0, k) for k in range(3)]
    u2, u3b, u4b = corrected
    lin = Linearization(grid.gradient(data.u0, h), delta)
    F1 = grid.gradient(data.u1, h)
    F2 = grid.gradient(u2, h)
    stresses = [lin.stress(), lin.d2(F1), lin.d2(F2) + lin.d3(F1, F1)]
    rhs_fields = [f[0] - u2, f[1] - u3b, f[2] - u4b]
    phis = [grid.x_perp()]
    for _ in range(n_samples):
        p = grid.filter(rng.standard_normal((grid.n1, grid.N, 3)))
        p -= p.mean(axis=(0, 1))
        phis.append(p)
    out = []
    for S, fld in zip(stresses, rhs_fields):
        A = grid.gradient_adjoint(S, h) / h ** 2
        B = grid.mass(fld)
        worst = 0.0
        for phi in phis:
            phi = phi - _mean(grid, phi)
            diff = abs(float(np.sum((A - B) * phi)))
            # termwise magnitude, so that pairings that vanish identically compare to 0
            scale = float(np.sum(np.abs(A * phi)) + np.sum(np.abs(B * phi)))
            worst = max(worst, diff / scale if scale > 0 else diff)
        out.append(worst)
    return out


def _mean(grid, u):
    out = np.zeros(3)
    for i in range(3):
        e = np.zeros_like(u)
        e[:, :, i] = 1.0
        out[i] = grid.inner(u, e) / grid.volume()
    return out[None, None, :]


# ---------------------------------------------------------------- compatibility report

def compatibility_check(grid, data, g, h, M, corrected=None, delta=0.1, theta=1.0):
    """Weak residuals of the compatibility conditions (all test functions) and
    the smallness quantities of the initial data, each against M h^(1 + theta)."""
    from . import norms
    if corrected is None:
        g2, g3, g4, u2c, u3b, u4b = gamma_corrections(grid, h, data, delta=delta)
        corrected = (u2c, u3b, u4b)
    u2c, u3b, u4b = corrected
    res = defining_residuals(grid, h, data, g, delta, theta, space="all", corrected=corrected)
    bound = M * h ** (1.0 + theta)
    us = [data.u0, data.u1, u2c, u3b, u4b]

    def eh(u):
        return norms.scaled_gradient(grid, u, h, at="nodes").values

    def strain_over_h(u):
        return norms.sym(eh(u)) / h

    def hess(u):
        G = eh(u)
        d2, d3 = grid.recover(G)
        return [grid.d1(G), d2 / h, d3 / h]

    def Hm(vals, m):
        return norms.sobolev_norm(grid, vals, m)

    # group 1: strain and displacement quantities
    q1 = Hm(strain_over_h(us[0]), 2)
    terms = []
    for k in range(3):
        comp = (Hm(strain_over_h(us[1 + k]), 2 - k) + Hm(grid.d1(strain_over_h(us[k])), 2 - k)
                + Hm(us[2 + k], 2 - k))
        terms.append(comp)
    group1 = q1 + max(terms)
    # group 2: second scaled gradients
    q2 = math.sqrt(sum(Hm(c, 1) ** 2 for c in hess(us[0])))
    terms2 = []
    for k in range(2):
        a = math.sqrt(sum(Hm(c, 1 - k) ** 2 for c in hess(us[1 + k])))
        b = math.sqrt(sum(Hm(grid.d1(c), 1 - k) ** 2 for c in hess(us[k])))
        terms2.append(a + b)
    group2 = q2 + max(terms2)
    group3 = max(abs(norms.rotational_moment(grid, u, h)) for u in us[:4])
    report = {
        "bound": bound,
        "weak_residual_u0": res["u0"], "weak_residual_u1": res["u1"], "weak_residual_u2": res["u2"],
        "group1": group1, "group2": group2, "group3": group3,
    }
    report["pass"] = bool(group1 <= bound and group2 <= bound and group3 <= bound
                          and max(res.values()) <= 1e-8)
    return report
