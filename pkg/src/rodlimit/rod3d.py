"""Three-dimensional rod solver on the fixed domain (0, L) x S.

Fields are sampled on n1 equispaced x1-planes times the section nodes; a
vector field has shape (n1, N, 3).  Along x1 the discretization is
spectral (real FFT, the Nyquist mode is removed), across the section it is
piecewise linear.  Because the operators are x1-translation invariant the
linear parts decouple into one complex 3N x 3N system per Fourier mode.

The thickness h enters only through the scaled gradient
grad_h = (d1, d2 / h, d3 / h).
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .energy import (DomainError, Linearization, G_nonlinear, W_tilde, polar_split, skew, sym,
                     P as P_MATRIX, _check as _check_domain)
from .quadrature import triangle_rule


class SolverError(RuntimeError):
    pass


class CompatibilityError(ValueError):
    pass


# symmetric strain components and their weights in A : B
_SYM_INDEX = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
_SYM_WEIGHT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


@dataclass
class RodGrid:
    section: object
    L: float
    n1: int
    mass_S: sp.csr_matrix
    interp: sp.csr_matrix          # section nodes -> quadrature points
    grad2: sp.csr_matrix
    grad3: sp.csr_matrix
    wq: np.ndarray                 # quadrature weights on S
    xq: np.ndarray                 # quadrature points (Q, 2)
    boundary_mass: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)

    # -------------------------------------------------------------- basics
    @property
    def N(self):
        return self.section.n_nodes

    @property
    def Q(self):
        return len(self.wq)

    @property
    def dx(self):
        return self.L / self.n1

    @property
    def n_modes(self):
        """Number of retained nonnegative modes (Nyquist excluded)."""
        return self.n1 // 2

    @property
    def x1(self):
        return np.arange(self.n1) * self.dx

    @property
    def kappa(self):
        k = 2.0 * np.pi * np.arange(self.n1 // 2 + 1) / self.L
        k[-1] = 0.0
        return k

    @property
    def nodes(self):
        return self.section.nodes

    def x_perp(self):
        """x_perp = (0, -x3, x2) on all grid nodes, shape (n1, N, 3)."""
        x2, x3 = self.nodes[:, 0], self.nodes[:, 1]
        u = np.zeros((self.n1, self.N, 3))
        u[:, :, 1] = -x3
        u[:, :, 2] = x2
        return u

    def volume(self):
        return self.L * float(self.wq.sum())

    # -------------------------------------------------------------- x1 operators
    def filter(self, u):
        """Remove the Nyquist mode (keeps fields in the band the solver uses)."""
        c = np.fft.rfft(u, axis=0)
        c[-1] = 0.0
        return np.fft.irfft(c, n=self.n1, axis=0)

    def d1(self, u, order=1):
        if order == 0:
            return u
        c = np.fft.rfft(u, axis=0)
        shape = (-1,) + (1,) * (u.ndim - 1)
        c = c * ((1j * self.kappa) ** order).reshape(shape)
        return np.fft.irfft(c, n=self.n1, axis=0)

    # -------------------------------------------------------------- section operators
    def section_apply(self, A, u):
        """Apply a sparse section matrix to axis 1 of u."""
        n1, n = u.shape[0], u.shape[1]
        rest = u.shape[2:]
        flat = np.moveaxis(u, 1, 0).reshape(n, -1)
        out = A @ flat
        return np.moveaxis(out.reshape((A.shape[0], n1) + rest), 0, 1)

    def mass(self, u):
        """Consistent mass applied to a nodal field: dx M_S u per plane."""
        return self.dx * self.section_apply(self.mass_S, u)

    def inner(self, u, v):
        return float(np.sum(u * self.mass(v)))

    def l2(self, u):
        return math.sqrt(max(self.inner(u, u), 0.0))

    def quad_integral(self, values):
        """Integral over Omega of a field sampled at quadrature points (n1, Q, ...)."""
        w = self.wq.reshape((1, -1) + (1,) * (values.ndim - 2))
        return self.dx * np.sum(values * w, axis=(0, 1))

    def recover(self, u):
        """Nodal (d2 u, d3 u) by area-weighted averaging, each of u's shape."""
        N = self.N
        flat = np.moveaxis(u, 1, -1).reshape(-1, N)
        g2 = np.empty_like(flat)
        g3 = np.empty_like(flat)
        for r in range(flat.shape[0]):
            g = fem.recover_gradient(self.section, flat[r])
            g2[r], g3[r] = g[:, 0], g[:, 1]
        shp = np.moveaxis(u, 1, -1).shape
        return (np.moveaxis(g2.reshape(shp), -1, 1), np.moveaxis(g3.reshape(shp), -1, 1))

    # -------------------------------------------------------------- gradients
    def gradient(self, u, h=1.0):
        """Scaled gradient at quadrature points, shape (n1, Q, 3, 3),
        F[..., i, a] = d_a u_i with d2, d3 divided by h."""
        uq = u.reshape(self.n1, self.N, 3)
        F = np.empty((self.n1, self.Q, 3, 3))
        F[..., 0] = self.section_apply(self.interp, self.d1(uq))
        F[..., 1] = self.section_apply(self.grad2, uq) / h
        F[..., 2] = self.section_apply(self.grad3, uq) / h
        return F

    def gradient_adjoint(self, S, h=1.0):
        """Nodal functional v -> int S : grad_h v for a stress sampled at
        quadrature points (n1, Q, 3, 3); returns shape (n1, N, 3)."""
        Sw = S * (self.dx * self.wq)[None, :, None, None]
        out = self.section_apply(self.interp.T.tocsr(), Sw[..., 0])
        # adjoint of the spectral derivative is minus itself
        out = -self.d1(out)
        out += self.section_apply(self.grad2.T.tocsr(), Sw[..., 1]) / h
        out += self.section_apply(self.grad3.T.tocsr(), Sw[..., 2]) / h
        return out

    def values_at_quad(self, u):
        return self.section_apply(self.interp, u)

    def load(self, f):
        """Nodal functional of a vector field given at nodes: (f, phi)."""
        return self.mass(f)

    # -------------------------------------------------------------- per-mode matrices
    def _strain_blocks(self):
        if "strain" in self._cache:
            return self._cache["strain"]
        N, Q = self.N, self.Q
        I, G = self.interp, (self.grad2, self.grad3)
        Z = sp.csr_matrix((Q, N))
        # rows: six symmetric components at Q points; columns: (u1, u2, u3) blocks
        Ax = [[None] * 3 for _ in range(6)]
        Bx = [[None] * 3 for _ in range(6)]
        for r in range(6):
            for c in range(3):
                Ax[r][c] = Z
                Bx[r][c] = Z
        # E11 = d1 u1
        Bx[0][0] = I
        # E22 = d2 u2 / h, E33 = d3 u3 / h
        Ax[1][1] = G[0]
        Ax[2][2] = G[1]
        # E12 = (d1 u2 + d2 u1 / h) / 2
        Bx[3][1] = 0.5 * I
        Ax[3][0] = 0.5 * G[0]
        # E13 = (d1 u3 + d3 u1 / h) / 2
        Bx[4][2] = 0.5 * I
        Ax[4][0] = 0.5 * G[1]
        # E23 = (d3 u2 + d2 u3) / (2 h)
        Ax[5][1] = 0.5 * G[1]
        Ax[5][2] = 0.5 * G[0]
        A = sp.bmat(Ax).tocsr()
        B = sp.bmat(Bx).tocsr()
        W = sp.diags(np.kron(_SYM_WEIGHT, self.wq))
        blocks = (A.T @ W @ A, A.T @ W @ B - B.T @ W @ A, B.T @ W @ B)
        self._cache["strain"] = tuple(b.tocsr() for b in blocks)
        return self._cache["strain"]

    def stiffness_mode(self, k, h):
        """K_k with (1/h^2)(sym grad_h u, sym grad_h phi) = conj(phi_k)^T K_k u_k (per dx)."""
        Kaa, Kab, Kbb = self._strain_blocks()
        kap = self.kappa[k]
        K = (Kaa / h ** 2) + (1j * kap / h) * Kab + kap ** 2 * Kbb
        return (K / h ** 2).tocsc()

    def mass_mode(self):
        if "mass3" not in self._cache:
            self._cache["mass3"] = sp.block_diag([self.mass_S] * 3).tocsc()
        return self._cache["mass3"]

    # -------------------------------------------------------------- transforms
    def to_modes(self, u):
        """(n1, N, 3) -> list of component-major mode vectors (3N,), k = 0..n1/2 - 1."""
        c = np.fft.rfft(u, axis=0)
        return [c[k].T.ravel() for k in range(self.n_modes)]

    def from_modes(self, modes):
        c = np.zeros((self.n1 // 2 + 1, self.N, 3), dtype=complex)
        for k, m in enumerate(modes):
            c[k] = m.reshape(3, self.N).T
        return np.fft.irfft(c, n=self.n1, axis=0)

    # -------------------------------------------------------------- constraints
    def constraint_rows(self, space="B"):
        """Rows c with c . u_0 = 0 on the mode-0 vector (component-major)."""
        N = self.N
        ones = np.asarray(self.mass_S.sum(axis=0)).ravel()
        rows = []
        for i in range(3):
            r = np.zeros(3 * N)
            r[i * N:(i + 1) * N] = ones
            rows.append(r)
        if space in ("B", "X_h"):
            x2, x3 = self.nodes[:, 0], self.nodes[:, 1]
            r = np.zeros(3 * N)
            r[N:2 * N] = -(self.mass_S @ x3)
            r[2 * N:] = self.mass_S @ x2
            rows.append(r)
        else:
            raise ValueError(f"unknown constraint space {space!r}")
        return np.array(rows)


def assemble_grid(section, L, n1, degree=2):
    """Tensor grid of n1 periodic planes times the section mesh."""
    if n1 < 4 or n1 % 2:
        raise ValueError("n1 must be even and at least 4")
    if L <= 0:
        raise ValueError("L must be positive")
    interp = fem.interpolation_matrix(section, degree)
    g2, g3 = fem.gradient_matrices(section, degree)
    wq = fem.quadrature_weights(section, degree)
    bary, _ = triangle_rule(degree)
    pts = np.einsum("qk,tkd->tqd", bary, section.nodes[section.triangles]).reshape(-1, 2)
    return RodGrid(section, float(L), int(n1), fem.mass_matrix(section).tocsr(),
                   interp, g2, g3, wq, pts, fem.boundary_mass(section).tocsr())


# ---------------------------------------------------------------- elliptic problems

class EllipticSolver:
    """Factorized per-mode solver for (1/h^2)(sym grad_h w, sym grad_h phi) = ell(phi)
    with w and phi in the constraint space (mean-free, plus moment-free for B)."""

    def __init__(self, grid, h, space="B"):
        self.grid, self.h, self.space = grid, h, space
        C = grid.constraint_rows(space)
        self.C = C
        self.lu = []
        for k in range(grid.n_modes):
            K = grid.dx * grid.stiffness_mode(k, h)
            if k == 0:
                K = sp.bmat([[K.real, sp.csr_matrix(C.T)], [sp.csr_matrix(C), None]]).tocsc()
            self.lu.append(spla.splu(K))

    def solve_functional(self, ell, return_multipliers=False):
        """ell: nodal functional (n1, N, 3) (values ell(phi) for the nodal basis)."""
        g = self.grid
        modes = g.to_modes(ell)
        out = []
        lam = None
        for k, b in enumerate(modes):
            if k == 0:
                rhs = np.concatenate([b.real, np.zeros(len(self.C))])
                s = self.lu[0].solve(rhs)
                lam = s[3 * g.N:]
                out.append(s[:3 * g.N].astype(complex))
            else:
                out.append(self.lu[k].solve(b))
        w = g.from_modes(out)
        if not np.all(np.isfinite(w)):
            raise SolverError("singular elliptic system")
        return (w, lam) if return_multipliers else w

    def apply(self, w):
        """Nodal functional of the bilinear form at w."""
        return apply_stiffness(self.grid, self.h, w)


def apply_stiffness(grid, h, u):
    """phi -> (1/h^2)(sym grad_h u, sym grad_h phi) as a nodal functional.

    Applied mode by mode with the assembled strain matrices, so the small
    symmetric part of a gradient dominated by rotations is never formed by
    cancellation (the Nyquist mode is dropped, as everywhere)."""
    modes = grid.to_modes(u)
    out = [grid.dx * (grid.stiffness_mode(k, h) @ m) for k, m in enumerate(modes)]
    out[0] = out[0].real.astype(complex)
    return grid.from_modes(out)


def apply_stiffness_quadrature(grid, h, u):
    """Same functional through the quadrature-point gradient (cross-check)."""
    F = grid.gradient(u, h)
    return grid.gradient_adjoint(sym(F), h) / h ** 2


def elliptic_load(grid, h, f=None, F=None):
    """Nodal functional (f, phi) - (F, grad_h phi); f at nodes, F at quadrature points."""
    ell = np.zeros((grid.n1, grid.N, 3))
    if f is not None:
        ell += grid.mass(f)
    if F is not None:
        ell -= grid.gradient_adjoint(F, h)
    return ell


def solve_linear_elliptic(grid, h, f=None, F=None, space="B", solver=None, tol=1e-10):
    """Discrete w in the constraint space with
    (1/h^2)(sym grad_h w, sym grad_h phi) = (f, phi) - (F, grad_h phi)."""
    ell = elliptic_load(grid, h, f, F)
    if space == "X_h":
        tot = ell.sum(axis=(0, 1))
        scale = max(np.abs(ell).sum(), 1e-300)
        if np.any(np.abs(tot) > tol * scale):
            raise CompatibilityError(f"load is not mean-free: {tot}")
    solver = solver or EllipticSolver(grid, h, space)
    return solver.solve_functional(ell)


# ---------------------------------------------------------------- nonlinear operator

def internal_force(grid, h, u, delta=None, return_strain=False):
    """phi -> (1/h^2)(DW~(grad_h u), grad_h phi) as a nodal functional."""
    F = grid.gradient(u, h)
    G = G_nonlinear(F, delta)
    # test functions carry no Nyquist content
    out = apply_stiffness(grid, h, u) + grid.filter(grid.gradient_adjoint(G, h)) / h ** 2
    return (out, F) if return_strain else out


def tangent_apply(grid, h, lin, v):
    """Directional derivative of internal_force at the state linearized in lin."""
    H = grid.gradient(v, h)
    return apply_stiffness(grid, h, v) + grid.filter(grid.gradient_adjoint(lin.d2_minus_sym(H), h)) / h ** 2


def elastic_energy(grid, h, u, delta=None, polar=None):
    """(1/h^2) int W~(grad_h u), split as the exact quadratic part
    u . K u / 2 plus the nonlinear remainder -sym F : Z + |Z|^2 / 2."""
    if polar is None:
        F = grid.gradient(u, h)
        _check_domain(F, delta)
        polar = (F, polar_split(F))
    F, Z = polar
    rem = -np.einsum("...ij,...ij->...", sym(F), Z) + 0.5 * np.einsum("...ij,...ij->...", Z, Z)
    quad = 0.5 * float(np.sum(u * apply_stiffness(grid, h, u)))
    return quad + float(grid.quad_integral(rem)) / h ** 2


# ---------------------------------------------------------------- time stepping

@dataclass
class RodState:
    u: np.ndarray
    u_t: np.ndarray
    t: float
    h: float


@dataclass
class RodTrajectory:
    times: list
    states: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    work: list = field(default_factory=list)
    newton: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


class MidpointStepper:
    """Implicit midpoint for M u'' + F_int(u) = f(t):

        (2/dt^2) M d - (2/dt) M w + F_int(u + d/2) - f(t + dt/2) = 0,
        u <- u + d,  w <- 2 d / dt - w.

    Solved by chord iterations with the per-mode matrix J0 = (2/dt^2) M + K/2,
    switching to Newton-GMRES with J0 as preconditioner when the chord
    iteration contracts slowly.
    """

    def __init__(self, grid, h, dt, delta=0.1, tol=1e-11, maxiter=25, linear=False):
        self.grid, self.h, self.dt = grid, h, dt
        self.delta, self.tol, self.maxiter = delta, tol, maxiter
        self.linear = linear
        self._factor(dt)

    def _factor(self, dt):
        g = self.grid
        M3 = g.mass_mode()
        self.lu = []
        for k in range(g.n_modes):
            J = g.dx * ((2.0 / dt ** 2) * M3 + 0.5 * g.stiffness_mode(k, self.h))
            self.lu.append(spla.splu(J.tocsc()))
        self.dt_factored = dt

    def precondition(self, r):
        g = self.grid
        modes = g.to_modes(r)
        return g.from_modes([lu.solve(m) for lu, m in zip(self.lu, modes)])

    def polar(self, u):
        """(F, Z) at u, cached for the most recent argument."""
        c = getattr(self, "_polar_cache", None)
        if c is not None and c[0].shape == u.shape and np.array_equal(c[0], u):
            return c[1]
        F = self.grid.gradient(u, self.h)
        _check_domain(F, self.delta)
        out = (F, polar_split(F))
        self._polar_cache = (u.copy(), out)
        return out

    def force(self, u):
        if self.linear:
            return apply_stiffness(self.grid, self.h, u)
        F, Z = self.polar(u)
        return apply_stiffness(self.grid, self.h, u) - self.grid.filter(self.grid.gradient_adjoint(Z, self.h)) / self.h ** 2

    def energy(self, u):
        if self.linear:
            return 0.5 * float(np.sum(u * apply_stiffness(self.grid, self.h, u)))
        return elastic_energy(self.grid, self.h, u, self.delta, polar=self.polar(u))

    def step(self, u, w, f_mid, dt):
        if abs(dt - self.dt_factored) > 1e-14 * dt:
            self._factor(dt)
        g = self.grid
        base = (2.0 / dt) * g.mass(w) + f_mid
        fu = self.force(u)
        scale = max(np.max(np.abs(base)), np.max(np.abs(fu)), 1e-300)
        d = self.precondition(base - fu)
        hist = []
        for it in range(self.maxiter):
            R = (2.0 / dt ** 2) * g.mass(d) + self.force(u + 0.5 * d) - base
            res = np.max(np.abs(R)) / scale
            hist.append(res)
            if res <= self.tol:
                break
            slow = len(hist) > 2 and hist[-1] > 0.5 * hist[-2]
            if slow and not self.linear:
                d = d + self._newton_krylov(u + 0.5 * d, R, dt)
            else:
                d = d - self.precondition(R)
        else:
            raise SolverError(f"Newton did not converge: residual {hist[-1]:.2e}")
        u_new = u + d
        w_new = 2.0 * d / dt - w
        return u_new, w_new, hist

    def _newton_krylov(self, umid, R, dt):
        g = self.grid
        lin = Linearization(g.gradient(umid, self.h), self.delta)
        shape = R.shape
        n = R.size

        def mv(x):
            x = x.reshape(shape)
            return ((2.0 / dt ** 2) * g.mass(x) + 0.5 * tangent_apply(g, self.h, lin, x)).ravel()

        A = spla.LinearOperator((n, n), matvec=mv)
        Mp = spla.LinearOperator((n, n), matvec=lambda x: self.precondition(x.reshape(shape)).ravel())
        x, info = spla.gmres(A, -R.ravel(), M=Mp, rtol=1e-13, atol=0.0, restart=50, maxiter=20)
        if not np.all(np.isfinite(x)):
            # Krylov breakdown on a round-off residual: fall back to the chord step
            return -self.precondition(R)
        return x.reshape(shape)


def _force_field(grid, h, forcing, t, theta=1.0):
    """Nodal functional of h^(1+theta) f_h(t) (forcing(t) returns nodal values)."""
    if forcing is None:
        return np.zeros((grid.n1, grid.N, 3))
    return h ** (1.0 + theta) * grid.mass(forcing(t))


def save_checkpoint(path, state, step, work=0.0):
    """Snapshot of a rod state (npz: u, u_t, t, h, step, work)."""
    np.savez(path, u=state.u, u_t=state.u_t, t=state.t, h=state.h, step=step, work=work)


def load_checkpoint(path):
    """(RodState, step, work) from a snapshot written by save_checkpoint."""
    with np.load(path) as z:
        st = RodState(z["u"].copy(), z["u_t"].copy(), float(z["t"]), float(z["h"]))
        return st, int(z["step"]), float(z["work"])


def solve_nonlinear_wave(grid, h, forcing, u0, u1, T, dt, delta=0.1, tol=1e-11,
                         theta=1.0, callback=None, stride=1, linear=False,
                         max_halvings=5, checkpoint=None, checkpoint_stride=0, resume=None):
    """Implicit-midpoint integration of the nonlinear rod system.

    forcing(t) returns nodal values of f_h (n1, N, 3) or forcing is None.
    callback(n, t, u, w) is called after every accepted step.
    With checkpoint (a path) and checkpoint_stride > 0 the state is saved
    every checkpoint_stride steps; resume (a checkpoint path) restarts from
    the saved step instead of (u0, u1).
    """
    nt = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nt
    stepper = MidpointStepper(grid, h, dt, delta, tol, linear=linear)
    n0, work = 0, 0.0
    if resume is not None:
        st, n0, work = load_checkpoint(resume)
        if abs(st.h - h) > 1e-14 or st.u.shape != (grid.n1, grid.N, 3):
            raise ValueError("checkpoint belongs to a different grid or thickness")
        u0, u1 = st.u, st.u_t
    u = grid.filter(np.asarray(u0, dtype=float))
    w = grid.filter(np.asarray(u1, dtype=float))
    t = n0 * dt
    traj = RodTrajectory(times=[t])
    e0 = 0.5 * grid.inner(w, w) + stepper.energy(u)
    traj.energy.append(e0)
    traj.work.append(work)
    if stride:
        traj.states.append(RodState(u.copy(), w.copy(), t, h))
    if callback:
        callback(n0, t, u, w)
    for n in range(n0, nt):
        u_old, w_old = u, w

        def advance(u, w, t, dt, depth):
            fm = _force_field(grid, h, forcing, t + 0.5 * dt, theta)
            try:
                un, wn, hist = stepper.step(u, w, fm, dt)
                return un, wn, hist, fm
            except (SolverError, np.linalg.LinAlgError):
                if depth >= max_halvings:
                    raise SolverError(f"step at t = {t:.4g} failed after {depth} halvings")
                u1_, w1_, h1, f1 = advance(u, w, t, 0.5 * dt, depth + 1)
                u2_, w2_, h2, f2 = advance(u1_, w1_, t + 0.5 * dt, 0.5 * dt, depth + 1)
                return u2_, w2_, h1 + h2, 0.5 * (f1 + f2)

        try:
            u, w, hist, fm = advance(u, w, t, dt, 0)
        except DomainError as exc:
            raise DomainError(f"t = {t:.4g}: {exc}") from None
        t = (n + 1) * dt
        work += float(np.sum(fm * (u - u_old)))
        traj.newton.append(len(hist))
        traj.times.append(t)
        en = 0.5 * grid.inner(w, w)
        en += stepper.energy(u)
        traj.energy.append(en)
        traj.work.append(work)
        if stride and (n + 1) % stride == 0:
            traj.states.append(RodState(u.copy(), w.copy(), t, h))
        if callback:
            callback(n + 1, t, u, w)
        if checkpoint is not None and checkpoint_stride and (n + 1) % checkpoint_stride == 0:
            save_checkpoint(checkpoint, RodState(u, w, t, h), n + 1, work)
        if not np.isfinite(en) or (forcing is None and en > 10 * max(e0, 1e-300) and e0 > 0):
            raise SolverError(f"energy blow-up at t = {t:.4g}")
    traj.diagnostics["dt"] = dt
    traj.diagnostics["final"] = RodState(u, w, t, h)
    return traj


def solve_linearized_wave(grid, h, T, dt, w0, w1, background=None, f1=None, f2=None,
                          a_N=None, delta=0.1, tol=1e-12, stride=1):
    """Linearized wave system around a background trajectory:

        (d_t^2 w, phi) + (1/h^2)(D2W~(grad_h u(t)) grad_h w, grad_h phi)
            = (f2, phi) - (f1, grad_h phi) + (1/h^2)(a_N, phi)_{(0,L) x dS}.

    background(t) -> nodal displacement or None (then D2W~(0) = sym);
    f1(t) at quadrature points (n1, Q, 3, 3), f2(t) and a_N(t) at nodes.
    """
    nt = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nt
    stepper = MidpointStepper(grid, h, dt, delta, tol, linear=True)
    w = grid.filter(np.asarray(w0, dtype=float))
    v = grid.filter(np.asarray(w1, dtype=float))
    out = RodTrajectory(times=[0.0])

    def rhs(t):
        r = np.zeros((grid.n1, grid.N, 3))
        if f2 is not None:
            r += grid.mass(f2(t))
        if f1 is not None:
            r -= grid.gradient_adjoint(f1(t), h)
        if a_N is not None:
            r += grid.dx * grid.section_apply(grid.boundary_mass, a_N(t)) / h ** 2
        return r

    def op(t):
        if background is None:
            return lambda x: apply_stiffness(grid, h, x)
        lin = Linearization(grid.gradient(background(t), h), delta)
        return lambda x: tangent_apply(grid, h, lin, x)

    def energy(w, v, A):
        return 0.5 * grid.inner(v, v) + 0.5 * float(np.sum(w * A(w)))

    A0 = op(0.0)
    out.energy.append(energy(w, v, A0))
    out.states.append(RodState(w.copy(), v.copy(), 0.0, h))
    for n in range(nt):
        t = n * dt
        tm = t + 0.5 * dt
        A = op(tm)
        base = (2.0 / dt) * grid.mass(v) + rhs(tm) - A(w)
        scale = max(np.max(np.abs(base)), 1e-300)
        d = stepper.precondition(base)
        for it in range(50):
            R = (2.0 / dt ** 2) * grid.mass(d) + 0.5 * A(d) - base
            if np.max(np.abs(R)) <= tol * scale:
                break
            d = d - stepper.precondition(R)
        else:
            raise SolverError("linearized step did not converge")
        w = w + d
        v = 2.0 * d / dt - v
        out.times.append(t + dt)
        out.energy.append(energy(w, v, op(t + dt)))
        if stride and (n + 1) % stride == 0:
            out.states.append(RodState(w.copy(), v.copy(), t + dt, h))
        e0 = out.energy[0]
        if f1 is None and f2 is None and a_N is None and e0 > 0 and out.energy[-1] > 10 * e0:
            raise SolverError("energy blow-up in the linearized solver")
    out.diagnostics["dt"] = dt
    return out


def modal_reference(grid, h, w0, w1, times):
    """Exact solution of M w'' + K w = 0 by per-mode eigen-decomposition
    (dense), used as an oracle for the time integrators."""
    M = grid.mass_mode().toarray()
    m0 = grid.to_modes(grid.filter(w0))
    m1 = grid.to_modes(grid.filter(w1))
    from scipy.linalg import eigh
    out = []
    eig = []
    for k in range(grid.n_modes):
        K = grid.stiffness_mode(k, h).toarray()
        lam, V = eigh(K, M)
        lam = np.clip(lam, 0.0, None)
        eig.append((lam, V))
    for t in times:
        modes = []
        for k, (lam, V) in enumerate(eig):
            a = V.conj().T @ (M @ m0[k])
            b = V.conj().T @ (M @ m1[k])
            om = np.sqrt(lam)
            s = np.where(om > 0, np.sin(om * t) / np.where(om > 0, om, 1.0), t)
            modes.append(V @ (np.cos(om * t) * a + s * b))
        out.append(grid.from_modes(modes))
    return out


# ---------------------------------------------------------------- diagnostics

def rotational_moment_value(grid, u, h):
    return grid.inner(u, grid.x_perp()) / h


def momentum_diagnostics(grid, traj, h, forcing=None, theta=1.0):
    """Time series of the mean of u and the rotational moment (1/h) int u . x_perp,
    with the balance residuals

        d_t^2 int u = int h^(1+theta) f,   d_t^2 (1/h) int u . x_perp = (1/h) int h^(1+theta) f . x_perp

    in their integrated form (trapezoidal quadrature of the iterated integral)."""
    times = np.array([s.t for s in traj.states])
    xp = grid.x_perp()
    mean = np.array([[grid.inner(s.u, _unit(grid, i)) for i in range(3)] for s in traj.states])
    rot = np.array([grid.inner(s.u, xp) / h for s in traj.states])
    vel_rot = np.array([grid.inner(s.u_t, xp) / h for s in traj.states])
    if forcing is not None:
        frot = np.array([h ** (1 + theta) * grid.inner(forcing(t), xp) / h for t in times])
        fmean = np.array([[h ** (1 + theta) * grid.inner(forcing(t), _unit(grid, i)) for i in range(3)]
                          for t in times])
    else:
        frot = np.zeros_like(times)
        fmean = np.zeros((len(times), 3))
    # iterated integral int_0^t (t - s) F(s) ds
    pred_rot = np.array([rot[0] + vel_rot[0] * t + _iterated(times[:n + 1], frot[:n + 1])
                         for n, t in enumerate(times)])
    return {"t": times, "mean": mean, "rotational_moment": rot,
            "rotational_balance_residual": rot - pred_rot,
            "forcing_moment": frot, "forcing_mean": fmean}


def _unit(grid, i):
    e = np.zeros((grid.n1, grid.N, 3))
    e[:, :, i] = 1.0
    return e


def _iterated(ts, fs):
    if len(ts) < 2:
        return 0.0
    t = ts[-1]
    g = (t - ts) * fs
    return float(np.trapezoid(g, ts)) if hasattr(np, "trapezoid") else float(np.trapz(g, ts))
