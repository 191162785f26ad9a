"""The four-block approximate displacement and its residuals.

For beam data v (two components, periodic in x1) the approximation is

    u~ = h^2 (0, v2, v3) + h^3 (-x2 v2' - x3 v3', 0, 0)
       + h^5 (a2 v2''' + a3 v3''', 0, 0)
       + h^6 (0, b2 v2'''' + c3 v3'''', b3 v3'''' + c2 v2'''')

with primes denoting d/dx1.  Residuals are measured weakly on a RodGrid.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse.linalg as spla

from .. import beam1d, fem
from ..beam1d import CapabilityError
from ..rod3d import apply_stiffness

BLOCK_POWERS = (2, 3, 5, 6)


@dataclass
class AnsatzField:
    blocks: dict          # power -> (n1, N, 3), already multiplied by h^power
    h: float
    t: float = 0.0

    @property
    def total(self):
        return sum(self.blocks.values())


def _profiles(grid, c, orders):
    return {q: beam1d.to_grid(c, grid.L, grid.n1, q) for q in orders}


def ansatz_from_coeffs(grid, cs, c, h, t=0.0):
    """Blocks of u~ for beam Fourier coefficients c of shape (2, K + 1)."""
    c = np.asarray(c)
    if c.shape[-1] - 1 >= grid.n_modes:
        raise beam1d.BandLimitError("beam modes exceed the rod grid band")
    v = _profiles(grid, c, (0, 1, 3, 4))
    x2, x3 = grid.nodes[:, 0], grid.nodes[:, 1]
    z = np.zeros((grid.n1, grid.N))
    out = {}
    B = np.zeros((grid.n1, grid.N, 3))
    B[:, :, 1] = v[0][0][:, None]
    B[:, :, 2] = v[0][1][:, None]
    out[2] = h ** 2 * B
    B = np.zeros_like(B)
    B[:, :, 0] = -(x2[None] * v[1][0][:, None] + x3[None] * v[1][1][:, None])
    out[3] = h ** 3 * B
    B = np.zeros_like(B)
    B[:, :, 0] = cs.a2[None] * v[3][0][:, None] + cs.a3[None] * v[3][1][:, None]
    out[5] = h ** 5 * B
    B = np.zeros_like(B)
    d4 = v[4]
    B[:, :, 1] = cs.b2[None] * d4[0][:, None] + cs.c3[None] * d4[1][:, None]
    B[:, :, 2] = cs.b3[None] * d4[1][:, None] + cs.c2[None] * d4[0][:, None]
    out[6] = h ** 6 * B
    return AnsatzField(out, h, t)


def assemble_ansatz(traj, cs, grid, h, t, time_order=0):
    """u~ (or its time derivative of order 1, 2) at time t."""
    if time_order not in (0, 1, 2):
        raise CapabilityError("time derivatives up to order 2 are available")
    c = traj.state(t)[time_order]
    return ansatz_from_coeffs(grid, cs, c, h, t)


def ansatz_initial(derivatives, cs, grid, h, orders=(0, 1, 2)):
    """u~_j built from v^j = d_t^j v at t = 0."""
    if derivatives is None:
        raise CapabilityError("beam time derivatives at t = 0 are not available")
    return tuple(ansatz_from_coeffs(grid, cs, derivatives[j], h).total for j in orders)


def ansatz_gradient_blocks(grid, cs, c, h):
    """Analytic blocks of grad_h u~ at the grid quadrature points, keyed by power
    of h (2..6); their sum equals grid.gradient(u~, h) up to round-off."""
    mesh = grid.section
    nq = grid.Q // mesh.n_triangles
    v = _profiles(grid, c, range(6))
    I = grid.interp

    def atq(f):
        return I @ f

    def elem(f):
        return np.repeat(fem.element_gradient(mesh, f), nq, axis=0)

    xq2, xq3 = grid.xq[:, 0], grid.xq[:, 1]
    ga2, ga3 = elem(cs.a2), elem(cs.a3)
    gb2, gc2, gb3, gc3 = elem(cs.b2), elem(cs.c2), elem(cs.b3), elem(cs.c3)
    b2, c2, b3, c3 = atq(cs.b2), atq(cs.c2), atq(cs.b3), atq(cs.c3)
    a2, a3 = atq(cs.a2), atq(cs.a3)
    shape = (grid.n1, grid.Q, 3, 3)
    G = {p: np.zeros(shape) for p in range(2, 7)}
    col = lambda q, i: v[q][i][:, None]          # noqa: E731
    G[2][..., 0, 1] = -col(1, 0) * np.ones(grid.Q)
    G[2][..., 0, 2] = -col(1, 1) * np.ones(grid.Q)
    G[2][..., 1, 0] = col(1, 0) * np.ones(grid.Q)
    G[2][..., 2, 0] = col(1, 1) * np.ones(grid.Q)
    G[3][..., 0, 0] = -(xq2 * col(2, 0) + xq3 * col(2, 1))
    G[4][..., 0, 1] = ga2[:, 0] * col(3, 0) + ga3[:, 0] * col(3, 1)
    G[4][..., 0, 2] = ga2[:, 1] * col(3, 0) + ga3[:, 1] * col(3, 1)
    G[5][..., 0, 0] = a2 * col(4, 0) + a3 * col(4, 1)
    G[5][..., 1, 1] = gb2[:, 0] * col(4, 0) + gc3[:, 0] * col(4, 1)
    G[5][..., 1, 2] = gb2[:, 1] * col(4, 0) + gc3[:, 1] * col(4, 1)
    G[5][..., 2, 1] = gb3[:, 0] * col(4, 1) + gc2[:, 0] * col(4, 0)
    G[5][..., 2, 2] = gb3[:, 1] * col(4, 1) + gc2[:, 1] * col(4, 0)
    G[6][..., 1, 0] = b2 * col(5, 0) + c3 * col(5, 1)
    G[6][..., 2, 0] = b3 * col(5, 1) + c2 * col(5, 0)
    return {p: h ** p * M for p, M in G.items()}


# ---------------------------------------------------------------- interior residual

def _dual_solvers(grid):
    """Factorized section mass matrices for the dual norm: full for the axial
    component, interior nodes only for the transverse ones."""
    key = "residual_duals"
    if key not in grid._cache:
        M = grid.mass_S.tocsc()
        inner = grid.section.interior_nodes
        Mi = M[inner][:, inner].tocsc()
        grid._cache[key] = (spla.splu(M), spla.splu(Mi), inner)
    return grid._cache[key]


def residual_functional(grid, h, u, u_tt, f=None, theta=1.0):
    """Nodal functional h^(1 + theta)(f, phi) - (u_tt, phi) - (1/h^2)(sym grad_h u, grad_h phi)."""
    rho = -grid.mass(u_tt) - apply_stiffness(grid, h, u)
    if f is not None:
        rho += h ** (1.0 + theta) * grid.mass(f)
    return rho


def functional_l2(grid, rho):
    """L2 norm of the field represented by a residual functional, transverse
    components tested against interior nodes only (the boundary layer is the
    boundary residual's business)."""
    lu, lui, inner = _dual_solvers(grid)
    tot = 0.0
    for p in range(grid.n1):
        r1 = rho[p, :, 0]
        tot += float(r1 @ lu.solve(r1))
        for i in (1, 2):
            ri = rho[p, inner, i]
            tot += float(ri @ lui.solve(ri))
    return math.sqrt(max(tot, 0.0) / grid.dx)


def beam_forcing_field(grid, traj, t):
    """Rod forcing f_h = (0, g(t)) sampled on the grid."""
    K = traj.n_modes
    c = traj.forcing.coeffs(t, 0, K)
    vals = beam1d.to_grid(c, grid.L, grid.n1, 0)
    f = np.zeros((grid.n1, grid.N, 3))
    f[:, :, 1] = vals[0][:, None]
    f[:, :, 2] = vals[1][:, None]
    return f


@dataclass
class ResidualSeries:
    times: np.ndarray
    values: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def sup(self):
        return float(np.max(self.values)) if len(self.values) else 0.0


def interior_residual(grid, traj, cs, h, times=None, theta=1.0, n_times=11):
    """||r_h(t)||_{L2} at the sample times and its maximum."""
    if times is None:
        times = np.linspace(0.0, traj.T, n_times)
    vals = []
    for t in times:
        u = assemble_ansatz(traj, cs, grid, h, t, 0).total
        utt = assemble_ansatz(traj, cs, grid, h, t, 2).total
        f = beam_forcing_field(grid, traj, t)
        vals.append(functional_l2(grid, residual_functional(grid, h, u, utt, f, theta)))
    return ResidualSeries(np.asarray(times), np.asarray(vals))


# ---------------------------------------------------------------- boundary residual

def _boundary_geometry(grid):
    key = "boundary_geometry"
    if key not in grid._cache:
        mesh = grid.section
        owner = fem.boundary_edge_triangles(mesh)
        lengths = fem.edge_lengths(mesh)
        grid._cache[key] = (owner, lengths, mesh.normals, mesh.boundary_edges)
    return grid._cache[key]


def _traction_h5(grid, cs, d4):
    """Section traction of the h^6 block per boundary edge (n1, E, 3), without h^5."""
    mesh = grid.section
    owner, lengths, nu, edges = _boundary_geometry(grid)
    g = {k: fem.element_gradient(mesh, getattr(cs, k))[owner] for k in ("b2", "c2", "b3", "c3")}
    p2, p3 = d4[0][:, None], d4[1][:, None]      # (n1, 1)
    # section gradient of (u2, u3) / h^5 : d_alpha u_i
    du2 = [g["b2"][:, a] * p2 + g["c3"][:, a] * p3 for a in range(2)]
    du3 = [g["b3"][:, a] * p3 + g["c2"][:, a] * p2 for a in range(2)]
    s22, s33 = du2[0], du3[1]
    s23 = 0.5 * (du2[1] + du3[0])
    T = np.zeros((grid.n1, len(owner), 3))
    T[..., 1] = s22 * nu[:, 0] + s23 * nu[:, 1]
    T[..., 2] = s23 * nu[:, 0] + s33 * nu[:, 1]
    return T


def _traction_h6(grid, cs, d5):
    """Axial traction of the h^6 block from b, c on the boundary (zero for
    Dirichlet correctors); per edge midpoint."""
    owner, lengths, nu, edges = _boundary_geometry(grid)
    mid = lambda f: 0.5 * (f[edges[:, 0]] + f[edges[:, 1]])     # noqa: E731
    p2, p3 = d5[0][:, None], d5[1][:, None]
    s12 = 0.5 * (mid(cs.b2) * p2 + mid(cs.c3) * p3)
    s13 = 0.5 * (mid(cs.b3) * p3 + mid(cs.c2) * p2)
    T = np.zeros((grid.n1, len(owner), 3))
    T[..., 0] = s12 * nu[:, 0] + s13 * nu[:, 1]
    return T


def boundary_h1_surrogate(grid, T):
    """H1((0, L) x dS) surrogate of an edgewise-constant boundary field:
    edge L2 plus the x1 derivative plus a tangential derivative from
    values averaged to boundary nodes."""
    owner, lengths, nu, edges = _boundary_geometry(grid)
    w = grid.dx * lengths[None, :, None]
    l2 = float(np.sum(w * T ** 2))
    d1 = float(np.sum(w * grid.d1(T) ** 2))
    N = grid.N
    acc = np.zeros((grid.n1, N, 3))
    cnt = np.zeros(N)
    for e in range(len(edges)):
        for n in edges[e]:
            acc[:, n] += lengths[e] * T[:, e]
            cnt[n] += lengths[e]
    nodal = acc / np.where(cnt > 0, cnt, 1.0)[None, :, None]
    dt = (nodal[:, edges[:, 1]] - nodal[:, edges[:, 0]]) / lengths[None, :, None]
    tang = float(np.sum(w * dt ** 2))
    return math.sqrt(l2 + d1 + tang)


def boundary_residual(grid, traj, cs, h, times=None, n_times=11):
    """C^2-in-time, H1-in-space surrogate norm of r_{N,h}, plus the h^4 and
    h^6 blocks reported separately."""
    if times is None:
        times = np.linspace(0.0, traj.T, n_times)
    mesh = grid.section
    owner, lengths, nu, edges = _boundary_geometry(grid)
    ga2 = fem.element_gradient(mesh, cs.a2)[owner]
    ga3 = fem.element_gradient(mesh, cs.a3)[owner]
    an2 = np.sum(ga2 * nu, axis=1)
    an3 = np.sum(ga3 * nu, axis=1)
    per_order = []
    h6 = 0.0
    for j in range(3):
        vals = []
        for t in times:
            c = traj.state(t)[j]
            d4 = beam1d.to_grid(c, grid.L, grid.n1, 4)
            vals.append(h ** 5 * boundary_h1_surrogate(grid, _traction_h5(grid, cs, d4)))
            if j == 0:
                d5 = beam1d.to_grid(c, grid.L, grid.n1, 5)
                h6 = max(h6, h ** 6 * boundary_h1_surrogate(grid, _traction_h6(grid, cs, d5)))
        per_order.append(np.asarray(vals))
    values = np.max(np.stack(per_order), axis=0)
    # pointwise Neumann defect of a, only O(mesh) for P1 correctors
    pointwise_a = float(max(np.max(np.abs(an2)), np.max(np.abs(an3))))
    return ResidualSeries(np.asarray(times), values,
                          {"per_order_sup": [float(np.max(v)) for v in per_order],
                           "h6_block": h6, "a_neumann_pointwise": pointwise_a,
                           "a_neumann_weak": a_neumann_weak(mesh, cs)})


def a_neumann_weak(mesh, cs):
    """Relative weak residual of the Neumann problems for a (solver-level zero)."""
    r = cs.residuals or {}
    return float(max(r.get("a2_weak", 0.0), r.get("a3_weak", 0.0)))
