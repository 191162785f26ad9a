"""Cross-sectional corrector problems.

a_k (k = 2, 3) solves -Lap a_k = -2 x_k in S, grad a_k . nu = 0 on the
boundary, with zero mean. The pairs (b2, c2) and (c3, b3) solve 2x2
elliptic systems with the coefficient tensor p and homogeneous Dirichlet
data; see `bc_rhs` for the available right-hand side variants.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem

# right-hand side variants of the b/c systems, see bc_rhs
VARIANTS = ("consistent", "strong", "divergence")


class CompatibilityError(ValueError):
    pass


def coefficient_tensor():
    """p[alpha, beta, i, j] with alpha, beta in {x2, x3} -> {0, 1}."""
    p = np.zeros((2, 2, 2, 2))
    p[0, 0, 0, 0] = 1.0
    p[1, 1, 0, 0] = 0.5
    p[1, 0, 0, 1] = p[0, 1, 0, 1] = 0.25
    p[0, 0, 1, 1] = 0.5
    p[1, 1, 1, 1] = 1.0
    p[0, 1, 1, 0] = p[1, 0, 1, 0] = 0.25
    return p


def quadratic_form(tensor, xi):
    """sum p^{ab}_{ij} xi_{i a} xi_{j b} for xi of shape (2, 2) = [i, a]."""
    return float(np.einsum("abij,ia,jb->", tensor, xi, xi))


def legendre_constant(tensor=None):
    """Smallest eigenvalue of the symmetrized 4x4 matrix of the form."""
    if tensor is None:
        tensor = coefficient_tensor()
    Q = np.einsum("abij->iajb", tensor).reshape(4, 4)
    return float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])


@dataclass
class CorrectorSet:
    a2: np.ndarray
    a3: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    b3: np.ndarray
    c3: np.ndarray
    variant: str = "consistent"
    residuals: dict = field(default_factory=dict)


# ---------------------------------------------------------------- a

def _a_system(mesh):
    K = fem.stiffness_matrix(mesh)
    c = np.asarray(fem.mass_matrix(mesh).sum(axis=0)).ravel()
    n = mesh.n_nodes
    A = sp.bmat([[K, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]]).tocsc()
    return K, c, A


def _a_rhs(mesh, k):
    return fem.load_vector(mesh, lambda x2, x3: -2.0 * (x2 if k == 2 else x3))


def solve_corrector_a(mesh, tol=1e-10):
    """Return (a2, a3) nodal values, zero mean, Neumann data."""
    area = mesh.areas().sum()
    pts, w = mesh.quadrature(4)
    first = np.array([(w * pts[..., 0]).sum(), (w * pts[..., 1]).sum()])
    if np.max(np.abs(first)) > tol * max(1.0, area):
        raise CompatibilityError(
            f"first moments {first} do not vanish; normalize the section first")
    K, c, A = _a_system(mesh)
    lu = spla.splu(A)
    out = []
    for k in (2, 3):
        rhs = np.concatenate([_a_rhs(mesh, k), [0.0]])
        sol = lu.solve(rhs)
        out.append(sol[:-1])
    return out[0], out[1]


# ---------------------------------------------------------------- b, c

def bc_stiffness(mesh, tensor=None):
    """Block matrix of sum p^{ab}_{ij} (d_a phi_b, d_b phi_a) over both fields."""
    if tensor is None:
        tensor = coefficient_tensor()
    D = [[fem.derivative_bilinear(mesh, a, b) for b in range(2)] for a in range(2)]
    blocks = [[None, None], [None, None]]
    for i in range(2):
        for j in range(2):
            M = sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
            for a in range(2):
                for b in range(2):
                    if tensor[a, b, i, j]:
                        M = M + tensor[a, b, i, j] * D[a][b]
            blocks[i][j] = M
    return sp.bmat(blocks).tocsr()


def bc_rhs(mesh, a, moments, variant="consistent"):
    """Strong right-hand sides s (piecewise constant per triangle) of
    div(p grad w) = s for w = (b2, c2) and w = (c3, b3).

    consistent: s = -(I_k e_k + 1/2 grad a_k), the choice that cancels the
        h^2 term of the interior residual of the ansatz;
    strong: the displayed strong systems, s = (I2 - d2 a2, -d3 a2) and
        (-d2 a3, I3 - d3 a3);
    divergence: the displayed divergence-form data f = (-I2 - d2 a2, -d3 a2)
        read with -div(p grad w) = f.
    """
    a2, a3 = a
    g2 = fem.element_gradient(mesh, a2)
    g3 = fem.element_gradient(mesh, a3)
    one = np.ones(mesh.n_triangles)
    I2, I3 = moments.I2, moments.I3
    if variant == "consistent":
        s2 = (-(I2 * one + 0.5 * g2[:, 0]), -0.5 * g2[:, 1])
        s3 = (-0.5 * g3[:, 0], -(I3 * one + 0.5 * g3[:, 1]))
    elif variant == "strong":
        s2 = (I2 * one - g2[:, 0], -g2[:, 1])
        s3 = (-g3[:, 0], I3 * one - g3[:, 1])
    elif variant == "divergence":
        s2 = (I2 * one + g2[:, 0], g2[:, 1])
        s3 = (g3[:, 0], I3 * one + g3[:, 1])
    else:
        raise ValueError(f"unknown corrector variant {variant!r}")
    return s2, s3


def _dirichlet_solve(mesh, A, s):
    """Solve the weak form -(p grad w, grad phi) = (s, phi) with w = 0 on the boundary."""
    n = mesh.n_nodes
    F = -np.concatenate([fem.elementwise_load(mesh, s[0]), fem.elementwise_load(mesh, s[1])])
    inner = mesh.interior_nodes
    dofs = np.concatenate([inner, inner + n])
    Ai = A[dofs][:, dofs].tocsc()
    w = np.zeros(2 * n)
    if len(dofs):
        w[dofs] = spla.spsolve(Ai, F[dofs])
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("singular b/c stiffness")
    return w[:n], w[n:], F


def solve_corrector_bc(mesh, a, moments, variant="consistent", rhs=None):
    """Return (b2, c2, b3, c3). `rhs` overrides the right-hand sides with
    a pair of per-triangle strong data tuples (testing hook)."""
    A = bc_stiffness(mesh)
    s2, s3 = rhs if rhs is not None else bc_rhs(mesh, a, moments, variant)
    b2, c2, _ = _dirichlet_solve(mesh, A, s2)
    c3, b3, _ = _dirichlet_solve(mesh, A, s3)
    return b2, c2, b3, c3


def solve_correctors(mesh, moments, variant="consistent"):
    a2, a3 = solve_corrector_a(mesh)
    b2, c2, b3, c3 = solve_corrector_bc(mesh, (a2, a3), moments, variant)
    cs = CorrectorSet(a2, a3, b2, c2, b3, c3, variant)
    cs.residuals = corrector_residual(mesh, cs, moments)
    return cs


def corrector_residual(mesh, cs, moments):
    """Relative weak residuals and boundary violations of all systems."""
    K, c, _ = _a_system(mesh)
    out = {}
    for name, ak, k in (("a2", cs.a2, 2), ("a3", cs.a3, 3)):
        F = _a_rhs(mesh, k)
        r = K @ ak - F
        # multiplier component: project out the constant direction
        lam = (r @ c) / (c @ c)
        out[f"{name}_weak"] = float(np.linalg.norm(r - lam * c) / np.linalg.norm(F))
        out[f"{name}_mean"] = float(c @ ak)
    A = bc_stiffness(mesh)
    n = mesh.n_nodes
    inner = mesh.interior_nodes
    dofs = np.concatenate([inner, inner + n])
    s2, s3 = bc_rhs(mesh, (cs.a2, cs.a3), moments, cs.variant)
    for name, w, s in (("bc2", np.concatenate([cs.b2, cs.c2]), s2),
                       ("bc3", np.concatenate([cs.c3, cs.b3]), s3)):
        F = -np.concatenate([fem.elementwise_load(mesh, s[0]), fem.elementwise_load(mesh, s[1])])
        r = (A @ w - F)[dofs]
        scale = np.linalg.norm(F[dofs])
        out[f"{name}_weak"] = float(np.linalg.norm(r) / scale) if scale else float(np.linalg.norm(r))
        bnd = mesh.boundary_nodes
        out[f"{name}_dirichlet"] = float(np.max(np.abs(np.concatenate([w[bnd], w[bnd + n]]))))
    return out


def strong_residual_bc(mesh, cs, moments):
    """L2 norm of the strong residual of the b/c systems using recovered
    second derivatives at interior nodes (diagnostic only)."""
    p = coefficient_tensor()
    s2, s3 = bc_rhs(mesh, (cs.a2, cs.a3), moments, cs.variant)
    M = fem.mass_matrix(mesh)
    inner = mesh.interior_nodes

    def hess(f):
        g = fem.recover_gradient(mesh, f)
        return np.stack([fem.recover_gradient(mesh, g[:, d]) for d in range(2)], axis=1)

    out = []
    for w, s in (((cs.b2, cs.c2), s2), ((cs.c3, cs.b3), s3)):
        H = [hess(w[0]), hess(w[1])]      # H[j][:, alpha, beta] ~ d_beta d_alpha w_j
        res = []
        for i in range(2):
            val = np.zeros(mesh.n_nodes)
            for j in range(2):
                val += np.einsum("ab,nab->n", p[:, :, i, j], H[j])
            val -= _elem_to_node(mesh, s[i])
            val[mesh.boundary_nodes] = 0.0
            res.append(val)
        out.append(float(np.sqrt(sum(r @ (M @ r) for r in res))))
    return out


def _elem_to_node(mesh, v):
    area = mesh.areas()
    t = mesh.triangles.ravel()
    w = np.bincount(t, np.repeat(area, 3), minlength=mesh.n_nodes)
    return np.bincount(t, np.repeat(area * v, 3), minlength=mesh.n_nodes) / w


def disk_a2_exact(x2, x3, radius):
    return 0.25 * x2 * (x2 ** 2 + x3 ** 2) - 0.75 * radius ** 2 * x2


def export_correctors(mesh, cs, path):
    names = ("a2", "a3", "b2", "c2", "b3", "c3")
    with open(path, "w") as fh:
        fh.write("# node " + " ".join(names) + "\n")
        for k in range(mesh.n_nodes):
            vals = " ".join(f"{getattr(cs, n)[k]:.16e}" for n in names)
            fh.write(f"{k} {vals}\n")
