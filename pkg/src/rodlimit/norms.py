"""Scaled norms, the rotational moment and Korn-inequality measurements.

Matrix norms use |A|_h^2 = |sym A|^2 / h^2 + |skew A|^2.  Discrete fields are
sampled on a RodGrid (see rod3d); derivatives are spectral along x1 and
recovered (area-weighted nodal averages) across the section.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import eigh, null_space

from .energy import scaled_inner, scaled_abs, sym, skew, P


class CapabilityError(RuntimeError):
    pass


@dataclass
class RodField:
    """Nodal field on a RodGrid: values (n1, N, 3) or (n1, N, 3, 3)."""
    values: np.ndarray
    h: float
    kind: str = "displacement"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (3, 4):
            raise ValueError("RodField values must be (n1, N, 3) or (n1, N, 3, 3)")
        if self.kind == "displacement" and self.values.shape[-1] != 3:
            raise ValueError("displacement fields have three components")


@dataclass
class ScaledNormReport:
    h: float
    values: dict = field(default_factory=dict)
    derivative_orders: dict = field(default_factory=dict)

    def rows(self):
        return [(self.h, k, v) for k, v in self.values.items()]


def scaled_matrix_inner(A, B, h):
    return scaled_inner(np.asarray(A, float), np.asarray(B, float), h)


def scaled_matrix_abs(A, h):
    return scaled_abs(np.asarray(A, float), h)


def dual_scaling(A, h):
    """Pointwise weighting of the dual norm: h sym A + skew A."""
    return h * sym(A) + skew(A)


# ---------------------------------------------------------------- gradients

def scaled_gradient(grid, u, h=None, at="quad"):
    """grad_h u as a matrix field, at quadrature points (default) or
    recovered at the nodes."""
    vals = u.values if isinstance(u, RodField) else np.asarray(u, float)
    h = h if h is not None else u.h
    if at == "quad":
        return RodField(grid.gradient(vals, h), h, "matrix-quad")
    d2, d3 = grid.recover(vals)
    F = np.stack([grid.d1(vals), d2 / h, d3 / h], axis=-1)
    return RodField(F, h, "matrix")


def strain_h(grid, u, h=None, at="quad"):
    G = scaled_gradient(grid, u, h, at)
    return RodField(sym(G.values), G.h, G.kind)


# ---------------------------------------------------------------- norms

def _quad_norm2(grid, values, h=None, scaled=False, dual=False):
    if values.ndim == 4:
        if scaled:
            pt = scaled_inner(values, values, h)
        elif dual:
            D = dual_scaling(values, h)
            pt = np.einsum("...ij,...ij->...", D, D)
        else:
            pt = np.einsum("...ij,...ij->...", values, values)
    else:
        pt = np.sum(values ** 2, axis=-1)
    return float(grid.quad_integral(pt))


def _node_norm2(grid, values, h=None, scaled=False, dual=False):
    """L2 norm squared of a nodal field via the consistent mass matrix."""
    if values.ndim == 4:
        if scaled:
            S, K = sym(values), skew(values)
            return _node_norm2(grid, S.reshape(S.shape[:2] + (9,))) / h ** 2 + \
                _node_norm2(grid, K.reshape(K.shape[:2] + (9,)))
        if dual:
            D = dual_scaling(values, h)
            return _node_norm2(grid, D.reshape(D.shape[:2] + (9,)))
        values = values.reshape(values.shape[:2] + (9,))
    return float(np.sum(values * grid.mass(values)))


def _derivatives(grid, vals, m1, m2, xmax=3):
    """Yield d_1^l grad_x^k vals for k <= m1, l <= m2 (grad_x unscaled, full)."""
    if m1 > xmax:
        raise CapabilityError(f"at most {xmax} recovered section derivatives are available")
    if m2 > grid.n1 // 2:
        raise CapabilityError("not enough x1 modes for the requested derivatives")
    layer = [vals]
    for k in range(m1 + 1):
        for v in layer:
            for l in range(m2 + 1):
                yield k, l, grid.d1(v, l)
        if k < m1:
            nxt = []
            for v in layer:
                d2, d3 = grid.recover(v)
                nxt += [grid.d1(v), d2, d3]
            layer = nxt


def anisotropic_norm(grid, vals, m1, m2, h=None, scaled=False):
    """||.||_{H^{m1,m2}} (or its h-scaled variant for matrix fields) of a nodal field."""
    tot = 0.0
    for k, l, d in _derivatives(grid, vals, m1, m2):
        tot += _node_norm2(grid, d, h, scaled)
    return math.sqrt(tot)


def sobolev_norm(grid, vals, m, h=None, scaled=False):
    """||.||_{H^m} (isotropic); equals the anisotropic norm with all mixed
    derivatives counted once per multi-index ordering."""
    return anisotropic_norm(grid, vals, m, 0, h, scaled) if m else \
        math.sqrt(_node_norm2(grid, vals, h, scaled))


def field_norms(grid, u, spec, h=None):
    """Evaluate the requested norms of u.

    spec entries: 'L2', 'L2h', 'dual', 'rot', ('H', m), ('Hh', m),
    ('Hani', m1, m2), ('Hani_h', m1, m2).  Matrix fields sampled at
    quadrature points support only 'L2', 'L2h' and 'dual'.
    """
    vals = u.values if isinstance(u, RodField) else np.asarray(u, float)
    h = h if h is not None else getattr(u, "h", 1.0)
    if h <= 0:
        raise ValueError("h must be positive")
    at_quad = isinstance(u, RodField) and u.kind == "matrix-quad"
    rep = ScaledNormReport(h)
    for s in spec:
        key = s if isinstance(s, str) else "_".join(str(x) for x in s)
        name = s if isinstance(s, str) else s[0]
        if at_quad and name not in ("L2", "L2h", "dual"):
            raise CapabilityError("derivatives of quadrature-point fields are not available")
        n2 = _quad_norm2 if at_quad else _node_norm2
        if name == "L2":
            val = math.sqrt(n2(grid, vals))
        elif name == "L2h":
            val = math.sqrt(n2(grid, vals, h, scaled=True))
        elif name == "dual":
            val = math.sqrt(n2(grid, vals, h, dual=True))
        elif name == "rot":
            val = abs(rotational_moment(grid, vals, h))
        elif name == "H":
            val = sobolev_norm(grid, vals, s[1])
            rep.derivative_orders[key] = s[1]
        elif name == "Hh":
            val = sobolev_norm(grid, vals, s[1], h, scaled=True)
            rep.derivative_orders[key] = s[1]
        elif name in ("Hani", "Hani_h"):
            val = anisotropic_norm(grid, vals, s[1], s[2], h, scaled=(name == "Hani_h"))
            rep.derivative_orders[key] = (s[1], s[2])
        else:
            raise ValueError(f"unknown norm {s!r}")
        rep.values[key] = val
    return rep


def rotational_moment(grid, u, h):
    """(1/h) int_Omega u . x_perp dx."""
    vals = u.values if isinstance(u, RodField) else np.asarray(u, float)
    return grid.inner(vals, grid.x_perp()) / h


def aggregate_norm(grid, u, h, m1=1, m2=1):
    """||((1/h) e_h(u), grad (1/h) e_h(u), grad_h^2 u)||_{H^{m1,m2}} with
    recovered derivatives (surrogate of the initial-data bounds)."""
    G = scaled_gradient(grid, u, h, at="nodes").values
    E = sym(G) / h
    d2, d3 = grid.recover(E)
    gradE = [grid.d1(E), d2, d3]
    # grad_h^2 u: grad_h applied to grad_h u
    g2, g3 = grid.recover(G)
    hess = [grid.d1(G), g2 / h, g3 / h]
    tot = anisotropic_norm(grid, E, m1, m2) ** 2
    for comp in gradE + hess:
        tot += anisotropic_norm(grid, comp, m1, m2) ** 2
    return math.sqrt(tot)


# ---------------------------------------------------------------- Korn

def a_of_u(grid, u, corrected=True):
    """Mean rotation a(u) = c / |Omega| int (d3 u2 - d2 u3), c = 1/2 (corrected) or 1."""
    vals = u.values if isinstance(u, RodField) else np.asarray(u, float)
    F = grid.gradient(vals, 1.0)
    curl = F[..., 1, 2] - F[..., 2, 1]
    c = 0.5 if corrected else 1.0
    return c * float(grid.quad_integral(curl)) / grid.volume()


def korn_B(a):
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, a], [0.0, -a, 0.0]])


def korn_measure(grid, u, h, variant="pointwise", corrected=True, tol=1e-12):
    """Return (lhs, rhs, ratio) of the pointwise or integral Korn inequality.

    pointwise: lhs = ||grad_h u - B(u)/h||, rhs = ||e_h(u)/h||;
    integral: lhs = ||grad_h u||, rhs = (||e_h(u)|| + |int u . x_perp|) / h.
    A zero right-hand side with nonzero left-hand side is reported as an
    inequality violation (ratio = inf).
    """
    vals = u.values if isinstance(u, RodField) else np.asarray(u, float)
    F = grid.gradient(vals, h)
    E = sym(F)
    if variant == "pointwise":
        D = F - korn_B(a_of_u(grid, vals, corrected))[None, None] / h
        lhs = math.sqrt(_quad_norm2(grid, D))
        rhs = math.sqrt(_quad_norm2(grid, E)) / h
    elif variant == "integral":
        lhs = math.sqrt(_quad_norm2(grid, F))
        rhs = (math.sqrt(_quad_norm2(grid, E)) + abs(grid.inner(vals, grid.x_perp()))) / h
    else:
        raise ValueError(f"unknown Korn variant {variant!r}")
    # zero tests relative to the full gradient, so rigid motions give 0/0
    scale = math.sqrt(_quad_norm2(grid, F)) / h
    if rhs <= tol * scale or scale == 0.0:
        if lhs <= tol * max(scale, 1e-300) or scale == 0.0:
            return lhs, rhs, 0.0
        return lhs, rhs, math.inf
    return lhs, rhs, lhs / rhs


def _mode_gradient_blocks(grid, k, h):
    """Dense (9Q x 3N) map of mode-k coefficients to grad_h at Q points and
    the matching diagonal weights."""
    N, Q = grid.N, grid.Q
    I = grid.interp.toarray()
    G2 = grid.grad2.toarray() / h
    G3 = grid.grad3.toarray() / h
    kap = grid.kappa[k]
    blocks = np.zeros((3, 3, Q, 3 * N), dtype=complex)
    for i in range(3):
        cols = slice(i * N, (i + 1) * N)
        blocks[i, 0, :, cols] = 1j * kap * I
        blocks[i, 1, :, cols] = G2
        blocks[i, 2, :, cols] = G3
    return blocks


def korn_constant(grid, h, corrected=True, return_modes=False):
    """Largest ratio ||grad_h u - B(u)/h||^2 / ||e_h(u)/h||^2 over the discrete
    space (square root returned), by a generalized eigenproblem per mode.

    Mode 0 is restricted to the complement of the rigid kernel (constants
    and x_perp), where both forms vanish identically."""
    W = grid.wq
    per_mode = []
    for k in range(grid.n_modes):
        Gb = _mode_gradient_blocks(grid, k, h)
        Sb = 0.5 * (Gb + np.swapaxes(Gb, 0, 1))
        if k == 0:
            # a(u) functional: c/|Omega| * int (d3 u2 - d2 u3), physical derivatives
            c = 0.5 if corrected else 1.0
            curl = (Gb[1, 2] - Gb[2, 1]) * h
            ell = c * (W @ curl).real / float(W.sum())
            Gb = Gb.copy()
            Pm = korn_B(1.0)
            for i in range(3):
                for a in range(3):
                    if Pm[i, a]:
                        Gb[i, a] -= Pm[i, a] * ell[None, :] / h
        A = sum(Gb[i, a].conj().T @ (W[:, None] * Gb[i, a]) for i in range(3) for a in range(3))
        B = sum(Sb[i, a].conj().T @ (W[:, None] * Sb[i, a]) for i in range(3) for a in range(3)) / h ** 2
        if k == 0:
            Z = null_space(grid.constraint_rows("B"))
            A = Z.T @ A.real @ Z
            B = Z.T @ B.real @ Z
        A = 0.5 * (A + A.conj().T)
        B = 0.5 * (B + B.conj().T)
        lam = eigh(A, B, eigvals_only=True)
        per_mode.append(math.sqrt(max(lam[-1], 0.0)))
    C = max(per_mode)
    return (C, per_mode) if return_modes else C
