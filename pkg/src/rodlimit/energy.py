"""Elastic energy density based on the distance to SO(3).

W(F) = 1/2 dist(F, SO(3))^2 and W~(F) = W(Id + F). All functions accept
stacks of matrices with shape (..., 3, 3).

Derivatives follow from the polar decomposition Id + F = R U:
    DW~(F) = Id + F - R,
    D2W~(F)[G] = G - dR[G],   dR[G] = R Om(G),
where the skew matrix Om(G) has axial vector (tr U Id - U)^{-1} axial(R^T G - G^T R).
"""

from dataclasses import dataclass

import numpy as np

EYE = np.eye(3)

# the skew matrix of the infinitesimal cross-sectional rotation x -> (0, -x3, x2)
P = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


class DomainError(ValueError):
    """Raised when a matrix leaves the neighbourhood where W~ is smooth."""


def sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def skew(A):
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def dot(A, B):
    """Frobenius product over the last two axes."""
    return np.einsum("...ij,...ij->...", A, B)


def _axial(S):
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def _from_axial(w):
    z = np.zeros(w.shape[:-1])
    return np.stack([
        np.stack([z, -w[..., 2], w[..., 1]], -1),
        np.stack([w[..., 2], z, -w[..., 0]], -1),
        np.stack([-w[..., 1], w[..., 0], z], -1)], -2)


def _cofactor(X):
    c = np.empty_like(X)
    for i in range(3):
        for j in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            c[..., i, j] = X[..., i1, j1] * X[..., i2, j2] - X[..., i1, j2] * X[..., i2, j1]
    return c


def _det(X):
    return np.einsum("...j,...j->...", X[..., 0, :], _cofactor(X)[..., 0, :])


def _polar_svd(A):
    u, s, vt = np.linalg.svd(A)
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def polar_split(F, maxiter=40):
    """Return Z = R - Id - skew F for the rotation factor R of Id + F.

    Newton's iteration X <- (X + X^{-T})/2 rewritten for Z:
        Z <- (Z - X^{-T} Z^T)/2 - X^{-T} Y^T skew(F)/2,   Y = skew F + Z,
    in which every term is a product of small matrices, so the nonlinear
    stress skew F - Y = -Z keeps full relative precision for small F.
    Points that do not converge fall back to the SVD.
    """
    F = np.asarray(F, dtype=float)
    S = skew(F)
    Z = sym(F)
    prev = np.inf
    for it in range(maxiter):
        Y = S + Z
        X = EYE + Y
        det = _det(X)
        if np.any(det <= 0):
            break
        XinvT = _cofactor(X) / det[..., None, None]
        Zn = 0.5 * (Z - XinvT @ np.swapaxes(Z, -1, -2)) - 0.5 * XinvT @ np.swapaxes(Y, -1, -2) @ S
        step = np.max(np.abs(Zn - Z), initial=0.0)
        Z = Zn
        zmax = np.max(np.abs(Z), initial=0.0)
        if step <= 1e-15 * zmax or step <= 1e-300 or (it >= 3 and step >= prev):
            return Z
        prev = step
    R = _polar_svd(EYE + F)
    return R - EYE - S


def polar_deviation(F):
    """Return Y = R - Id with R the rotation factor of Id + F."""
    F = np.asarray(F, dtype=float)
    return skew(F) + polar_split(F)


def distance_to_SO3(F):
    """Distance of the matrix F (not the displacement gradient) to SO(3)
    together with the nearest rotation."""
    F = np.asarray(F, dtype=float)
    u, s, vt = np.linalg.svd(F)
    det = np.linalg.det(F)
    if np.all(det > 0):
        R = u @ vt
        # polish
        for _ in range(3):
            R = 0.5 * (R + np.linalg.inv(np.swapaxes(R, -1, -2)))
        dist2 = np.sum((s - 1.0) ** 2, axis=-1)
    else:
        flip = np.where(np.linalg.det(u @ vt) < 0, -1.0, 1.0)
        s2 = s.copy()
        s2[..., 2] *= flip
        u = u.copy()
        u[..., :, 2] *= flip[..., None]
        R = u @ vt
        dist2 = np.sum((s2 - 1.0) ** 2, axis=-1)
    return np.sqrt(dist2), R


def _check(F, delta):
    if delta is None:
        return
    n = np.sqrt(dot(F, F))
    if np.any(n >= delta):
        raise DomainError(
            f"|F| = {np.max(n):.3e} exceeds the smooth neighbourhood radius {delta}; "
            "solution left the linearization regime")
    if np.any(_det(EYE + F) <= 0):
        raise DomainError("det(Id + F) <= 0")


def W_tilde(F, delta=None):
    F = np.asarray(F, dtype=float)
    _check(F, delta)
    D = sym(F) - polar_split(F)
    return 0.5 * dot(D, D)


def DW_tilde(F, delta=None):
    F = np.asarray(F, dtype=float)
    _check(F, delta)
    return sym(F) - polar_split(F)


def G_nonlinear(F, delta=None):
    """G(F) = DW~(F) - sym F, the nonlinear part of the stress."""
    F = np.asarray(F, dtype=float)
    _check(F, delta)
    return -polar_split(F)


class Linearization:
    """Cached polar data at a stack of base points F, giving the first three
    derivatives of W~ there."""

    def __init__(self, F, delta=None):
        F = np.asarray(F, dtype=float)
        _check(F, delta)
        self.F = F
        self.Z = polar_split(F)
        self.Y = skew(F) + self.Z
        self.R = EYE + self.Y
        Yt = np.swapaxes(self.Y, -1, -2)
        # E = U - Id from small terms only
        self.E = sym(F) + sym(self.Z) + sym(Yt @ F)
        self.U = EYE + self.E
        trE = np.trace(self.E, axis1=-2, axis2=-1)
        self.trE = trE
        self.Minv = np.linalg.inv((2.0 + trE)[..., None, None] * EYE - self.E)

    def stress(self):
        return sym(self.F) - self.Z

    def nonlinear_stress(self):
        return -self.Z

    def _omega(self, G):
        Rt = np.swapaxes(self.R, -1, -2)
        X = Rt @ G
        x = _axial(X - np.swapaxes(X, -1, -2))
        return np.einsum("...ij,...j->...i", self.Minv, x)

    def d2(self, G):
        """D2W~(F)[G]."""
        w = self._omega(G)
        return G - self.R @ _from_axial(w)

    def _omega_minus_skew(self, G):
        """axial(Om(G)) - axial(skew G), evaluated without cancellation:
        x = 2 axial(skew G) + axial(Y^T G - G^T Y) and
        Minv - Id/2 = Minv (E - tr E Id)/2."""
        Yt = np.swapaxes(self.Y, -1, -2)
        X = Yt @ G
        xs = _axial(X - np.swapaxes(X, -1, -2))
        x = 2.0 * _axial(skew(G)) + xs
        Ex = np.einsum("...ij,...j->...i", self.E, x) - self.trE[..., None] * x
        return 0.5 * xs + 0.5 * np.einsum("...ij,...j->...i", self.Minv, Ex)

    def d2_minus_sym(self, G):
        """(D2W~(F) - D2W~(0))[G] with no cancellation of O(|G|) terms."""
        G = np.asarray(G, dtype=float)
        dw = self._omega_minus_skew(G)
        Om = skew(G) + _from_axial(dw)
        return -_from_axial(dw) - self.Y @ Om

    def d3(self, G, H):
        """D3W~(F)[G, H] = -D2R[G, H]."""
        R, U = self.R, self.U
        Rt = np.swapaxes(R, -1, -2)
        wG, wH = self._omega(G), self._omega(H)
        OG, OH = _from_axial(wG), _from_axial(wH)
        dU = -OH @ U + Rt @ H
        trdU = np.trace(dU, axis1=-2, axis2=-1)
        dM = trdU[..., None, None] * EYE - dU
        dX = -OH @ Rt @ G
        dx = _axial(dX - np.swapaxes(dX, -1, -2))
        dwG = np.einsum("...ij,...j->...i", self.Minv,
                        dx - np.einsum("...ij,...j->...i", dM, wG))
        return -(R @ OH @ OG + R @ _from_axial(dwG))


def D2W_tilde(F, G, delta=None):
    return Linearization(F, delta).d2(np.asarray(G, dtype=float))


def D3W_tilde(F, G, H, delta=None):
    return Linearization(F, delta).d3(np.asarray(G, dtype=float), np.asarray(H, dtype=float))


def D3_at_zero_skew_formula(A, B, Pm):
    """((A^T - A)^T sym B + (B^T - B)^T sym A) : P for skew P.

    For W~ = 1/2 dist^2 the contraction D3W~(0)[A, B] : P equals one half of
    this value (checked against finite differences of W~ in the tests)."""
    At = np.swapaxes(A, -1, -2)
    Bt = np.swapaxes(B, -1, -2)
    M = np.swapaxes(At - A, -1, -2) @ sym(B) + np.swapaxes(Bt - B, -1, -2) @ sym(A)
    return dot(M, Pm)


def D4W_tilde_fd(F, G, H, K, step=1e-4):
    """D4W~(F)[G, H, K] by central differences of D3W~ (no closed form)."""
    F = np.asarray(F, dtype=float)
    return (D3W_tilde(F + step * K, G, H) - D3W_tilde(F - step * K, G, H)) / (2 * step)


# ---------------------------------------------------------------- scaled norms

def scaled_inner(A, B, h):
    if h <= 0:
        raise ValueError("h must be positive")
    return dot(sym(A), sym(B)) / h ** 2 + dot(skew(A), skew(B))


def scaled_abs(A, h):
    return np.sqrt(scaled_inner(A, A, h))


def _unit_h(S, K, h):
    """Matrix with |.|_h = 1 built from unnormalized sym/skew parts."""
    A = h * sym(S) + skew(K)
    return A / scaled_abs(A, h)


def d3_operator_norm(h, G=None, samples=200, sweeps=30, seed=0):
    """Estimate sup |(D3W~(G) - c D3W~(0))[A, B] : C| over |A|_h = |B|_h = |C|_h = 1.

    Alternating maximization over the three arguments from random starts;
    with G = None the operator at zero is measured.
    """
    rng = np.random.default_rng(seed)
    lin = Linearization(np.zeros((3, 3)) if G is None else G)
    if G is not None:
        lin0 = Linearization(np.zeros((3, 3)))

    def op(A, B):
        out = lin.d3(A, B)
        if G is not None:
            out = out - lin0.d3(A, B)
        return out

    def dual_unit(M):
        # maximizer of M : C over |C|_h = 1 is the Riesz representative
        C = h ** 2 * sym(M) + skew(M)
        n = scaled_abs(C, h)
        return C / n if n > 0 else C, n

    best = 0.0
    for _ in range(samples):
        A = _unit_h(rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), h)
        B = _unit_h(rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), h)
        val = 0.0
        for _ in range(sweeps):
            C, val = dual_unit(op(A, B))
            # the form is symmetric in its three slots
            A, _ = dual_unit(op(B, C))
            B, val = dual_unit(op(C, A))
        best = max(best, float(val))
    return best


def d3_decomposition_check(G, h, epsilon=0.05, samples=50, seed=0):
    """Return (|D3W~(0)|_h, |D3W~(G) - D3W~(0)|) as measured operator norms."""
    G = np.asarray(G, dtype=float)
    if np.sqrt(dot(G, G)) > epsilon:
        raise DomainError(f"|G| exceeds the decomposition radius {epsilon}")
    lhs = d3_operator_norm(h, None, samples=samples, seed=seed)
    if not np.any(G):
        return lhs, 0.0
    diff = d3_operator_norm(1.0, G, samples=samples, seed=seed)
    return lhs, diff


@dataclass
class EnergyModel:
    delta: float = 0.1
    epsilon: float = 0.05

    def W(self, F):
        return W_tilde(F, self.delta)

    def DW(self, F):
        return DW_tilde(F, self.delta)

    def linearize(self, F):
        return Linearization(F, self.delta)
