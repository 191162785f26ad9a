"""Piecewise-linear finite element helpers on a cross-section mesh."""

import numpy as np
import scipy.sparse as sp

from .quadrature import triangle_rule


def barycentric_gradients(mesh):
    """Gradients of the three hat functions on every triangle, (T, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    return np.stack([-g1 - g2, g1, g2], axis=1)


def _assemble(mesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def mass_matrix(mesh):
    area = mesh.areas()
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _assemble(mesh, area[:, None, None] * local[None])


def stiffness_matrix(mesh):
    g = barycentric_gradients(mesh)
    local = np.einsum("tad,tbd->tab", g, g) * mesh.areas()[:, None, None]
    return _assemble(mesh, local)


def derivative_bilinear(mesh, alpha, beta):
    """Matrix of (d_alpha phi_b, d_beta phi_a), rows a, columns b."""
    g = barycentric_gradients(mesh)
    local = np.einsum("ta,tb->tab", g[:, :, beta], g[:, :, alpha]) * mesh.areas()[:, None, None]
    return _assemble(mesh, local)


def interpolation_matrix(mesh, degree=2):
    """Sparse map from nodal values to values at quadrature points."""
    bary, w = triangle_rule(degree)
    T, q = mesh.n_triangles, len(w)
    rows = np.arange(T * q).repeat(3)
    cols = np.repeat(mesh.triangles, q, axis=0).ravel()
    vals = np.tile(bary, (T, 1)).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(T * q, mesh.n_nodes))


def gradient_matrices(mesh, degree=2):
    """Sparse maps from nodal values to d/dx2 and d/dx3 at quadrature points."""
    _, w = triangle_rule(degree)
    g = barycentric_gradients(mesh)
    T, q = mesh.n_triangles, len(w)
    rows = np.arange(T * q).repeat(3)
    cols = np.repeat(mesh.triangles, q, axis=0).ravel()
    out = []
    for d in range(2):
        vals = np.repeat(g[:, :, d], q, axis=0).ravel()
        out.append(sp.csr_matrix((vals, (rows, cols)), shape=(T * q, mesh.n_nodes)))
    return out


def quadrature_weights(mesh, degree=2):
    _, w = triangle_rule(degree)
    return (mesh.areas()[:, None] * w[None, :]).ravel()


def load_vector(mesh, func, degree=4):
    """(func, phi_a) for a callable func(x2, x3) evaluated at quadrature points."""
    pts, w = mesh.quadrature(degree)
    bary, _ = triangle_rule(degree)
    vals = func(pts[..., 0], pts[..., 1]) * w
    local = np.einsum("tq,qk->tk", vals, bary)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)


def elementwise_load(mesh, values):
    """(c, phi_a) for c piecewise constant per triangle."""
    local = (values * mesh.areas() / 3.0)[:, None].repeat(3, axis=1)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_nodes)


def element_gradient(mesh, values):
    """Piecewise-constant gradient (T, 2) of a nodal field."""
    g = barycentric_gradients(mesh)
    return np.einsum("tad,ta->td", g, values[mesh.triangles])


def recover_gradient(mesh, values):
    """Nodal gradient by area-weighted averaging of element gradients."""
    ge = element_gradient(mesh, values)
    area = mesh.areas()
    t = mesh.triangles.ravel()
    w = np.bincount(t, np.repeat(area, 3), minlength=mesh.n_nodes)
    out = np.empty((mesh.n_nodes, 2))
    for d in range(2):
        out[:, d] = np.bincount(t, np.repeat(area * ge[:, d], 3), minlength=mesh.n_nodes) / w
    return out


def boundary_mass(mesh):
    """Mass matrix of the boundary curve (P1 on edges)."""
    e = mesh.boundary_edges
    d = mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    local = (np.ones((2, 2)) + np.eye(2)) / 6.0
    vals = length[:, None, None] * local[None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def edge_lengths(mesh):
    d = mesh.nodes[mesh.boundary_edges[:, 1]] - mesh.nodes[mesh.boundary_edges[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


def boundary_edge_triangles(mesh):
    """Index of the triangle owning each boundary edge."""
    t = mesh.triangles
    owner = {}
    for k, tri in enumerate(t):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owner[(a, b)] = k
    return np.array([owner[(a, b)] for a, b in mesh.boundary_edges])
