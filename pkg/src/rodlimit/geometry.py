"""Cross-section meshes of S: construction, normalization and moments.

Meshes are plain containers of node coordinates and triangle indices.
Normalization moves the section so that its barycenter is at the origin,
its principal axes are the coordinate axes and its area is one.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.spatial import Delaunay
from matplotlib.path import Path

from .quadrature import triangle_rule

SHAPES = ("disk", "rectangle", "ellipse", "polygon-file")


@dataclass(frozen=True)
class CrossSectionMesh:
    nodes: np.ndarray            # (N, 2)
    triangles: np.ndarray        # (T, 3), counter-clockwise
    boundary_edges: np.ndarray   # (E, 2), oriented so the domain lies to the left
    normals: np.ndarray          # (E, 2) outward unit normals
    shape_tag: str
    transform: tuple = None      # (translation, angle, scale) once normalized

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def boundary_nodes(self):
        return np.unique(self.boundary_edges)

    @property
    def interior_nodes(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    def areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def quadrature(self, degree=4):
        """Physical quadrature points (T, q, 2) and weights (T, q)."""
        bary, w = triangle_rule(degree)
        p = self.nodes[self.triangles]
        pts = np.einsum("qk,tkd->tqd", bary, p)
        return pts, self.areas()[:, None] * w[None, :]


@dataclass(frozen=True)
class SectionMoments:
    I2: float
    I3: float
    mixed: float
    first: tuple
    area: float


# ---------------------------------------------------------------- builders

def _boundary_from_triangles(nodes, tris):
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = np.asarray(inv).ravel()
    bedges = edges[counts[inv] == 1]
    d = nodes[bedges[:, 1]] - nodes[bedges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return bedges, normals


def _orient(nodes, tris):
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _dedupe(nodes, tris, tol=1e-9):
    key = np.round(nodes / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = np.asarray(inv).ravel()
    return nodes[first], inv[tris]


def _finish(nodes, tris, tag):
    tris = _orient(nodes, np.asarray(tris, dtype=np.int64))
    bedges, normals = _boundary_from_triangles(nodes, tris)
    mesh = CrossSectionMesh(nodes, tris, bedges, normals, tag)
    if not np.all(mesh.areas() > 0):
        raise ValueError("degenerate triangle in generated mesh")
    return mesh


def _merge_rings(inner, outer, a_in, a_out):
    """Triangulate the strip between two arcs by walking the angles."""
    tris = []
    i = j = 0
    while i < len(inner) - 1 or j < len(outer) - 1:
        adv_outer = i == len(inner) - 1 or (
            j < len(outer) - 1 and a_out[j + 1] <= a_in[i + 1] + 1e-14)
        if adv_outer:
            tris.append((inner[i], outer[j], outer[j + 1]))
            j += 1
        else:
            tris.append((inner[i], outer[j], inner[i + 1]))
            i += 1
    return tris


def _sector_mesh(resolution):
    """Unit-disk sector 0 <= theta <= pi/4, rings of nodes; the radial
    spacing is the resolution."""
    nr = max(2, int(math.ceil(1.0 / resolution - 1e-6)))
    nodes = [(0.0, 0.0)]
    prev_ids, prev_ang = [0], np.array([0.0])
    tris = []
    for i in range(1, nr + 1):
        r = i / nr
        q = i   # ring i carries 8 i edges: self-similar under refinement
        ang = np.linspace(0.0, 0.25 * math.pi, q + 1)
        ids = list(range(len(nodes), len(nodes) + q + 1))
        nodes.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        if len(prev_ids) == 1:
            tris.extend((prev_ids[0], ids[k], ids[k + 1]) for k in range(q))
        else:
            tris.extend(_merge_rings(prev_ids, ids, prev_ang, ang))
        prev_ids, prev_ang = ids, ang
    return np.array(nodes), np.array(tris)


def _symmetric_disk(resolution):
    p, t = _sector_mesh(resolution)
    # mirror across the diagonal, then rotate the quadrant by quarter turns
    parts_p, parts_t = [p, p[:, ::-1]], [t, t]
    quad_p = np.concatenate(parts_p)
    quad_t = np.concatenate([parts_t[0], parts_t[1] + len(p)])
    all_p, all_t = [], []
    for k in range(4):
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
        rot = np.array([[c, -s], [s, c]], dtype=float)
        all_t.append(quad_t + sum(len(x) for x in all_p))
        all_p.append(quad_p @ rot.T)
    nodes, tris = _dedupe(np.concatenate(all_p), np.concatenate(all_t))
    # put boundary nodes exactly on the unit circle
    r = np.hypot(nodes[:, 0], nodes[:, 1])
    on_circle = np.abs(r - 1.0) < 1e-8
    nodes[on_circle] /= r[on_circle, None]
    return nodes, tris


def _rectangle(width, height, resolution):
    nx = 2 * max(1, int(math.ceil(width / resolution / 2)))
    ny = 2 * max(1, int(math.ceil(height / resolution / 2)))
    xs = np.linspace(-0.5 * width, 0.5 * width, nx + 1)
    ys = np.linspace(-0.5 * height, 0.5 * height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    tris = []
    # union-jack pattern: mesh symmetric under both axis reflections
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return nodes, np.array(tris)


def read_polygon(path):
    """Read a polygon file: one 'x y' vertex per line, counter-clockwise."""
    verts = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if line:
                x, y = line.split()[:2]
                verts.append((float(x), float(y)))
    verts = np.array(verts, dtype=float).reshape(-1, 2)
    if len(verts) >= 2 and np.allclose(verts[0], verts[-1]):
        verts = verts[:-1]
    return verts


def polygon_area(verts):
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _polygon(verts, resolution):
    if len(verts) < 3 or abs(polygon_area(verts)) < 1e-14:
        raise ValueError("polygon has fewer than 3 vertices or zero area")
    if polygon_area(verts) < 0:
        verts = verts[::-1]
    bnd = []
    for k in range(len(verts)):
        a, b = verts[k], verts[(k + 1) % len(verts)]
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / resolution)))
        s = np.arange(n)[:, None] / n
        bnd.append(a + s * (b - a))
    bnd = np.concatenate(bnd)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    step = resolution * math.sqrt(3) / 2
    pts = []
    for row, y in enumerate(np.arange(lo[1] + step, hi[1], step)):
        off = 0.5 * resolution * (row % 2)
        pts.extend((x, y) for x in np.arange(lo[0] + off, hi[0], resolution))
    path = Path(verts)
    pts = np.array(pts).reshape(-1, 2)
    if len(pts):
        inside = path.contains_points(pts, radius=-0.3 * resolution)
        pts = pts[inside]
        if len(pts):
            # drop points too close to the boundary samples
            d = np.min(np.linalg.norm(pts[:, None, :] - bnd[None, :, :], axis=2), axis=1)
            pts = pts[d > 0.45 * resolution]
    nodes = np.concatenate([bnd, pts])
    tris = Delaunay(nodes).simplices
    cent = nodes[tris].mean(axis=1)
    keep = path.contains_points(cent)
    return nodes, tris[keep]


def build_cross_section(shape_spec, resolution):
    """Build a (not yet normalized) triangulation of the section.

    shape_spec is a dict with key 'shape' in SHAPES and parameters:
    disk: radius, center; rectangle: width, height, center, angle;
    ellipse: a, b, center, angle (degrees); polygon-file: path.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    spec = dict(shape_spec)
    shape = spec.get("shape", "disk")
    center = np.asarray(spec.get("center", (0.0, 0.0)), dtype=float)
    angle = math.radians(float(spec.get("angle", 0.0)))
    if shape == "disk":
        radius = float(spec.get("radius", 1.0 / math.sqrt(math.pi)))
        if radius <= 0:
            raise ValueError("disk radius must be positive")
        nodes, tris = _symmetric_disk(resolution / radius)
        nodes = nodes * radius
    elif shape == "ellipse":
        a, b = float(spec.get("a", 1.0)), float(spec.get("b", 0.5))
        if a <= 0 or b <= 0:
            raise ValueError("ellipse axes must be positive")
        nodes, tris = _symmetric_disk(resolution / max(a, b))
        nodes = nodes * np.array([a, b])
    elif shape == "rectangle":
        w = float(spec.get("width", spec.get("side", 1.0)))
        hgt = float(spec.get("height", w))
        if w <= 0 or hgt <= 0:
            raise ValueError("rectangle sides must be positive")
        nodes, tris = _rectangle(w, hgt, resolution)
    elif shape == "polygon-file":
        verts = read_polygon(spec["path"])
        nodes, tris = _polygon(verts, resolution)
        center = np.zeros(2)
        angle = 0.0
    else:
        raise ValueError(f"unknown shape {shape!r}")
    if angle:
        c, s = math.cos(angle), math.sin(angle)
        nodes = nodes @ np.array([[c, -s], [s, c]]).T
    nodes = nodes + center
    return _finish(nodes, tris, shape)


# ---------------------------------------------------------------- moments

def _raw_moments(mesh):
    pts, w = mesh.quadrature(4)
    x, y = pts[..., 0], pts[..., 1]
    return (float(w.sum()), float((w * x).sum()), float((w * y).sum()),
            float((w * x * x).sum()), float((w * y * y).sum()), float((w * x * y).sum()))


def section_moments(mesh):
    area, m2, m3, I2, I3, mixed = _raw_moments(mesh)
    return SectionMoments(I2=I2, I3=I3, mixed=mixed, first=(m2, m3), area=area)


def normalize_section(mesh, tol=1e-13):
    """Translate, rotate and scale so that |S| = 1 and the moment
    conditions hold. Returns (mesh, (translation, angle, scale))."""
    area, m2, m3, _, _, _ = _raw_moments(mesh)
    shift = -np.array([m2, m3]) / area
    nodes = mesh.nodes + shift
    tmp = replace(mesh, nodes=nodes)
    _, _, _, I2, I3, mixed = _raw_moments(tmp)
    # smallest rotation that removes the mixed moment
    if abs(mixed) <= tol * (I2 + I3):
        theta = 0.0
    elif abs(I2 - I3) <= tol * (I2 + I3):
        theta = math.copysign(0.25 * math.pi, mixed)
    else:
        theta = 0.5 * math.atan(2.0 * mixed / (I2 - I3))
    if theta:
        c, s = math.cos(theta), math.sin(theta)
        # rotate coordinates by -theta
        nodes = nodes @ np.array([[c, s], [-s, c]]).T
    scale = 1.0 / math.sqrt(area)
    if abs(scale - 1.0) > 1e-15:
        nodes = nodes * scale
    # exact recentering after rotation/scale roundoff
    tmp = replace(mesh, nodes=nodes)
    a2, n2, n3, _, _, _ = _raw_moments(tmp)
    nodes = nodes - np.array([n2, n3]) / a2
    transform = (tuple(shift), theta, scale)
    bedges, normals = _boundary_from_triangles(nodes, mesh.triangles)
    out = CrossSectionMesh(nodes, mesh.triangles, bedges, normals,
                           mesh.shape_tag, transform)
    return out, transform


def export_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.16e} {y:.16e}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")
        fh.write(f"# boundary_edges {len(mesh.boundary_edges)}\n")
        for (a, b), (nx, ny) in zip(mesh.boundary_edges, mesh.normals):
            fh.write(f"{a} {b} {nx:.16e} {ny:.16e}\n")


def section_from_config(cfg):
    """Build and normalize the section described by a config mapping."""
    spec = {k: v for k, v in cfg.items() if k != "resolution"}
    mesh = build_cross_section(spec, float(cfg.get("resolution", 0.1)))
    return normalize_section(mesh)[0]
