import math

import numpy as np
import pytest

from rodlimit import geometry
from rodlimit.harness.rates import fit_rate


def test_square_area_exact():
    m = geometry.build_cross_section({"shape": "rectangle", "width": 1.0, "height": 1.0}, 0.05)
    assert 600 <= m.n_triangles <= 1000
    assert abs(m.areas().sum() - 1.0) <= 1e-10


def test_disk_area_converges_second_order():
    hs, errs = [], []
    for r in (0.2, 0.1, 0.05):
        m = geometry.build_cross_section({"shape": "disk", "radius": 1 / math.sqrt(math.pi)}, r)
        hs.append(r)
        errs.append(abs(m.areas().sum() - 1.0))
    assert fit_rate(hs, errs).slope >= 1.8
    assert errs[-1] < 1e-2


def test_polygon_with_two_vertices_rejected(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0\n1 0\n")
    with pytest.raises(ValueError):
        geometry.build_cross_section({"shape": "polygon-file", "path": str(p)}, 0.1)


def test_polygon_file_roundtrip(tmp_path):
    p = tmp_path / "tri.txt"
    p.write_text("0 0\n2 0\n0 1\n")
    m = geometry.build_cross_section({"shape": "polygon-file", "path": str(p)}, 0.1)
    assert abs(m.areas().sum() - 1.0) <= 1e-10


def test_unknown_shape_and_bad_resolution():
    with pytest.raises(ValueError):
        geometry.build_cross_section({"shape": "star"}, 0.1)
    with pytest.raises(ValueError):
        geometry.build_cross_section({"shape": "disk"}, 0.0)


def test_translated_square_recentred():
    m = geometry.build_cross_section(
        {"shape": "rectangle", "width": 1.0, "height": 1.0, "center": (0.3, -0.2)}, 0.1)
    n, (shift, angle, scale) = geometry.normalize_section(m)
    np.testing.assert_allclose(shift, (-0.3, 0.2), atol=1e-12)
    mom = geometry.section_moments(n)
    assert abs(mom.I2 - 1 / 12) <= 1e-12 and abs(mom.I3 - 1 / 12) <= 1e-12


def test_rotated_ellipse_mixed_moment_removed():
    m = geometry.build_cross_section({"shape": "ellipse", "a": 1.0, "b": 0.4, "angle": 30.0}, 0.08)
    raw = geometry.section_moments(m)
    # oracle: eigenvalues of the centred second-moment matrix, rescaled to unit area
    c = np.array(raw.first) / raw.area
    S = np.array([[raw.I2 - raw.area * c[0] ** 2, raw.mixed - raw.area * c[0] * c[1]],
                  [raw.mixed - raw.area * c[0] * c[1], raw.I3 - raw.area * c[1] ** 2]])
    lam = np.sort(np.linalg.eigvalsh(S)) / raw.area ** 2
    n, _ = geometry.normalize_section(m)
    mom = geometry.section_moments(n)
    assert abs(mom.mixed) <= 1e-10
    np.testing.assert_allclose(sorted([mom.I2, mom.I3]), lam, rtol=1e-10)


def test_normalized_disk_is_fixed_point(disk):
    n, (shift, angle, scale) = geometry.normalize_section(disk)
    np.testing.assert_allclose(shift, 0.0, atol=1e-12)
    assert abs(angle) <= 1e-12 and abs(scale - 1.0) <= 1e-12
    np.testing.assert_allclose(n.nodes, disk.nodes, atol=1e-12)


def test_unit_square_moments(square):
    mom = geometry.section_moments(square)
    assert abs(mom.I2 - 1 / 12) <= 1e-12
    assert abs(mom.I3 - 1 / 12) <= 1e-12


def test_disk_moments_converge_to_closed_form():
    hs, errs = [], []
    for r in (0.2, 0.1, 0.05):
        mom = geometry.section_moments(geometry.section_from_config({"shape": "disk", "resolution": r}))
        hs.append(r)
        errs.append(abs(mom.I2 - 1 / (4 * math.pi)))
        assert abs(mom.I2 - mom.I3) <= 1e-10
    assert fit_rate(hs, errs).slope >= 2.0
    assert errs[-1] < 1e-3


def test_normalized_mesh_invariants(disk):
    mom = geometry.section_moments(disk)
    assert abs(mom.area - 1.0) <= 1e-10
    assert max(abs(mom.first[0]), abs(mom.first[1]), abs(mom.mixed)) <= 1e-10
    assert np.all(disk.areas() > 0)
    np.testing.assert_allclose(np.hypot(*disk.normals.T), 1.0, atol=1e-12)


def test_normals_point_outward(disk):
    mid = 0.5 * (disk.nodes[disk.boundary_edges[:, 0]] + disk.nodes[disk.boundary_edges[:, 1]])
    assert np.all(np.sum(mid * disk.normals, axis=1) > 0)


def test_export_mesh(tmp_path, disk):
    p = tmp_path / "m.dat"
    geometry.export_mesh(disk, p)
    text = p.read_text()
    assert f"# nodes {disk.n_nodes}" in text and "# boundary_edges" in text
