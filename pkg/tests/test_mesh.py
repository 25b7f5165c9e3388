import numpy as np
import pytest

from morphofem import mesh as M
from morphofem.errors import InvalidGeometry, MeshValidationError, PairingFailure


@pytest.fixture(scope="module")
def box():
    return M.build_bilayer_box(2.0, 3.0, 2.0, 0.5, 2, 3, 2, 1)


def tet_volumes(mesh):
    X = mesh.cell_coordinates()
    a, b, c, d = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return np.einsum("ei,ei->e", b - a, np.cross(c - a, d - a)) / 6.0


def test_counts(box):
    nx, ny, nz = 2, 3, 3
    assert box.n_cells == 6 * nx * ny * nz
    assert box.n_nodes == (2 * nx + 1) * (2 * ny + 1) * (2 * nz + 1)


def test_volumes_positive_and_sum(box):
    v = tet_volumes(box)
    assert np.all(v > 0)
    assert v.sum() == pytest.approx(2.0 * 3.0 * 2.0, rel=1e-13)


def test_region_volumes(box):
    v = tet_volumes(box)
    assert v[box.region == M.FILM].sum() == pytest.approx(2.0 * 3.0 * 0.5, rel=1e-13)
    assert v[box.region == M.SUBSTRATE].sum() == pytest.approx(2.0 * 3.0 * 1.5, rel=1e-13)


def test_film_cells_above_interface(box):
    zc = box.cell_coordinates()[:, :4, 2].mean(axis=1)
    assert np.all(zc[box.region == M.FILM] > 1.5)
    assert np.all(zc[box.region == M.SUBSTRATE] < 1.5)


def test_edge_nodes_are_midpoints(box):
    X = box.cell_coordinates()
    for m, (a, b) in enumerate(M.TET_EDGES):
        np.testing.assert_allclose(X[:, 4 + m], 0.5 * (X[:, a] + X[:, b]), atol=1e-14)


def test_validate_clean(box):
    assert M.validate_mesh(box) == []
    M.check_mesh(box)


def test_validate_detects_inverted_cell(box):
    bad = M.Mesh(box.nodes, box.cells.copy(), box.region, box.facets, box.meta)
    bad.cells[0, [1, 2]] = bad.cells[0, [2, 1]]
    bad.cells[0, [4, 6]] = bad.cells[0, [6, 4]]
    bad.cells[0, [8, 7]] = bad.cells[0, [7, 8]]
    problems = M.validate_mesh(bad)
    assert any("cell 0" in p for p in problems)
    with pytest.raises(MeshValidationError):
        M.check_mesh(bad)


def test_facets_on_planes(box):
    lo, hi = box.bounds
    planes = {"bottom": (2, lo[2]), "top": (2, hi[2]), "x_min": (0, lo[0]), "x_max": (0, hi[0])}
    planes.update({"y_min": (1, lo[1]), "y_max": (1, hi[1])})
    for name, (axis, val) in planes.items():
        nodes = box.facet_nodes(name)
        assert np.allclose(box.nodes[nodes, axis], val)
    # a face of a 2 x 3 x 3 box grid has 2 * nx * ny triangles
    assert len(box.facets["top"]) == 2 * 2 * 3


def test_periodic_pairs_translate(box):
    pp = M.find_periodic_pairs(box, ("x", "y"))
    for f, l, axis in pp.pairs:
        d = box.nodes[f] - box.nodes[l]
        expected = np.zeros(3)
        expected[axis] = pp.translation["xy"[axis]]
        np.testing.assert_allclose(d, expected, atol=1e-12)
    rep = pp.representative(box.n_nodes)
    assert np.all(rep[rep] == rep)
    # corner column (Lx, Ly, z) resolves to (0, 0, z)
    corner = np.flatnonzero(np.isclose(box.nodes[:, 0], 2.0) & np.isclose(box.nodes[:, 1], 3.0))
    np.testing.assert_allclose(box.nodes[rep[corner], :2], 0.0, atol=1e-14)


def test_pairing_failure_on_jittered_face():
    m = M.build_bilayer_box(1.0, 1.0, 1.0, 0.5, 1, 1, 1, 1)
    nodes = m.nodes.copy()
    k = np.flatnonzero(np.isclose(nodes[:, 0], 1.0))[3]
    nodes[k, 1] += 1e-3
    with pytest.raises(PairingFailure):
        M.find_periodic_pairs(M.Mesh(nodes, m.cells, m.region, m.facets, m.meta), ("x",))


@pytest.mark.parametrize(
    "args",
    [(0.0, 1, 1, 0.5, 1, 1, 1, 1), (1, 1, 1, 1.0, 1, 1, 1, 1), (1, 1, 1, 0.5, 0, 1, 1, 1), (1, 1, 1, 0.5, 1.5, 1, 1, 1)],
)
def test_invalid_geometry(args):
    with pytest.raises(InvalidGeometry):
        M.build_bilayer_box(*args)


def test_json_roundtrip(tmp_path, box):
    path = tmp_path / "mesh.json"
    M.write_mesh_json(box, path)
    back = M.read_mesh_json(path)
    np.testing.assert_array_equal(back.nodes, box.nodes)
    np.testing.assert_array_equal(back.cells, box.cells)
    np.testing.assert_array_equal(back.region, box.region)
    for name in M.FACET_NAMES:
        np.testing.assert_array_equal(back.facets[name], box.facets[name])
