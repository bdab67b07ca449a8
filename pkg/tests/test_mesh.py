import numpy as np
import pytest
from hypothesis import given, strategies as st

from physarum.errors import ContractError, InvalidGeometryError
from physarum.mesh import (
    TriMesh,
    read_mesh,
    refine_uniform,
    structured_rect_mesh,
    triangle_geometry,
    write_mesh,
)


def jittered_mesh(nx, ny, seed):
    """Structured mesh with interior nodes moved by up to 20% of a cell."""
    m = structured_rect_mesh(nx, ny)
    rng = np.random.default_rng(seed)
    nodes = m.nodes.copy()
    inner = ~m.boundary_nodes
    nodes[inner] += rng.uniform(-0.2, 0.2, (inner.sum(), 2)) / max(nx, ny)
    return TriMesh(nodes, m.triangles)


@pytest.mark.parametrize("n, nodes, tris", [(128, 16641, 32768), (1, 4, 2), (2, 9, 8)])
def test_structured_counts(n, nodes, tris):
    m = structured_rect_mesh(n, n)
    assert (m.n_nodes, m.n_triangles) == (nodes, tris)
    assert np.all(m.areas > 0)


def test_two_by_two_edge_count_follows_euler():
    m = structured_rect_mesh(2, 2)
    assert m.n_edges == 16 == m.n_nodes + m.n_triangles - 1


def test_zero_size_bbox_rejected():
    with pytest.raises(InvalidGeometryError):
        structured_rect_mesh(2, 2, bbox=(0, 0, 0, 1))


def test_bad_counts_rejected():
    with pytest.raises(ContractError):
        structured_rect_mesh(0, 3)


def test_clockwise_triangle_rejected():
    with pytest.raises(InvalidGeometryError):
        TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_degenerate_triangle_rejected():
    with pytest.raises(InvalidGeometryError):
        TriMesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


@given(st.integers(1, 7), st.integers(1, 7))
def test_edge_incidence_and_euler(nx, ny):
    m = structured_rect_mesh(nx, ny, bbox=(-1.0, 2.0, 0.5, 3.0))
    assert m.euler_characteristic() == 1
    et = m.edge_triangles
    boundary = et[:, 1] < 0
    assert np.array_equal(np.flatnonzero(boundary), m.boundary_edges)
    assert boundary.sum() == 2 * (nx + ny)
    # every triangle sees each of its three edges, every edge its 1 or 2 triangles
    counts = np.bincount(m.triangle_edges.ravel(), minlength=m.n_edges)
    assert np.array_equal(counts, np.where(boundary, 1, 2))
    for t in range(m.n_triangles):
        for e in m.triangle_edges[t]:
            assert t in et[e]
            assert set(m.edges[e]) <= set(m.triangles[t])


def test_refine_two_triangle_square():
    pair = refine_uniform(structured_rect_mesh(1, 1))
    assert pair.coarse.n_edges == 5
    assert (pair.fine.n_nodes, pair.fine.n_triangles) == (9, 8)


def test_refine_maze_resolution_counts():
    pair = refine_uniform(structured_rect_mesh(128, 128))
    assert pair.coarse.n_edges == 49408
    assert (pair.fine.n_nodes, pair.fine.n_triangles) == (66049, 131072)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_refinement_invariants(nx, ny, seed):
    coarse = jittered_mesh(nx, ny, seed)
    pair = refine_uniform(coarse)
    fine = pair.fine
    assert fine.n_nodes == coarse.n_nodes + coarse.n_edges
    assert fine.n_triangles == 4 * coarse.n_triangles
    assert np.array_equal(fine.nodes[: coarse.n_nodes], coarse.nodes)
    np.testing.assert_allclose(fine.areas[pair.child].sum(axis=1), coarse.areas, rtol=1e-13)
    assert np.array_equal(pair.parent[pair.child], np.repeat(np.arange(coarse.n_triangles)[:, None], 4, 1))
    # no duplicated nodes
    assert len(np.unique(np.round(fine.nodes, 12), axis=0)) == fine.n_nodes
    # child vertices are parent vertices or midpoints of parent edges
    for s in range(coarse.n_triangles):
        corners = coarse.nodes[coarse.triangles[s]]
        allowed = np.vstack([corners, 0.5 * (corners + np.roll(corners, -1, axis=0))])
        for t in pair.child[s]:
            for p in fine.nodes[fine.triangles[t]]:
                assert np.min(np.abs(allowed - p).sum(axis=1)) < 1e-14


def test_unit_right_triangle_geometry():
    m = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    area, grads = triangle_geometry(m, 0)
    assert area == 0.5
    np.testing.assert_array_equal(grads, [[-1, -1], [1, 0], [0, 1]])


def test_triangle_geometry_index_checked():
    m = structured_rect_mesh(1, 1)
    with pytest.raises(ContractError):
        triangle_geometry(m, 2)


@given(st.integers(0, 2**32 - 1))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-1, 1, (3, 2))
    if (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]) < 0:
        p = p[[0, 2, 1]]
    m = TriMesh(p, [[0, 1, 2]])
    if m.areas[0] < 1e-3:
        return
    area, grads = triangle_geometry(m, 0)
    np.testing.assert_allclose(grads.sum(axis=0), 0.0, atol=1e-12)
    # affine interpolant of random nodal values; central differences are exact up to rounding
    vals = rng.normal(size=3)
    centroid = p.mean(axis=0)

    def interp(x):
        lam = np.linalg.solve(np.vstack([p.T, np.ones(3)]), np.append(x, 1.0))
        return lam @ vals

    h = 1e-5
    fd = [(interp(centroid + h * e) - interp(centroid - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(fd, vals @ grads, atol=1e-8 * max(1.0, np.abs(vals @ grads).max()))
    np.testing.assert_allclose(m.gradients[0], grads, rtol=1e-13, atol=1e-13)


def test_mesh_file_round_trip(tmp_path):
    m = jittered_mesh(3, 2, 5)
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)


def test_mesh_file_bad_header(tmp_path):
    (tmp_path / "m.txt").write_text("vertices 3\n")
    with pytest.raises(InvalidGeometryError):
        read_mesh(tmp_path / "m.txt")


def test_lumped_mass_sums_to_area():
    m = jittered_mesh(4, 3, 0)
    assert m.lumped_mass.sum() == pytest.approx(1.0, rel=1e-14)
