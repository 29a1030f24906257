import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasefield.errors import ConfigurationError, MeshError
from phasefield.mesh import Mesh, check_delaunay, generate_uniform


def cot_at(p, q, r):
    """Cotangent of the angle at p in triangle (p, q, r), via atan2 (independent path)."""
    a = math.atan2(q[1] - p[1], q[0] - p[0])
    b = math.atan2(r[1] - p[1], r[0] - p[0])
    ang = abs((b - a + math.pi) % (2 * math.pi) - math.pi)
    return 1.0 / math.tan(ang)


def test_counts_smallest_grid():
    m = generate_uniform(1, 1)
    assert (m.n_nodes, m.n_elements, len(m.edges)) == (4, 2, 5)


def test_counts_two_by_two():
    m = generate_uniform(2, 2)
    assert (m.n_nodes, m.n_elements) == (9, 8)
    assert len(m.boundary_nodes) == 8


def test_h_is_element_diameter():
    m = generate_uniform(133, 133, (-1, -1, 1, 1))
    assert m.h == pytest.approx(2 * math.sqrt(2) / 133, rel=1e-12)
    assert m.h == pytest.approx(0.0213, abs=1e-4)


def test_uniform_edge_weights_match_cotangent_oracle():
    m = generate_uniform(1, 1)
    nodes = m.nodes
    expected = {}
    for tri in m.elements:
        for j in range(3):
            a, b, c = tri[j], tri[(j + 1) % 3], tri[(j + 2) % 3]
            key = tuple(sorted((b, c)))
            expected[key] = expected.get(key, 0.0) + 0.5 * cot_at(nodes[a], nodes[b], nodes[c])
    for (i, j), w in zip(m.edges, m.edge_weights):
        assert w == pytest.approx(expected[(min(i, j), max(i, j))], abs=1e-14)
    # the diagonal faces right angles, the legs face 45 degree angles
    diag = [w for (i, j), w in zip(m.edges, m.edge_weights) if {i, j} == {0, 3}]
    assert diag == [pytest.approx(0.0, abs=1e-15)]
    others = [w for (i, j), w in zip(m.edges, m.edge_weights) if {i, j} != {0, 3}]
    assert others == pytest.approx([0.5] * 4)


def test_interior_axis_edges_sum_both_sides():
    m = generate_uniform(2, 2)
    r = check_delaunay(m)
    assert r.all_passed
    interior = m.edge_element_count == 2
    vals = np.sort(np.round(m.edge_weights[interior], 12))
    # 4 interior diagonals (weight 0) and 4 interior axis edges (weight 1)
    assert list(vals) == [0, 0, 0, 0, 1, 1, 1, 1]


def test_obtuse_pair_fails_delaunay():
    # two triangles sharing edge (0,1); apexes at angle 100 degrees
    half = math.tan(math.radians(50))
    nodes = np.array([[-half, 0.0], [half, 0.0], [0.0, -1.0], [0.0, 1.0]])
    m = Mesh.from_arrays(nodes, np.array([[0, 2, 1], [0, 1, 3]]))
    r = check_delaunay(m)
    shared = [e for e, (i, j) in enumerate(m.edges) if {i, j} == {0, 1}][0]
    assert not r.passed[shared]
    assert shared in r.failing_edges
    assert m.edge_weights[shared] == pytest.approx(1 / math.tan(math.radians(100)))


def test_equilateral_mesh_passes():
    s = math.sqrt(3) / 2
    nodes = np.array([[0, 0], [1, 0], [0.5, s], [1.5, s]])
    m = Mesh.from_arrays(nodes, np.array([[0, 1, 2], [1, 3, 2]]))
    assert check_delaunay(m).all_passed


def test_clockwise_element_rejected():
    with pytest.raises(MeshError, match="element 0"):
        Mesh.from_arrays(np.array([[0, 0], [1, 0], [0, 1]]), np.array([[0, 2, 1]]))


@pytest.mark.parametrize("args", [(0, 1), (1, 0), (2, 2, (0, 0, 0, 1)), (2, 2, (1, 0, 0, 1))])
def test_invalid_generation(args):
    with pytest.raises(ConfigurationError):
        generate_uniform(*args)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.1, 5))
def test_area_sums_to_rectangle(nx, ny, x0, y0, w, h):
    m = generate_uniform(nx, ny, (x0, y0, x0 + w, y0 + h))
    assert m.areas.sum() == pytest.approx(w * h, rel=1e-12)
    assert np.all(m.areas > 0)
    counts = np.bincount(m.edge_element_count)
    assert set(np.flatnonzero(counts)) <= {1, 2}


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_square_cells_are_delaunay(nx, ny, seed):
    m = generate_uniform(nx, ny, (0, 0, nx / 4, ny / 4))
    assert check_delaunay(m).all_passed
