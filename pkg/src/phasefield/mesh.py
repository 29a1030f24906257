"""Triangulations of rectangles and the cotangent edge weights.

The P1 stiffness form can be written edge by edge,

    (grad u, grad v) = sum_K sum_{E in K} w_E^K (u_i - u_j)(v_i - v_j),

with ``w_E^K = cot(theta_E^K) / 2`` where ``theta_E^K`` is the angle of
``K`` opposite ``E``.  A mesh whose summed weights are all nonnegative is
Delaunay, which is what the discrete maximum principle needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, MeshError

__all__ = ["Mesh", "DelaunayReport", "generate_uniform", "check_delaunay"]

# local edge m of a triangle joins the two vertices other than m
_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


def _signed_areas(nodes, elements):
    p0, p1, p2 = (nodes[elements[:, i]] for i in range(3))
    e1 = p1 - p0
    e2 = p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _half_cotangents(nodes, elements):
    """Half cotangent of the angle at each local vertex, shape (ne, 3)."""
    out = np.empty(elements.shape, dtype=float)
    for m in range(3):
        a = nodes[elements[:, m]]
        b = nodes[elements[:, (m + 1) % 3]]
        c = nodes[elements[:, (m + 2) % 3]]
        u = b - a
        v = c - a
        dot = u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1]
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        out[:, m] = 0.5 * dot / cross
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation.

    Build through :meth:`from_arrays` or :func:`generate_uniform`; the
    derived arrays (edges, weights, areas, boundary) are computed there.
    """

    nodes: np.ndarray
    elements: np.ndarray
    edges: np.ndarray
    edge_weights: np.ndarray
    boundary_nodes: np.ndarray
    areas: np.ndarray
    element_weights: np.ndarray
    element_edges: np.ndarray
    edge_element_count: np.ndarray
    rect: tuple | None = field(default=None)

    @classmethod
    def from_arrays(cls, nodes, elements, rect=None) -> "Mesh":
        nodes = np.array(nodes, dtype=float)
        elements = np.array(elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (n, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError("elements must have shape (m, 3)")
        if elements.min() < 0 or elements.max() >= len(nodes):
            raise MeshError("element references a node index out of range")

        areas = _signed_areas(nodes, elements)
        scale = max(np.ptp(nodes[:, 0]), np.ptp(nodes[:, 1])) ** 2
        bad = np.flatnonzero(areas <= 1e-14 * scale)
        if bad.size:
            raise MeshError(
                f"element {bad[0]} has nonpositive signed area {areas[bad[0]]:.3e}"
                " (degenerate or clockwise)"
            )

        local = elements[:, _LOCAL_EDGES]  # (ne, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if counts.max() > 2:
            raise MeshError("an edge is shared by more than two elements")

        element_weights = _half_cotangents(nodes, elements)
        edge_weights = np.bincount(
            inverse, weights=element_weights.reshape(-1), minlength=len(edges)
        )
        boundary = np.unique(edges[counts == 1].reshape(-1))

        for arr in (nodes, elements, edges, edge_weights, boundary, areas):
            arr.setflags(write=False)
        return cls(
            nodes=nodes,
            elements=elements,
            edges=edges,
            edge_weights=edge_weights,
            boundary_nodes=boundary,
            areas=areas,
            element_weights=element_weights,
            element_edges=inverse.reshape(-1, 3),
            edge_element_count=counts,
            rect=rect,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def h(self) -> float:
        """Largest element diameter."""
        p = self.nodes[self.elements]
        d = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in _LOCAL_EDGES]
        return float(np.max(d))

    @property
    def volume(self) -> float:
        return float(self.areas.sum())


def generate_uniform(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Structured mesh of ``rect = (x0, y0, x1, y1)`` with ``nx * ny`` cells.

    Every cell is cut along its lower-left to upper-right diagonal.  Node
    ``(i, j)`` has index ``j * (nx + 1) + i``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ConfigurationError(f"cell counts must be positive integers, got {nx}, {ny}")
    x0, y0, x1, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError(f"invalid rectangle {rect}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    a = (j * (nx + 1) + i).ravel()
    b = a + 1
    c = a + nx + 2
    d = a + nx + 1
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([a, b, c])
    elements[1::2] = np.column_stack([a, c, d])
    return Mesh.from_arrays(nodes, elements, rect=(x0, y0, x1, y1))


@dataclass(frozen=True)
class DelaunayReport:
    passed: np.ndarray
    weights: np.ndarray
    tol: float

    @property
    def all_passed(self) -> bool:
        return bool(self.passed.all())

    @property
    def failing_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.passed)


def check_delaunay(mesh: Mesh, tol: float = 1e-12) -> DelaunayReport:
    """Per-edge test of ``w_E >= -tol``."""
    return DelaunayReport(
        passed=mesh.edge_weights >= -tol, weights=mesh.edge_weights.copy(), tol=tol
    )
