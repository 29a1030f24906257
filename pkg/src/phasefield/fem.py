"""P1 finite element operators on a :class:`~phasefield.mesh.Mesh`.

The space stores the assembled stiffness ``A`` (form ``(grad u, grad v)``),
the consistent mass ``M`` (form ``(u, v)``) and the lumped mass ``ML``
(form ``(I_h(u v), 1)``, kept as the diagonal vector).  Nonlinear terms are
integrated with a degree-4 rule, exact for quartic integrands such as
``u^3 * phi`` or ``F(u)`` of a P1 function.
"""
from __future__ import annotations

from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, MeshError
from .mesh import Mesh

__all__ = ["FemSpace", "InnerProducts", "assemble", "QUAD_POINTS", "QUAD_WEIGHTS"]

# Strang-Fix / Dunavant 6-point rule, degree 4, barycentric coordinates.
_A1, _B1, _W1 = 0.816847572980459, 0.091576213509771, 0.109951743655322
_A2, _B2, _W2 = 0.108103018168070, 0.445948490915965, 0.223381589678011
QUAD_POINTS = np.array(
    [
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
QUAD_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


class InnerProducts(NamedTuple):
    l2: float
    h1_semi: float
    lumped_l2: float
    hminus1_semi: float | None


def _element_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the barycentric coordinates, shape (ne, 3, 2)."""
    p = mesh.nodes[mesh.elements]
    grads = np.empty((mesh.n_elements, 3, 2))
    twice_area = 2.0 * mesh.areas
    for m in range(3):
        b = p[:, (m + 1) % 3]
        c = p[:, (m + 2) % 3]
        # rotate the opposite edge by -90 degrees
        grads[:, m, 0] = (b[:, 1] - c[:, 1]) / twice_area
        grads[:, m, 1] = (c[:, 0] - b[:, 0]) / twice_area
    return grads


class FemSpace:
    """Assembled P1 space.  Treat instances as read-only."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        n = mesh.n_nodes
        el = mesh.elements
        self.n = n

        rows = np.repeat(el, 3, axis=1).ravel()
        cols = np.tile(el, (1, 3)).ravel()
        keys = rows * n + cols
        uniq, self._scatter = np.unique(keys, return_inverse=True)
        self._scatter = self._scatter.reshape(-1)
        self._indices = (uniq % n).astype(np.int32)
        counts = np.bincount(uniq // n, minlength=n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

        grads = _element_gradients(mesh)
        if not np.all(np.isfinite(grads)):
            bad = np.flatnonzero(~np.isfinite(grads).all(axis=(1, 2)))[0]
            raise MeshError(f"degenerate element {bad}")
        self._grads = grads
        ke = mesh.areas[:, None, None] * np.einsum("eik,ejk->eij", grads, grads)
        me = (mesh.areas / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))

        self.A = self._to_csr(ke)
        self.M = self._to_csr(me)
        self.ML = np.bincount(
            el.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=n
        )
        self.volume = float(mesh.areas.sum())
        self.ones = np.ones(n)
        self.mass_ones = self.M @ self.ones
        self._bary = QUAD_POINTS
        self._qw = QUAD_WEIGHTS
        # (ne, nq) quadrature weights including the element area
        self._qweights = mesh.areas[:, None] * QUAD_WEIGHTS[None, :]
        self._basis_products = np.einsum("qi,qj->qij", QUAD_POINTS, QUAD_POINTS)

    # ------------------------------------------------------------------
    # assembly helpers
    def _to_csr(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._scatter, weights=local.reshape(-1), minlength=len(self._indices))
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def quad_values(self, field: np.ndarray) -> np.ndarray:
        """Values of a P1 field at the quadrature points, shape (ne, nq)."""
        return np.asarray(field)[self.mesh.elements] @ self._bary.T

    def integrate(self, func: Callable, *fields) -> float:
        """``int_Omega func(u1, u2, ...) dx`` for P1 fields ``u1, u2, ...``."""
        vals = func(*(self.quad_values(f) for f in fields))
        return float(np.sum(self._qweights * vals))

    def load(self, func: Callable, *fields) -> np.ndarray:
        """Vector ``b_i = int func(u1, ...) phi_i dx``."""
        vals = func(*(self.quad_values(f) for f in fields)) * self._qweights
        local = vals @ self._bary  # (ne, 3)
        return np.bincount(self.mesh.elements.ravel(), weights=local.ravel(), minlength=self.n)

    def weighted_mass(self, func: Callable, *fields) -> sp.csr_matrix:
        """Matrix ``int c phi_i phi_j dx`` with ``c = func(u1, ...)``."""
        vals = func(*(self.quad_values(f) for f in fields)) * self._qweights
        local = np.einsum("eq,qij->eij", vals, self._basis_products)
        return self._to_csr(local)

    # ------------------------------------------------------------------
    # discrete calculus
    def interpolate(self, g: Callable, *fields) -> np.ndarray:
        """Nodal interpolant ``I_h g``: coefficient i is ``g`` of the nodal values."""
        return np.asarray(g(*(np.asarray(f, dtype=float) for f in fields)), dtype=float) * self.ones

    def mean(self, v: np.ndarray) -> float:
        return float(self.mass_ones @ v) / self.volume

    def project(self, v: np.ndarray) -> np.ndarray:
        """Remove the M-weighted mean."""
        return v - self.mean(v)

    def project_dual(self, r: np.ndarray) -> np.ndarray:
        """Annihilate the constant component of an assembled (dual) vector."""
        return r - (r.sum() / self.volume) * self.mass_ones

    @cached_property
    def _mass_lu(self):
        return spla.splu(self.M.tocsc())

    @cached_property
    def _bordered_lu(self):
        m = self.mass_ones[:, None]
        K = sp.bmat([[self.A, sp.csr_matrix(m)], [sp.csr_matrix(m.T), None]], format="csc")
        return spla.splu(K)

    def mass_solve(self, r: np.ndarray) -> np.ndarray:
        """``M^{-1} r``: the Riesz representative of an assembled vector."""
        return self._mass_lu.solve(np.asarray(r, dtype=float))

    def riesz(self, r: np.ndarray, lumped: bool = False) -> np.ndarray:
        return r / self.ML if lumped else self.mass_solve(r)

    def dual_norm(self, r: np.ndarray, lumped: bool = False) -> float:
        """``sqrt(r^T W^{-1} r)`` with ``W = M`` or ``ML``."""
        return float(np.sqrt(max(r @ self.riesz(r, lumped), 0.0)))

    def discrete_laplacian(self, v: np.ndarray) -> np.ndarray:
        """``d`` with ``(d, w) = -(grad v, grad w)`` for all ``w``."""
        return self.mass_solve(-(self.A @ v))

    def stiffness_solve(self, b: np.ndarray) -> np.ndarray:
        """Zero-mean ``v`` with ``A v = b`` for a zero-sum right-hand side ``b``."""
        rhs = np.concatenate([b, [0.0]])
        return self._bordered_lu.solve(rhs)[:-1]

    def inverse_laplacian(self, theta: np.ndarray, check: bool = True) -> np.ndarray:
        """``Delta_h^{-1} theta`` for zero-mean ``theta``; the result has zero mean."""
        theta = np.asarray(theta, dtype=float)
        if check:
            scale = max(float(np.abs(theta).max(initial=0.0)), 1.0)
            if abs(self.mean(theta)) > 1e-10 * scale:
                raise DomainError(
                    f"inverse_laplacian needs a zero-mean field, mean = {self.mean(theta):.3e}"
                )
        return self.stiffness_solve(-(self.M @ theta))

    def inner_products(self, u: np.ndarray, v: np.ndarray) -> InnerProducts:
        l2 = float(u @ (self.M @ v))
        h1 = float(u @ (self.A @ v))
        lumped = float(np.sum(self.ML * u * v))
        try:
            hm1 = float(self.inverse_laplacian(u) @ (self.A @ self.inverse_laplacian(v)))
        except DomainError:
            hm1 = None
        return InnerProducts(l2, h1, lumped, hm1)

    def hminus1_norm_sq(self, theta: np.ndarray) -> float:
        """``||grad Delta_h^{-1} theta||^2`` for zero-mean ``theta``."""
        z = self.inverse_laplacian(theta, check=False)
        return float(z @ (self.A @ z))


def assemble(mesh: Mesh) -> FemSpace:
    return FemSpace(mesh)
