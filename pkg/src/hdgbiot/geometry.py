"""Affine cell maps and quadrature data on cells, cell boundaries and facets.

Arrays are batched over a subset of cells (or facets) so that local
matrices can be formed with a handful of einsum calls.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .basis import eval_cell_basis, eval_facet_basis
from .mesh import Mesh
from .quadrature import gauss_rule

_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_LOCAL = np.array([[1, 2], [2, 0], [0, 1]])


def affine_maps(mesh: Mesh, cells):
    p = mesh.vertices[mesh.cells[cells]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns are edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    invJ = np.linalg.inv(J)
    return p[:, 0], J, det, invJ


def to_reference(mesh: Mesh, cell: int, x) -> np.ndarray:
    x0, J, _, invJ = affine_maps(mesh, np.array([cell]))
    return (np.atleast_2d(x) - x0[0]) @ invJ[0].T


class CellQuadrature:
    """Quadrature on every cell in ``cells``."""

    def __init__(self, mesh: Mesh, cells, degree: int):
        self.mesh = mesh
        self.cells = np.asarray(cells, dtype=np.int64)
        self.rule = gauss_rule(degree, "triangle")
        self.x0, self.J, self.det, self.invJ = affine_maps(mesh, self.cells)
        self.x = self.x0[:, None, :] + np.einsum("cij,qj->cqi", self.J, self.rule.points)
        self.w = np.abs(self.det)[:, None] * self.rule.weights[None, :]

    def phi(self, k: int) -> np.ndarray:
        """Basis values, shape (nq, nb)."""
        return eval_cell_basis(k, self.rule.points)[0]

    def grad(self, k: int) -> np.ndarray:
        """Physical basis gradients, shape (nc, nq, nb, 2)."""
        g = eval_cell_basis(k, self.rule.points)[1]
        return np.einsum("qbj,cja->cqba", g, self.invJ)

    def evaluate(self, k: int, coeffs) -> np.ndarray:
        """Evaluate a field with per-cell coefficients ``(nc, ncomp * nb)`` → ``(nc, nq, ncomp)``."""
        phi = self.phi(k)
        c = np.asarray(coeffs).reshape(len(self.cells), -1, phi.shape[1])
        return np.einsum("qb,cmb->cqm", phi, c)

    def evaluate_grad(self, k: int, coeffs) -> np.ndarray:
        """Gradient ``(nc, nq, ncomp, 2)`` with entry ``[.., a, b] = d_b u_a``."""
        g = self.grad(k)
        c = np.asarray(coeffs).reshape(len(self.cells), -1, g.shape[2])
        return np.einsum("cqba,cmb->cqma", g, c)


class BoundaryQuadrature:
    """Quadrature on the three facets of every cell in ``cells`` (the set ∂K)."""

    def __init__(self, mesh: Mesh, cells, degree: int):
        self.mesh = mesh
        self.cells = np.asarray(cells, dtype=np.int64)
        self.rule = gauss_rule(degree, "segment")
        t = self.rule.points
        a = _REF_VERTS[_LOCAL[:, 0]]
        b = _REF_VERTS[_LOCAL[:, 1]]
        self.xi = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]  # (3, nq, 2)
        self.x0, self.J, self.det, self.invJ = affine_maps(mesh, self.cells)
        self.x = self.x0[:, None, None, :] + np.einsum("cij,fqj->cfqi", self.J, self.xi)
        self.facet = mesh.cell_facets[self.cells]  # (nc, 3)
        self.length = mesh.facet_length[self.facet]
        self.w = self.length[:, :, None] * self.rule.weights[None, None, :]
        self.normal = mesh.cell_normals()[self.cells]
        self.h = mesh.cell_diameter[self.cells]
        # does the local parametrisation (vertex a -> vertex b) follow the global facet order?
        verts = mesh.cells[self.cells][:, _LOCAL]  # (nc, 3, 2)
        self.forward = verts[..., 0] < verts[..., 1]
        self.s = np.where(self.forward[..., None], t[None, None, :], 1.0 - t[None, None, :])

    def phi(self, k: int) -> np.ndarray:
        """Cell basis values at facet points, shape (3, nq, nb)."""
        return eval_cell_basis(k, self.xi.reshape(-1, 2))[0].reshape(3, len(self.rule.weights), -1)

    def grad(self, k: int) -> np.ndarray:
        """Physical cell-basis gradients at facet points, shape (nc, 3, nq, nb, 2)."""
        g = eval_cell_basis(k, self.xi.reshape(-1, 2))[1].reshape(3, len(self.rule.weights), -1, 2)
        return np.einsum("fqbj,cja->cfqba", g, self.invJ)

    def psi(self, k: int) -> np.ndarray:
        """Facet basis values in global facet orientation, shape (nc, 3, nq, k + 1)."""
        nc = len(self.cells)
        return eval_facet_basis(k, self.s.ravel()).reshape(nc, 3, len(self.rule.weights), k + 1)

    def evaluate(self, k: int, coeffs) -> np.ndarray:
        phi = self.phi(k)
        c = np.asarray(coeffs).reshape(len(self.cells), -1, phi.shape[-1])
        return np.einsum("fqb,cmb->cfqm", phi, c)


class FacetQuadrature:
    """Quadrature directly on a list of facets, parametrised in global vertex order."""

    def __init__(self, mesh: Mesh, facets, degree: int):
        self.mesh = mesh
        self.facets = np.asarray(facets, dtype=np.int64)
        self.rule = gauss_rule(degree, "segment")
        va = mesh.vertices[mesh.facets[self.facets, 0]]
        vb = mesh.vertices[mesh.facets[self.facets, 1]]
        s = self.rule.points
        self.x = va[:, None, :] + s[None, :, None] * (vb - va)[:, None, :]
        self.length = mesh.facet_length[self.facets]
        self.w = self.length[:, None] * self.rule.weights[None, :]
        self.normal = mesh.facet_normal[self.facets]

    def psi(self, k: int) -> np.ndarray:
        return eval_facet_basis(k, self.rule.points)

    @cached_property
    def owner_reference_points(self) -> np.ndarray:
        """Facet points pulled back into the owner cell, shape (nF, nq, 2)."""
        owner = self.mesh.facet_cells[self.facets, 0]
        x0, _, _, invJ = affine_maps(self.mesh, owner)
        return np.einsum("cij,cqj->cqi", invJ, self.x - x0[:, None, :])
