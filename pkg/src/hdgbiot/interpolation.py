"""L2 projections and the BDM interpolant."""
from __future__ import annotations

import numpy as np

from .basis import dim_cell, eval_cell_basis
from .geometry import BoundaryQuadrature, CellQuadrature, FacetQuadrature
from .mesh import Mesh

BDM_COND_LIMIT = 1e12


class InterpolationError(np.linalg.LinAlgError):
    pass


def _as_components(vals, ncomp):
    vals = np.asarray(vals, dtype=float)
    if ncomp == 1 and (vals.ndim == 0 or vals.shape[-1] != 1):
        vals = vals[..., None]
    return vals


def l2_project_cells(func, mesh: Mesh, cells, degree: int, ncomp: int = 1, quad_degree=None) -> np.ndarray:
    """Cellwise L2 projection onto ``[P_degree]^ncomp``; returns ``(n_cells, ncomp * nb)``."""
    cells = np.asarray(cells, dtype=np.int64)
    cq = CellQuadrature(mesh, cells, quad_degree if quad_degree is not None else 2 * degree + 6)
    vals = _as_components(func(cq.x), ncomp)  # (nc, nq, ncomp)
    phi = cq.phi(degree)
    # orthonormal reference basis: the physical mass matrix is |det J| I
    c = np.einsum("cq,cqm,qb->cmb", cq.w, vals, phi) / np.abs(cq.det)[:, None, None]
    return c.reshape(len(cells), -1)


def l2_project_facets(func, mesh: Mesh, facets, degree: int, ncomp: int = 1, quad_degree=None) -> np.ndarray:
    """Facetwise L2 projection onto ``[P_degree(F)]^ncomp``; returns ``(n_facets, ncomp * (degree + 1))``.

    ``func`` receives points ``(nF, nq, 2)`` and the facet normals ``(nF, 2)``.
    """
    facets = np.asarray(facets, dtype=np.int64)
    fq = FacetQuadrature(mesh, facets, quad_degree if quad_degree is not None else 2 * degree + 6)
    vals = _as_components(func(fq.x, fq.normal[:, None, :]), ncomp)
    psi = fq.psi(degree)
    c = np.einsum("fq,fqm,qb->fmb", fq.w, vals, psi) / fq.length[:, None, None]
    return c.reshape(len(facets), -1)


def l2_project(func, space: str, mesh: Mesh, entities, degree: int, ncomp: int = 1, quad_degree=None):
    """Dispatch on ``space`` in ``{"cell", "facet"}``."""
    if space == "cell":
        return l2_project_cells(func, mesh, entities, degree, ncomp, quad_degree)
    if space == "facet":
        return l2_project_facets(lambda x, n: func(x), mesh, entities, degree, ncomp, quad_degree)
    raise ValueError(space)


def _bdm_functionals(mesh: Mesh, cells, k: int, quad_degree: int):
    """Moment functionals as (weights, test functions) at cell and ∂K points.

    Returns ``(cq, bq, Wc, Wb)`` where the moment vector of a field ``u`` is
    ``einsum(Wc, u_cell) + einsum(Wb, u_bnd)`` with ``Wc`` of shape
    ``(nc, nmom, nq, 2)`` and ``Wb`` of shape ``(nc, nmom, 3, nqf, 2)``.
    """
    cq = CellQuadrature(mesh, cells, quad_degree)
    bq = BoundaryQuadrature(mesh, cells, quad_degree)
    nc = len(cells)
    nf = k + 1
    psi = bq.psi(k)  # (nc, 3, nqf, nf)
    nqf = psi.shape[2]
    nq = len(cq.rule.weights)

    # facet normal moments <psi_m, u.n>_F
    Wb = np.zeros((nc, 3 * nf, 3, nqf, 2))
    for f in range(3):
        Wb[:, f * nf:(f + 1) * nf, f] = np.einsum(
            "cq,cqm,ca->cmqa", bq.w[:, f], psi[:, f], bq.normal[:, f]
        )

    # (u, grad q) for nonconstant q in P_{k-1}
    blocks = []
    if k >= 2:
        gq = cq.grad(k - 1)[:, :, 1:, :]  # (nc, nq, nbq-1, 2)
        blocks.append(np.einsum("cq,cqma->cmqa", cq.w, gq))
        # (u, curl(b q)) for q in P_{k-2}, b the cubic bubble
        ref = cq.rule.points
        lam = np.stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]], axis=1)  # (nq, 3)
        dlam_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        dlam = np.einsum("lj,cja->cla", dlam_ref, cq.invJ)  # (nc, 3, 2)
        b = lam.prod(axis=1)
        db = (
            lam[None, :, 1, None] * lam[None, :, 2, None] * dlam[:, None, 0]
            + lam[None, :, 0, None] * lam[None, :, 2, None] * dlam[:, None, 1]
            + lam[None, :, 0, None] * lam[None, :, 1, None] * dlam[:, None, 2]
        )  # (nc, nq, 2)
        q = cq.phi(k - 2)  # (nq, nm)
        gq2 = cq.grad(k - 2)  # (nc, nq, nm, 2)
        grad_bq = q[None, :, :, None] * db[:, :, None, :] + b[None, :, None, None] * gq2
        curl = np.stack([grad_bq[..., 1], -grad_bq[..., 0]], axis=-1)
        blocks.append(np.einsum("cq,cqma->cmqa", cq.w, curl))
    Wc = np.concatenate(blocks, axis=1) if blocks else np.zeros((nc, 0, nq, 2))
    return cq, bq, Wc, Wb


def bdm_interpolate(func, mesh: Mesh, k: int, cells, quad_degree=None) -> np.ndarray:
    """BDM_k interpolant of a vector field on ``cells``; returns ``(n_cells, 2 * nb)``.

    Matches normal moments against ``P_k(F)`` on every facet, gradient
    moments against ``P_{k-1}(K)`` and curl-bubble moments against
    ``P_{k-2}(K)``, so normal traces are continuous and the divergence
    commutes with the ``P_{k-1}`` projection.
    """
    cells = np.asarray(cells, dtype=np.int64)
    quad_degree = quad_degree if quad_degree is not None else 2 * k + 6
    cq, bq, Wc, Wb = _bdm_functionals(mesh, cells, k, quad_degree)
    nb = dim_cell(k)
    nf = k + 1

    # moments of the basis (quadrature exact for polynomials)
    phi_c = cq.phi(k)  # (nq, nb)
    phi_b = bq.phi(k)  # (3, nqf, nb)
    nc = len(cells)
    M = np.zeros((nc, Wb.shape[1] + Wc.shape[1], 2 * nb))
    for a in range(2):
        M[:, : 3 * nf, a * nb:(a + 1) * nb] = np.einsum("cmfq,fqb->cmb", Wb[..., a], phi_b)
        M[:, 3 * nf:, a * nb:(a + 1) * nb] = np.einsum("cmq,qb->cmb", Wc[..., a], phi_c)
    cond = np.linalg.cond(M)
    if np.any(~np.isfinite(cond)) or cond.max() > BDM_COND_LIMIT:
        raise InterpolationError(f"ill-conditioned BDM moment system (cond {cond.max():.3e})")
    rhs = np.einsum("cmfqa,cfqa->cm", Wb, func(bq.x))
    if Wc.shape[1]:
        rhs = np.concatenate([rhs[:, : 3 * nf], np.einsum("cmqa,cqa->cm", Wc, func(cq.x))], axis=1)
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def evaluate_cell_field(mesh: Mesh, cells, k: int, coeffs, ref_points) -> np.ndarray:
    """Values ``(nc, nq, ncomp)`` of a cellwise polynomial at shared reference points."""
    phi = eval_cell_basis(k, ref_points)[0]
    c = np.asarray(coeffs).reshape(len(cells), -1, phi.shape[1])
    return np.einsum("qb,cmb->cqm", phi, c)
