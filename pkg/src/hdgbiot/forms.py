"""Local evaluation of the HDG bilinear forms.

Every assembler returns a :class:`LocalBlocks` batch: dense local matrices
together with the global row/column dofs they scatter into.  Local dof
layouts:

* velocity pair of subdomain j: ``[u (2 nb), ubar on local facet 0, 1, 2 (2 nf each)]``
* pressure pair of subdomain j: ``[p (nb_{k-1}), pbar on local facet 0, 1, 2 (nf each)]``
* interface pair on one facet: ``[ubar_f (2 nf), ubar_b (2 nf)]``

Facet normals inside the cell loops are outward normals of the cell.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import dim_cell, eval_cell_basis, eval_facet_basis
from .dofmap import DofMap
from .geometry import BoundaryQuadrature, CellQuadrature, FacetQuadrature
from .linalg import Triplets
from .mesh import FLUID, PORO, FacetTag
from .quadrature import gauss_rule

QUAD_FORM = 3  # bilinear forms use exactness 2k + QUAD_FORM


@dataclass(frozen=True)
class ModelParameters:
    mu_f: float = 1e-2
    mu_b: float = 1e-3
    lam: float = 1e2
    kappa: float = 1e-2
    alpha: float = 0.2
    c0: float = 1e-2
    gamma: float = 0.3
    beta_f: float = 8.0
    beta_b: float = 8.0

    def __post_init__(self):
        for name in ("mu_f", "mu_b", "lam", "kappa", "gamma", "beta_f", "beta_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.c0 >= 0:
            raise ValueError(f"c0 must be nonnegative, got {self.c0}")

    @classmethod
    def for_degree(cls, k: int, **overrides) -> "ModelParameters":
        """Benchmark values with penalties ``8 k^2``."""
        base = dict(beta_f=8.0 * k * k, beta_b=8.0 * k * k)
        base.update(overrides)
        return cls(**base)

    def mu(self, domain: int) -> float:
        return self.mu_f if domain == FLUID else self.mu_b

    def beta(self, domain: int) -> float:
        return self.beta_f if domain == FLUID else self.beta_b

    def with_(self, **kw) -> "ModelParameters":
        return replace(self, **kw)


@dataclass
class LocalBlocks:
    rows: np.ndarray  # (ne, nr)
    cols: np.ndarray  # (ne, nc)
    values: np.ndarray  # (ne, nr, nc)

    def scatter(self, target: Triplets, scale: float = 1.0) -> None:
        target.add(scale * self.values, self.rows, self.cols)

    def transpose(self) -> "LocalBlocks":
        return LocalBlocks(self.cols, self.rows, self.values.transpose(0, 2, 1))

    def restrict_cols(self, mask) -> "LocalBlocks":
        """Zero the local columns whose global dof is not flagged in ``mask``."""
        keep = np.asarray(mask)[self.cols]
        return LocalBlocks(self.rows, self.cols, self.values * keep[:, None, :])


# ---------------------------------------------------------------- local dof maps


def velocity_pair_dofs(dofmap: DofMap, domain: int, cells) -> np.ndarray:
    bar = "ubar_f" if domain == FLUID else "ubar_b"
    cell = dofmap.entity_dofs("u", cells)
    fac = dofmap.entity_dofs(bar, dofmap.mesh.cell_facets[cells].ravel())
    return np.concatenate([cell, fac.reshape(len(cells), -1)], axis=1)


def pressure_pair_dofs(dofmap: DofMap, domain: int, cells, darcy: bool = False) -> np.ndarray:
    if darcy:
        el, bar = "pp", "ppbar"
    else:
        el, bar = "p", ("pbar_f" if domain == FLUID else "pbar_b")
    cell = dofmap.entity_dofs(el, cells)
    fac = dofmap.entity_dofs(bar, dofmap.mesh.cell_facets[cells].ravel())
    return np.concatenate([cell, fac.reshape(len(cells), -1)], axis=1)


def interface_pair_dofs(dofmap: DofMap, facets) -> np.ndarray:
    return np.concatenate(
        [dofmap.entity_dofs("ubar_f", facets), dofmap.entity_dofs("ubar_b", facets)], axis=1
    )


# ---------------------------------------------------------------- trace operators


def _vector_traces(bq: BoundaryQuadrature, k: int, with_bar: bool = True):
    """Cell-value and facet-value operators at ∂K points, each (nc, 3, nq, 2, nl)."""
    nc, nq = len(bq.cells), len(bq.rule.weights)
    nb = dim_cell(k)
    nf = k + 1
    nl = 2 * nb + (6 * nf if with_bar else 0)
    phi = bq.phi(k)
    V = np.zeros((nc, 3, nq, 2, nl))
    for a in range(2):
        V[:, :, :, a, a * nb:(a + 1) * nb] = phi[None]
    if not with_bar:
        return V, np.zeros_like(V)
    psi = bq.psi(k)
    Vb = np.zeros_like(V)
    for f in range(3):
        for a in range(2):
            s = 2 * nb + f * 2 * nf + a * nf
            Vb[:, f, :, a, s:s + nf] = psi[:, f]
    return V, Vb


def _scalar_traces(bq: BoundaryQuadrature, k: int):
    """Element (degree k-1) and facet (degree k) operators at ∂K points, each (nc, 3, nq, nl)."""
    nc, nq = len(bq.cells), len(bq.rule.weights)
    nbp = dim_cell(k - 1)
    nf = k + 1
    nl = nbp + 3 * nf
    Q = np.zeros((nc, 3, nq, nl))
    Q[..., :nbp] = bq.phi(k - 1)[None]
    psi = bq.psi(k)
    Qb = np.zeros_like(Q)
    for f in range(3):
        Qb[:, f, :, nbp + f * nf:nbp + (f + 1) * nf] = psi[:, f]
    return Q, Qb


def _strain_ops(grad: np.ndarray) -> np.ndarray:
    """Symmetric gradients of the vector basis: (..., nb, 2) -> (..., 2, 2, 2 nb)."""
    nb = grad.shape[-2]
    E = np.zeros(grad.shape[:-2] + (2, 2, 2 * nb))
    for c in range(2):
        sl = slice(c * nb, (c + 1) * nb)
        for a in range(2):
            for b in range(2):
                E[..., a, b, sl] = 0.5 * ((a == c) * grad[..., :, b] + (b == c) * grad[..., :, a])
    return E


def _div_ops(grad: np.ndarray) -> np.ndarray:
    """Divergence of the vector basis: (..., nb, 2) -> (..., 2 nb)."""
    return np.concatenate([grad[..., :, 0], grad[..., :, 1]], axis=-1)


def _pad(A: np.ndarray, nl: int) -> np.ndarray:
    out = np.zeros(A.shape[:-1] + (nl,))
    out[..., :A.shape[-1]] = A
    return out


# ---------------------------------------------------------------- forms


def assemble_ah(domain: int, dofmap: DofMap, params: ModelParameters, sign_flip: float = 1.0) -> LocalBlocks:
    """Interior-penalty viscous/elastic form on one subdomain.

    ``sign_flip`` multiplies the two consistency terms; it exists only so
    that mutation tests can inject a sign error.
    """
    mesh = dofmap.mesh
    k = dofmap.config.k
    cells = mesh.cells_of(domain)
    mu, beta = params.mu(domain), params.beta(domain)
    deg = 2 * k + QUAD_FORM

    cq = CellQuadrature(mesh, cells, deg)
    E = _strain_ops(cq.grad(k))  # (nc, nq, 2, 2, 2nb)
    vol = 2.0 * mu * np.einsum("cq,cqabi,cqabj->cij", cq.w, E, E)

    bq = BoundaryQuadrature(mesh, cells, deg)
    V, Vb = _vector_traces(bq, k)
    nl = V.shape[-1]
    Jmp = V - Vb
    En = np.einsum("cfqabi,cfb->cfqai", _strain_ops(bq.grad(k)), bq.normal)
    En = _pad(En, nl)
    w = bq.w
    pen = 2.0 * beta * mu * np.einsum("cfq,c,cfqai,cfqaj->cij", w, 1.0 / bq.h, Jmp, Jmp)
    cons = -2.0 * mu * np.einsum("cfq,cfqai,cfqaj->cij", w, Jmp, En)
    A = pen + sign_flip * (cons + cons.transpose(0, 2, 1))
    A[:, : vol.shape[1], : vol.shape[2]] += vol
    d = velocity_pair_dofs(dofmap, domain, cells)
    return LocalBlocks(d, d, A)


def _bh_local(mesh, k, cells, with_bar: bool):
    deg = 2 * k + QUAD_FORM
    cq = CellQuadrature(mesh, cells, deg)
    div = _div_ops(cq.grad(k))  # (nc, nq, 2nb)
    phip = cq.phi(k - 1)
    bq = BoundaryQuadrature(mesh, cells, deg)
    V, Vb = _vector_traces(bq, k, with_bar)
    Jn = np.einsum("cfqai,cfa->cfqi", V - Vb, bq.normal)
    Q, Qb = _scalar_traces(bq, k)
    B = np.einsum("cfq,cfqi,cfqj->cij", bq.w, Jn, Qb)
    nbp = phip.shape[1]
    B[:, : div.shape[2], :nbp] -= np.einsum("cq,cqi,qj->cij", cq.w, div, phip)
    return B


def assemble_bh(domain: int, dofmap: DofMap) -> LocalBlocks:
    """Velocity-pressure coupling; rows are velocity-pair dofs, columns pressure-pair dofs."""
    mesh = dofmap.mesh
    cells = mesh.cells_of(domain)
    B = _bh_local(mesh, dofmap.config.k, cells, with_bar=True)
    return LocalBlocks(
        velocity_pair_dofs(dofmap, domain, cells), pressure_pair_dofs(dofmap, domain, cells), B
    )


def assemble_bh_darcy(dofmap: DofMap) -> LocalBlocks:
    """The poro coupling form with velocity pair ``(z, 0)``; rows are z dofs, columns (pp, ppbar)."""
    mesh = dofmap.mesh
    cells = mesh.cells_of(PORO)
    B = _bh_local(mesh, dofmap.config.k, cells, with_bar=False)
    return LocalBlocks(
        dofmap.entity_dofs("z", cells), pressure_pair_dofs(dofmap, PORO, cells, darcy=True), B
    )


def _block_diag2(m: np.ndarray) -> np.ndarray:
    z = np.zeros_like(m)
    return np.concatenate([np.concatenate([m, z], axis=2), np.concatenate([z, m], axis=2)], axis=1)


def cell_mass(dofmap: DofMap, field: str, cells=None, coef: float = 1.0) -> LocalBlocks:
    """``coef * (u, v)`` for a cell field (scalar or vector) on ``cells``."""
    mesh = dofmap.mesh
    space = dofmap[field].space
    cells = dofmap[field].entities if cells is None else np.asarray(cells)
    cq = CellQuadrature(mesh, cells, 2 * space.degree + QUAD_FORM)
    phi = cq.phi(space.degree)
    m = coef * np.einsum("cq,qi,qj->cij", cq.w, phi, phi)
    if space.ncomp == 2:
        m = _block_diag2(m)
    d = dofmap.entity_dofs(field, cells)
    return LocalBlocks(d, d, m)


def assemble_ch(dofmap: DofMap, params: ModelParameters) -> tuple[LocalBlocks, LocalBlocks]:
    """``(lam^{-1}(alpha p - r), q)`` on poro cells.

    Returns the blocks for trial ``p`` (pore pressure) and trial ``r``
    (total pressure); both have the total-pressure element dofs as rows.
    """
    mesh = dofmap.mesh
    k = dofmap.config.k
    cells = mesh.cells_of(PORO)
    cq = CellQuadrature(mesh, cells, 2 * k + QUAD_FORM)
    phi = cq.phi(k - 1)
    m = np.einsum("cq,qi,qj->cij", cq.w, phi, phi) / params.lam
    rows = dofmap.entity_dofs("p", cells)
    return (
        LocalBlocks(rows, dofmap.entity_dofs("pp", cells), params.alpha * m),
        LocalBlocks(rows, dofmap.entity_dofs("p", cells), -m),
    )


def _interface_ops(fq: FacetQuadrature, k: int):
    psi = fq.psi(k)  # (nq, nf)
    nF, nq = len(fq.facets), len(psi)
    nf = k + 1
    D = np.zeros((nF, nq, 2, 4 * nf))
    for a in range(2):
        D[:, :, a, a * nf:(a + 1) * nf] = psi[None]
        D[:, :, a, 2 * nf + a * nf:2 * nf + (a + 1) * nf] = -psi[None]
    return D, psi


def assemble_interface_forms(dofmap: DofMap, params: ModelParameters) -> tuple[LocalBlocks, LocalBlocks]:
    """Tangential friction form and normal-jump/pressure coupling on interface facets.

    Returns ``(aI, bI)``: ``aI`` couples ``[ubar_f, ubar_b]`` with itself,
    ``bI`` has rows ``[vbar_f, vbar_b]`` and columns ``ppbar``.
    """
    mesh = dofmap.mesh
    k = dofmap.config.k
    facets = mesh.facets_tagged(FacetTag.INTERFACE)
    fq = FacetQuadrature(mesh, facets, 2 * k + QUAD_FORM)
    D, psi = _interface_ops(fq, k)
    n = fq.normal
    P = np.eye(2)[None] - n[:, :, None] * n[:, None, :]
    coef = params.gamma * params.mu_f / np.sqrt(params.kappa)
    aI = coef * np.einsum("fq,fqai,fab,fqbj->fij", fq.w, D, P, D)
    Dn = np.einsum("fqai,fa->fqi", D, n)
    bI = np.einsum("fq,fqi,qj->fij", fq.w, Dn, psi)
    d = interface_pair_dofs(dofmap, facets)
    return LocalBlocks(d, d, aI), LocalBlocks(d, dofmap.entity_dofs("ppbar", facets), bI)


def _convective_velocity(bq: BoundaryQuadrature, cq: CellQuadrature, k: int, w_coeffs):
    wc = np.asarray(w_coeffs).reshape(len(bq.cells), 2 * dim_cell(k))
    w_cell = cq.evaluate(k, wc)  # (nc, nq, 2)
    w_bnd = bq.evaluate(k, wc)  # (nc, 3, nq, 2)
    return wc, w_cell, np.einsum("cfqa,cfa->cfq", w_bnd, bq.normal)


def _gamma_in_term(dofmap: DofMap, k: int, w_of_cell) -> LocalBlocks:
    """``<(w.n) ubar, vbar>`` on interface and fluid Neumann facets."""
    mesh = dofmap.mesh
    facets = mesh.facets_tagged(FacetTag.INTERFACE, FacetTag.NEUMANN_F)
    fq = FacetQuadrature(mesh, facets, 3 * k + QUAD_FORM)
    owner = mesh.facet_cells[facets, 0]
    phi = eval_cell_basis(k, fq.owner_reference_points.reshape(-1, 2))[0].reshape(len(facets), -1, dim_cell(k))
    wc = w_of_cell(owner).reshape(len(facets), 2, -1)
    wn = np.einsum("fqb,fab,fa->fq", phi, wc, fq.normal)
    psi = fq.psi(k)
    m = np.einsum("fq,fq,qi,qj->fij", fq.w, wn, psi, psi)
    m = _block_diag2(m)
    d = dofmap.entity_dofs("ubar_f", facets)
    return LocalBlocks(d, d, m)


def _w_lookup(dofmap: DofMap, w_coeffs):
    cells = dofmap.mesh.cells_of(FLUID)
    wc = np.asarray(w_coeffs).reshape(len(cells), -1)
    pos = -np.ones(dofmap.mesh.n_cells, dtype=np.int64)
    pos[cells] = np.arange(len(cells))
    return lambda ids: wc[pos[ids]]


_REF_A = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])  # start of local facet i
_REF_B = np.array([[0.0, 1.0], [0.0, 0.0], [1.0, 0.0]])


def _sign_breaks(wc, normal, k: int) -> np.ndarray:
    """Candidate sign changes of ``w.n`` on each local facet, as parameters in [0, 1].

    ``w.n`` is a degree-``k`` polynomial in the facet parameter; its roots
    are the eigenvalues of the companion matrix.  Real parts of all
    eigenvalues are kept (clipped to [0, 1]): a spurious break only
    subdivides a smooth interval.  Returns ``(nc, 3, k)``.
    """
    t = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k + 1) + 0.5) / (k + 1))
    xi = _REF_A[:, None] + t[None, :, None] * (_REF_B - _REF_A)[:, None]
    phi = eval_cell_basis(k, xi.reshape(-1, 2))[0].reshape(3, k + 1, -1)
    w = np.einsum("fqb,cab->cfqa", phi, wc.reshape(len(wc), 2, -1))
    vals = np.einsum("cfqa,cfa->cfq", w, normal)
    coef = vals @ np.linalg.inv(np.vander(t, k + 1, increasing=True)).T  # c_0 .. c_k
    lead = coef[..., -1]
    scale = np.abs(coef).max(axis=-1)
    tiny = np.abs(lead) <= 1e-13 * scale
    lead = np.where(tiny, np.where(lead < 0, -1.0, 1.0) * 1e-13 * np.maximum(scale, 1e-300), lead)
    comp = np.zeros(coef.shape[:2] + (k, k))
    comp[..., :, -1] = -coef[..., :-1] / lead[..., None]
    if k > 1:
        comp[..., np.arange(1, k), np.arange(k - 1)] = 1.0
    roots = np.linalg.eigvals(comp).real
    roots = np.clip(np.where(np.isfinite(roots), roots, 0.0), 0.0, 1.0)
    # a nearly vanishing leading coefficient makes the companion roots inaccurate;
    # polish against the polynomial itself, keeping only steps that reduce |w.n|
    dcoef = coef[..., 1:] * np.arange(1, k + 1)

    def horner(c, x):
        out = np.zeros_like(x)
        for j in range(c.shape[-1] - 1, -1, -1):
            out = out * x + c[..., j, None]
        return out

    for _ in range(4):
        val, der = horner(coef, roots), horner(dcoef, roots)
        ok = np.abs(der) > 1e-14 * scale[..., None]
        trial = np.clip(roots - np.where(ok, val / np.where(ok, der, 1.0), 0.0), 0.0, 1.0)
        roots = np.where(np.abs(horner(coef, trial)) < np.abs(val), trial, roots)
    return np.sort(roots, axis=-1)


def _upwind_term(mesh, cells, k: int, wc, deg: int) -> np.ndarray:
    """``1/2 <|w.n| (u - ubar), v - vbar>`` on every cell boundary, integrated exactly.

    Each facet is split at the sign changes of ``w.n`` and a Gauss rule of
    exactness ``deg`` is applied on every piece.
    """
    bq = BoundaryQuadrature(mesh, cells, 0)
    nc, nb, nf = len(cells), dim_cell(k), k + 1
    breaks = _sign_breaks(wc, bq.normal, k)
    ends = np.concatenate([np.zeros((nc, 3, 1)), breaks, np.ones((nc, 3, 1))], axis=-1)
    lo, L = ends[..., :-1], np.diff(ends, axis=-1)  # (nc, 3, k + 1)
    g = gauss_rule(deg, "segment")
    t = (lo[..., None] + L[..., None] * g.points).reshape(nc, 3, -1)
    wq = (L[..., None] * g.weights).reshape(nc, 3, -1) * bq.length[..., None]
    nq = t.shape[-1]
    xi = _REF_A[None, :, None] + t[..., None] * (_REF_B - _REF_A)[None, :, None]
    phi = eval_cell_basis(k, xi.reshape(-1, 2))[0].reshape(nc, 3, nq, nb)
    wv = np.einsum("cfqb,cab->cfqa", phi, wc.reshape(nc, 2, nb))
    wn = np.abs(np.einsum("cfqa,cfa->cfq", wv, bq.normal))
    s = np.where(bq.forward[..., None], t, 1.0 - t)
    psi = eval_facet_basis(k, s.ravel()).reshape(nc, 3, nq, nf)
    # jump operator per component: cell part then facet part on local facet f
    J = np.zeros((nc, 3, nq, 2, 2 * nb + 6 * nf))
    for a in range(2):
        J[..., a, a * nb:(a + 1) * nb] = phi
        for f in range(3):
            c0 = 2 * nb + f * 2 * nf + a * nf
            J[:, f, :, a, c0:c0 + nf] = -psi[:, f]
    Jw = J * (0.5 * wq * wn)[..., None, None]
    nl = J.shape[-1]
    return np.swapaxes(Jw.reshape(nc, -1, nl), 1, 2) @ J.reshape(nc, -1, nl)


def assemble_th(w_coeffs, dofmap: DofMap) -> list[LocalBlocks]:
    """Lagged convection form for fixed ``w`` (fluid-cell velocity coefficients, ``(n_fluid, 2 nb)``)."""
    mesh = dofmap.mesh
    k = dofmap.config.k
    cells = mesh.cells_of(FLUID)
    deg = 3 * k + QUAD_FORM
    cq = CellQuadrature(mesh, cells, deg)
    bq = BoundaryQuadrature(mesh, cells, deg)
    wc, w_cell, wn = _convective_velocity(bq, cq, k, w_coeffs)
    nb = dim_cell(k)
    phi = cq.phi(k)
    g = cq.grad(k)
    wg = np.einsum("cqa,cqia->cqi", w_cell, g)  # w . grad(phi_i)
    blk = -np.swapaxes(wg * cq.w[..., None], 1, 2) @ phi
    V, Vb = _vector_traces(bq, k)
    Jmp = V - Vb
    nc, nl = len(cells), V.shape[-1]
    Jw = (Jmp * (0.5 * bq.w * wn)[..., None, None]).reshape(nc, -1, nl)
    T = np.swapaxes(Jw, 1, 2) @ (V + Vb).reshape(nc, -1, nl)
    T += _upwind_term(mesh, cells, k, wc, deg)
    for a in range(2):
        T[:, a * nb:(a + 1) * nb, a * nb:(a + 1) * nb] += blk
    d = velocity_pair_dofs(dofmap, FLUID, cells)
    return [LocalBlocks(d, d, T), _gamma_in_term(dofmap, k, _w_lookup(dofmap, wc))]


def assemble_th_ibp(w_coeffs, dofmap: DofMap) -> list[LocalBlocks]:
    """The integrated-by-parts form of the convection operator with upwind ``max(w.n, 0)``.

    Equals :func:`assemble_th` when ``w`` is divergence free with continuous
    normal component and the test facet field vanishes on the Dirichlet boundary.
    """
    mesh = dofmap.mesh
    k = dofmap.config.k
    cells = mesh.cells_of(FLUID)
    deg = 3 * k + QUAD_FORM
    cq = CellQuadrature(mesh, cells, deg)
    bq = BoundaryQuadrature(mesh, cells, deg)
    wc, w_cell, wn = _convective_velocity(bq, cq, k, w_coeffs)
    nb = dim_cell(k)
    phi = cq.phi(k)
    wg = np.einsum("cqa,cqja->cqj", w_cell, cq.grad(k))
    blk = np.einsum("cq,qi,cqj->cij", cq.w, phi, wg)
    V, Vb = _vector_traces(bq, k)
    Jmp = V - Vb
    T = -np.einsum("cfq,cfq,cfqai,cfqaj->cij", bq.w, wn, V, Jmp)
    # max(w.n, 0) = (w.n + |w.n|) / 2, the kinked half integrated piecewise
    T += 0.5 * np.einsum("cfq,cfq,cfqai,cfqaj->cij", bq.w, wn, Jmp, Jmp)
    T += _upwind_term(mesh, cells, k, wc, deg)
    for a in range(2):
        T[:, a * nb:(a + 1) * nb, a * nb:(a + 1) * nb] += blk
    d = velocity_pair_dofs(dofmap, FLUID, cells)
    return [LocalBlocks(d, d, T)]


def to_matrix(blocks, n: int, scale: float = 1.0):
    """Merge one or more :class:`LocalBlocks` into an ``n x n`` CSR matrix."""
    t = Triplets((n, n))
    for b in blocks if isinstance(blocks, (list, tuple)) else [blocks]:
        b.scatter(t, scale)
    return t.tocsr()
