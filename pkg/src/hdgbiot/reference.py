"""Direct-quadrature evaluation of the discrete forms.

This is a second, deliberately naive route to every bilinear form: a
Python loop over cells and facets, fields evaluated pointwise from their
coefficients, and quadrature rules built here rather than taken from the
batched assembly.  It exists to cross-check the assembled operators.

Every form accepts coefficient blocks ``X`` (trial) and ``Y`` (test) of
shape ``(n_dofs,)`` or ``(n_dofs, m)`` and returns ``Y^T A X``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .basis import eval_cell_basis, eval_facet_basis
from .dofmap import DofMap
from .mesh import FLUID, PORO, FacetTag


@lru_cache(maxsize=None)
def _segment_rule(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _triangle_rule(n: int):
    # conical product of two Gauss-Legendre rules with the collapse Jacobian kept explicit
    a, wa = _segment_rule(n + 1)
    b, wb = _segment_rule(n)
    A, B = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa * (1.0 - a), wb)
    return np.stack([A.ravel(), (B * (1.0 - A)).ravel()], axis=1), W.ravel()


def _cols(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


class FieldEvaluator:
    """Pointwise values of the discrete fields of one coefficient block."""

    def __init__(self, dofmap: DofMap, X):
        self.dm = dofmap
        self.mesh = dofmap.mesh
        self.X = _cols(X)
        self.k = dofmap.config.k

    def _ref(self, cell, pts):
        v = self.mesh.vertices[self.mesh.cells[cell]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        return np.linalg.solve(J, (pts - v[0]).T).T, J

    def cell(self, name, cell, pts):
        """Values ``(np, ncomp, m)`` and physical gradients ``(np, ncomp, 2, m)``."""
        space = self.dm[name].space
        ref, J = self._ref(cell, pts)
        phi, dphi = eval_cell_basis(space.degree, ref)
        grad = dphi @ np.linalg.inv(J)  # d/dx = d/dxi J^{-1}
        c = self.X[self.dm.entity_dofs(name, [cell])[0]].reshape(space.ncomp, space.n_basis, -1)
        return np.einsum("pb,cbm->pcm", phi, c), np.einsum("pbd,cbm->pcdm", grad, c)

    def facet(self, name, facet, pts):
        """Values ``(np, ncomp, m)`` of a facet field (zero where the field is absent)."""
        space = self.dm[name].space
        f = self.dm[name]
        if f.index[facet] < 0:
            return np.zeros((len(pts), space.ncomp, self.X.shape[1]))
        va, vb = self.mesh.vertices[self.mesh.facets[facet]]
        s = np.linalg.norm(pts - va, axis=1) / np.linalg.norm(vb - va)
        psi = eval_facet_basis(space.degree, s)
        c = self.X[f.dofs[f.index[facet]]].reshape(space.ncomp, space.n_basis, -1)
        return np.einsum("pb,cbm->pcm", psi, c)


def _cell_points(mesh, cell, n):
    ref, w = _triangle_rule(n)
    v = mesh.vertices[mesh.cells[cell]]
    J = np.column_stack([v[1] - v[0], v[2] - v[0]])
    return v[0] + ref @ J.T, w * abs(np.linalg.det(J))


def _facet_points(mesh, facet, n):
    s, w = _segment_rule(n)
    va, vb = mesh.vertices[mesh.facets[facet]]
    return va + s[:, None] * (vb - va), w * np.linalg.norm(vb - va)


def _split_facet_points(mesh, facet, n, wn_at, degree):
    """Points and weights on ``facet`` with the segment cut where ``wn_at`` changes sign."""
    va, vb = mesh.vertices[mesh.facets[facet]]
    s = np.linspace(0.0, 1.0, 2 * degree + 3)
    poly = np.polynomial.Polynomial.fit(s, wn_at(va + s[:, None] * (vb - va)), degree, domain=[0, 1], window=[0, 1])
    cuts = [r.real for r in poly.roots() if abs(r.imag) < 1e-9 and 0.0 < r.real < 1.0]
    edges = np.array([0.0] + sorted(cuts) + [1.0])
    g, gw = _segment_rule(n)
    length = np.linalg.norm(vb - va)
    pts, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        pts.append(va + (a + (b - a) * g)[:, None] * (vb - va))
        wts.append((b - a) * gw * length)
    return np.concatenate(pts), np.concatenate(wts)


def _outward(mesh, cell, facet):
    va, vb = mesh.vertices[mesh.facets[facet]]
    t = vb - va
    n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
    centroid = mesh.vertices[mesh.cells[cell]].mean(axis=0)
    return n if n @ (va - centroid) > 0 else -n


def _diameter(mesh, cell):
    v = mesh.vertices[mesh.cells[cell]]
    return max(np.linalg.norm(v[i] - v[j]) for i, j in ((0, 1), (1, 2), (2, 0)))


def _sym(G):
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def _nq(k):
    return k + 4


def form_ah(dm: DofMap, params, domain, X, Y) -> np.ndarray:
    mesh, k = dm.mesh, dm.config.k
    bar = "ubar_f" if domain == FLUID else "ubar_b"
    mu, beta = params.mu(domain), params.beta(domain)
    U, V = FieldEvaluator(dm, X), FieldEvaluator(dm, Y)
    out = 0.0
    for K in mesh.cells_of(domain):
        x, w = _cell_points(mesh, K, _nq(k))
        _, gu = U.cell("u", K, x)
        _, gv = V.cell("u", K, x)
        out = out + 2 * mu * np.einsum("p,pabm,pabn->nm", w, _sym(gu), _sym(gv))
        hK = _diameter(mesh, K)
        for F in mesh.cell_facets[K]:
            n = _outward(mesh, K, F)
            x, w = _facet_points(mesh, F, _nq(k))
            u, gu = U.cell("u", K, x)
            v, gv = V.cell("u", K, x)
            ju = u - U.facet(bar, F, x)
            jv = v - V.facet(bar, F, x)
            eu = np.einsum("pabm,b->pam", _sym(gu), n)
            ev = np.einsum("pabn,b->pan", _sym(gv), n)
            out = out + 2 * beta * mu / hK * np.einsum("p,pam,pan->nm", w, ju, jv)
            out = out - 2 * mu * np.einsum("p,pam,pan->nm", w, eu, jv)
            out = out - 2 * mu * np.einsum("p,pan,pam->nm", w, ev, ju)
    return np.asarray(out)


def form_bh(dm: DofMap, domain, V_in, Q_in, darcy: bool = False) -> np.ndarray:
    """``b_h^j(v, q)``; with ``darcy`` the velocity pair is ``(z, 0)`` and the pressure pair ``(pp, ppbar)``."""
    mesh, k = dm.mesh, dm.config.k
    if darcy:
        vel, vbar, pel, pbar = "z", None, "pp", "ppbar"
    else:
        vel = "u"
        vbar = "ubar_f" if domain == FLUID else "ubar_b"
        pel, pbar = "p", ("pbar_f" if domain == FLUID else "pbar_b")
    Vf, Qf = FieldEvaluator(dm, V_in), FieldEvaluator(dm, Q_in)
    out = 0.0
    for K in mesh.cells_of(domain):
        x, w = _cell_points(mesh, K, _nq(k))
        _, gv = Vf.cell(vel, K, x)
        q, _ = Qf.cell(pel, K, x)
        div = gv[:, 0, 0] + gv[:, 1, 1]
        out = out - np.einsum("p,pn,pm->nm", w, q[:, 0], div)
        for F in mesh.cell_facets[K]:
            n = _outward(mesh, K, F)
            x, w = _facet_points(mesh, F, _nq(k))
            v, _ = Vf.cell(vel, K, x)
            if vbar is not None:
                v = v - Vf.facet(vbar, F, x)
            qb = Qf.facet(pbar, F, x)
            out = out + np.einsum("p,pn,pam,a->nm", w, qb[:, 0], v, n)
    # rows: pressure test, columns: velocity trial -> return (velocity test) x (pressure trial) layout
    return np.asarray(out).T


def form_ch(dm: DofMap, params, X, Y) -> np.ndarray:
    """``(lam^{-1}(alpha p - r), q)`` with ``p = pp``, ``r = p`` (trial) and ``q = p`` (test) on poro cells."""
    mesh, k = dm.mesh, dm.config.k
    U, V = FieldEvaluator(dm, X), FieldEvaluator(dm, Y)
    out = 0.0
    for K in mesh.cells_of(PORO):
        x, w = _cell_points(mesh, K, _nq(k))
        p, _ = U.cell("pp", K, x)
        r, _ = U.cell("p", K, x)
        q, _ = V.cell("p", K, x)
        out = out + np.einsum("p,pm,pn->nm", w, (params.alpha * p[:, 0] - r[:, 0]) / params.lam, q[:, 0])
    return np.asarray(out)


def _interface_normal(mesh, F):
    fluid = [c for c in mesh.facet_cells[F] if c >= 0 and mesh.cell_domain[c] == FLUID][0]
    return _outward(mesh, fluid, F)


def form_aI(dm: DofMap, params, X, Y) -> np.ndarray:
    mesh, k = dm.mesh, dm.config.k
    U, V = FieldEvaluator(dm, X), FieldEvaluator(dm, Y)
    coef = params.gamma * params.mu_f / np.sqrt(params.kappa)
    out = 0.0
    for F in mesh.facets_tagged(FacetTag.INTERFACE):
        n = _interface_normal(mesh, F)
        P = np.eye(2) - np.outer(n, n)
        x, w = _facet_points(mesh, F, _nq(k))
        du = np.einsum("ab,pbm->pam", P, U.facet("ubar_f", F, x) - U.facet("ubar_b", F, x))
        dv = np.einsum("ab,pbn->pan", P, V.facet("ubar_f", F, x) - V.facet("ubar_b", F, x))
        out = out + coef * np.einsum("p,pam,pan->nm", w, du, dv)
    return np.asarray(out)


def form_bI(dm: DofMap, V_in, Q_in) -> np.ndarray:
    """``<qbar^p, (vbar^f - vbar^b) . n^f>``; rows follow the velocity block, columns the pressure block."""
    mesh, k = dm.mesh, dm.config.k
    Vf, Qf = FieldEvaluator(dm, V_in), FieldEvaluator(dm, Q_in)
    out = 0.0
    for F in mesh.facets_tagged(FacetTag.INTERFACE):
        n = _interface_normal(mesh, F)
        x, w = _facet_points(mesh, F, _nq(k))
        jn = np.einsum("pan,a->pn", Vf.facet("ubar_f", F, x) - Vf.facet("ubar_b", F, x), n)
        q = Qf.facet("ppbar", F, x)[:, 0]
        out = out + np.einsum("p,pn,pm->nm", w, jn, q)
    return np.asarray(out)


def form_th(dm: DofMap, W, X, Y) -> np.ndarray:
    """Convection form ``t_h(w; u, v)`` with ``w`` the element velocity of the block ``W``.

    Facets are cut at the real roots of ``w.n`` so that the upwind term
    ``|w.n|`` is integrated exactly.
    """
    mesh, k = dm.mesh, dm.config.k
    Wf, U, V = FieldEvaluator(dm, W), FieldEvaluator(dm, X), FieldEvaluator(dm, Y)
    out = 0.0
    nq = _nq(2 * k)
    for K in mesh.cells_of(FLUID):
        x, w = _cell_points(mesh, K, nq)
        wv, _ = Wf.cell("u", K, x)
        u, _ = U.cell("u", K, x)
        _, gv = V.cell("u", K, x)
        out = out - np.einsum("p,pam,pb,pabn->nm", w, u, wv[..., 0], gv)
        for F in mesh.cell_facets[K]:
            n = _outward(mesh, K, F)
            wn_at = lambda y, K=K, n=n: Wf.cell("u", K, y)[0][..., 0] @ n
            x, w = _split_facet_points(mesh, F, nq, wn_at, k)
            wn = wn_at(x)
            u, _ = U.cell("u", K, x)
            v, _ = V.cell("u", K, x)
            ub, vb = U.facet("ubar_f", F, x), V.facet("ubar_f", F, x)
            out = out + 0.5 * np.einsum("p,p,pam,pan->nm", w, wn, u + ub, v - vb)
            out = out + 0.5 * np.einsum("p,p,pam,pan->nm", w, np.abs(wn), u - ub, v - vb)
    for F in mesh.facets_tagged(FacetTag.INTERFACE, FacetTag.NEUMANN_F):
        K = [c for c in mesh.facet_cells[F] if c >= 0 and mesh.cell_domain[c] == FLUID][0]
        n = _outward(mesh, K, F)
        x, w = _facet_points(mesh, F, nq)
        wn = Wf.cell("u", K, x)[0][..., 0] @ n
        out = out + np.einsum("p,p,pam,pan->nm", w, wn, U.facet("ubar_f", F, x), V.facet("ubar_f", F, x))
    return np.asarray(out)


def th_positivity_rhs(dm: DofMap, W, Y) -> np.ndarray:
    """Right side of the energy identity for ``t_h(w; v, v)``.

    ``1/2 <|w.n|, |v - vbar|^2>`` over fluid cell boundaries plus
    ``1/2 <w.n, |vbar|^2>`` on interface and fluid Neumann facets.  The
    identity holds for divergence-free ``w`` with continuous normal
    component and ``vbar = 0`` on the fluid Dirichlet boundary.
    """
    mesh, k = dm.mesh, dm.config.k
    Wf, V = FieldEvaluator(dm, W), FieldEvaluator(dm, Y)
    out = 0.0
    nq = _nq(2 * k)
    for K in mesh.cells_of(FLUID):
        for F in mesh.cell_facets[K]:
            n = _outward(mesh, K, F)
            wn_at = lambda y, K=K, n=n: Wf.cell("u", K, y)[0][..., 0] @ n
            x, w = _split_facet_points(mesh, F, nq, wn_at, k)
            wn = wn_at(x)
            v, _ = V.cell("u", K, x)
            j = v - V.facet("ubar_f", F, x)
            out = out + 0.5 * np.einsum("p,p,pan,pan->n", w, np.abs(wn), j, j)
    for F in mesh.facets_tagged(FacetTag.INTERFACE, FacetTag.NEUMANN_F):
        K = [c for c in mesh.facet_cells[F] if c >= 0 and mesh.cell_domain[c] == FLUID][0]
        n = _outward(mesh, K, F)
        x, w = _facet_points(mesh, F, nq)
        wn = Wf.cell("u", K, x)[0][..., 0] @ n
        vb = V.facet("ubar_f", F, x)
        out = out + 0.5 * np.einsum("p,p,pan,pan->n", w, wn, vb, vb)
    return np.asarray(out)


def cell_mass_form(dm: DofMap, name, cells, X, Y, coef=1.0, test_name=None) -> np.ndarray:
    """``coef (u, v)`` over ``cells``; the test field defaults to the trial field ``name``."""
    mesh, k = dm.mesh, dm.config.k
    U, V = FieldEvaluator(dm, X), FieldEvaluator(dm, Y)
    out = 0.0
    for K in cells:
        x, w = _cell_points(mesh, K, _nq(k))
        u, _ = U.cell(name, K, x)
        v, _ = V.cell(test_name or name, K, x)
        out = out + coef * np.einsum("p,pam,pan->nm", w, u, v)
    return np.asarray(out)
