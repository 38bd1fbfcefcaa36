"""Error measurement, convergence rates, mesh-dependent norms and structural diagnostics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import dim_cell, eval_cell_basis, eval_cell_hessian
from .dofmap import DofMap, SpaceConfig, build_dofmap
from .forms import (
    LocalBlocks,
    _block_diag2,
    _scalar_traces,
    _strain_ops,
    _vector_traces,
    assemble_bh,
    assemble_bh_darcy,
    interface_pair_dofs,
    pressure_pair_dofs,
    to_matrix,
    velocity_pair_dofs,
)
from .geometry import BoundaryQuadrature, CellQuadrature, FacetQuadrature, affine_maps
from .interpolation import bdm_interpolate, l2_project  # noqa: F401  (public re-exports)
from .mesh import FLUID, PORO, FacetTag, Mesh

FIELDS = ("u_f", "p_f", "u_b", "p_b", "z", "p_p")
# (field, subdomain, coefficient block, exact evaluator name, vector?)
_FIELD_INFO = {
    "u_f": (FLUID, "u", "u_f", True),
    "p_f": (FLUID, "p", "p_f", False),
    "u_b": (PORO, "u", "u_b", True),
    "p_b": (PORO, "p", "p_b", False),
    "z": (PORO, "z", "z", True),
    "p_p": (PORO, "pp", "p_p", False),
}
INFSUP_MAX_DIM = 6000


@dataclass
class ErrorRecord:
    level: int
    h: float
    n_cells: int
    dt: float
    errors: dict = field(default_factory=dict)
    divergence: float = 0.0

    def __post_init__(self):
        vals = list(self.errors.values()) + [self.h, self.dt, self.divergence]
        if any(not (math.isfinite(v) and v >= 0) for v in vals):
            raise ValueError(f"error record entries must be finite and nonnegative: {self}")


# ---------------------------------------------------------------- errors


def _field_degree(k: int, block: str) -> int:
    return k - 1 if block in ("p", "pp") else k


def field_values(state, name: str, cq: CellQuadrature) -> np.ndarray:
    """Discrete field ``name`` at the points of ``cq`` as ``(nc, nq, ncomp)``."""
    _, block, _, _ = _FIELD_INFO[name]
    k = state.dofmap.config.k
    return cq.evaluate(_field_degree(k, block), state.x[state.dofmap.entity_dofs(block, cq.cells)])


def divergence_values(state, cells, degree: int) -> tuple[np.ndarray, CellQuadrature]:
    cq = CellQuadrature(state.dofmap.mesh, cells, degree)
    k = state.dofmap.config.k
    g = cq.evaluate_grad(k, state.x[state.dofmap.entity_dofs("u", cells)])
    return g[..., 0, 0] + g[..., 1, 1], cq


def compute_errors(state, mms, t=None, level: int = 0, dt: float = 0.0) -> ErrorRecord:
    """L2 errors of all six fields and ``||div u_h^f||`` with ``2k + 6`` exact quadrature."""
    mesh = state.dofmap.mesh
    k = state.dofmap.config.k
    t = state.time if t is None else t
    deg = 2 * k + 6
    errs = {}
    for name in FIELDS:
        dom, _, exact, vec = _FIELD_INFO[name]
        cq = CellQuadrature(mesh, mesh.cells_of(dom), deg)
        ex = np.asarray(getattr(mms, exact)(cq.x, t))
        if not vec:
            ex = ex[..., None]
        diff = field_values(state, name, cq) - ex
        errs[name] = float(np.sqrt(np.sum(cq.w * np.sum(diff ** 2, axis=-1))))
    div, cq = divergence_values(state, mesh.cells_of(FLUID), deg)
    return ErrorRecord(level, mesh.h_max, mesh.n_cells, dt, errs, float(np.sqrt(np.sum(cq.w * div ** 2))))


def convergence_rates(records, by: str = "h") -> list[dict]:
    """Observed orders between consecutive records.

    ``by`` selects the refinement parameter (``"h"`` or ``"dt"``); for a
    halving ladder the rate is ``log2(e_coarse / e_fine)``.  A zero or
    non-finite ratio yields ``nan``.
    """
    records = list(records)
    if len(records) < 2:
        raise ValueError("at least two records are needed for a rate")
    out = []
    for a, b in zip(records[:-1], records[1:]):
        sa, sb = getattr(a, by), getattr(b, by)
        row = {}
        for f in a.errors:
            ea, eb = a.errors[f], b.errors.get(f, 0.0)
            if ea > 0 and eb > 0 and sa > 0 and sb > 0 and sa != sb:
                row[f] = math.log(ea / eb) / math.log(sa / sb)
            else:
                row[f] = float("nan")
        out.append(row)
    return out


# ---------------------------------------------------------------- norms


def _cells_pullback(mesh: Mesh, cells, x) -> np.ndarray:
    x0, _, _, invJ = affine_maps(mesh, cells)
    return np.einsum("cij,cqj->cqi", invJ, x - x0[:, None, :])


def _velocity_norm_blocks(dofmap: DofMap, domain: int, second: bool = False) -> LocalBlocks:
    mesh, k = dofmap.mesh, dofmap.config.k
    cells = mesh.cells_of(domain)
    deg = 2 * k + 2
    cq = CellQuadrature(mesh, cells, deg)
    E = _strain_ops(cq.grad(k))
    vol = np.einsum("cq,cqabi,cqabj->cij", cq.w, E, E)
    bq = BoundaryQuadrature(mesh, cells, deg)
    V, Vb = _vector_traces(bq, k)
    J = V - Vb
    G = np.einsum("cfq,c,cfqai,cfqaj->cij", bq.w, 1.0 / bq.h, J, J)
    if second:
        Href = eval_cell_hessian(k, cq.rule.points)
        H = np.einsum("qbij,cia,cjd->cqbad", Href, cq.invJ, cq.invJ)
        s = np.einsum("cq,c,cqiad,cqjad->cij", cq.w, bq.h ** 2, H, H)
        vol = vol + _block_diag2(s)
    G[:, : vol.shape[1], : vol.shape[2]] += vol
    d = velocity_pair_dofs(dofmap, domain, cells)
    return LocalBlocks(d, d, G)


def _pressure_norm_blocks(dofmap: DofMap, domain: int, darcy: bool) -> LocalBlocks:
    """``||q||^2 + sum h_K ||qbar||^2_{dK}``."""
    mesh, k = dofmap.mesh, dofmap.config.k
    cells = mesh.cells_of(domain)
    cq = CellQuadrature(mesh, cells, 2 * k)
    phi = cq.phi(k - 1)
    bq = BoundaryQuadrature(mesh, cells, 2 * k)
    _, Qb = _scalar_traces(bq, k)
    G = np.einsum("cfq,c,cfqi,cfqj->cij", bq.w, bq.h, Qb, Qb)
    nbp = phi.shape[1]
    G[:, :nbp, :nbp] += np.einsum("cq,qi,qj->cij", cq.w, phi, phi)
    d = pressure_pair_dofs(dofmap, domain, cells, darcy=darcy)
    return LocalBlocks(d, d, G)


def _hdg_h1_blocks(dofmap: DofMap) -> LocalBlocks:
    """``sum ||grad q||^2 + h_K^{-1} ||q - qbar||^2_{dK}`` on the Darcy pressure pair."""
    mesh, k = dofmap.mesh, dofmap.config.k
    cells = mesh.cells_of(PORO)
    cq = CellQuadrature(mesh, cells, 2 * k)
    g = cq.grad(k - 1)
    bq = BoundaryQuadrature(mesh, cells, 2 * k)
    Q, Qb = _scalar_traces(bq, k)
    J = Q - Qb
    G = np.einsum("cfq,c,cfqi,cfqj->cij", bq.w, 1.0 / bq.h, J, J)
    nbp = g.shape[2]
    G[:, :nbp, :nbp] += np.einsum("cq,cqia,cqja->cij", cq.w, g, g)
    d = pressure_pair_dofs(dofmap, PORO, cells, darcy=True)
    return LocalBlocks(d, d, G)


def _broken_h1_blocks(dofmap: DofMap) -> list[LocalBlocks]:
    """``sum ||grad q||^2 + sum_F h_F^{-1} ||[q]||_F^2`` over interior and Γ_P poro facets."""
    mesh, k = dofmap.mesh, dofmap.config.k
    cells = mesh.cells_of(PORO)
    cq = CellQuadrature(mesh, cells, 2 * k)
    g = cq.grad(k - 1)
    out = [LocalBlocks(*(2 * (dofmap.entity_dofs("pp", cells),)), np.einsum("cq,cqia,cqja->cij", cq.w, g, g))]
    facets = mesh.facets_tagged(FacetTag.INTERIOR_B, FacetTag.DIRICHLET_B)
    fq = FacetQuadrature(mesh, facets, 2 * k)
    nb = dim_cell(k - 1)
    c0 = mesh.facet_cells[facets, 0]
    c1 = mesh.facet_cells[facets, 1]
    phi0 = eval_cell_basis(k - 1, _cells_pullback(mesh, c0, fq.x).reshape(-1, 2))[0].reshape(len(facets), -1, nb)
    interior = c1 >= 0
    c1s = np.where(interior, c1, c0)
    phi1 = eval_cell_basis(k - 1, _cells_pullback(mesh, c1s, fq.x).reshape(-1, 2))[0].reshape(len(facets), -1, nb)
    phi1 = phi1 * interior[:, None, None]
    J = np.concatenate([phi0, -phi1], axis=2)
    G = np.einsum("fq,f,fqi,fqj->fij", fq.w, 1.0 / fq.length, J, J)
    d = np.concatenate([dofmap.entity_dofs("pp", c0), dofmap.entity_dofs("pp", c1s)], axis=1)
    out.append(LocalBlocks(d, d, G))
    return out


def _interface_tangential_blocks(dofmap: DofMap) -> LocalBlocks:
    mesh, k = dofmap.mesh, dofmap.config.k
    facets = mesh.facets_tagged(FacetTag.INTERFACE)
    fq = FacetQuadrature(mesh, facets, 2 * k)
    psi = fq.psi(k)
    nf = k + 1
    D = np.zeros((len(facets), len(psi), 2, 4 * nf))
    for a in range(2):
        D[:, :, a, a * nf:(a + 1) * nf] = psi
        D[:, :, a, 2 * nf + a * nf:2 * nf + (a + 1) * nf] = -psi
    n = fq.normal
    P = np.eye(2)[None] - n[:, :, None] * n[:, None, :]
    G = np.einsum("fq,fqai,fab,fqbj->fij", fq.w, D, P, D)
    d = interface_pair_dofs(dofmap, facets)
    return LocalBlocks(d, d, G)


NORMS = ("v_f", "v_b", "v'_f", "v'_b", "v", "q_f", "q_b", "q_p", "1h_b", "1hb")


def norm_matrix(dofmap: DofMap, which: str):
    """Sparse Gram matrix ``G`` with ``|||x|||^2 = x^T G x`` over all dofs.

    ``which``: ``v_f``/``v_b`` (velocity pair energy norm), ``v'_f``/``v'_b``
    (plus ``h_K^2 |v|_2^2``), ``v`` (both plus the tangential interface
    jump), ``q_f``/``q_b`` (pressure pair), ``q_p`` (Darcy pressure pair),
    ``1h_b`` (broken H1 of the pore pressure) and ``1hb`` (HDG H1 of the
    Darcy pressure pair).
    """
    n = dofmap.n_dofs
    if which in ("v_f", "v_b", "v'_f", "v'_b"):
        dom = FLUID if which.endswith("f") else PORO
        blocks = [_velocity_norm_blocks(dofmap, dom, second=which.startswith("v'"))]
    elif which == "v":
        blocks = [_velocity_norm_blocks(dofmap, FLUID), _velocity_norm_blocks(dofmap, PORO),
                  _interface_tangential_blocks(dofmap)]
    elif which in ("q_f", "q_b"):
        blocks = [_pressure_norm_blocks(dofmap, FLUID if which == "q_f" else PORO, darcy=False)]
    elif which == "q_p":
        blocks = [_pressure_norm_blocks(dofmap, PORO, darcy=True)]
    elif which == "1h_b":
        blocks = _broken_h1_blocks(dofmap)
    elif which == "1hb":
        blocks = [_hdg_h1_blocks(dofmap)]
    else:
        raise KeyError(which)
    return to_matrix(blocks, n)


def triple_norms(state_or_x, which: str, dofmap: DofMap | None = None) -> float:
    """Mesh-dependent norm ``which`` (see :func:`norm_matrix`) of a state or coefficient vector."""
    if dofmap is None:
        dofmap = state_or_x.dofmap
        x = state_or_x.x
    else:
        x = np.asarray(state_or_x, dtype=float)
    G = norm_matrix(dofmap, which)
    return float(np.sqrt(max(x @ (G @ x), 0.0)))


# ---------------------------------------------------------------- structural checks


def _facet_normal_jumps(state, facets) -> np.ndarray:
    mesh = state.dofmap.mesh
    k = state.dofmap.config.k
    if len(facets) == 0:
        return np.zeros(0)
    fq = FacetQuadrature(mesh, facets, 2 * k)
    c0, c1 = mesh.facet_cells[facets, 0], mesh.facet_cells[facets, 1]
    vals = []
    for c in (c0, c1):
        phi = eval_cell_basis(k, _cells_pullback(mesh, c, fq.x).reshape(-1, 2))[0].reshape(len(facets), -1, dim_cell(k))
        coef = state.x[state.dofmap.entity_dofs("u", c)].reshape(len(facets), 2, -1)
        vals.append(np.einsum("fqb,fab->fqa", phi, coef))
    return np.einsum("fqa,fa->fq", vals[0] - vals[1], fq.normal)


def structural_checks(state, params, data=None, prev=None, data_degree=None) -> dict:
    """Maximal quadrature-point residuals of the structural invariants.

    Returns ``divergence`` (``max |div u_h|`` on fluid cells),
    ``divergence_l2``, ``compressibility``, ``normal_jump`` (interior facets
    of both subdomains) and, when ``prev`` is given, ``mass_balance``: the
    largest moment ``|(r, q_i)_K|`` relative to the largest moment of the
    individual terms.
    """
    dm = state.dofmap
    mesh, k = dm.mesh, dm.config.k
    deg = 2 * k + 2
    out = {}
    div_f, cq = divergence_values(state, mesh.cells_of(FLUID), deg)
    out["divergence"] = float(np.abs(div_f).max(initial=0.0))
    out["divergence_l2"] = float(np.sqrt(np.sum(cq.w * div_f ** 2)))

    pc = mesh.cells_of(PORO)
    div_b, cqb = divergence_values(state, pc, deg)
    pp = cqb.evaluate(k - 1, state.x[dm.entity_dofs("pp", pc)])[..., 0]
    pb = cqb.evaluate(k - 1, state.x[dm.entity_dofs("p", pc)])[..., 0]
    out["compressibility"] = float(np.abs(-div_b + (params.alpha * pp - pb) / params.lam).max(initial=0.0))

    inner = mesh.facets_tagged(FacetTag.INTERIOR_F, FacetTag.INTERIOR_B)
    jumps = _facet_normal_jumps(state, inner)
    out["normal_jump"] = float(np.abs(jumps).max(initial=0.0))

    if prev is not None:
        res, scale = _mass_balance(state, prev, params, data, data_degree)
        out["mass_balance"] = float(np.abs(res).max(initial=0.0) / max(scale, np.finfo(float).tiny))
    return out


def _mass_balance(state, prev, params, data, data_degree=None, pointwise: bool = False):
    dm = state.dofmap
    mesh, k = dm.mesh, dm.config.k
    dt = state.time - prev.time
    if not dt > 0:
        raise ValueError("mass balance needs two distinct time levels")
    pc = mesh.cells_of(PORO)
    deg = data_degree if data_degree is not None else 2 * k + 6
    cq = CellQuadrature(mesh, pc, deg)
    phi = cq.phi(k - 1)

    def vals(st, name):
        return cq.evaluate(k - 1, st.x[dm.entity_dofs(name, pc)])[..., 0]

    dpp = (vals(state, "pp") - vals(prev, "pp")) / dt
    dpb = (vals(state, "p") - vals(prev, "p")) / dt
    gz = cq.evaluate_grad(k, state.x[dm.entity_dofs("z", pc)])
    divz = gz[..., 0, 0] + gz[..., 1, 1]
    g = np.asarray(data.g_b(cq.x, state.time)) if data is not None else np.zeros_like(divz)
    a = params.alpha
    terms = [params.c0 * dpp, a / params.lam * (a * dpp - dpb), divz, -g]
    r = sum(terms)
    if pointwise:
        return r, max(float(np.abs(t).max(initial=0.0)) for t in terms)
    mom = [np.einsum("cq,cq,qi->ci", cq.w, t, phi) for t in terms]
    res = sum(mom)
    scale = max(float(np.abs(m).max(initial=0.0)) for m in mom)
    return res, scale


def mass_balance_pointwise(state, prev, params, data=None, data_degree=None) -> float:
    """Largest quadrature-point value of the mass-balance residual."""
    r, _ = _mass_balance(state, prev, params, data, data_degree, pointwise=True)
    return float(np.abs(r).max(initial=0.0))


# ---------------------------------------------------------------- inf-sup


def _restricted_gram(G, keep, tol=1e-12):
    """Orthonormal-range factor ``R`` with ``G|_keep = R^T R`` after dropping the kernel."""
    Gd = G[keep][:, keep].toarray()
    w, U = np.linalg.eigh(0.5 * (Gd + Gd.T))
    pos = w > tol * max(w.max(initial=0.0), 1.0)
    # basis of the range scaled so that the norm becomes Euclidean
    return U[:, pos] / np.sqrt(w[pos])


def estimate_infsup(mesh: Mesh, k: int, which: str, max_dim: int = INFSUP_MAX_DIM) -> float:
    """Smallest generalized singular value of a pressure coupling.

    ``which`` is ``"bf"``/``"bb"`` (single subdomain, facet velocity zero on
    the interface and the Dirichlet boundary), ``"b"`` (both subdomains,
    facet normal velocities matching across the interface) or ``"bp"``
    (Darcy flux against the pore pressure pair, facet values zero on Γ_P).
    Velocity-norm kernels (rigid motions) are eliminated; they do not see
    the coupling.
    """
    dm = build_dofmap(mesh, SpaceConfig(k))
    n = dm.n_dofs
    iface = mesh.facets_tagged(FacetTag.INTERFACE)
    if which in ("bf", "bb"):
        dom = FLUID if which == "bf" else PORO
        bar = "ubar_f" if dom == FLUID else "ubar_b"
        B = to_matrix(assemble_bh(dom, dm), n)
        vel = np.unique(velocity_pair_dofs(dm, dom, mesh.cells_of(dom)))
        drop = dm.dirichlet.copy()
        if len(iface):
            drop[dm.entity_dofs(bar, iface).ravel()] = True
        vel = vel[~drop[vel]]
        pres = np.unique(pressure_pair_dofs(dm, dom, mesh.cells_of(dom)))
        V = norm_matrix(dm, "v_f" if dom == FLUID else "v_b")
        Q = norm_matrix(dm, "q_f" if dom == FLUID else "q_b")
        constraint = None
    elif which == "b":
        B = to_matrix([assemble_bh(FLUID, dm), assemble_bh(PORO, dm)], n)
        vel = np.concatenate([np.unique(velocity_pair_dofs(dm, d, mesh.cells_of(d))) for d in (FLUID, PORO)])
        vel = np.unique(vel)
        vel = vel[~dm.dirichlet[vel]]
        pres = np.unique(np.concatenate(
            [np.unique(pressure_pair_dofs(dm, d, mesh.cells_of(d))) for d in (FLUID, PORO)]))
        V = norm_matrix(dm, "v")
        Q = norm_matrix(dm, "q_f") + norm_matrix(dm, "q_b")
        constraint = _normal_matching(dm, iface, vel)
    elif which == "bp":
        B = to_matrix(assemble_bh_darcy(dm), n)
        vel = dm.entity_dofs("z", mesh.cells_of(PORO)).ravel()
        pres = np.unique(pressure_pair_dofs(dm, PORO, mesh.cells_of(PORO), darcy=True))
        pres = pres[~dm.dirichlet[pres]]
        V = to_matrix(_z_mass(dm), n)
        Q = norm_matrix(dm, "q_p")
        constraint = None
    else:
        raise KeyError(which)
    if len(vel) + len(pres) > max_dim:
        raise ValueError(f"inf-sup estimate limited to {max_dim} dofs, got {len(vel) + len(pres)}")

    Rv = _restricted_gram(V, vel)
    if constraint is not None:
        # restrict to the null space of the matching constraint, then re-orthonormalise
        Z = sla.null_space(constraint)
        Vd = V[vel][:, vel].toarray()
        Gz = Z.T @ Vd @ Z
        w, U = np.linalg.eigh(0.5 * (Gz + Gz.T))
        pos = w > 1e-12 * max(w.max(initial=0.0), 1.0)
        Rv = Z @ (U[:, pos] / np.sqrt(w[pos]))
    Rq = _restricted_gram(Q, pres)
    Bd = B[vel][:, pres].toarray()
    M = Rv.T @ Bd @ Rq
    s = np.linalg.svd(M, compute_uv=False)
    if M.shape[1] > M.shape[0]:
        return 0.0
    return float(s[-1]) if s.size else 0.0


def _normal_matching(dm: DofMap, iface, vel):
    """Rows enforcing ``vbar_f . n = vbar_b . n`` coefficientwise on interface facets."""
    if len(iface) == 0:
        return None
    pos = -np.ones(dm.n_dofs, dtype=np.int64)
    pos[vel] = np.arange(len(vel))
    k = dm.config.k
    nf = k + 1
    rows = []
    for f in iface:
        nrm = dm.mesh.facet_normal[f]
        df = dm.entity_dofs("ubar_f", [f])[0]
        db = dm.entity_dofs("ubar_b", [f])[0]
        for i in range(nf):
            r = np.zeros(len(vel))
            for a in range(2):
                if pos[df[a * nf + i]] >= 0:
                    r[pos[df[a * nf + i]]] += nrm[a]
                if pos[db[a * nf + i]] >= 0:
                    r[pos[db[a * nf + i]]] -= nrm[a]
            rows.append(r)
    return np.array(rows)


def _z_mass(dm: DofMap) -> LocalBlocks:
    mesh, k = dm.mesh, dm.config.k
    cells = mesh.cells_of(PORO)
    cq = CellQuadrature(mesh, cells, 2 * k)
    phi = cq.phi(k)
    m = _block_diag2(np.einsum("cq,qi,qj->cij", cq.w, phi, phi))
    d = dm.entity_dofs("z", cells)
    return LocalBlocks(d, d, m)


# ---------------------------------------------------------------- reports


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6e}"
    return str(v)


def records_to_csv(records, rates=None, by: str = "h") -> str:
    """CSV text: one header row and one row per record (rates blank on the first)."""
    rates = convergence_rates(records, by) if rates is None and len(records) > 1 else (rates or [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["level", "h", "cells", "dt"]
    for f in FIELDS:
        header += [f"err_{f}", f"rate_{f}"]
    header.append("divergence")
    w.writerow(header)
    for i, r in enumerate(records):
        row = [r.level, _fmt(r.h), r.n_cells, _fmt(r.dt)]
        for f in FIELDS:
            row += [_fmt(r.errors.get(f, float("nan"))), _fmt(rates[i - 1].get(f, float("nan"))) if i > 0 and rates else ""]
        row.append(_fmt(r.divergence))
        w.writerow(row)
    return buf.getvalue()


_LABELS = {
    "u_f": "‖u_h^f − u^f‖", "p_f": "‖p_h^f − p^f‖", "u_b": "‖u_h^b − u^b‖",
    "p_b": "‖p_h^b − p^b‖", "z": "‖z_h − z‖", "p_p": "‖p_h^p − p^p‖",
}


def records_to_markdown(records, rates=None, by: str = "h", title: str = "") -> str:
    """Two tables (fluid, poroelastic) with error and rate columns."""
    rates = convergence_rates(records, by) if rates is None and len(records) > 1 else (rates or [])
    first = "Cells" if by == "h" else "Δt"
    lines = [f"## {title}", ""] if title else []
    for group, extra in ((("u_f", "p_f"), True), (("u_b", "p_b", "z", "p_p"), False)):
        head = [first] + [c for f in group for c in (_LABELS[f], "r")]
        if extra:
            head.append("‖∇·u_h^f‖")
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for i, r in enumerate(records):
            row = [str(r.n_cells) if by == "h" else f"{r.dt:.3e}"]
            for f in group:
                rate = rates[i - 1].get(f, float("nan")) if i > 0 and rates else None
                row += [f"{r.errors.get(f, float('nan')):.1e}", "-" if rate is None else ("nan" if math.isnan(rate) else f"{rate:.1f}")]
            if extra:
                row.append(f"{r.divergence:.1e}")
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)
