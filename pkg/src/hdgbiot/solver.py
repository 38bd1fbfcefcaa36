"""Backward Euler time stepping with lagged convection and a monolithic solve.

Each step solves ``(A0 + D / dt + T(u^n)) x^{n+1} = F^{n+1} + D x^n / dt``
where ``A0`` collects every time-independent form, ``D`` every form acting
on a time derivative and ``T`` the convection operator frozen at the
previous fluid velocity.  Dirichlet facet dofs are fixed to L2 projections
of the boundary data and eliminated from the system.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dofmap import DofMap, SpaceConfig, build_dofmap
from .forms import (
    QUAD_FORM,
    ModelParameters,
    assemble_ah,
    assemble_bh,
    assemble_bh_darcy,
    assemble_ch,
    assemble_interface_forms,
    assemble_th,
    cell_mass,
)
from .geometry import CellQuadrature, FacetQuadrature
from .interpolation import bdm_interpolate, l2_project_cells, l2_project_facets
from .linalg import LinearSystem, ReusedFactorization, Triplets, lu_solve
from .mesh import FLUID, PORO, FacetTag, Mesh

log = logging.getLogger(__name__)


class ZeroData:
    """Homogeneous data: zero forcing, boundary values and interface corrections."""

    @staticmethod
    def _v(x):
        return np.zeros(np.shape(x)[:-1] + (2,))

    @staticmethod
    def _s(x):
        return np.zeros(np.shape(x)[:-1])

    def f_f(self, x, t):
        return self._v(x)

    f_b = U_f = U_b = u_f = u_b = z = f_f

    def g_b(self, x, t):
        return self._s(x)

    P_p = M_u = M_p = p_f = p_p = p_b = g_b

    def M_s(self, x, t):
        return self._v(x)

    M_e = M_s

    def S_f(self, x, t, n):
        return self._v(x)

    S_b = S_f

    def Z_d(self, x, t, n):
        return self._s(x)


@dataclass(frozen=True)
class TimeGrid:
    final_time: float
    n_steps: int

    def __post_init__(self):
        if not self.final_time > 0 or self.n_steps < 1:
            raise ValueError("need a positive final time and at least one step")

    @classmethod
    def from_dt(cls, final_time: float, dt: float) -> "TimeGrid":
        """Uniform grid with ``ceil(T / dt)`` steps (the step is shrunk to land on ``T``)."""
        return cls(final_time, max(1, math.ceil(final_time / dt - 1e-9)))

    @property
    def dt(self) -> float:
        return self.final_time / self.n_steps

    def time(self, n: int) -> float:
        return n * self.dt


@dataclass(frozen=True, eq=False)
class SystemState:
    """Coefficient vector of all nine fields at one time level."""

    dofmap: DofMap
    step: int
    time: float
    x: np.ndarray

    def field(self, name: str) -> np.ndarray:
        """Per-entity coefficients ``(n_entities, n_local)`` of one field."""
        f = self.dofmap[name]
        return self.x[f.dofs]

    def fluid_velocity(self) -> np.ndarray:
        return self.x[self.dofmap.entity_dofs("u", self.dofmap.mesh.cells_of(FLUID))]


@dataclass
class ConstrainedSystem(LinearSystem):
    """A linear system on the free dofs plus the fixed Dirichlet values."""

    free: np.ndarray = field(default=None)
    fixed_values: np.ndarray = field(default=None)

    def expand(self, x_free) -> np.ndarray:
        x = self.fixed_values.copy()
        x[self.free] = x_free
        return x


# ---------------------------------------------------------------- load vectors


def _cell_load(dofmap: DofMap, name: str, cells, func, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Dofs and values of ``(f, v)`` over ``cells`` for the cell field ``name``."""
    space = dofmap[name].space
    cq = CellQuadrature(dofmap.mesh, cells, degree)
    vals = np.asarray(func(cq.x), dtype=float)
    if space.ncomp == 1:
        vals = vals[..., None]
    b = np.einsum("cq,cqm,qi->cmi", cq.w, vals, cq.phi(space.degree))
    return dofmap.entity_dofs(name, cells), b.reshape(len(cells), -1)


def _facet_load(dofmap: DofMap, name: str, facets, func, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Dofs and values of ``<g, vbar>`` for ``func(x, n)`` with facet normals ``n``."""
    space = dofmap[name].space
    fq = FacetQuadrature(dofmap.mesh, facets, degree)
    vals = np.asarray(func(fq.x, fq.normal[:, None, :]), dtype=float)
    if space.ncomp == 1:
        vals = vals[..., None]
    b = np.einsum("fq,fqm,qi->fmi", fq.w, vals, fq.psi(space.degree))
    return dofmap.entity_dofs(name, facets), b.reshape(len(facets), -1)


class Discretization:
    """Mesh, spaces and the time-independent operators of the coupled problem.

    Parameters
    ----------
    mesh : Mesh
        Two-subdomain triangulation.
    k : int
        Polynomial degree.
    params : ModelParameters
        Physical and penalty parameters.
    data : object, optional
        Provider of forcing, boundary data and interface corrections (for
        example a :class:`~hdgbiot.mms.ManufacturedSolution`); homogeneous
        data if omitted.
    data_degree : int, optional
        Quadrature exactness for data integrals, ``2k + 6`` by default.
    """

    def __init__(self, mesh: Mesh, k: int, params: ModelParameters, data=None, data_degree=None):
        self.mesh = mesh
        self.k = k
        self.params = params
        self.data = data if data is not None else ZeroData()
        self.data_degree = data_degree if data_degree is not None else 2 * k + 6
        self.dofmap = build_dofmap(mesh, SpaceConfig(k))
        self.free = np.flatnonzero(~self.dofmap.dirichlet)
        self.fixed = np.flatnonzero(self.dofmap.dirichlet)
        self.A0, self.D = self._static_operators()
        self._dt_cache = None

    # ------------------------------------------------------------ operators

    def _static_operators(self):
        dm, pr = self.dofmap, self.params
        n = dm.n_dofs
        A0, D = Triplets((n, n)), Triplets((n, n))

        # momentum rows
        for dom in (FLUID, PORO):
            assemble_ah(dom, dm, pr).scatter(A0)
            B = assemble_bh(dom, dm)
            B.scatter(A0)
            # continuity rows
            B.transpose().scatter(A0)
        cell_mass(dm, "u", cells=self.mesh.cells_of(FLUID)).scatter(D)

        aI, bI = assemble_interface_forms(dm, pr)
        is_ubf = np.zeros(n, dtype=bool)
        is_ubf[dm.block("ubar_f")] = True
        aI.restrict_cols(is_ubf).scatter(A0)
        aI.restrict_cols(~is_ubf).scatter(D)
        bI.scatter(A0)
        bIt = bI.transpose()
        bIt.restrict_cols(is_ubf).scatter(A0, -1.0)
        bIt.restrict_cols(~is_ubf).scatter(D, -1.0)

        # compressibility of the total pressure
        c_pp, c_p = assemble_ch(dm, pr)
        c_pp.scatter(A0)
        c_p.scatter(A0)

        # storage terms of the mass balance
        cell_mass(dm, "pp", coef=pr.c0 + pr.alpha ** 2 / pr.lam).scatter(D)
        # -alpha/lam (p, q^p): the c_p block with its rows moved to the pore pressure
        pp_rows = dm.entity_dofs("pp", self.mesh.cells_of(PORO))
        D.add(pr.alpha * c_p.values, pp_rows, c_p.cols)

        # Darcy law and flux divergence
        Bz = assemble_bh_darcy(dm)
        Bz.scatter(A0)
        Bz.transpose().scatter(A0, -1.0)
        cell_mass(dm, "z", coef=pr.mu_f / pr.kappa).scatter(A0)
        return A0.tocsr(), D.tocsr()

    def convection(self, w_coeffs) -> sp.csr_matrix:
        n = self.dofmap.n_dofs
        t = Triplets((n, n))
        for b in assemble_th(w_coeffs, self.dofmap):
            b.scatter(t)
        return t.tocsr()

    def system_matrix(self, dt: float, w_coeffs) -> sp.csr_matrix:
        if self._dt_cache is None or self._dt_cache[0] != dt:
            self._dt_cache = (dt, (self.A0 + self.D / dt).tocsr())
        return (self._dt_cache[1] + self.convection(w_coeffs)).tocsr()

    # ------------------------------------------------------------ data

    def load_vector(self, t: float) -> np.ndarray:
        """Volume forcing and interface corrections at time ``t``."""
        dm, mesh, data, deg = self.dofmap, self.mesh, self.data, self.data_degree
        F = np.zeros(dm.n_dofs)

        def add(pair, scale=1.0):
            np.add.at(F, pair[0], scale * pair[1])

        add(_cell_load(dm, "u", mesh.cells_of(FLUID), lambda x: data.f_f(x, t), deg))
        add(_cell_load(dm, "u", mesh.cells_of(PORO), lambda x: data.f_b(x, t), deg))
        add(_cell_load(dm, "pp", mesh.cells_of(PORO), lambda x: data.g_b(x, t), deg))

        gi = mesh.facets_tagged(FacetTag.INTERFACE)
        if len(gi):
            def jump_load(x, n):
                return data.M_p(x, t)[..., None] * n + data.M_e(x, t)

            add(_facet_load(dm, "ubar_f", gi, jump_load, deg), -1.0)
            add(_facet_load(dm, "ubar_b", gi, jump_load, deg), 1.0)
            add(_facet_load(dm, "ubar_b", gi, lambda x, n: data.M_s(x, t), deg), -1.0)
            add(_facet_load(dm, "ppbar", gi, lambda x, n: data.M_u(x, t), deg), -1.0)
        return F

    def neumann_vector(self, t: float) -> np.ndarray:
        """Traction and flux data on the Neumann boundaries at time ``t``."""
        dm, mesh, data, deg = self.dofmap, self.mesh, self.data, self.data_degree
        F = np.zeros(dm.n_dofs)
        for name, tag, func in (
            ("ubar_f", FacetTag.NEUMANN_F, data.S_f),
            ("ubar_b", FacetTag.NEUMANN_B, data.S_b),
            ("ppbar", FacetTag.NEUMANN_B, data.Z_d),
        ):
            facets = mesh.facets_tagged(tag)
            if len(facets):
                d, b = _facet_load(dm, name, facets, lambda x, n, f=func: f(x, t, n), deg)
                np.add.at(F, d, -b)
        return F

    def dirichlet_values(self, t: float) -> np.ndarray:
        """Full-length vector holding the projected Dirichlet data (zero elsewhere)."""
        dm, mesh, data, deg = self.dofmap, self.mesh, self.data, self.data_degree
        x = np.zeros(dm.n_dofs)
        for name, tag, func, nc in (
            ("ubar_f", FacetTag.DIRICHLET_F, data.U_f, 2),
            ("ubar_b", FacetTag.DIRICHLET_B, data.U_b, 2),
            ("ppbar", FacetTag.DIRICHLET_B, data.P_p, 1),
        ):
            facets = mesh.facets_tagged(tag)
            if len(facets):
                c = l2_project_facets(lambda y, n, f=func: f(y, t), mesh, facets, self.k, nc, deg)
                x[dm.entity_dofs(name, facets)] = c
        return x

    # ------------------------------------------------------------ initial data

    def initial_state(self, t0: float = 0.0) -> SystemState:
        """Interpolate the exact fields at ``t0``.

        Velocities and the Darcy flux use the BDM interpolant, pressures and
        all facet fields the L2 projection.
        """
        dm, mesh, data, k, deg = self.dofmap, self.mesh, self.data, self.k, self.data_degree
        x = np.zeros(dm.n_dofs)
        fc, pc = mesh.cells_of(FLUID), mesh.cells_of(PORO)

        def put(name, ents, vals):
            x[dm.entity_dofs(name, ents)] = vals

        put("u", fc, bdm_interpolate(lambda y: data.u_f(y, t0), mesh, k, fc, deg))
        put("u", pc, bdm_interpolate(lambda y: data.u_b(y, t0), mesh, k, pc, deg))
        put("z", pc, bdm_interpolate(lambda y: data.z(y, t0), mesh, k, pc, deg))
        put("p", fc, l2_project_cells(lambda y: data.p_f(y, t0), mesh, fc, k - 1, 1, deg))
        put("p", pc, l2_project_cells(lambda y: data.p_b(y, t0), mesh, pc, k - 1, 1, deg))
        put("pp", pc, l2_project_cells(lambda y: data.p_p(y, t0), mesh, pc, k - 1, 1, deg))
        for name, dom, func, nc in (
            ("ubar_f", FLUID, data.u_f, 2),
            ("ubar_b", PORO, data.u_b, 2),
            ("pbar_f", FLUID, data.p_f, 1),
            ("pbar_b", PORO, data.p_b, 1),
            ("ppbar", PORO, data.p_p, 1),
        ):
            facets = mesh.facets_of(dom)
            put(name, facets, l2_project_facets(lambda y, n, f=func: f(y, t0), mesh, facets, k, nc, deg))
        return SystemState(dm, 0, t0, x)


def assemble_step_system(disc: Discretization, state: SystemState, t_next: float) -> LinearSystem:
    """Full (unconstrained) system for the step ``state.time -> t_next``."""
    dt = t_next - state.time
    if not dt > 0:
        raise ValueError("time step must be positive")
    A = disc.system_matrix(dt, state.fluid_velocity())
    rhs = disc.load_vector(t_next) + disc.D @ state.x / dt
    return LinearSystem(A, rhs)


def apply_boundary_data(disc: Discretization, system: LinearSystem, t_next: float) -> ConstrainedSystem:
    """Add Neumann data and eliminate the Dirichlet dofs."""
    rhs = system.rhs + disc.neumann_vector(t_next)
    xd = disc.dirichlet_values(t_next)
    A = system.matrix
    free = disc.free
    Aff = A[free][:, free].tocsr()
    b = rhs[free] - A[free] @ xd
    return ConstrainedSystem(Aff, b, None, free, xd)


def step(disc: Discretization, state: SystemState, t_next: float, factor: ReusedFactorization | None = None
         ) -> tuple[SystemState, float]:
    """Advance one step; returns the new state and the solve residual.

    ``factor`` lets consecutive steps share an LU factorisation (the
    matrices differ only through the lagged convection).
    """
    sys_c = apply_boundary_data(disc, assemble_step_system(disc, state, t_next), t_next)
    if factor is None:
        lu_solve(sys_c)
    else:
        factor.solve(sys_c)
    x = sys_c.expand(sys_c.solution)
    return SystemState(disc.dofmap, state.step + 1, t_next, x), sys_c.residual()


@dataclass
class Trajectory:
    states: list
    diagnostics: list  # one dict per step

    @property
    def final(self) -> SystemState:
        return self.states[-1]


def run_transient(disc: Discretization, grid: TimeGrid, monitor=None, keep_states: bool = False,
                  initial: SystemState | None = None) -> Trajectory:
    """Integrate from ``initial`` (interpolated exact data by default) to ``grid.final_time``.

    ``monitor(disc, state, prev)`` may return a dict of per-step diagnostics; the
    solve residual is always recorded.
    """
    state = initial if initial is not None else disc.initial_state(0.0)
    states = [state]
    diags = []
    factor = ReusedFactorization()
    for n in range(1, grid.n_steps + 1):
        prev = state
        state, res = step(disc, prev, grid.time(n), factor)
        row = {"step": n, "time": state.time, "residual": res}
        if monitor is not None:
            row.update(monitor(disc, state, prev))
        diags.append(row)
        if keep_states:
            states.append(state)
        else:
            states = [state]
        log.debug("step %d t=%.6g residual=%.2e", n, state.time, res)
    return Trajectory(states, diags)


def write_diagnostics(rows, path) -> None:
    """CSV with one line per step; columns are the union of the row keys in first-seen order."""
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10e}" if isinstance(v, float) else v) for k, v in r.items()})
