import numpy as np
import pytest

from hdgbiot import reference as ref
from hdgbiot.basis import eval_facet_basis
from hdgbiot.forms import ModelParameters
from hdgbiot.interpolation import l2_project_cells
from hdgbiot.mesh import FLUID, PORO, FacetTag, build_mesh, generate_structured_mesh, unit_square_tagger
from hdgbiot.mms import ManufacturedSolution
from hdgbiot.solver import Discretization, TimeGrid, ZeroData, run_transient, step
from hdgbiot.verify import mass_balance_pointwise, structural_checks

NQ = 12
# the data are not polynomial: both routes integrate them to roundoff so that only the logic is compared
DATA_DEGREE = 2 * NQ - 1


def four_cell_mesh():
    v = [[0, 0], [1, 0], [1, 0.5], [0, 0.5], [1, 1], [0, 1]]
    cells = [[0, 1, 2], [0, 2, 3], [3, 2, 4], [3, 4, 5]]
    return build_mesh(v, cells, [PORO, PORO, FLUID, FLUID], unit_square_tagger)


def facet_projection_oracle(dm, name, facets, func):
    """Per-facet L2 projection with its own Gauss rule and explicit mass matrix."""
    mesh, k = dm.mesh, dm.config.k
    s, w = np.polynomial.legendre.leggauss(NQ)
    s, w = 0.5 * (s + 1), 0.5 * w
    psi = eval_facet_basis(k, s)
    out = []
    for F in facets:
        a, b = mesh.vertices[mesh.facets[F]]
        vals = np.asarray(func(a + s[:, None] * (b - a))).reshape(len(s), -1)
        M = psi.T @ (w[:, None] * psi)
        out.append(np.linalg.solve(M, psi.T @ (w[:, None] * vals)).T.ravel())
    return np.array(out)


def load_oracle(dm, mms, t):
    """Right-hand side built pointwise from the data: forcing, interface corrections, Neumann data."""
    mesh = dm.mesh
    n = dm.n_dofs
    V = ref.FieldEvaluator(dm, np.eye(n))
    F = np.zeros(n)
    for K in range(mesh.n_cells):
        x, w = ref._cell_points(mesh, K, NQ)
        v, _ = V.cell("u", K, x)
        f = mms.f_f(x, t) if mesh.cell_domain[K] == FLUID else mms.f_b(x, t)
        F += np.einsum("p,pa,pan->n", w, f, v)
        if mesh.cell_domain[K] == PORO:
            q, _ = V.cell("pp", K, x)
            F += np.einsum("p,p,pn->n", w, mms.g_b(x, t), q[:, 0])
    nI = np.array([0.0, -1.0])
    for Fc in mesh.facets_tagged(FacetTag.INTERFACE):
        x, w = ref._facet_points(mesh, Fc, NQ)
        jump = mms.M_p(x, t)[:, None] * nI + mms.M_e(x, t)
        F -= np.einsum("p,pa,pan->n", w, jump, V.facet("ubar_f", Fc, x))
        F += np.einsum("p,pa,pan->n", w, jump - mms.M_s(x, t), V.facet("ubar_b", Fc, x))
        F -= np.einsum("p,p,pn->n", w, mms.M_u(x, t), V.facet("ppbar", Fc, x)[:, 0])
    for tag, name, func in ((FacetTag.NEUMANN_F, "ubar_f", mms.S_f), (FacetTag.NEUMANN_B, "ubar_b", mms.S_b)):
        for Fc in mesh.facets_tagged(tag):
            x, w = ref._facet_points(mesh, Fc, NQ)
            nrm = mesh.facet_normal[Fc]
            F -= np.einsum("p,pa,pan->n", w, func(x, t, nrm), V.facet(name, Fc, x))
    for Fc in mesh.facets_tagged(FacetTag.NEUMANN_B):
        x, w = ref._facet_points(mesh, Fc, NQ)
        F -= np.einsum("p,p,pn->n", w, mms.Z_d(x, t, mesh.facet_normal[Fc]), V.facet("ppbar", Fc, x)[:, 0])
    return F


def dirichlet_oracle(dm, mms, t):
    mesh = dm.mesh
    x = np.zeros(dm.n_dofs)
    for name, tag, func in (("ubar_f", FacetTag.DIRICHLET_F, mms.U_f), ("ubar_b", FacetTag.DIRICHLET_B, mms.U_b),
                            ("ppbar", FacetTag.DIRICHLET_B, mms.P_p)):
        facets = mesh.facets_tagged(tag)
        x[dm.entity_dofs(name, facets)] = facet_projection_oracle(dm, name, facets, lambda y, f=func: f(y, t))
    return x


@pytest.mark.parametrize("k", [1, 2])
def test_one_step_against_dense_oracle(k):
    mesh = four_cell_mesh()
    p = ModelParameters.for_degree(k)
    mms = ManufacturedSolution(p)
    disc = Discretization(mesh, k, p, mms, data_degree=DATA_DEGREE)
    dm = disc.dofmap
    n = dm.n_dofs
    I = np.eye(n)
    fc, pc = mesh.cells_of(FLUID), mesh.cells_of(PORO)
    is_ubf = np.zeros(n, dtype=bool)
    is_ubf[dm.block("ubar_f")] = True
    Bf, Bb = ref.form_bh(dm, FLUID, I, I), ref.form_bh(dm, PORO, I, I)
    Bz = ref.form_bh(dm, PORO, I, I, darcy=True)
    aI, bI = ref.form_aI(dm, p, I, I), ref.form_bI(dm, I, I)
    MA = (ref.form_ah(dm, p, FLUID, I, I) + ref.form_ah(dm, p, PORO, I, I) + Bf + Bf.T + Bb + Bb.T
          + ref.form_ch(dm, p, I, I) + Bz - Bz.T + ref.cell_mass_form(dm, "z", pc, I, I, p.mu_f / p.kappa)
          + aI * is_ubf + bI - bI.T * is_ubf)
    MD = (ref.cell_mass_form(dm, "u", fc, I, I) + aI * ~is_ubf - bI.T * ~is_ubf
          + ref.cell_mass_form(dm, "pp", pc, I, I, p.c0 + p.alpha ** 2 / p.lam)
          + ref.cell_mass_form(dm, "p", pc, I, I, -p.alpha / p.lam, test_name="pp"))

    x0 = disc.initial_state(0.0)
    dt = 1e-3
    M = MA + MD / dt + ref.form_th(dm, x0.x, I, I)
    rhs = load_oracle(dm, mms, dt) + MD @ x0.x / dt
    xd = dirichlet_oracle(dm, mms, dt)
    free = ~dm.dirichlet
    x = xd.copy()
    x[free] = np.linalg.solve(M[np.ix_(free, free)], rhs[free] - M[free] @ xd)

    got, res = step(disc, x0, dt)
    assert res <= 1e-10
    assert np.abs(got.x - x).max() <= 1e-10 * np.abs(x).max()


def test_operators_match_reference_assembly():
    mesh = four_cell_mesh()
    p = ModelParameters.for_degree(1)
    disc = Discretization(mesh, 1, p, ManufacturedSolution(p), data_degree=DATA_DEGREE)
    ref_F = load_oracle(disc.dofmap, disc.data, 0.3)
    F = disc.load_vector(0.3) + disc.neumann_vector(0.3)
    assert np.abs(F - ref_F).max() <= 1e-12 * np.abs(ref_F).max()


def test_zero_data_zero_state():
    mesh = generate_structured_mesh(2)
    disc = Discretization(mesh, 1, ModelParameters.for_degree(1))
    traj = run_transient(disc, TimeGrid(0.01, 3), initial=disc.initial_state())
    assert np.all(disc.initial_state().x == 0.0)
    assert np.abs(traj.final.x).max() == 0.0


def test_zero_convection(mesh2):
    disc = Discretization(mesh2, 2, ModelParameters.for_degree(2))
    w = np.zeros(disc.dofmap.entity_dofs("u", mesh2.cells_of(FLUID)).shape)
    assert disc.convection(w).count_nonzero() == 0


def test_dirichlet_values_match_projection_oracle(mesh4):
    p = ModelParameters.for_degree(2)
    mms = ManufacturedSolution(p)
    disc = Discretization(mesh4, 2, p, mms, data_degree=DATA_DEGREE)
    got, _ = step(disc, disc.initial_state(0.0), 0.01)
    want = dirichlet_oracle(disc.dofmap, mms, 0.01)
    fixed = disc.dofmap.dirichlet
    np.testing.assert_allclose(got.x[fixed], want[fixed], rtol=0, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_projection_reproduces_polynomials(k, mesh4):
    cells = np.arange(mesh4.n_cells)
    c = np.random.default_rng(5).standard_normal(6)

    def f(x):
        X, Y = x[..., 0], x[..., 1]
        return c[0] + c[1] * X + c[2] * Y + (c[3] * X * X + c[4] * X * Y + c[5] * Y * Y) * (k > 1)

    coef = l2_project_cells(f, mesh4, cells, k)
    again = l2_project_cells(f, mesh4, cells, k, quad_degree=4 * k + 9)
    np.testing.assert_allclose(coef, again, atol=1e-13)
    x = mesh4.vertices[mesh4.cells].mean(axis=1)
    from hdgbiot.geometry import CellQuadrature

    cq = CellQuadrature(mesh4, cells, 2 * k)
    np.testing.assert_allclose(cq.evaluate(k, coef)[..., 0], f(cq.x), atol=1e-12)
    assert x.shape == (mesh4.n_cells, 2)


def test_single_step_grid_equals_step(mesh2):
    p = ModelParameters.for_degree(1)
    disc = Discretization(mesh2, 1, p, ManufacturedSolution(p))
    x0 = disc.initial_state()
    traj = run_transient(disc, TimeGrid(0.01, 1))
    direct, _ = step(disc, x0, 0.01)
    np.testing.assert_array_equal(traj.final.x, direct.x)
    assert len(traj.diagnostics) == 1


def test_assembly_is_bit_reproducible(mesh4):
    p = ModelParameters.for_degree(2)
    a, b = (Discretization(mesh4, 2, p, ManufacturedSolution(p)) for _ in range(2))
    for A, B in ((a.A0, b.A0), (a.D, b.D)):
        np.testing.assert_array_equal(A.indptr, B.indptr)
        np.testing.assert_array_equal(A.indices, B.indices)
        np.testing.assert_array_equal(A.data, B.data)
    w = a.initial_state().fluid_velocity()
    M1, M2 = a.system_matrix(1e-3, w), a.system_matrix(1e-3, w)
    np.testing.assert_array_equal(M1.data, M2.data)
    s = a.initial_state()
    np.testing.assert_array_equal(step(a, s, 1e-3)[0].x, step(a, s, 1e-3)[0].x)


def test_time_grid():
    g = TimeGrid.from_dt(0.01, 0.003)
    assert g.n_steps == 4 and g.dt == pytest.approx(0.0025)
    assert TimeGrid.from_dt(0.01, 0.01 / 8).n_steps == 8
    with pytest.raises(ValueError):
        TimeGrid(0.01, 0)


def test_step_rejects_nonpositive_dt(mesh2):
    disc = Discretization(mesh2, 1, ModelParameters.for_degree(1))
    with pytest.raises(ValueError):
        step(disc, disc.initial_state(0.0), 0.0)


@pytest.mark.parametrize("k", [1, 2])
def test_mass_balance_and_structure_on_solved_states(k, mesh4):
    p = ModelParameters.for_degree(k)
    mms = ManufacturedSolution(p)
    disc = Discretization(mesh4, k, p, mms)
    traj = run_transient(disc, TimeGrid(0.004, 4), keep_states=True)
    for prev, cur in zip(traj.states[:-1], traj.states[1:]):
        s = structural_checks(cur, p, mms, prev)
        assert s["divergence"] <= 1e-10
        assert s["compressibility"] <= 1e-10
        assert s["normal_jump"] <= 1e-10
        assert s["mass_balance"] <= 1e-9
    zero = Discretization(mesh4, k, p, ZeroData())
    tz = run_transient(zero, TimeGrid(0.002, 2), keep_states=True, initial=disc.initial_state())
    for prev, cur in zip(tz.states[:-1], tz.states[1:]):
        assert mass_balance_pointwise(cur, prev, p) <= 1e-9
