from math import factorial

import numpy as np
import pytest

from hdgbiot.basis import dim_cell, eval_cell_basis, eval_cell_hessian, eval_facet_basis
from hdgbiot.dofmap import SpaceConfig, build_dofmap
from hdgbiot.mesh import FLUID, PORO, FacetTag
from hdgbiot.quadrature import gauss_rule

_REF_A = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
_REF_B = np.array([[0.0, 1.0], [0.0, 0.0], [1.0, 0.0]])


@pytest.mark.parametrize("deg", range(0, 9))
def test_triangle_rule_monomials(deg):
    q = gauss_rule(deg, "triangle")
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert approx == pytest.approx(exact, rel=1e-13, abs=1e-16)


@pytest.mark.parametrize("deg", range(0, 9))
def test_segment_rule_monomials(deg):
    q = gauss_rule(deg, "segment")
    for a in range(deg + 1):
        assert np.sum(q.weights * q.points ** a) == pytest.approx(1.0 / (a + 1), rel=1e-14)


def test_rule_errors():
    with pytest.raises(ValueError):
        gauss_rule(-1)
    with pytest.raises(ValueError):
        gauss_rule(2, "square")


def test_constant_basis():
    phi, grad = eval_cell_basis(0, np.array([[0.1, 0.2], [0.7, 0.1]]))
    np.testing.assert_allclose(phi, np.sqrt(2.0))
    np.testing.assert_allclose(grad, 0.0)


# the monomial Cholesky loses digits with the degree; k <= 3 is what the method uses
@pytest.mark.parametrize("k, tol", [(1, 1e-12), (2, 1e-12), (3, 1e-12), (4, 1e-10)])
def test_cell_basis_orthonormal(k, tol):
    q = gauss_rule(2 * k, "triangle")
    phi, _ = eval_cell_basis(k, q.points)
    gram = (phi * q.weights[:, None]).T @ phi
    np.testing.assert_allclose(gram, np.eye(dim_cell(k)), atol=tol)


@pytest.mark.parametrize("k", [1, 3])
def test_facet_basis_orthonormal(k):
    q = gauss_rule(2 * k, "segment")
    psi = eval_facet_basis(k, q.points)
    np.testing.assert_allclose((psi * q.weights[:, None]).T @ psi, np.eye(k + 1), atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_bases_are_nested(k):
    pts = np.random.default_rng(0).uniform(0, 0.5, (7, 2))
    np.testing.assert_allclose(eval_cell_basis(k, pts)[0][:, : dim_cell(k - 1)], eval_cell_basis(k - 1, pts)[0],
                               atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_gradients_and_hessians_by_differences(k):
    pts = np.array([[0.2, 0.3], [0.6, 0.1]])
    e = 1e-5
    _, grad = eval_cell_basis(k, pts)
    H = eval_cell_hessian(k, pts)
    for d in range(2):
        sh = np.zeros(2)
        sh[d] = e
        fd = (eval_cell_basis(k, pts + sh)[0] - eval_cell_basis(k, pts - sh)[0]) / (2 * e)
        np.testing.assert_allclose(grad[..., d], fd, atol=1e-7)
        fdg = (eval_cell_basis(k, pts + sh)[1] - eval_cell_basis(k, pts - sh)[1]) / (2 * e)
        np.testing.assert_allclose(H[..., d], fdg, atol=1e-6)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_cell_trace_lies_in_facet_space(k):
    s = np.linspace(0, 1, 4 * k + 3)
    psi = eval_facet_basis(k, s)
    for i in range(3):
        pts = _REF_A[i] + s[:, None] * (_REF_B[i] - _REF_A[i])
        phi, _ = eval_cell_basis(k, pts)
        coef, *_ = np.linalg.lstsq(psi, phi, rcond=None)
        assert np.abs(psi @ coef - phi).max() <= 1e-12


def test_negative_degree():
    with pytest.raises(ValueError):
        eval_cell_basis(-1, [[0.0, 0.0]])
    with pytest.raises(ValueError):
        eval_facet_basis(-1, [0.0])


# ---------------------------------------------------------------- dof map


def test_dof_counts(mesh2):
    dm = build_dofmap(mesh2, SpaceConfig(1))
    assert dm.entity_dofs("u", mesh2.cells_of(FLUID)).size == 24
    assert dm["z"].size == 4 * 6
    assert dm["pp"].size == 4 * 1
    assert len(dm["ubar_f"].entities) == len(mesh2.facets_of(FLUID))
    assert dm.n_dofs == sum(f.size for f in dm.fields.values())


def test_interface_carries_both_velocity_traces(mesh2):
    dm = build_dofmap(mesh2, SpaceConfig(2))
    gi = mesh2.facets_tagged(FacetTag.INTERFACE)
    assert np.all(dm["ubar_f"].index[gi] >= 0)
    assert np.all(dm["ubar_b"].index[gi] >= 0)
    assert np.all(dm["ppbar"].index[gi] >= 0)
    assert np.all(dm["pbar_f"].index[mesh2.facets_tagged(FacetTag.INTERIOR_B)] < 0)


def test_dirichlet_mask(mesh4):
    dm = build_dofmap(mesh4, SpaceConfig(1))
    pp = dm["ppbar"]
    marked = dm.dirichlet[pp.dofs].all(axis=1)
    np.testing.assert_array_equal(marked, mesh4.facet_tag[pp.entities] == FacetTag.DIRICHLET_B)
    for name in ("u", "p", "z", "pp", "pbar_f", "pbar_b"):
        assert not dm.dirichlet[dm.block(name)].any()


def test_locate_roundtrip(mesh2):
    dm = build_dofmap(mesh2, SpaceConfig(2))
    for dof in range(dm.n_dofs):
        name, ent, loc = dm.locate(dof)
        assert dm.entity_dofs(name, [ent])[0, loc] == dof
    with pytest.raises(IndexError):
        dm.locate(dm.n_dofs)
    with pytest.raises(KeyError):
        dm.entity_dofs("z", mesh2.cells_of(FLUID))


def test_degree_zero_rejected():
    with pytest.raises(ValueError):
        SpaceConfig(0)
