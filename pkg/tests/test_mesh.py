import numpy as np
import pytest

from hdgbiot.mesh import FLUID, PORO, FacetTag, MeshError, facet_geometry, generate_structured_mesh, perturb_mesh, refine_uniform


def test_coarse_counts(mesh2):
    assert mesh2.n_cells == 8
    assert len(mesh2.cells_of(FLUID)) == 4
    assert len(mesh2.cells_of(PORO)) == 4
    assert len(mesh2.facets_tagged(FacetTag.INTERFACE)) == 2


def test_interface_orientation(mesh2):
    for f in mesh2.facets_tagged(FacetTag.INTERFACE):
        c0, c1 = mesh2.facet_cells[f]
        assert mesh2.cell_domain[c0] == FLUID and mesh2.cell_domain[c1] == PORO
        np.testing.assert_array_equal(mesh2.facet_normal[f], [0.0, -1.0])
        # x2 = 0.5 exactly, not up to rounding
        assert np.all(mesh2.vertices[mesh2.facets[f], 1] == 0.5)


def test_normals_point_out_of_owner(mesh4):
    centroids = mesh4.vertices[mesh4.cells].mean(axis=1)
    owner = mesh4.facet_cells[:, 0]
    mid = mesh4.vertices[mesh4.facets].mean(axis=1)
    assert np.all(np.einsum("fi,fi->f", mesh4.facet_normal, mid - centroids[owner]) > 0)


def test_facet_geometry(mesh2):
    f = mesh2.facets_tagged(FacetTag.INTERFACE)[0]
    length, n, cells, local = facet_geometry(mesh2, f)
    assert length == pytest.approx(0.5)
    assert mesh2.cell_domain[cells[0]] == FLUID
    assert len(cells) == 2 and len(local) == 2
    with pytest.raises(IndexError):
        facet_geometry(mesh2, mesh2.n_facets)


@pytest.mark.parametrize("n", [2, 4])
def test_closed_cells(n):
    mesh = generate_structured_mesh(n)
    nrm = mesh.cell_normals()
    lengths = mesh.facet_length[mesh.cell_facets]
    np.testing.assert_allclose(np.einsum("cf,cfi->ci", lengths, nrm), 0.0, atol=1e-15)


def test_areas_and_tags_under_refinement(mesh2):
    mesh = mesh2
    n_iface = len(mesh.facets_tagged(FacetTag.INTERFACE))
    h = mesh.h_max
    for _ in range(3):
        fine = refine_uniform(mesh)
        assert fine.h_max == pytest.approx(0.5 * h)
        assert len(fine.facets_tagged(FacetTag.INTERFACE)) == 2 * n_iface
        for dom in (FLUID, PORO):
            assert fine.cell_areas()[fine.cells_of(dom)].sum() == pytest.approx(0.5, abs=1e-14)
        # children keep the parent's subdomain and boundary tags by location
        for tag in (FacetTag.DIRICHLET_F, FacetTag.NEUMANN_F, FacetTag.DIRICHLET_B, FacetTag.NEUMANN_B):
            assert fine.facet_length[fine.facets_tagged(tag)].sum() == pytest.approx(
                mesh.facet_length[mesh.facets_tagged(tag)].sum())
        np.testing.assert_array_equal(fine.cell_domain, np.repeat(mesh.cell_domain, 4))
        mesh, h, n_iface = fine, fine.h_max, 2 * n_iface


def test_refined_matches_generated(mesh2):
    fine = refine_uniform(refine_uniform(mesh2))
    gen = generate_structured_mesh(8)
    assert fine.n_cells == gen.n_cells and fine.n_facets == gen.n_facets
    for tag in FacetTag:
        assert len(fine.facets_tagged(tag)) == len(gen.facets_tagged(tag))


def test_boundary_partition(mesh4):
    mid = mesh4.vertices[mesh4.facets].mean(axis=1)
    for tag in (FacetTag.NEUMANN_F, FacetTag.NEUMANN_B):
        assert np.allclose(mid[mesh4.facets_tagged(tag), 0], 1.0)
    assert np.all(mid[mesh4.facets_tagged(FacetTag.DIRICHLET_F), 1] > 0.5)
    assert np.all(mid[mesh4.facets_tagged(FacetTag.DIRICHLET_B), 1] < 0.5)


@pytest.mark.parametrize("n", [3, 0, 2.5])
def test_rejects_bad_sizes(n):
    with pytest.raises(MeshError):
        generate_structured_mesh(n)


def test_perturbed_mesh_is_valid(mesh4):
    m = perturb_mesh(mesh4, 0.2, seed=3)
    assert np.all(m.cell_areas() > 0)
    assert not np.allclose(m.vertices, mesh4.vertices)
    assert len(m.facets_tagged(FacetTag.INTERFACE)) == len(mesh4.facets_tagged(FacetTag.INTERFACE))
    assert m.cell_areas()[m.cells_of(FLUID)].sum() == pytest.approx(0.5)


def test_dump(tmp_path, mesh2):
    p = tmp_path / "mesh.txt"
    mesh2.dump(p)
    text = p.read_text().splitlines()
    assert text[0] == f"vertices {len(mesh2.vertices)}"
    assert sum("INTERFACE" in line for line in text) == 2
