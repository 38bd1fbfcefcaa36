"""Conforming triangulations of the two-subdomain unit square.

The fluid region occupies ``(0,1) x (0.5,1)`` and the poroelastic region
``(0,1) x (0,0.5)``.  Every facet carries a :class:`FacetTag`, and facet
normals follow a single orientation rule: the normal points out of the
*owner* cell, which is the fluid cell on the interface and the lower-indexed
cell everywhere else.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FLUID = 0
PORO = 1


class FacetTag(enum.IntEnum):
    INTERIOR_F = 0
    INTERIOR_B = 1
    DIRICHLET_F = 2
    NEUMANN_F = 3
    DIRICHLET_B = 4  # also the pore-pressure Dirichlet part
    NEUMANN_B = 5  # also the Darcy flux part
    INTERFACE = 6


FLUID_BOUNDARY_TAGS = (FacetTag.DIRICHLET_F, FacetTag.NEUMANN_F)
PORO_BOUNDARY_TAGS = (FacetTag.DIRICHLET_B, FacetTag.NEUMANN_B)

# local facet i of a cell is opposite local vertex i
_LOCAL_FACETS = np.array([[1, 2], [2, 0], [0, 1]])

BoundaryTagger = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh with facet connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counter-clockwise vertex triples
    cell_domain : (nc,) int array, ``FLUID`` or ``PORO``
    facets : (nf, 2) int array, vertex pairs sorted ascending
    facet_cells : (nf, 2) int array, owner first, ``-1`` when absent
    facet_local : (nf, 2) int array, local facet index inside each adjacent cell
    facet_tag : (nf,) int array of :class:`FacetTag` values
    facet_normal : (nf, 2) unit normal pointing out of the owner cell
    facet_length : (nf,) float array
    cell_facets : (nc, 3) facet ids, local facet i opposite vertex i
    cell_diameter : (nc,) longest edge of each cell
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_domain: np.ndarray
    facets: np.ndarray
    facet_cells: np.ndarray
    facet_local: np.ndarray
    facet_tag: np.ndarray
    facet_normal: np.ndarray
    facet_length: np.ndarray
    cell_facets: np.ndarray
    cell_diameter: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def h_max(self) -> float:
        return float(self.cell_diameter.max())

    def cells_of(self, domain: int) -> np.ndarray:
        return np.flatnonzero(self.cell_domain == domain)

    def facets_of(self, domain: int) -> np.ndarray:
        """Facets in the closure of one subdomain (boundary and interface included)."""
        key = ("facets_of", domain)
        if key not in self._cache:
            fc = self.facet_cells
            touch = (self.cell_domain[fc[:, 0]] == domain) | (
                (fc[:, 1] >= 0) & (self.cell_domain[np.maximum(fc[:, 1], 0)] == domain)
            )
            self._cache[key] = np.flatnonzero(touch)
        return self._cache[key]

    def facets_tagged(self, *tags: int) -> np.ndarray:
        return np.flatnonzero(np.isin(self.facet_tag, np.asarray(tags)))

    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cell_normals(self) -> np.ndarray:
        """Outward unit normals, shape (nc, 3, 2), for each local facet."""
        p = self.vertices[self.cells]
        a = p[:, _LOCAL_FACETS[:, 0]]
        b = p[:, _LOCAL_FACETS[:, 1]]
        t = b - a
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def dump(self, path) -> None:
        """Write vertices, cells and tagged facets as whitespace-separated records."""
        with open(path, "w") as fh:
            fh.write(f"vertices {len(self.vertices)}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            fh.write(f"cells {self.n_cells}\n")
            for (a, b, c), d in zip(self.cells, self.cell_domain):
                fh.write(f"{a} {b} {c} {'f' if d == FLUID else 'b'}\n")
            fh.write(f"facets {self.n_facets}\n")
            for (a, b), (c0, c1), t in zip(self.facets, self.facet_cells, self.facet_tag):
                fh.write(f"{a} {b} {c0} {c1} {FacetTag(t).name}\n")


def build_mesh(vertices, cells, cell_domain, boundary_tagger: BoundaryTagger) -> Mesh:
    """Assemble connectivity, tags and normals for a triangle list.

    ``boundary_tagger(facets, domain, midpoints)`` returns a tag for every
    facet that lies on the outer boundary; interior and interface facets are
    tagged here from the adjacent cell domains.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    cell_domain = np.asarray(cell_domain, dtype=np.int64)
    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(area2 == 0):
        raise MeshError("degenerate cell")
    flip = area2 < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]

    nc = len(cells)
    local = cells[:, _LOCAL_FACETS]  # (nc, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    facets, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        raise MeshError("non-manifold facet")
    nf = len(facets)
    cell_facets = inverse.reshape(nc, 3)

    facet_cells = -np.ones((nf, 2), dtype=np.int64)
    facet_local = -np.ones((nf, 2), dtype=np.int64)
    owner_idx = np.repeat(np.arange(nc), 3)
    loc_idx = np.tile(np.arange(3), nc)
    # entries arrive in increasing cell order, so slot 0 gets the lower cell index
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv_sorted[1:] != inv_sorted[:-1]
    slot = np.where(first, 0, 1)
    facet_cells[inv_sorted, slot] = owner_idx[order]
    facet_local[inv_sorted, slot] = loc_idx[order]

    # interface owner is the fluid cell
    two = facet_cells[:, 1] >= 0
    dom0 = cell_domain[facet_cells[:, 0]]
    dom1 = np.where(two, cell_domain[np.maximum(facet_cells[:, 1], 0)], -1)
    interface = two & (dom0 != dom1)
    swap = interface & (dom0 != FLUID)
    facet_cells[swap] = facet_cells[swap][:, ::-1]
    facet_local[swap] = facet_local[swap][:, ::-1]

    tag = np.empty(nf, dtype=np.int64)
    tag[two & ~interface & (dom0 == FLUID)] = FacetTag.INTERIOR_F
    tag[two & ~interface & (dom0 == PORO)] = FacetTag.INTERIOR_B
    tag[interface] = FacetTag.INTERFACE
    bnd = ~two
    if np.any(bnd):
        mid = 0.5 * (vertices[facets[bnd, 0]] + vertices[facets[bnd, 1]])
        tag[bnd] = boundary_tagger(facets[bnd], dom0[bnd], mid)

    t = vertices[facets[:, 1]] - vertices[facets[:, 0]]
    length = np.linalg.norm(t, axis=1)
    normal = np.stack([t[:, 1], -t[:, 0]], axis=1) / length[:, None]
    # orient out of the owner: compare with the owner's opposite vertex
    owner = facet_cells[:, 0]
    opp = vertices[cells[owner, facet_local[:, 0]]]
    outward = np.einsum("ij,ij->i", normal, vertices[facets[:, 0]] - opp) > 0
    normal[~outward] *= -1

    edges = np.linalg.norm(p[:, _LOCAL_FACETS[:, 1]] - p[:, _LOCAL_FACETS[:, 0]], axis=-1)
    return Mesh(
        vertices=vertices,
        cells=cells,
        cell_domain=cell_domain,
        facets=facets,
        facet_cells=facet_cells,
        facet_local=facet_local,
        facet_tag=tag,
        facet_normal=normal,
        facet_length=length,
        cell_facets=cell_facets,
        cell_diameter=edges.max(axis=1),
    )


def unit_square_tagger(facets, domain, midpoints) -> np.ndarray:
    """Boundary partition of the unit-square benchmark.

    Fluid: Dirichlet on ``x1 = 0`` and ``x2 = 1``, Neumann on ``x1 = 1``.
    Poro: Dirichlet/pressure on ``x1 = 0`` and ``x2 = 0``, Neumann/flux on ``x1 = 1``.
    """
    x = midpoints[:, 0]
    tags = np.empty(len(facets), dtype=np.int64)
    fluid = domain == FLUID
    right = np.isclose(x, 1.0)
    tags[fluid] = np.where(right[fluid], FacetTag.NEUMANN_F, FacetTag.DIRICHLET_F)
    tags[~fluid] = np.where(right[~fluid], FacetTag.NEUMANN_B, FacetTag.DIRICHLET_B)
    return tags


def generate_structured_mesh(n_per_side: int) -> Mesh:
    """Uniform single-diagonal triangulation of the unit square.

    Parameters
    ----------
    n_per_side : int
        Squares per side; must be even so that ``x2 = 0.5`` is a mesh line.
    """
    n = int(n_per_side)
    if n != n_per_side or n < 2 or n % 2:
        raise MeshError(f"n_per_side must be a positive even integer, got {n_per_side!r}")
    # integer arithmetic keeps i/n exact at x2 = 0.5
    idx = np.arange(n + 1)
    X, Y = np.meshgrid(idx, idx, indexing="xy")
    vertices = np.stack([X.ravel() / n, Y.ravel() / n], axis=1)

    def vid(i, j):
        return i + j * (n + 1)

    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    I, J = I.ravel(), J.ravel()
    v00, v10, v11, v01 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    row = np.repeat(J, 2)
    domain = np.where(row >= n // 2, FLUID, PORO)
    return build_mesh(vertices, cells, domain, unit_square_tagger)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children.

    Child facets lying on a parent boundary facet inherit the parent's tag.
    """
    nv = len(mesh.vertices)
    mids = 0.5 * (mesh.vertices[mesh.facets[:, 0]] + mesh.vertices[mesh.facets[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    m = nv + mesh.cell_facets  # midpoint vertex of local facet i (opposite vertex i)
    a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    m_bc, m_ca, m_ab = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.stack([a, m_ab, m_ca], axis=1),
            np.stack([m_ab, b, m_bc], axis=1),
            np.stack([m_ca, m_bc, c], axis=1),
            np.stack([m_ab, m_bc, m_ca], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    domain = np.repeat(mesh.cell_domain, 4)

    # child boundary edge (vertex, midpoint) -> parent facet tag
    parent_tag = {}
    bnd = np.flatnonzero(mesh.facet_cells[:, 1] < 0)
    for f in bnd:
        va, vb = mesh.facets[f]
        mv = nv + f
        parent_tag[(min(va, mv), max(va, mv))] = mesh.facet_tag[f]
        parent_tag[(min(vb, mv), max(vb, mv))] = mesh.facet_tag[f]

    def inherit(facets, _domain, _mid):
        return np.array([parent_tag[(int(p), int(q))] for p, q in facets], dtype=np.int64)

    return build_mesh(vertices, children, domain, inherit)


def facet_geometry(mesh: Mesh, facet_id: int):
    """Length, unit normal, adjacent cells and local facet indices of one facet.

    The normal points out of the first listed cell (the fluid cell on the
    interface, otherwise the lower-indexed cell).
    """
    if not 0 <= facet_id < mesh.n_facets:
        raise IndexError(f"facet id {facet_id} out of range [0, {mesh.n_facets})")
    cells = tuple(int(c) for c in mesh.facet_cells[facet_id] if c >= 0)
    local = tuple(int(i) for i in mesh.facet_local[facet_id] if i >= 0)
    return float(mesh.facet_length[facet_id]), mesh.facet_normal[facet_id].copy(), cells, local


def perturb_mesh(mesh: Mesh, amplitude: float = 0.2, seed: int = 0) -> Mesh:
    """Randomly displace vertices that lie off the boundary and the interface.

    Displacements are uniform in ``amplitude * h_min`` per coordinate, so
    small amplitudes keep every cell positively oriented.  Used to obtain
    unstructured-looking meshes for the form checks.
    """
    rng = np.random.default_rng(seed)
    v = mesh.vertices.copy()
    fixed = np.zeros(len(v), dtype=bool)
    fixed[mesh.facets[mesh.facet_cells[:, 1] < 0].ravel()] = True
    fixed[mesh.facets[mesh.facet_tag == FacetTag.INTERFACE].ravel()] = True
    h = float(mesh.facet_length.min())
    move = ~fixed
    v[move] += amplitude * h * rng.uniform(-1.0, 1.0, size=(int(move.sum()), 2))
    return build_mesh(v, mesh.cells, mesh.cell_domain, unit_square_tagger)
