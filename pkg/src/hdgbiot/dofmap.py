"""Degree-of-freedom layout for the nine discrete fields.

Global unknowns are stored field by field in one contiguous block each.
Within an entity, vector dofs are ordered component-major
(``comp * n_basis + i``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import dim_cell, dim_facet
from .mesh import FLUID, PORO, FacetTag, Mesh


@dataclass(frozen=True)
class FieldSpace:
    name: str
    kind: str  # "cell" or "facet"
    degree: int
    ncomp: int
    domain: int | None  # FLUID, PORO or None for both subdomains

    @property
    def n_basis(self) -> int:
        return dim_cell(self.degree) if self.kind == "cell" else dim_facet(self.degree)

    @property
    def n_local(self) -> int:
        return self.ncomp * self.n_basis


@dataclass(frozen=True)
class SpaceConfig:
    """Element and facet spaces for polynomial degree ``k``."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("polynomial degree must be at least 1")

    @property
    def fields(self) -> tuple[FieldSpace, ...]:
        k = self.k
        return (
            FieldSpace("u", "cell", k, 2, None),
            FieldSpace("ubar_f", "facet", k, 2, FLUID),
            FieldSpace("ubar_b", "facet", k, 2, PORO),
            FieldSpace("p", "cell", k - 1, 1, None),
            FieldSpace("pbar_f", "facet", k, 1, FLUID),
            FieldSpace("pbar_b", "facet", k, 1, PORO),
            FieldSpace("z", "cell", k, 2, PORO),
            FieldSpace("pp", "cell", k - 1, 1, PORO),
            FieldSpace("ppbar", "facet", k, 1, PORO),
        )

    def space(self, name: str) -> FieldSpace:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)


FIELD_NAMES = tuple(f.name for f in SpaceConfig(1).fields)


@dataclass(frozen=True, eq=False)
class FieldDofs:
    space: FieldSpace
    offset: int
    entities: np.ndarray  # global cell/facet ids carrying this field
    index: np.ndarray  # global entity id -> row in ``dofs`` (-1 if absent)
    dofs: np.ndarray  # (n_entities, n_local) global dof numbers

    @property
    def size(self) -> int:
        return self.dofs.size


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: Mesh
    config: SpaceConfig
    fields: dict
    n_dofs: int
    dirichlet: np.ndarray  # bool mask over all dofs

    def __getitem__(self, name: str) -> FieldDofs:
        return self.fields[name]

    def block(self, name: str) -> slice:
        f = self.fields[name]
        return slice(f.offset, f.offset + f.size)

    def entity_dofs(self, name: str, entity_ids) -> np.ndarray:
        f = self.fields[name]
        rows = f.index[np.asarray(entity_ids)]
        if np.any(rows < 0):
            raise KeyError(f"field {name} is not defined on some requested entities")
        return f.dofs[rows]

    def locate(self, dof: int) -> tuple[str, int, int]:
        """Map a global dof back to ``(field, entity id, local index)``."""
        if not 0 <= dof < self.n_dofs:
            raise IndexError(dof)
        for name, f in self.fields.items():
            if f.offset <= dof < f.offset + f.size:
                r, loc = divmod(dof - f.offset, f.space.n_local)
                return name, int(f.entities[r]), int(loc)
        raise AssertionError("unreachable")


def _entities(mesh: Mesh, space: FieldSpace) -> np.ndarray:
    if space.kind == "cell":
        return np.arange(mesh.n_cells) if space.domain is None else mesh.cells_of(space.domain)
    return mesh.facets_of(space.domain)


def build_dofmap(mesh: Mesh, config: SpaceConfig) -> DofMap:
    fields = {}
    offset = 0
    for space in config.fields:
        ent = _entities(mesh, space)
        n_ent = mesh.n_cells if space.kind == "cell" else mesh.n_facets
        index = -np.ones(n_ent, dtype=np.int64)
        index[ent] = np.arange(len(ent))
        nl = space.n_local
        dofs = offset + np.arange(len(ent) * nl, dtype=np.int64).reshape(len(ent), nl)
        fields[space.name] = FieldDofs(space, offset, ent, index, dofs)
        offset += dofs.size

    dirichlet = np.zeros(offset, dtype=bool)
    for name, tag in (
        ("ubar_f", FacetTag.DIRICHLET_F),
        ("ubar_b", FacetTag.DIRICHLET_B),
        ("ppbar", FacetTag.DIRICHLET_B),
    ):
        f = fields[name]
        dirichlet[f.dofs[mesh.facet_tag[f.entities] == tag].ravel()] = True
    return DofMap(mesh, config, fields, offset, dirichlet)
