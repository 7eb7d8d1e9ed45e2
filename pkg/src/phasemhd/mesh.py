"""Uniform tensor-product Q1 meshes on axis-aligned boxes.

Nodes are numbered lexicographically with x running fastest.  The local
node order inside a cell follows the same rule, so local vertex ``l`` sits at
offset ``(l & 1, (l >> 1) & 1, (l >> 2) & 1)`` from the cell's lower corner.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class StructuredMesh:
    dim: int
    box_min: tuple[float, ...]
    box_max: tuple[float, ...]
    cells_per_axis: tuple[int, ...]

    @property
    def h_per_axis(self) -> tuple[float, ...]:
        return tuple((b - a) / n for a, b, n in
                     zip(self.box_min, self.box_max, self.cells_per_axis))

    @property
    def nodes_per_axis(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.cells_per_axis)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.nodes_per_axis))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.box_min, self.box_max)]))

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n + 1) for a, b, n in
                zip(self.box_min, self.box_max, self.cells_per_axis)]

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, dim)``."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        # lexicographic with x fastest == Fortran order over (x, y, z)
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    @cached_property
    def cells(self) -> np.ndarray:
        """Cell-to-node table, shape ``(n_cells, 2**dim)``."""
        npa = self.nodes_per_axis
        strides = [1]
        for n in npa[:-1]:
            strides.append(strides[-1] * n)
        idx = np.meshgrid(*[np.arange(n) for n in self.cells_per_axis], indexing="ij")
        base = sum(i.ravel(order="F") * s for i, s in zip(idx, strides))
        offsets = np.array([
            sum(((l >> d) & 1) * strides[d] for d in range(self.dim))
            for l in range(2 ** self.dim)
        ])
        return (base[:, None] + offsets[None, :]).astype(np.int64)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        npa = self.nodes_per_axis
        idx = np.meshgrid(*[np.arange(n) for n in npa], indexing="ij")
        mask = np.zeros(npa, dtype=bool)
        for d in range(self.dim):
            mask |= (idx[d] == 0) | (idx[d] == npa[d] - 1)
        return mask.ravel(order="F")

    def node_index(self, *ijk: int) -> int:
        index, stride = 0, 1
        for i, n in zip(ijk, self.nodes_per_axis):
            index += i * stride
            stride *= n
        return index

    def grid_shape(self) -> tuple[int, ...]:
        """Shape to reshape nodal arrays with ``order='F'``."""
        return self.nodes_per_axis


def build_mesh(dim: int, box, cells_per_axis) -> StructuredMesh:
    """Build a uniform mesh.

    ``box`` is ``(box_min, box_max)``; ``cells_per_axis`` an int (same on all
    axes) or a sequence with one entry per axis.
    """
    if dim not in (2, 3):
        raise MeshError(f"dim must be 2 or 3, got {dim!r}")
    lo, hi = box
    lo = tuple(float(v) for v in np.broadcast_to(lo, (dim,)))
    hi = tuple(float(v) for v in np.broadcast_to(hi, (dim,)))
    cells = np.broadcast_to(np.asarray(cells_per_axis), (dim,))
    if not np.all(np.asarray(cells) == np.round(cells)):
        raise MeshError(f"cells_per_axis must be integers, got {cells_per_axis!r}")
    cells = tuple(int(c) for c in cells)
    for d in range(dim):
        if not hi[d] > lo[d]:
            raise MeshError(f"degenerate box along axis {d}: [{lo[d]}, {hi[d]}]")
        if cells[d] < 2:
            raise MeshError(f"need at least 2 cells along axis {d}, got {cells[d]}")
    return StructuredMesh(dim, lo, hi, cells)


def cell_nodes(mesh: StructuredMesh, cell_index: int) -> tuple[int, ...]:
    if not 0 <= cell_index < mesh.n_cells:
        raise IndexError(f"cell {cell_index} out of range [0, {mesh.n_cells})")
    return tuple(int(i) for i in mesh.cells[cell_index])


def boundary_nodes(mesh: StructuredMesh) -> np.ndarray:
    """Indices of nodes on the box faces, ascending."""
    return np.flatnonzero(mesh.boundary_mask)


@dataclass(frozen=True)
class DofMap:
    """Global numbering of a Q1 field.

    Vector fields are stored component-blocked: DOF ``c * n_nodes + node``.
    ``constraint`` is one of ``"dirichlet"``, ``"zero-mean"`` or ``"none"``.
    """

    mesh: StructuredMesh
    arity: int = 1
    constraint: str = "none"

    def __post_init__(self):
        if self.arity < 1:
            raise MeshError("arity must be positive")
        if self.constraint not in ("dirichlet", "zero-mean", "none"):
            raise MeshError(f"unknown constraint kind {self.constraint!r}")

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def size(self) -> int:
        return self.arity * self.mesh.n_nodes

    def global_index(self, node, component: int = 0):
        return component * self.mesh.n_nodes + np.asarray(node)

    def boundary_dofs(self) -> np.ndarray:
        nodes = boundary_nodes(self.mesh)
        return np.concatenate([nodes + c * self.mesh.n_nodes for c in range(self.arity)])
