"""Q1 finite elements on uniform tensor grids.

Every cell of a uniform grid is the same affine image of ``[-1, 1]^dim``, so
basis values and physical gradients at the quadrature points are computed
once per mesh.  Element matrices for a whole mesh are then single ``einsum``
calls and are scattered into a fixed CSR pattern with ``np.bincount``, which
sums contributions in a fixed order and keeps assembly bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import DofMap, StructuredMesh, boundary_nodes

GAUSS_POINT = 1.0 / np.sqrt(3.0)


class AssemblyError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray
    weights: np.ndarray


def gauss_quadrature(dim: int) -> Quadrature:
    """Tensor 2-point Gauss rule on the reference cell, ordered like the vertices."""
    n = 2 ** dim
    points = np.array([[GAUSS_POINT if (q >> d) & 1 else -GAUSS_POINT for d in range(dim)]
                       for q in range(n)])
    return Quadrature(points, np.ones(n))


def shape_eval(local_coords):
    """Q1 basis values and reference gradients at one point of ``[-1, 1]^dim``.

    Returns ``(values, gradients)`` with shapes ``(2**dim,)`` and
    ``(2**dim, dim)``.
    """
    xi = np.asarray(local_coords, dtype=float)
    dim = xi.shape[-1]
    nloc = 2 ** dim
    values = np.ones(nloc)
    grads = np.ones((nloc, dim))
    for l in range(nloc):
        for d in range(dim):
            s = 1.0 if (l >> d) & 1 else -1.0
            f = 0.5 * (1.0 + s * xi[d])
            values[l] *= f
            for e in range(dim):
                grads[l, e] *= 0.5 * s if e == d else f
    return values, grads


@dataclass
class SparseOperator:
    """Assembled CSR operator plus the constraint metadata the solvers need."""

    matrix: sp.csr_matrix
    symmetric: bool = False
    dirichlet_rows: np.ndarray | None = None
    zero_mean: bool = False
    diagonal_cache: np.ndarray | None = field(default=None, repr=False)
    # preconditioners keyed by their settings; valid while the matrix is unchanged
    factor_cache: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def indptr(self):
        return self.matrix.indptr

    @property
    def indices(self):
        return self.matrix.indices

    @property
    def data(self):
        return self.matrix.data

    def diagonal(self) -> np.ndarray:
        if self.diagonal_cache is None:
            self.diagonal_cache = self.matrix.diagonal()
        return self.diagonal_cache

    def __matmul__(self, x):
        return self.matrix @ x

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        diff = abs(self.matrix - self.matrix.T)
        scale = abs(self.matrix).max() if self.matrix.nnz else 0.0
        return diff.nnz == 0 or diff.max() <= rtol * scale


def _pattern(rows: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int):
    """CSR pattern of a set of (row, col) entries and the scatter map into it."""
    keys = rows.astype(np.int64) * n_cols + cols.astype(np.int64)
    unique, scatter = np.unique(keys, return_inverse=True)
    indices = (unique % n_cols).astype(np.int32)
    counts = np.bincount(unique // n_cols, minlength=n_rows)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    return indptr, indices, scatter.ravel()


class Assembler:
    """Per-mesh precomputed tables for vectorized Q1 assembly."""

    def __init__(self, mesh: StructuredMesh):
        self.mesh = mesh
        dim = mesh.dim
        self.dim = dim
        self.nloc = 2 ** dim
        self.quadrature = gauss_quadrature(dim)
        h = np.array(mesh.h_per_axis)
        det = float(np.prod(h / 2.0))
        vals, grads = zip(*(shape_eval(x) for x in self.quadrature.points))
        self.N = np.array(vals)                                    # (nq, nloc)
        self.G = np.array(grads) * (2.0 / h)[None, None, :]        # (nq, nloc, dim)
        self.w = self.quadrature.weights * det                     # (nq,)
        self.cells = mesh.cells
        n = mesh.n_nodes
        self.n = n

        nc, nl = mesh.n_cells, self.nloc
        rows = np.broadcast_to(self.cells[:, :, None], (nc, nl, nl))
        cols = np.broadcast_to(self.cells[:, None, :], (nc, nl, nl))
        self._scalar = _pattern(rows.ravel(), cols.ravel(), n, n)


        self.NN = np.einsum("q,qi,qj->qij", self.w, self.N, self.N)
        self.GG = np.einsum("q,qid,qjd->qij", self.w, self.G, self.G)
        self.GxG = np.einsum("q,qia,qjb->qiajb", self.w, self.G, self.G)
        self.NG = np.einsum("q,qi,qjd->qijd", self.w, self.N, self.G)
        # flattened copies so the per-cell contractions below run through BLAS
        nq, nloc, dim = self.G.shape
        self._G_flat = self.G.transpose(1, 0, 2).reshape(nloc, nq * dim)
        self._NN_flat = self.NN.reshape(nq, -1)
        self._GG_flat = self.GG.reshape(nq, -1)
        self._GxG_flat = self.GxG.reshape(nq, -1)
        self._NG_flat = self.NG.transpose(0, 3, 1, 2).reshape(nq * dim, nloc * nloc)
        self._lumped = None

    # -- interpolation -----------------------------------------------------
    def at_quad(self, nodal) -> np.ndarray:
        """Q1 interpolant at quadrature points: ``(n_cells, nq[, ncomp])``."""
        a = np.asarray(nodal, dtype=float)
        if a.ndim == 1:
            return a[self.cells] @ self.N.T
        return np.matmul(self.N, a[self.cells])

    def grad_at_quad(self, nodal) -> np.ndarray:
        """Gradient of a scalar Q1 field: ``(n_cells, nq, dim)``."""
        a = np.asarray(nodal, dtype=float)
        nc, (nq, _, dim) = self.cells.shape[0], self.G.shape
        return (a[self.cells] @ self._G_flat).reshape(nc, nq, dim)

    def vector_grad_at_quad(self, nodal) -> np.ndarray:
        """Gradient of a vector field ``(n, ncomp)``: ``(n_cells, nq, ncomp, dim)``."""
        a = np.asarray(nodal, dtype=float)
        nc, (nq, _, dim) = self.cells.shape[0], self.G.shape
        out = np.swapaxes(a[self.cells], 1, 2) @ self._G_flat      # (nc, ncomp, nq*dim)
        return out.reshape(nc, -1, nq, dim).transpose(0, 2, 1, 3)

    def cell_gradient_at(self, nodal, point) -> np.ndarray:
        """Gradient of a scalar field at one reference point in every cell."""
        _, g = shape_eval(point)
        g = g * (2.0 / np.array(self.mesh.h_per_axis))[None, :]
        return np.asarray(nodal, dtype=float)[self.cells] @ g

    # -- integration -------------------------------------------------------
    def integrate(self, values_q) -> float:
        return float(np.sum(np.asarray(values_q) * self.w[None, :]))

    def load(self, values_q) -> np.ndarray:
        """``(f, N_i)`` for quadrature values ``f`` of shape ``(n_cells, nq)``."""
        local = np.asarray(values_q) * self.w[None, :] @ self.N    # (nc, nloc)
        return np.bincount(self.cells.ravel(), weights=local.ravel(), minlength=self.n)

    def load_grad(self, values_q) -> np.ndarray:
        """``(f, grad N_i)`` for vector quadrature values ``(n_cells, nq, dim)``."""
        v = np.asarray(values_q) * self.w[None, :, None]
        local = v.reshape(v.shape[0], -1) @ self._G_flat.T
        return np.bincount(self.cells.ravel(), weights=local.ravel(), minlength=self.n)

    def lumped_mass(self) -> np.ndarray:
        if self._lumped is None:
            self._lumped = self.load(np.ones((self.mesh.n_cells, len(self.w))))
        return self._lumped

    # -- scatter -----------------------------------------------------------
    def scalar_matrix(self, elem: np.ndarray) -> sp.csr_matrix:
        indptr, indices, scatter = self._scalar
        data = np.bincount(scatter, weights=elem.ravel(), minlength=len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(self.n, self.n))

    def vector_matrix(self, elem: np.ndarray) -> sp.csr_matrix:
        """Blocked vector operator from element entries ordered ``(cell, a, i, b, j)``."""
        dim = self.dim
        blocks = [[self.scalar_matrix(elem[:, a, :, b, :]) for b in range(dim)]
                  for a in range(dim)]
        out = sp.bmat(blocks, format="csr")
        out.sort_indices()
        return out

    def divergence_matrix(self, elem: np.ndarray) -> sp.csr_matrix:
        """Scalar-by-vector operator from element entries ordered ``(cell, i, b, j)``."""
        out = sp.hstack([self.scalar_matrix(elem[:, :, b, :]) for b in range(self.dim)],
                        format="csr")
        out.sort_indices()
        return out


@lru_cache(maxsize=16)
def get_assembler(mesh: StructuredMesh) -> Assembler:
    return Assembler(mesh)


def _coeff_at_quad(asm: Assembler, coeff) -> np.ndarray:
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.full((asm.mesh.n_cells, len(asm.w)), float(c))
    if c.shape != (asm.n,):
        raise AssemblyError(f"coefficient has shape {c.shape}, expected ({asm.n},)")
    return asm.at_quad(c)


def _check_dofmap(mesh: StructuredMesh, dofmap: DofMap | None, arity: int | None = None):
    if dofmap is None:
        return
    if dofmap.mesh != mesh:
        raise AssemblyError("dofmap belongs to a different mesh")
    if arity is not None and dofmap.arity != arity:
        raise AssemblyError(f"dofmap arity {dofmap.arity}, expected {arity}")


def assemble_mass(mesh: StructuredMesh, dofmap: DofMap | None = None, coeff=1.0) -> SparseOperator:
    """``(c u, v)``; block diagonal over components for vector dofmaps."""
    _check_dofmap(mesh, dofmap)
    asm = get_assembler(mesh)
    cq = _coeff_at_quad(asm, coeff)
    m = asm.scalar_matrix(cq @ asm._NN_flat)
    arity = 1 if dofmap is None else dofmap.arity
    if arity > 1:
        m = sp.block_diag([m] * arity, format="csr")
    return SparseOperator(m, symmetric=True)


def assemble_stiffness(mesh: StructuredMesh, dofmap: DofMap | None = None, coeff=1.0) -> SparseOperator:
    """``(c grad u, grad v)`` for a scalar field; ``c`` must be positive."""
    _check_dofmap(mesh, dofmap, 1)
    asm = get_assembler(mesh)
    cq = _coeff_at_quad(asm, coeff)
    bad = np.flatnonzero(~(cq > 0).all(axis=1))
    if bad.size:
        raise AssemblyError(f"non-positive stiffness coefficient in cell {int(bad[0])}")
    return SparseOperator(asm.scalar_matrix(cq @ asm._GG_flat),
                          symmetric=True)


def assemble_viscous(mesh: StructuredMesh, coeff=1.0) -> SparseOperator:
    """``(c D(u), D(v))`` on the component-blocked vector space."""
    asm = get_assembler(mesh)
    cq = _coeff_at_quad(asm, coeff)
    if not (cq > 0).all():
        bad = np.flatnonzero(~(cq > 0).all(axis=1))
        raise AssemblyError(f"non-positive viscosity in cell {int(bad[0])}")
    # D(N_j e_b):D(N_i e_a) = 1/2 (delta_ab gradNi.gradNj + d_b N_i d_a N_j)
    nloc, dim = asm.G.shape[1:]
    lap = (cq @ asm._GG_flat).reshape(-1, nloc, nloc)
    # d_b N_i * d_a N_j, reordered to (cell, a, i, b, j)
    cross = (cq @ asm._GxG_flat).reshape(-1, nloc, dim, nloc, dim).transpose(0, 4, 1, 2, 3)
    elem = 0.5 * cross
    for a in range(dim):
        elem[:, a, :, a, :] += 0.5 * lap
    return SparseOperator(asm.vector_matrix(elem), symmetric=True)


def assemble_convection(mesh: StructuredMesh, dofmap: DofMap | None, rho, velocity,
                        mu=None, flux_coeff: float = 0.0) -> SparseOperator:
    """``((rho u - flux_coeff grad mu) . grad w, v)`` acting on vector fields ``w``.

    ``rho`` is a nodal scalar (or constant), ``velocity`` a nodal array of
    shape ``(n, dim)``; the advecting field is frozen at these values.
    """
    asm = get_assembler(mesh)
    dim = mesh.dim
    _check_dofmap(mesh, dofmap, dim)
    vel = np.asarray(velocity, dtype=float)
    if vel.shape != (asm.n, dim):
        raise AssemblyError(f"velocity has shape {vel.shape}, expected ({asm.n}, {dim})")
    adv = _coeff_at_quad(asm, rho)[:, :, None] * asm.at_quad(vel)
    if mu is not None and flux_coeff != 0.0:
        adv = adv - flux_coeff * asm.grad_at_quad(mu)
    block = asm.scalar_matrix(adv.reshape(adv.shape[0], -1) @ asm._NG_flat)
    return SparseOperator(sp.block_diag([block] * dim, format="csr"), symmetric=False)


def assemble_divergence(mesh: StructuredMesh) -> SparseOperator:
    """Weak divergence ``(div u, q)``: scalar rows, vector columns."""
    asm = get_assembler(mesh)
    # (i, b, j) -> int N_i d_b N_j
    elem = np.broadcast_to(np.einsum("qijd->idj", asm.NG)[None],
                           (mesh.n_cells, asm.nloc, mesh.dim, asm.nloc))
    return SparseOperator(asm.divergence_matrix(np.ascontiguousarray(elem)))


def apply_dirichlet(op: SparseOperator, rhs, dofs, values=0.0, boundary=None):
    """Impose ``x[dofs] = values`` by symmetric elimination.

    Constrained rows and columns are zeroed, the diagonal keeps the original
    magnitude (1 where it was zero) and known column contributions move to the
    right-hand side.  ``boundary`` optionally lists the admissible dofs.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    if boundary is not None:
        outside = np.setdiff1d(dofs, boundary)
        if outside.size:
            raise ConstraintError(f"dof {int(outside[0])} is not on the boundary")
    A = op.matrix.tocsr()
    n = A.shape[0]
    vals = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    rhs = np.array(rhs, dtype=float, copy=True)
    x_known = np.zeros(n)
    x_known[dofs] = vals
    if np.any(vals != 0):
        rhs -= A @ x_known
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    diag = np.abs(A.diagonal()[dofs])
    diag[diag == 0] = 1.0
    D = sp.csr_matrix((diag, (dofs, dofs)), shape=A.shape)
    out = (K @ A @ K + D).tocsr()
    out.sort_indices()
    rhs[dofs] = diag * vals
    prev = op.dirichlet_rows if op.dirichlet_rows is not None else np.empty(0, dtype=np.int64)
    return (SparseOperator(out, symmetric=op.symmetric,
                           dirichlet_rows=np.union1d(prev, dofs), zero_mean=op.zero_mean),
            rhs)


def velocity_boundary_dofs(mesh: StructuredMesh) -> np.ndarray:
    nodes = boundary_nodes(mesh)
    return np.concatenate([nodes + c * mesh.n_nodes for c in range(mesh.dim)])
