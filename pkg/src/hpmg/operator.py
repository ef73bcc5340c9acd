"""Stiffness and mass operators for mu-weighted Poisson problems.

An operator always carries its quadrature-point geometry cache, so the
sum-factorized matrix-free product is available in every mode; assembly
adds a CSR matrix on top. Dirichlet DOFs stay in the vector and are
identity-projected: rows and columns zeroed, unit diagonal.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp

from . import kernels
from .basis import tensor_basis
from .errors import (
    AssemblyTooLargeError,
    ConfigurationError,
    ElementTooLargeError,
    RequiresAssemblyError,
    ShapeError,
)
from .mesh import coefficient_field, element_dofs

DEFAULT_BUDGET_BYTES = 2 * 1024**3
DEFAULT_ELEMENT_BUDGET = 4096  # max local DOFs for dense element work
_CHUNK_BYTES = 64 * 1024**2


# ----------------------------------------------------------------------------
# tensor contractions on element arrays (E, [nz,] ny, nx)
# ----------------------------------------------------------------------------


def contract(a, M, k):
    """Apply ``M`` (rows x n) along reference direction ``k`` (0 = x)."""
    if k == 0:
        return a @ M.T
    if k == 1:
        return M @ a
    s = a.shape
    return (M @ a.reshape(s[0], s[1], -1)).reshape(s[0], M.shape[0], s[2], s[3])


def to_quad(ue, mats):
    """Contract every direction ``k`` with ``mats[k]``."""
    out = ue
    for k, M in enumerate(mats):
        out = contract(out, M, k)
    return out


def reference_gradient(ue, B, D, dim):
    """Reference-coordinate gradient at quadrature points, one array per axis."""
    if dim == 2:
        xb, xd = contract(ue, B, 0), contract(ue, D, 0)
        return [contract(xd, B, 1), contract(xb, D, 1)]
    xb, xd = contract(ue, B, 0), contract(ue, D, 0)
    ybxb = contract(xb, B, 1)
    return [
        contract(contract(xd, B, 1), B, 2),
        contract(contract(xb, D, 1), B, 2),
        contract(ybxb, D, 2),
    ]


def reference_gradient_transpose(v, B, D, dim):
    """Adjoint of `reference_gradient`: sum_k grad_k^T v[k]."""
    Bt, Dt = B.T, D.T
    if dim == 2:
        return contract(contract(v[0], Bt, 1), Dt, 0) + contract(contract(v[1], Dt, 1), Bt, 0)
    zb = contract(v[0], Bt, 2)
    yx = contract(zb, Bt, 1)
    out = contract(yx, Dt, 0)
    zb1 = contract(v[1], Bt, 2)
    out += contract(contract(zb1, Dt, 1), Bt, 0)
    zd = contract(v[2], Dt, 2)
    out += contract(contract(zd, Bt, 1), Bt, 0)
    return out


def matfree_flops(dim, n, nq, n_elem):
    """Flop count of one sum-factorized stiffness application."""
    def c(rows, a, b):
        return 2 * rows * a * b

    if dim == 2:
        fwd = 2 * c(n, n, nq) + 2 * c(nq, n, nq)
        geo = 6 * nq**2
        return n_elem * (2 * fwd + geo)
    fwd = (
        2 * c(n * n, n, nq)        # x with B, D
        + 3 * c(n, n, nq * nq)     # y contractions
        + 3 * c(1, n, nq**3)       # z contractions
    )
    geo = 15 * nq**3
    return n_elem * (2 * fwd + geo)


# ----------------------------------------------------------------------------
# element grids and geometry
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class ElementGrid:
    """Tensor grid of elements of one order plus quadrature geometry.

    ``stiff[k][l]`` holds ``mu * detJ * w * (J^-1 J^-T)[k, l]`` at every
    quadrature point, ``mass`` holds ``detJ * w``.
    """

    dim: int
    shape: tuple
    order: int
    elem_to_dof: np.ndarray
    boundary_mask: np.ndarray
    stiff: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    n_quad: int = 0

    @property
    def n_elements(self):
        return self.elem_to_dof.shape[0]

    @property
    def n_dofs(self):
        return self.boundary_mask.size

    @property
    def nodes_per_element(self):
        return self.elem_to_dof.shape[1]

    @property
    def element_shape(self):
        return (self.order + 1,) * self.dim

    def layout(self):
        return kernels.LatticeLayout(self.shape, self.order)


def _quad_weights(w, dim):
    out = w
    for _ in range(dim - 1):
        out = np.multiply.outer(w, out)
    return out  # axes (z, y, x) of a symmetric product


def _geometry_factors(J, mu, wq, dim):
    """Turn reference Jacobians at quadrature points into cached factors."""
    detJ = np.linalg.det(J)
    if not np.all(detJ > 0):
        from .errors import DegenerateGeometryError

        raise DegenerateGeometryError(f"non-positive Jacobian determinant (min {detJ.min():.3e})")
    Jinv = np.linalg.inv(J)
    Ginv = np.einsum("...ki,...li->...kl", Jinv, Jinv)
    scale = detJ * _quad_weights(wq, dim)[None]
    stiff = np.moveaxis(Ginv * (mu * scale)[..., None, None], (-2, -1), (0, 1))
    return np.ascontiguousarray(stiff), scale


def mesh_grid(mesh, coefficient, n_quad=None):
    """Geometry for a `StructuredMesh` with the warp evaluated analytically."""
    coef = coefficient_field(coefficient)
    b = tensor_basis(mesh.order, n_quad)
    Xq = mesh.quadrature_points(b.n_quad)
    h = 1.0 / mesh.nelem
    J = mesh.warp.jacobian(Xq) * (h / 2.0)
    mu = coef(mesh.warp.map(Xq))
    stiff, mass = _geometry_factors(J, mu, b.quad_weights, mesh.dim)
    return ElementGrid(
        mesh.dim, (mesh.nelem,) * mesh.dim, mesh.order, mesh.elem_to_dof,
        mesh.boundary_mask, stiff, mass, b.n_quad,
    )


def overlay_grid(mesh, coefficient):
    """Q1 sub-elements spanning the LGL lattice of ``mesh``.

    Sub-element vertices sit at the warped physical positions of the
    high-order nodes; the sub-elements themselves are straight-edged.
    """
    coef = coefficient_field(coefficient)
    d = mesh.dim
    ncell = mesh.n1d - 1
    e2d = element_dofs((ncell,) * d, 1)
    X = mesh.node_coords()
    b = tensor_basis(1)
    B, D = b.eval_at_quad, b.deriv_at_quad
    J = np.empty((e2d.shape[0],) + (2,) * d + (d, d))
    xq = np.empty((e2d.shape[0],) + (2,) * d + (d,))
    for i in range(d):
        xe = X[e2d, i].reshape((-1,) + (2,) * d)
        grads = reference_gradient(xe, B, D, d)
        for k in range(d):
            J[..., i, k] = grads[k]
        xq[..., i] = to_quad(xe, [B] * d)
    mu = coef(xq)
    stiff, mass = _geometry_factors(J, mu, b.quad_weights, d)
    return ElementGrid(d, (ncell,) * d, 1, e2d, mesh.boundary_mask, stiff, mass, 2)


# ----------------------------------------------------------------------------
# element matrices by tensor contraction
# ----------------------------------------------------------------------------


def _term_factors(B, D, dim, a, b):
    """Per-direction (q, i, j) factors of the (a, b) gradient term."""
    out = []
    for k in range(dim):
        F = D if k == a else B
        H = D if k == b else B
        out.append(np.einsum("qi,qj->qij", F, H))
    return out


def _tensor_blocks(G, K, dim):
    """sum_q G[e, q] prod_k K[k][q_k, i_k, j_k] as dense (E, m, m) blocks."""
    E = G.shape[0]
    n = K[0].shape[1]
    nq = K[0].shape[0]
    n2 = n * n
    if dim == 2:
        T = G.reshape(E * nq, nq) @ K[0].reshape(nq, n2)          # (E*qy, ixjx)
        A = K[1].reshape(nq, n2).T @ T.reshape(E, nq, n2)          # (E, iyjy, ixjx)
        A = A.reshape(E, n, n, n, n).transpose(0, 1, 3, 2, 4)      # iy ix jy jx
        return A.reshape(E, n2, n2)
    T1 = G.reshape(E * nq * nq, nq) @ K[0].reshape(nq, n2)        # (E qz qy, ixjx)
    T2 = K[1].reshape(nq, n2).T @ T1.reshape(E * nq, nq, n2)       # (E qz, iyjy, ixjx)
    T3 = K[2].reshape(nq, n2).T @ T2.reshape(E, nq, n2 * n2)       # (E, izjz, iyjy ixjx)
    A = T3.reshape(E, n, n, n, n, n, n).transpose(0, 1, 3, 5, 2, 4, 6)
    return A.reshape(E, n**3, n**3)


def _element_blocks(grid, elems, kind="stiffness"):
    b = tensor_basis(grid.order, grid.n_quad)
    B, D = np.asarray(b.eval_at_quad), np.asarray(b.deriv_at_quad)
    d = grid.dim
    if kind == "mass":
        K = [np.einsum("qi,qj->qij", B, B)] * d
        return _tensor_blocks(grid.mass[elems], K, d)
    out = None
    for a, c in product(range(d), repeat=2):
        blk = _tensor_blocks(grid.stiff[a, c][elems], _term_factors(B, D, d, a, c), d)
        out = blk if out is None else out + blk
    return out


def _element_chunks(grid):
    m = grid.nodes_per_element
    size = max(1, _CHUNK_BYTES // (8 * m * m * 3))
    for start in range(0, grid.n_elements, size):
        yield np.arange(start, min(start + size, grid.n_elements))


def _element_diagonals(grid):
    b = tensor_basis(grid.order, grid.n_quad)
    B, D = np.asarray(b.eval_at_quad), np.asarray(b.deriv_at_quad)
    d = grid.dim
    out = 0.0
    for a, c in product(range(d), repeat=2):
        mats = []
        for k in range(d):
            F = D if k == a else B
            H = D if k == c else B
            mats.append((F * H).T)  # (n, nq): contracts quadrature axis
        out = out + to_quad(grid.stiff[a, c], mats)
    return out.reshape(grid.n_elements, -1)


def assembled_nnz(dim, nelem, order):
    """Nonzeros of the assembled operator, from the lattice couplings alone."""
    return int(kernels.coupling_ranges(nelem, order)[1].sum()) ** dim


def assembly_bytes(dim, nelem, order):
    """Bytes of CSR storage the assembled operator would need."""
    return assembled_nnz(dim, nelem, order) * 12 + (nelem * order + 1) ** dim * 8


def _assemble_csr(grid, kind, budget_bytes):
    lay = grid.layout()
    need = lay.nnz * 12 + lay.n_rows * 8
    if need > budget_bytes:
        raise AssemblyTooLargeError(
            f"assembling {kind} needs {need / 2**30:.2f} GiB "
            f"({lay.nnz} nonzeros) > budget {budget_bytes / 2**30:.2f} GiB"
        )
    data = np.zeros(lay.nnz)
    args = lay.kernel_args()
    for elems in _element_chunks(grid):
        kernels.scatter_blocks(data, _element_blocks(grid, elems, kind), elems, *args)
    A = sp.csr_matrix((data, lay.indices(), lay.indptr), shape=(lay.n_rows, lay.n_rows))
    return A, lay


def _project_boundary_csr(A, lay, mask):
    rows = np.repeat(mask, np.diff(A.indptr))
    A.data[rows | mask[A.indices]] = 0.0
    A.data[lay.diagonal_positions()[mask]] = 1.0
    return A


# ----------------------------------------------------------------------------
# operators
# ----------------------------------------------------------------------------


class DiscreteOperator:
    """Linear operator on DOF vectors of one element grid.

    ``mode`` is ``"matrix-free"`` or ``"assembled"``; in assembled mode
    `apply` uses the CSR matrix, otherwise sum factorization. Every call
    to `apply` increments ``matvecs``.
    """

    def __init__(self, grid, mode="matrix-free", mesh=None, coefficient=None,
                 budget_bytes=DEFAULT_BUDGET_BYTES, kind="stiffness", project=True):
        if mode not in ("matrix-free", "assembled"):
            raise ConfigurationError(f"unknown operator mode {mode!r}")
        self.grid = grid
        self.mesh = mesh
        self.coefficient = coefficient
        self.kind = kind
        self.project = project
        self.budget_bytes = budget_bytes
        self.sparse = None
        self._layout = None
        self._diag = None
        self._l1 = None
        self.matvecs = 0
        self.mode = "matrix-free"
        b = tensor_basis(grid.order, grid.n_quad)
        self._B = np.ascontiguousarray(b.eval_at_quad)
        self._D = np.ascontiguousarray(b.deriv_at_quad)
        if mode == "assembled":
            self.assemble()

    @property
    def geometry_cache(self):
        return self.grid.stiff

    @property
    def n_dofs(self):
        return self.grid.n_dofs

    @property
    def shape(self):
        return (self.n_dofs, self.n_dofs)

    @property
    def boundary_mask(self):
        return self.grid.boundary_mask

    @property
    def dim(self):
        return self.grid.dim

    @property
    def order(self):
        return self.grid.order

    def assemble(self, switch_mode=True):
        """Build (once) and return the CSR matrix.

        With ``switch_mode`` the operator then applies through the CSR
        matrix; otherwise the matrix is only kept for row access.
        """
        if self.sparse is None:
            A, lay = _assemble_csr(self.grid, self.kind, self.budget_bytes)
            if self.project:
                _project_boundary_csr(A, lay, self.grid.boundary_mask)
            self.sparse, self._layout = A, lay
        if switch_mode:
            self.mode = "assembled"
        return self.sparse

    @property
    def is_assembled(self):
        return self.sparse is not None

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_dofs,):
            raise ShapeError(f"expected vector of length {self.n_dofs}, got shape {u.shape}")
        return u

    def apply_matrix_free(self, u, project_boundary=None):
        project = self.project if project_boundary is None else project_boundary
        u = self._check(u)
        g = self.grid
        mask = g.boundary_mask
        src = np.where(mask, 0.0, u) if project else u
        ue = src[g.elem_to_dof].reshape((g.n_elements,) + g.element_shape)
        if self.kind == "mass":
            v = to_quad(to_quad(ue, [self._B] * g.dim) * g.mass, [self._B.T] * g.dim)
        else:
            grads = reference_gradient(ue, self._B, self._D, g.dim)
            S = g.stiff
            flux = [sum(S[k, l] * grads[l] for l in range(g.dim)) for k in range(g.dim)]
            v = reference_gradient_transpose(flux, self._B, self._D, g.dim)
        out = kernels.scatter_add(np.zeros(self.n_dofs), g.elem_to_dof,
                                  np.ascontiguousarray(v.reshape(g.n_elements, -1)))
        if project:
            out[mask] = u[mask]
        return out

    def apply(self, u, project_boundary=None):
        self.matvecs += 1
        if self.sparse is not None and self.mode == "assembled" and project_boundary in (None, self.project):
            return self.sparse @ self._check(u)
        return self.apply_matrix_free(u, project_boundary)

    __call__ = apply

    def __matmul__(self, u):
        return self.apply(u)

    def diagonal(self):
        if self._diag is None:
            if self.kind == "mass":
                self._diag = self.assemble(switch_mode=False).diagonal().copy()
            else:
                d = kernels.scatter_add(np.zeros(self.n_dofs), self.grid.elem_to_dof,
                                        np.ascontiguousarray(_element_diagonals(self.grid)))
                if self.project:
                    d[self.grid.boundary_mask] = 1.0
                self._diag = d
        return self._diag

    def l1_diagonal(self):
        if self.sparse is None:
            raise RequiresAssemblyError("the l1 diagonal needs row access; assemble the operator first")
        if self._l1 is None:
            A = self.sparse
            absrow = np.asarray(abs(A).sum(axis=1)).ravel()
            diag = A.diagonal()
            self._l1 = diag + (absrow - np.abs(diag))
        return self._l1

    def flops_per_unknown(self):
        """g_p of the cost model for the current mode."""
        if self.sparse is not None and self.mode == "assembled":
            return 2.0 * self.sparse.nnz / self.n_dofs
        g = self.grid
        return matfree_flops(g.dim, g.order + 1, g.n_quad, g.n_elements) / self.n_dofs

    def element_blocks(self, elems=None):
        """Dense principal sub-blocks of the assembled operator per element."""
        A = self.assemble(switch_mode=False)
        elems = np.arange(self.grid.n_elements) if elems is None else np.asarray(elems)
        return kernels.gather_blocks(A.data, elems, *self._layout.kernel_args())

    def __repr__(self):
        return (f"DiscreteOperator({self.kind}, {self.mode}, dim={self.dim}, "
                f"p={self.order}, n_dofs={self.n_dofs})")


def stiffness_operator(mesh, coefficient, mode="matrix-free", budget_bytes=DEFAULT_BUDGET_BYTES):
    grid = mesh_grid(mesh, coefficient)
    return DiscreteOperator(grid, mode, mesh=mesh, coefficient=coefficient_field(coefficient),
                            budget_bytes=budget_bytes)


def apply_stiffness(op, u, project_boundary=None):
    return op.apply(u, project_boundary)


def assemble_stiffness(mesh, coefficient, budget_bytes=DEFAULT_BUDGET_BYTES, project_boundary=True):
    grid = mesh_grid(mesh, coefficient)
    return DiscreteOperator(grid, "assembled", mesh=mesh, coefficient=coefficient_field(coefficient),
                            budget_bytes=budget_bytes, project=project_boundary)


def assemble_mass(mesh, budget_bytes=DEFAULT_BUDGET_BYTES):
    grid = mesh_grid(mesh, "const-1")
    return DiscreteOperator(grid, "assembled", mesh=mesh, budget_bytes=budget_bytes,
                            kind="mass", project=False)


def operator_diagonal(op):
    return op.diagonal()


def l1_diagonal(op):
    return op.l1_diagonal()


def assemble_low_order_overlay(mesh, coefficient, budget_bytes=DEFAULT_BUDGET_BYTES, project_boundary=True):
    """Q1 operator on the same DOFs, built on the LGL node lattice."""
    if mesh.order < 2:
        raise ConfigurationError("order-1 meshes have no separate low-order overlay")
    grid = overlay_grid(mesh, coefficient)
    return DiscreteOperator(grid, "assembled", mesh=mesh, coefficient=coefficient_field(coefficient),
                            budget_bytes=budget_bytes, project=project_boundary)


@dataclass
class ElementMatrix:
    element: int
    matrix: np.ndarray
    factor: object = None

    def solve(self, b):
        from scipy.linalg import cho_factor, cho_solve

        if self.factor is None:
            self.factor = cho_factor(self.matrix)
        return cho_solve(self.factor, b)


def element_matrices(mesh, coefficient, max_local_dofs=DEFAULT_ELEMENT_BUDGET, project_boundary=True):
    """Local element stiffness matrices; their scattered sum is the operator.

    With ``project_boundary`` rows/columns of Dirichlet DOFs are zeroed and
    their diagonal set to ``1 / multiplicity`` so the sum reproduces the
    identity-projected global matrix.
    """
    if (mesh.order + 1) ** mesh.dim > max_local_dofs:
        raise ElementTooLargeError(
            f"element has {(mesh.order + 1) ** mesh.dim} local DOFs > {max_local_dofs}"
        )
    grid = mesh_grid(mesh, coefficient)
    blocks = _element_blocks(grid, np.arange(grid.n_elements))
    if project_boundary:
        e2d = grid.elem_to_dof
        mult = np.bincount(e2d.ravel(), minlength=grid.n_dofs)
        bnd = grid.boundary_mask[e2d]
        blocks[bnd[:, :, None] | bnd[:, None, :]] = 0.0
        ee, ii = np.nonzero(bnd)
        blocks[ee, ii, ii] = 1.0 / mult[e2d[ee, ii]]
    return [ElementMatrix(e, blocks[e]) for e in range(grid.n_elements)]
