"""Structured quad/hex meshes of mapped unit squares and cubes.

Global DOFs are numbered lexicographically over the tensor lattice of LGL
nodes (x fastest), elements likewise. Element-local arrays use axis order
``(z, y, x)`` so that a C-order ravel reproduces the x-fastest numbering.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .basis import lgl_nodes, tensor_basis
from .errors import (
    CannotCoarsenError,
    ConfigurationError,
    DegenerateGeometryError,
    InvalidMeshError,
    InvalidOrderError,
)

MAX_ORDER = 16
WARP_AMPLITUDE = 0.1


@dataclass(frozen=True)
class WarpMap:
    """Smooth map from the reference cube [0,1]^d onto the physical domain.

    ``map(X)`` takes points of shape ``(..., d)``; ``jacobian(X)`` returns
    ``(..., d, d)`` with ``J[..., i, j] = d x_i / d X_j``.
    """

    id: str
    dim: int
    map: object
    jacobian: object


def _identity_map(X):
    return np.array(X, dtype=float, copy=True)


def _identity_jac(X):
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    return np.broadcast_to(np.eye(d), X.shape + (d,)).copy()


def _warp2d_map(X):
    X = np.asarray(X, dtype=float)
    x, y = X[..., 0], X[..., 1]
    a = WARP_AMPLITUDE
    s = np.sin
    pi = np.pi
    return np.stack(
        [x + a * s(pi * x) * s(2 * pi * y), y + a * s(2 * pi * x) * s(pi * y)], axis=-1
    )


def _warp2d_jac(X):
    X = np.asarray(X, dtype=float)
    x, y = X[..., 0], X[..., 1]
    a = WARP_AMPLITUDE
    s, c, pi = np.sin, np.cos, np.pi
    J = np.empty(X.shape[:-1] + (2, 2))
    J[..., 0, 0] = 1 + a * pi * c(pi * x) * s(2 * pi * y)
    J[..., 0, 1] = 2 * a * pi * s(pi * x) * c(2 * pi * y)
    J[..., 1, 0] = 2 * a * pi * c(2 * pi * x) * s(pi * y)
    J[..., 1, 1] = 1 + a * pi * s(2 * pi * x) * c(pi * y)
    return J


# 3D: component i is perturbed by sin(pi x_i) sin(2 pi x_{i+1}) sin(pi x_{i+2}),
# indices cyclic; vanishes on every face so the cube maps onto itself.
def _warp3d_map(X):
    X = np.asarray(X, dtype=float)
    a, s, pi = WARP_AMPLITUDE, np.sin, np.pi
    out = np.empty_like(X)
    for i in range(3):
        xi, xj, xk = X[..., i], X[..., (i + 1) % 3], X[..., (i + 2) % 3]
        out[..., i] = xi + a * s(pi * xi) * s(2 * pi * xj) * s(pi * xk)
    return out


def _warp3d_jac(X):
    X = np.asarray(X, dtype=float)
    a, s, c, pi = WARP_AMPLITUDE, np.sin, np.cos, np.pi
    J = np.zeros(X.shape[:-1] + (3, 3))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        xi, xj, xk = X[..., i], X[..., j], X[..., k]
        J[..., i, i] = 1 + a * pi * c(pi * xi) * s(2 * pi * xj) * s(pi * xk)
        J[..., i, j] = a * 2 * pi * s(pi * xi) * c(2 * pi * xj) * s(pi * xk)
        J[..., i, k] = a * pi * s(pi * xi) * s(2 * pi * xj) * c(pi * xk)
    return J


WARPS = {
    "identity-2d": WarpMap("identity-2d", 2, _identity_map, _identity_jac),
    "identity-3d": WarpMap("identity-3d", 3, _identity_map, _identity_jac),
    "warp-2d": WarpMap("warp-2d", 2, _warp2d_map, _warp2d_jac),
    "warp-3d": WarpMap("warp-3d", 3, _warp3d_map, _warp3d_jac),
}


def get_warp(warp):
    if isinstance(warp, WarpMap):
        return warp
    try:
        return WARPS[warp]
    except KeyError:
        raise ConfigurationError(f"unknown warp {warp!r}; known: {sorted(WARPS)}") from None


@dataclass(frozen=True)
class CoefficientField:
    id: str
    eval: object

    def __call__(self, x):
        return self.eval(x)


def _const_one(x):
    return np.ones(np.shape(x)[:-1])


def _cos2_field(freq):
    def mu(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + 1e6 * np.sum(np.cos(freq * np.pi * x) ** 2, axis=-1)

    return mu


COEFFICIENTS = {
    "const-1": CoefficientField("const-1", _const_one),
    "2d-var": CoefficientField("2d-var", _cos2_field(2)),
    "2d-var-prime": CoefficientField("2d-var-prime", _cos2_field(10)),
    "3d-var": CoefficientField("3d-var", _cos2_field(2)),
}


@dataclass(frozen=True)
class Problem:
    id: str
    dim: int
    warp: str
    coefficient: str


PROBLEMS = {
    "2d-const": Problem("2d-const", 2, "identity-2d", "const-1"),
    "2d-var": Problem("2d-var", 2, "warp-2d", "2d-var"),
    "2d-var'": Problem("2d-var'", 2, "warp-2d", "2d-var-prime"),
    "3d-const": Problem("3d-const", 3, "identity-3d", "const-1"),
    "3d-var": Problem("3d-var", 3, "warp-3d", "3d-var"),
}
_PROBLEM_ALIASES = {"2d-var′": "2d-var'", "2d-var-prime": "2d-var'", "2d-varp": "2d-var'"}


def get_problem(problem_id):
    if isinstance(problem_id, Problem):
        return problem_id
    key = _PROBLEM_ALIASES.get(problem_id, problem_id)
    try:
        return PROBLEMS[key]
    except KeyError:
        raise ConfigurationError(
            f"unknown problem {problem_id!r}; known: {sorted(PROBLEMS)}"
        ) from None


def coefficient_field(problem_id):
    """The coefficient mu of a test problem, evaluated at physical points."""
    if isinstance(problem_id, CoefficientField):
        return problem_id
    if problem_id in COEFFICIENTS:
        return COEFFICIENTS[problem_id]
    return COEFFICIENTS[get_problem(problem_id).coefficient]


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def lattice_1d(nelem, order):
    """Reference coordinates in [0, 1] of the 1D node lattice."""
    xi = (lgl_nodes(order) + 1.0) / 2.0
    h = 1.0 / nelem
    pts = np.empty(nelem * order + 1)
    for e in range(nelem):
        pts[e * order: (e + 1) * order + 1] = (e + xi) * h
    return pts


def element_dofs(shape, order):
    """Element-to-DOF table for a tensor grid of ``shape`` elements (x first).

    Returns an int64 array ``(n_elements, (order+1)**d)``; elements and local
    nodes are both lexicographic with x fastest.
    """
    shape = tuple(int(s) for s in shape)
    d = len(shape)
    n1 = [s * order + 1 for s in shape]
    local = np.arange(order + 1)
    strides = np.cumprod([1] + n1[:-1])
    # per-dimension global lattice index of (element, local node)
    idx = [
        (np.arange(shape[k])[:, None] * order + local[None, :]) * strides[k]
        for k in range(d)
    ]
    if d == 2:
        ix, iy = idx
        g = iy[None, :, :, None] + ix[:, None, None, :]  # (ex, ey, ly, lx)
        g = g.transpose(1, 0, 2, 3)  # (ey, ex, ly, lx)
    else:
        ix, iy, iz = idx
        g = (
            iz[None, None, :, :, None, None]
            + iy[None, :, None, None, :, None]
            + ix[:, None, None, None, None, :]
        )  # (ex, ey, ez, lz, ly, lx)
        g = g.transpose(2, 1, 0, 3, 4, 5)
    return np.ascontiguousarray(g.reshape(int(np.prod(shape)), (order + 1) ** d))


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Conforming ``nelem^dim`` element grid of order ``order``."""

    dim: int
    nelem: int
    order: int
    warp: WarpMap

    @property
    def n1d(self):
        return self.nelem * self.order + 1

    @property
    def n_dofs(self):
        return self.n1d**self.dim

    @property
    def n_elements(self):
        return self.nelem**self.dim

    @property
    def nodes_per_element(self):
        return (self.order + 1) ** self.dim

    @property
    def lattice_shape(self):
        """Node lattice shape in array order ``(z, y, x)``."""
        return (self.n1d,) * self.dim

    @cached_property
    def elem_to_dof(self):
        a = element_dofs((self.nelem,) * self.dim, self.order)
        a.setflags(write=False)
        return a

    @cached_property
    def boundary_mask(self):
        m = np.zeros(self.lattice_shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            m[tuple(sl)] = True
            sl[ax] = -1
            m[tuple(sl)] = True
        m = m.ravel()
        m.setflags(write=False)
        return m

    @cached_property
    def interior(self):
        idx = np.flatnonzero(~self.boundary_mask)
        idx.setflags(write=False)
        return idx

    @cached_property
    def ref_lattice(self):
        return lattice_1d(self.nelem, self.order)

    def reference_coords(self):
        """Reference-cube coordinates of all DOFs, shape ``(n_dofs, dim)``."""
        grids = np.meshgrid(*([self.ref_lattice] * self.dim), indexing="ij")
        # meshgrid 'ij' yields (x, y[, z]) axes; global order wants x fastest
        return np.stack([g.transpose().ravel() for g in grids], axis=-1)

    def node_coords(self):
        """Physical DOF coordinates, shape ``(n_dofs, dim)``."""
        return self.warp.map(self.reference_coords())

    def element_origin(self):
        """Lower-left reference corner of every element, ``(E, dim)`` (x first)."""
        h = 1.0 / self.nelem
        e = np.arange(self.n_elements)
        cols = []
        for k in range(self.dim):
            cols.append((e // self.nelem**k) % self.nelem * h)
        return np.stack(cols, axis=-1)

    def quadrature_points(self, n_quad=None):
        """Reference-cube coordinates of all element quadrature points.

        Shape ``(E, nq, ..., nq, dim)`` with quadrature axes in (z, y, x)
        order and the trailing coordinate axis in (x, y, z) order.
        """
        b = tensor_basis(self.order, n_quad)
        h = 1.0 / self.nelem
        xq = (b.quad_points + 1.0) / 2.0 * h
        org = self.element_origin()
        nq = xq.size
        d = self.dim
        shape = (self.n_elements,) + (nq,) * d + (d,)
        out = np.empty(shape)
        for k in range(d):
            # coordinate k varies along quadrature axis (d - 1 - k)
            bshape = [1] * d
            bshape[d - 1 - k] = nq
            out[..., k] = org[:, k].reshape((-1,) + (1,) * d) + xq.reshape(bshape)[None]
        return out


def _make_mesh(dim, nelem, order, warp):
    return StructuredMesh(int(dim), int(nelem), int(order), get_warp(warp))


def _check_jacobian(mesh):
    pts = mesh.quadrature_points()
    det = np.linalg.det(mesh.warp.jacobian(pts))
    if not np.all(det > 0):
        raise DegenerateGeometryError(
            f"warp {mesh.warp.id} has non-positive Jacobian determinant "
            f"(min {det.min():.3e}) on {mesh.nelem}^{mesh.dim} p={mesh.order}"
        )


def build_mesh(dim, nelem, order, warp=None):
    """Build a `StructuredMesh` on [0,1]^dim mapped through ``warp``.

    ``nelem`` must be a power of two (>= 2) so that the mesh can be
    h-coarsened by halving.
    """
    if dim not in (2, 3):
        raise InvalidMeshError(f"dim must be 2 or 3, got {dim}")
    if int(nelem) != nelem or nelem < 2 or not _is_pow2(int(nelem)):
        raise InvalidMeshError(f"nelem must be a power of 2 and >= 2, got {nelem}")
    if int(order) != order or not 1 <= order <= MAX_ORDER:
        raise InvalidOrderError(f"order must be in [1, {MAX_ORDER}], got {order}")
    warp = get_warp(warp if warp is not None else f"identity-{dim}d")
    if warp.dim != dim:
        raise ConfigurationError(f"warp {warp.id} is {warp.dim}D but mesh is {dim}D")
    mesh = _make_mesh(dim, nelem, order, warp)
    _check_jacobian(mesh)
    return mesh


def mesh_for_problem(problem_id, nelem, order):
    prob = get_problem(problem_id)
    return build_mesh(prob.dim, nelem, order, prob.warp)


def coarsen_mesh(mesh):
    """Halve the element count per dimension; order and warp unchanged."""
    if mesh.nelem < 2:
        raise CannotCoarsenError("a single-element mesh cannot be h-coarsened")
    return _make_mesh(mesh.dim, mesh.nelem // 2, mesh.order, mesh.warp)


def reduce_order_mesh(mesh):
    """Halve the polynomial order on the same element grid."""
    if mesh.order % 2:
        raise CannotCoarsenError(f"order {mesh.order} is odd and cannot be p-coarsened")
    return _make_mesh(mesh.dim, mesh.nelem, mesh.order // 2, mesh.warp)
