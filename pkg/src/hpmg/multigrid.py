"""Multigrid hierarchies, transfer operators, smoothers and the V-cycle.

Coarse operators are rediscretized on each level's mesh. Prolongation
evaluates coarse basis functions at fine nodes in reference coordinates,
so it is the same for warped and unwarped meshes.
"""
import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .basis import interp_matrix_1d, lgl_nodes
from .errors import (
    AssemblyTooLargeError,
    ConfigurationError,
    FactorizationError,
    HierarchyDepthError,
    RequiresAssemblyError,
    ShapeError,
)
from .mesh import coarsen_mesh, coefficient_field, reduce_order_mesh
from .operator import DEFAULT_BUDGET_BYTES, stiffness_operator

log = logging.getLogger(__name__)

SMOOTHERS = ("jacobi", "chebyshev", "ssor", "block-jacobi", "l1-jacobi")
_ALIASES = {"cheb": "chebyshev", "blk": "block-jacobi", "block": "block-jacobi",
            "l1": "l1-jacobi", "pt": "jacobi", "gs": "ssor"}
# above this many assembled nonzeros the coarsest level is solved by CG
COARSE_DIRECT_MAX_NNZ = 30_000_000
COARSE_CG_TOL = 1e-12


@dataclass(frozen=True)
class SmootherSpec:
    """Smoother kind and parameters; ``omega=None`` picks 1 for SSOR, else 2/3."""

    kind: str = "jacobi"
    pre_steps: int = 3
    post_steps: int = 3
    omega: float = None
    cheb_lambda_max: float = None
    cheb_interval_fraction: float = 0.25
    lanczos_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in SMOOTHERS:
            raise ConfigurationError(f"unknown smoother {self.kind!r}; known: {SMOOTHERS}")
        object.__setattr__(self, "kind", kind)
        if self.omega is None:
            object.__setattr__(self, "omega", 1.0 if kind == "ssor" else 2.0 / 3.0)
        if self.pre_steps < 0 or self.post_steps < 0 or self.pre_steps + self.post_steps < 1:
            raise ConfigurationError("need pre_steps + post_steps >= 1")
        if not 0.0 < self.omega < 2.0:
            raise ConfigurationError(f"damping must lie in (0, 2), got {self.omega}")

    @property
    def matvecs_per_step(self):
        return 2 if self.kind == "ssor" else 1

    @property
    def requires_assembly(self):
        return self.kind in ("ssor", "l1-jacobi", "block-jacobi")

    @classmethod
    def parse(cls, text, **kw):
        """Parse labels such as ``"Jacobi(3,3)"``, ``"ssor(2,1)"`` or ``"cheb"``."""
        m = re.fullmatch(r"\s*([A-Za-z0-9_\-]+)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*", text)
        if not m:
            raise ConfigurationError(f"cannot parse smoother {text!r}")
        name, a, b = m.groups()
        if a is not None:
            kw.setdefault("pre_steps", int(a))
            kw.setdefault("post_steps", int(b) if b is not None else 0)
        elif _ALIASES.get(name.lower(), name.lower()) == "ssor":
            kw.setdefault("pre_steps", 2)
            kw.setdefault("post_steps", 1)
        return cls(name, **kw)

    @property
    def label(self):
        names = {"jacobi": "Jacobi", "chebyshev": "Cheb", "ssor": "SSOR",
                 "block-jacobi": "BlockJacobi", "l1-jacobi": "l1Jacobi"}
        return f"{names[self.kind]}({self.pre_steps},{self.post_steps})"


# ----------------------------------------------------------------------------
# transfer operators
# ----------------------------------------------------------------------------


def _clean(M):
    M = np.where(np.abs(M) < 1e-14, 0.0, M)
    return M


def p_prolongation_1d(nelem, p_coarse, p_fine):
    """1D global prolongation between orders on the same element grid."""
    block = _clean(interp_matrix_1d(lgl_nodes(p_coarse), lgl_nodes(p_fine)))
    P = np.zeros((nelem * p_fine + 1, nelem * p_coarse + 1))
    for e in range(nelem):
        P[e * p_fine:(e + 1) * p_fine + 1, e * p_coarse:(e + 1) * p_coarse + 1] = block
    return sp.csr_matrix(P)


def h_prolongation_1d(nelem_coarse, p):
    """1D global prolongation from ``nelem_coarse`` elements to twice as many."""
    xi = lgl_nodes(p)
    child_pts = np.concatenate([(xi - 1.0) / 2.0, (xi[1:] + 1.0) / 2.0])
    block = _clean(interp_matrix_1d(xi, child_pts))
    nf = 2 * nelem_coarse * p + 1
    P = np.zeros((nf, nelem_coarse * p + 1))
    for e in range(nelem_coarse):
        P[2 * e * p:2 * (e + 1) * p + 1, e * p:(e + 1) * p + 1] = block
    return sp.csr_matrix(P)


class TensorProlongation:
    """Prolongation ``P = P1 (x) ... (x) P1`` applied one axis at a time.

    The assembled Kronecker product of high-order 1D factors has far more
    nonzeros than the vectors it acts on (3D, p=16: about 1e10), so only
    the 1D factor is stored. Supports ``P @ v``, ``P.T @ r`` and
    `tocsr` for small cases.
    """

    def __init__(self, P1, dim, transpose=False):
        self.P1 = np.asarray(P1.toarray() if sp.issparse(P1) else P1, dtype=float)
        self.dim = dim
        self.transpose = transpose
        m, n = self.P1.shape
        rows, cols = (n, m) if transpose else (m, n)
        self.shape = (rows ** dim, cols ** dim)

    @property
    def T(self):
        return TensorProlongation(self.P1, self.dim, not self.transpose)

    def __matmul__(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.shape[1],):
            raise ShapeError(f"expected vector of length {self.shape[1]}, got {v.shape}")
        M = self.P1.T if self.transpose else self.P1
        X = v.reshape((M.shape[1],) * self.dim)
        for ax in range(self.dim):
            X = np.moveaxis(np.tensordot(M, X, axes=(1, ax)), 0, ax)
        return np.ascontiguousarray(X).reshape(-1)

    dot = __matmul__

    def tocsr(self):
        P1 = sp.csr_matrix(self.P1.T if self.transpose else self.P1)
        P = P1
        for _ in range(self.dim - 1):
            P = sp.kron(P1, P, format="csr")
        P.eliminate_zeros()
        return P

    def toarray(self):
        return self.tocsr().toarray()


def prolongation_matrix(coarse_mesh, fine_mesh):
    """Tensorized ``P_ij = phi_j^coarse(x_i^fine)`` between nested meshes.

    Returns a `TensorProlongation`; call ``.tocsr()`` for the sparse matrix.
    """
    if coarse_mesh.dim != fine_mesh.dim:
        raise ShapeError("meshes differ in dimension")
    if coarse_mesh.nelem == fine_mesh.nelem:
        P1 = p_prolongation_1d(fine_mesh.nelem, coarse_mesh.order, fine_mesh.order)
    elif 2 * coarse_mesh.nelem == fine_mesh.nelem and coarse_mesh.order == fine_mesh.order:
        P1 = h_prolongation_1d(coarse_mesh.nelem, fine_mesh.order)
    else:
        raise ShapeError("meshes are not related by one h- or p-coarsening")
    return TensorProlongation(P1, fine_mesh.dim)


# ----------------------------------------------------------------------------
# smoothers
# ----------------------------------------------------------------------------


class Smoother:
    """Smoother of one level, set up once from the level operator.

    ``smooth(u, f, steps)`` updates ``u`` in place and returns it. One SSOR
    step is a forward plus a backward Gauss-Seidel sweep and is charged
    two matvecs to the operator counter.
    """

    def __init__(self, op, spec):
        self.op = op
        self.spec = spec
        self.interior = ~op.boundary_mask
        kind = spec.kind
        if spec.requires_assembly and not op.is_assembled:
            raise RequiresAssemblyError(f"{kind} smoothing needs an assembled operator")
        if kind in ("jacobi", "chebyshev"):
            self.dinv = 1.0 / op.diagonal()
        elif kind == "l1-jacobi":
            self.dinv = 1.0 / op.l1_diagonal()
        self.lambda_max = None
        if kind == "chebyshev":
            from .krylov import estimate_lambda_max

            if spec.cheb_lambda_max is not None:
                self.lambda_max = float(spec.cheb_lambda_max)
            else:
                before = op.matvecs
                self.lambda_max = estimate_lambda_max(
                    op, op.diagonal(), iters=spec.lanczos_iters, seed=spec.seed,
                    mask=op.boundary_mask,
                )
                op.matvecs = before
        if kind == "block-jacobi":
            self._setup_blocks()

    def _setup_blocks(self):
        op = self.op
        e2d = op.grid.elem_to_dof
        blocks = op.element_blocks()
        self.block_inv = np.linalg.inv(blocks)
        mult = np.bincount(e2d.ravel(), minlength=op.n_dofs).astype(float)
        self.block_weight = 1.0 / mult
        self.e2d = e2d

    def _residual(self, u, f):
        return f - self.op.apply(u)

    def smooth(self, u, f, steps):
        if steps <= 0:
            return u
        kind = self.spec.kind
        w = self.spec.omega
        inner = self.interior
        if kind in ("jacobi", "l1-jacobi"):
            for _ in range(steps):
                r = self._residual(u, f)
                u[inner] += w * self.dinv[inner] * r[inner]
        elif kind == "chebyshev":
            self._chebyshev(u, f, steps)
        elif kind == "ssor":
            A = self.op.sparse
            skip = self.op.boundary_mask
            for _ in range(steps):
                kernels.gs_sweep(A, u, f, skip, reverse=False)
                kernels.gs_sweep(A, u, f, skip, reverse=True)
                self.op.matvecs += 2
        elif kind == "block-jacobi":
            # overlapping element corrections averaged over the elements sharing a DOF
            for _ in range(steps):
                r = self._residual(u, f)
                ce = np.einsum("eij,ej->ei", self.block_inv, r[self.e2d])
                corr = kernels.scatter_add(np.zeros(u.size), self.e2d, ce) * self.block_weight
                u[inner] += w * corr[inner]
        return u

    def _chebyshev(self, u, f, steps):
        lmax = self.lambda_max
        lmin = self.spec.cheb_interval_fraction * lmax
        theta = 0.5 * (lmax + lmin)
        delta = 0.5 * (lmax - lmin)
        sigma = theta / delta
        rho = 1.0 / sigma
        inner = self.interior
        dinv = np.where(inner, self.dinv, 0.0)
        r = dinv * self._residual(u, f)
        d = r / theta
        for k in range(steps):
            u += d
            if k == steps - 1:
                break
            r -= dinv * self.op.apply(d)
            rho_new = 1.0 / (2.0 * sigma - rho)
            d = rho_new * rho * d + (2.0 * rho_new / delta) * r
            rho = rho_new
        return u


def smooth(level, u, f, steps, kind=None):
    """Run ``steps`` smoothing steps of the level's smoother (or ``kind``)."""
    sm = level.smoother
    if kind is not None and SmootherSpec(kind).kind != sm.spec.kind:
        sm = Smoother(level.operator, replace(sm.spec, kind=SmootherSpec(kind).kind, omega=None))
    return sm.smooth(u, f, steps)


# ----------------------------------------------------------------------------
# coarse solve
# ----------------------------------------------------------------------------


class CoarseSolver:
    """Exact solve on the coarsest level.

    Sparse LU with a symmetric fill-reducing ordering on the interior
    block; when the assembled matrix would be too large, CG with Jacobi
    preconditioning to a relative residual of 1e-12 stands in.
    """

    def __init__(self, op, max_nnz=COARSE_DIRECT_MAX_NNZ):
        self.op = op
        self.interior = np.flatnonzero(~op.boundary_mask)
        lay = op.grid.layout()
        self.method = "direct" if lay.nnz <= max_nnz else "cg"
        if self.method == "direct":
            try:
                A = op.assemble(switch_mode=False)
            except AssemblyTooLargeError:
                self.method = "cg"
        if self.method == "direct":
            Ai = A[self.interior][:, self.interior].tocsc()
            try:
                self.lu = splu(Ai, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise FactorizationError(f"coarse factorization failed: {exc}") from exc
        else:
            log.info("coarse level with %d dofs solved iteratively", op.n_dofs)

    def solve(self, f):
        f = np.asarray(f, dtype=float)
        u = f.copy()
        if self.method == "direct":
            u[self.interior] = self.lu.solve(f[self.interior])
            return u
        from .krylov import pcg

        before = self.op.matvecs
        fi = np.where(self.op.boundary_mask, 0.0, f)
        dinv = 1.0 / self.op.diagonal()
        ui, rep = pcg(self.op, lambda r: dinv * r, fi, rel_tol=COARSE_CG_TOL, max_iter=20000)
        self.op.matvecs = before
        u[self.interior] = ui[self.interior]
        return u


# ----------------------------------------------------------------------------
# hierarchy
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class MgLevel:
    mesh: object
    operator: object
    smoother: Smoother = None
    prolongation_to_finer: object = None
    is_coarsest: bool = False

    @property
    def n_dofs(self):
        return self.operator.n_dofs


@dataclass(eq=False)
class MgHierarchy:
    """Levels ordered finest to coarsest, plus the coarsest-level solver."""

    levels: list
    coarse_solver: CoarseSolver
    spec: SmootherSpec
    kind: str = "h"
    vcycles: int = 0
    level_matvecs: list = field(default_factory=list)
    cycle_matvecs: list = field(default_factory=list)

    def __post_init__(self):
        self.level_matvecs = [0] * len(self.levels)
        self.cycle_matvecs = [0] * len(self.levels)

    @property
    def finest(self):
        return self.levels[0]

    @property
    def n_levels(self):
        return len(self.levels)

    def reset_counters(self):
        for lv in self.levels:
            lv.operator.matvecs = 0
        self.vcycles = 0
        self.level_matvecs = [0] * len(self.levels)
        self.cycle_matvecs = [0] * len(self.levels)

    def sync_counters(self):
        self.level_matvecs = [lv.operator.matvecs for lv in self.levels]
        return self.level_matvecs

    def describe(self):
        return [f"{lv.mesh.nelem}^{lv.mesh.dim} p={lv.mesh.order}" for lv in self.levels]

    def vcycle(self, u, f):
        """One V(pre, post) cycle on ``A u = f``; returns the updated ``u``.

        ``level_matvecs`` mirrors the operator counters (including work
        done outside the cycle, e.g. by CG); ``cycle_matvecs`` counts only
        the matvecs spent inside v-cycles.
        """
        self.vcycles += 1
        before = [lv.operator.matvecs for lv in self.levels]
        u = self._cycle(0, np.array(u, dtype=float, copy=True), np.asarray(f, dtype=float))
        self.sync_counters()
        for i, b in enumerate(before):
            self.cycle_matvecs[i] += self.level_matvecs[i] - b
        return u

    __call__ = vcycle

    def _cycle(self, k, u, f):
        lv = self.levels[k]
        if lv.is_coarsest:
            return self.coarse_solver.solve(f)
        spec = self.spec
        lv.smoother.smooth(u, f, spec.pre_steps)
        r = f - lv.operator.apply(u)
        coarse = self.levels[k + 1]
        P = coarse.prolongation_to_finer
        rc = P.T @ r
        rc[coarse.operator.boundary_mask] = 0.0
        ec = self._cycle(k + 1, np.zeros(coarse.n_dofs), rc)
        ec[coarse.operator.boundary_mask] = 0.0
        u += P @ ec
        lv.smoother.smooth(u, f, spec.post_steps)
        return u

    def precondition(self, r):
        """Apply one V-cycle with zero initial guess (the MG preconditioner)."""
        return self.vcycle(np.zeros_like(r), r)

    def coarse_solve(self, f):
        return self.coarse_solver.solve(f)


def prolong(level_coarse, v_coarse):
    P = level_coarse.prolongation_to_finer
    v_coarse = np.asarray(v_coarse, dtype=float)
    if v_coarse.shape != (P.shape[1],):
        raise ShapeError(f"expected coarse vector of length {P.shape[1]}")
    return P @ v_coarse


def restrict(level_coarse, r_fine):
    P = level_coarse.prolongation_to_finer
    r_fine = np.asarray(r_fine, dtype=float)
    if r_fine.shape != (P.shape[0],):
        raise ShapeError(f"expected fine vector of length {P.shape[0]}")
    return P.T @ r_fine


def build_hierarchy(meshes, coefficient, spec, kind="custom", budget_bytes=DEFAULT_BUDGET_BYTES,
                    coarse_max_nnz=COARSE_DIRECT_MAX_NNZ):
    """Hierarchy on an explicit finest-to-coarsest list of nested meshes."""
    coef = coefficient_field(coefficient)
    levels = []
    for i, m in enumerate(meshes):
        op = stiffness_operator(m, coef, budget_bytes=budget_bytes)
        coarsest = i == len(meshes) - 1
        if not coarsest and spec.requires_assembly:
            op.assemble(switch_mode=False)
        lv = MgLevel(m, op, is_coarsest=coarsest)
        if i > 0:
            lv.prolongation_to_finer = prolongation_matrix(m, meshes[i - 1])
        levels.append(lv)
    coarse = CoarseSolver(levels[-1].operator, max_nnz=coarse_max_nnz)
    for lv in levels[:-1]:
        lv.smoother = Smoother(lv.operator, spec)
    hier = MgHierarchy(levels, coarse, spec, kind)
    hier.reset_counters()
    return hier


def h_meshes(fine_mesh, n_levels):
    if n_levels < 1:
        raise HierarchyDepthError("need at least one level")
    if fine_mesh.nelem < 2 ** (n_levels - 1):
        raise HierarchyDepthError(
            f"{fine_mesh.nelem} elements per direction cannot support {n_levels} h-levels"
        )
    meshes = [fine_mesh]
    for _ in range(n_levels - 1):
        meshes.append(coarsen_mesh(meshes[-1]))
    return meshes


def p_meshes(fine_mesh, n_h_levels):
    p = fine_mesh.order
    if p & (p - 1):
        raise ConfigurationError(f"p-multigrid needs a power-of-2 order, got {p}")
    meshes = [fine_mesh]
    while meshes[-1].order > 1:
        meshes.append(reduce_order_mesh(meshes[-1]))
    return meshes + h_meshes(meshes[-1], n_h_levels)[1:]


def build_h_hierarchy(fine_mesh, n_levels, coefficient, smoother_spec, **kw):
    return build_hierarchy(h_meshes(fine_mesh, n_levels), coefficient, smoother_spec, "h", **kw)


def build_p_hierarchy(fine_mesh, n_h_levels, coefficient, smoother_spec, **kw):
    return build_hierarchy(p_meshes(fine_mesh, n_h_levels), coefficient, smoother_spec, "p", **kw)


def vcycle(hierarchy, u, f):
    return hierarchy.vcycle(u, f)


def coarse_solve(hierarchy, f):
    return hierarchy.coarse_solve(f)
