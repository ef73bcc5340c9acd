"""Eigenmode view of smoothers and two-grid cycles.

The error is started with unit coefficients on every eigenvector of the
interior stiffness matrix, the right-hand side is zero, and after six
smoothing steps (or one two-grid cycle) the remaining coefficient of
each eigenvector is reported.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import AsymmetricMatrixError, BudgetExceededError, ConfigurationError
from .mesh import get_problem, mesh_for_problem
from .multigrid import MgLevel, Smoother, SmootherSpec, build_h_hierarchy, prolongation_matrix
from .operator import stiffness_operator

DEFAULT_DENSE_BUDGET = 4096
MODES = ("smooth-only", "two-grid")


def dense_symmetric_eig(A, budget=DEFAULT_DENSE_BUDGET, sym_tol=1e-10):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a dense symmetric matrix.

    Householder tridiagonalization followed by implicit QL. Signs are
    canonical: the first entry of each eigenvector above 1e-8 in
    magnitude is positive.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > budget:
        raise BudgetExceededError(f"dense eigenproblem of size {n} exceeds budget {budget}")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if n and np.abs(A - A.T).max() > sym_tol * scale:
        raise AsymmetricMatrixError("matrix is not symmetric")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    lam, V = kernels.symmetric_eig(0.5 * (A + A.T))
    return lam, V * canonical_signs(V)


def canonical_signs(V, tol=1e-8):
    """+-1 per column making the first entry with ``|v| > tol`` positive."""
    first = np.argmax(np.abs(V) > tol, axis=0)
    s = np.sign(V[first, np.arange(V.shape[1])])
    return np.where(s == 0, 1.0, s)


def figure_mesh_nelem(order, dim=2):
    """Element count per direction keeping (32 + 1)^2 lattice points: 32, 8, 2 for p = 1, 4, 16."""
    if 32 % order:
        raise ConfigurationError(f"order {order} does not divide 32")
    return 32 // order


@dataclass
class SpectrumExperiment:
    problem: str = "2d-const"
    order: int = 1
    smoother: str = "jacobi"
    mode: str = "smooth-only"
    nelem: int = None
    seed: int = 0
    budget: int = DEFAULT_DENSE_BUDGET
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown spectrum mode {self.mode!r}; known: {MODES}")
        if self.nelem is None:
            self.nelem = figure_mesh_nelem(self.order)

    def smoother_spec(self):
        """Six fine-grid smoothing steps: (3,3) Jacobi/Chebyshev, (2,1) SSOR."""
        kind = SmootherSpec(self.smoother).kind
        if kind == "ssor":
            return SmootherSpec("ssor", 2, 1, seed=self.seed)
        return SmootherSpec(kind, 3, 3, seed=self.seed)

    @property
    def smoothing_steps(self):
        s = self.smoother_spec()
        return s.pre_steps + s.post_steps


def _interior_dense(op):
    inner = np.flatnonzero(~op.boundary_mask)
    A = op.assemble(switch_mode=False)
    return inner, A[inner][:, inner].toarray()


def run_spectrum_experiment(exp, return_state=False):
    """Fill ``exp.rows`` with (index, eigenvalue, |coefficient after|) and return them."""
    prob = get_problem(exp.problem)
    mesh = mesh_for_problem(prob.id, exp.nelem, exp.order)
    spec = exp.smoother_spec()
    if exp.mode == "two-grid":
        hier = build_h_hierarchy(mesh, 2, prob.coefficient, spec)
        op = hier.finest.operator
    else:
        op = stiffness_operator(mesh, prob.coefficient)
        if spec.requires_assembly:
            op.assemble(switch_mode=False)
        smoother = Smoother(op, spec)
    inner, Ad = _interior_dense(op)
    if inner.size > exp.budget:
        raise BudgetExceededError(f"{inner.size} interior DOFs exceed dense budget {exp.budget}")
    lam, V = dense_symmetric_eig(Ad, exp.budget)
    u = np.zeros(op.n_dofs)
    u[inner] = V.sum(axis=1)
    f = np.zeros(op.n_dofs)
    if exp.mode == "two-grid":
        u = hier.vcycle(u, f)
    else:
        steps = 3 if spec.kind == "ssor" else 6
        smoother.smooth(u, f, steps)
    coef = np.abs(V.T @ u[inner])
    exp.rows = [(i, float(lam[i]), float(coef[i])) for i in range(lam.size)]
    if return_state:
        return exp.rows, {"eigenvalues": lam, "eigenvectors": V, "operator": op,
                          "interior": inner, "dense": Ad}
    return exp.rows


def jacobi_closed_form(op, steps=6, omega=2.0 / 3.0):
    """Predicted per-mode factor ``|1 - omega lambda(D^-1 A)|^steps``.

    Valid per eigenvector of A when the interior diagonal is constant,
    as for 2d-const at p=1 on a uniform mesh.
    """
    inner, Ad = _interior_dense(op)
    d = np.diag(Ad)
    if np.ptp(d) > 1e-12 * d.max():
        raise ConfigurationError("closed form needs a constant diagonal")
    lam, _ = dense_symmetric_eig(Ad)
    return np.abs(1.0 - omega * lam / d[0]) ** steps


def write_spectrum_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "eigenvalue", "coefficient_after"])
        for i, lam, c in rows:
            w.writerow([i, repr(lam), repr(c)])
    return path


# ----------------------------------------------------------------------------
# explicit two-grid error operator
# ----------------------------------------------------------------------------


def smoother_matrix(op, spec, steps=None):
    """Dense error propagation matrix of ``steps`` smoothing steps on the interior."""
    _, Ad = _interior_dense(op)
    return _smoother_matrix(Ad, spec, _smoother_for(op, spec), steps)


def _smoother_for(op, spec):
    if spec.requires_assembly:
        op.assemble(switch_mode=False)
    return Smoother(op, spec)


def _one_step(Ad, spec, sm):
    n = Ad.shape[0]
    I = np.eye(n)
    inner = np.flatnonzero(~sm.op.boundary_mask)
    kind = spec.kind
    w = spec.omega
    if kind in ("jacobi", "l1-jacobi"):
        return I - w * sm.dinv[inner][:, None] * Ad
    if kind == "ssor":
        L = np.tril(Ad)
        U = np.triu(Ad)
        fwd = I - np.linalg.solve(L, Ad)
        bwd = I - np.linalg.solve(U, Ad)
        return bwd @ fwd
    if kind == "block-jacobi":
        # the smoother is linear: probe it column by column
        E = np.empty((n, n))
        for j in range(n):
            u = np.zeros(sm.op.n_dofs)
            u[inner[j]] = 1.0
            sm.smooth(u, np.zeros_like(u), 1)
            E[:, j] = u[inner]
        return E
    raise ConfigurationError(f"no single-step matrix for {kind}")


def _smoother_matrix(Ad, spec, sm, steps=None):
    steps = spec.pre_steps if steps is None else steps
    n = Ad.shape[0]
    if steps == 0:
        return np.eye(n)
    if spec.kind == "chebyshev":
        inner = np.flatnonzero(~sm.op.boundary_mask)
        DA = sm.dinv[inner][:, None] * Ad
        lmax = sm.lambda_max
        lmin = spec.cheb_interval_fraction * lmax
        theta, delta = 0.5 * (lmax + lmin), 0.5 * (lmax - lmin)
        sigma = theta / delta
        rho = 1.0 / sigma
        # error recurrence: e_{k+1} = e_k - d_k, d_0 = DA e_0 / theta
        I = np.eye(n)
        E = I.copy()
        R = DA.copy()
        Dm = R / theta
        for k in range(steps):
            E = E - Dm
            if k == steps - 1:
                break
            R = R - DA @ Dm
            rho_new = 1.0 / (2.0 * sigma - rho)
            Dm = rho_new * rho * Dm + (2.0 * rho_new / delta) * R
            rho = rho_new
        return E
    S = _one_step(Ad, spec, sm)
    return np.linalg.matrix_power(S, steps)


def two_grid_error_operator(fine_level, coarse_level, smoother_spec, budget=DEFAULT_DENSE_BUDGET):
    """Dense ``E = S_post (I - P A_c^-1 P^T A) S_pre`` on interior DOFs.

    Returns ``(E, spectral_radius)``. ``coarse_level=None`` or a coarse
    level equal to the fine one gives an exact correction;
    ``smoother_spec=None`` disables smoothing.
    """
    op = fine_level.operator
    inner, Ad = _interior_dense(op)
    if inner.size > budget:
        raise BudgetExceededError(f"{inner.size} interior DOFs exceed dense budget {budget}")
    spec = smoother_spec
    n = inner.size
    if coarse_level is None or coarse_level is fine_level:
        C = np.zeros((n, n))
    else:
        cop = coarse_level.operator
        cinner, Ac = _interior_dense(cop)
        P = coarse_level.prolongation_to_finer
        if P is None:
            P = prolongation_matrix(coarse_level.mesh, fine_level.mesh)
        Pd = P.tocsr()[inner][:, cinner].toarray()
        C = np.eye(n) - Pd @ np.linalg.solve(Ac, Pd.T @ Ad)
    if spec is None:
        E = C
    else:
        sm = fine_level.smoother if fine_level.smoother is not None else _smoother_for(op, spec)
        pre = _smoother_matrix(Ad, spec, sm, spec.pre_steps)
        post = _smoother_matrix(Ad, spec, sm, spec.post_steps)
        E = post @ C @ pre
    rho = float(np.max(np.abs(np.linalg.eigvals(E)))) if n else 0.0
    return E, rho


def two_grid_levels(problem, order, nelem, smoother_spec):
    """Fine and coarse `MgLevel` of a two-level h-hierarchy."""
    prob = get_problem(problem)
    mesh = mesh_for_problem(prob.id, nelem, order)
    hier = build_h_hierarchy(mesh, 2, prob.coefficient, smoother_spec)
    return hier.levels[0], hier.levels[1], hier


__all__ = [
    "dense_symmetric_eig", "SpectrumExperiment", "run_spectrum_experiment",
    "jacobi_closed_form", "write_spectrum_csv", "two_grid_error_operator",
    "two_grid_levels", "smoother_matrix", "MgLevel",
]
