"""Preconditioned CG, multigrid solve drivers and eigenvalue estimation."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .errors import (
    AssemblyTooLargeError,
    BreakdownError,
    ConfigurationError,
    FactorizationError,
    SeedError,
)
from .operator import DEFAULT_BUDGET_BYTES, assemble_low_order_overlay, stiffness_operator

log = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 200
DEFAULT_REL_TOL = 1e-8
DIVERGENCE_FACTOR = 10.0
# 3D overlay systems beyond this size are solved by AMG-preconditioned CG
LOW_ORDER_DIRECT_MAX_DOFS = {2: 600_000, 3: 50_000}
INNER_TOL = 1e-12


@dataclass
class SolveReport:
    """Outcome of one iterative solve.

    ``status`` is ``"converged"``, ``"diverged"``, ``"max-iter"`` or
    ``"breakdown"``; table renderers print ``-`` for anything but converged.
    """

    iterations: int = 0
    converged: bool = False
    residual_history: list = field(default_factory=list)
    fine_matvecs: int = 0
    cost_model_flops: float = 0.0
    wall_time: float = 0.0
    status: str = "max-iter"
    vcycles: int = 0
    info: dict = field(default_factory=dict)

    @property
    def relative_residual(self):
        h = self.residual_history
        return h[-1] / h[0] if h and h[0] > 0 else float("nan")

    def cell(self):
        """Table rendering: the iteration count or ``-``."""
        return str(self.iterations) if self.converged else "-"


def _as_apply(A):
    if callable(A) and not hasattr(A, "toarray"):
        return A
    return lambda x: A @ x


def _check_rel(rnorm, r0, rel_tol):
    return rnorm <= rel_tol * r0


def pcg(operator, preconditioner, f, u0=None, rel_tol=DEFAULT_REL_TOL, max_iter=DEFAULT_MAX_ITER,
        flexible=False):
    """Preconditioned conjugate gradients.

    One preconditioner application per iteration. ``flexible`` switches
    the beta formula to Polak-Ribiere, which tolerates a mildly
    nonsymmetric preconditioner.

    Returns
    -------
    (u, SolveReport)

    Raises
    ------
    BreakdownError
        If ``(p, A p) <= 0`` at some iterate.
    """
    t0 = time.perf_counter()
    A = _as_apply(operator)
    M = (lambda r: r.copy()) if preconditioner is None else _as_apply(preconditioner)
    f = np.asarray(f, dtype=float)
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=float, copy=True)
    r = f - A(u) if u0 is not None else f.copy()
    r0 = float(np.linalg.norm(r))
    rep = SolveReport(residual_history=[r0])
    if r0 == 0.0:
        rep.converged, rep.status = True, "converged"
        return u, rep
    z = M(r)
    p = z.copy()
    rho = float(z @ r)
    for k in range(1, max_iter + 1):
        h = A(p)
        php = float(p @ h)
        if not php > 0.0:
            raise BreakdownError(k, php)
        alpha = rho / php
        u += alpha * p
        r_old = r.copy() if flexible else None
        r -= alpha * h
        rnorm = float(np.linalg.norm(r))
        rep.residual_history.append(rnorm)
        rep.iterations = k
        if _check_rel(rnorm, r0, rel_tol):
            rep.converged, rep.status = True, "converged"
            break
        if not np.isfinite(rnorm) or rnorm > DIVERGENCE_FACTOR * r0:
            rep.status = "diverged"
            break
        z = M(r)
        rho_new = float(z @ (r - r_old)) if flexible else float(z @ r)
        beta = rho_new / rho
        rho = float(z @ r) if flexible else rho_new
        p = z + beta * p
    rep.wall_time = time.perf_counter() - t0
    return u, rep


def estimate_lambda_max(operator, diag, iters=10, seed=0, mask=None, v0=None):
    """Largest Ritz value of ``D^{-1/2} A D^{-1/2}`` after ``iters`` Lanczos steps.

    ``mask`` marks entries (Dirichlet rows) excluded from the start vector.
    """
    A = _as_apply(operator)
    diag = np.asarray(diag, dtype=float)
    if np.any(diag <= 0):
        raise ConfigurationError("diagonal must be positive")
    s = 1.0 / np.sqrt(diag)
    if v0 is None:
        v = np.random.default_rng(seed).standard_normal(diag.size)
    else:
        v = np.array(v0, dtype=float)
    if mask is not None:
        v[np.asarray(mask)] = 0.0
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise SeedError("Lanczos start vector is zero")
    V = [v / nv]
    alphas, betas = [], []
    for j in range(iters):
        w = s * A(s * V[j])
        alphas.append(float(w @ V[j]))
        w -= alphas[j] * V[j]
        if j > 0:
            w -= betas[j - 1] * V[j - 1]
        for q in V:  # full reorthogonalization, cheap at 10 steps
            w -= (w @ q) * q
        b = float(np.linalg.norm(w))
        if b <= 1e-12 * max(1.0, abs(alphas[0])):
            break
        betas.append(b)
        V.append(w / b)
    n = len(alphas)
    T = np.diag(alphas) + np.diag(betas[: n - 1], 1) + np.diag(betas[: n - 1], -1)
    return float(np.linalg.eigvalsh(T)[-1])


def cost_report(report, g_p, g_1=None, smoother_spec=None, n_dofs=None, low_order=False):
    """Flop estimate from the per-iteration multigrid cost model.

    The h/p-multigrid iteration costs ``N g_p (1 + m (s_pre + s_post))``.
    The low-order path, whose residual is the sparse linear-element one,
    costs ``N (g_1 + 6 g_p)``.
    """
    n = 1 if n_dofs is None else n_dofs
    if low_order:
        if g_1 is None:
            raise ConfigurationError("low-order cost needs g_1")
        per_iter = n * (g_1 + 6.0 * g_p)
    else:
        m = 1 if smoother_spec is None else smoother_spec.matvecs_per_step
        s = 6 if smoother_spec is None else smoother_spec.pre_steps + smoother_spec.post_steps
        per_iter = n * g_p * (1 + m * s)
    iters = 0 if report is None else report.iterations
    total = per_iter * iters
    if report is not None:
        report.cost_model_flops = total
    return {"per_iteration": per_iter, "total": total}


# ----------------------------------------------------------------------------
# experiment drivers
# ----------------------------------------------------------------------------


RHS_KINDS = ("random-guess", "ones")


def default_rhs(n_dofs, boundary_mask):
    """Interior entries one, Dirichlet entries zero."""
    f = np.ones(n_dofs)
    f[boundary_mask] = 0.0
    return f


def initial_state(n_dofs, boundary_mask, rhs="random-guess", seed=0):
    """Right-hand side and initial guess for the iteration-count experiments.

    ``"random-guess"``: zero right-hand side, interior initial guess
    uniform on [0, 1) from ``seed``, so the iterate is the error itself.
    ``"ones"``: interior right-hand side one, zero initial guess.
    """
    if rhs == "random-guess":
        u0 = np.random.default_rng(seed).random(n_dofs)
        u0[boundary_mask] = 0.0
        return np.zeros(n_dofs), u0
    if rhs == "ones":
        return default_rhs(n_dofs, boundary_mask), np.zeros(n_dofs)
    raise ConfigurationError(f"unknown rhs kind {rhs!r}; known: {RHS_KINDS}")


def default_nelem(dim):
    return 32 if dim == 2 else 8


def build_problem_hierarchy(problem, hierarchy_kind, smoother_spec, order, nelem=None,
                            n_levels=3, budget_bytes=DEFAULT_BUDGET_BYTES):
    from .mesh import get_problem, mesh_for_problem
    from .multigrid import build_h_hierarchy, build_p_hierarchy

    prob = get_problem(problem)
    nelem = default_nelem(prob.dim) if nelem is None else nelem
    mesh = mesh_for_problem(prob.id, nelem, order)
    if hierarchy_kind == "h":
        return build_h_hierarchy(mesh, n_levels, prob.coefficient, smoother_spec,
                                 budget_bytes=budget_bytes)
    if hierarchy_kind == "p":
        return build_p_hierarchy(mesh, n_levels, prob.coefficient, smoother_spec,
                                 budget_bytes=budget_bytes)
    raise ConfigurationError(f"unknown hierarchy kind {hierarchy_kind!r}")


def _uncounted(op, u):
    v = op.apply(u)
    op.matvecs -= 1
    return v


def mg_solve(hierarchy, f, mode="solver", u0=None, rel_tol=DEFAULT_REL_TOL,
             max_iter=DEFAULT_MAX_ITER, flexible=False):
    """Run a built hierarchy as a stationary solver or as a CG preconditioner."""
    t0 = time.perf_counter()
    op = hierarchy.finest.operator
    hierarchy.reset_counters()
    f = np.asarray(f, dtype=float)
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=float, copy=True)
    if mode == "solver":
        r0 = float(np.linalg.norm(f - _uncounted(op, u)))
        rep = SolveReport(residual_history=[r0])
        for k in range(1, max_iter + 1):
            u = hierarchy.vcycle(u, f)
            rn = float(np.linalg.norm(f - _uncounted(op, u)))
            rep.residual_history.append(rn)
            rep.iterations = k
            if rn <= rel_tol * r0:
                rep.converged, rep.status = True, "converged"
                break
            if not np.isfinite(rn) or rn > DIVERGENCE_FACTOR * r0:
                rep.status = "diverged"
                break
    elif mode == "pcg":
        try:
            u, rep = pcg(op, hierarchy.precondition, f, u0=u, rel_tol=rel_tol,
                         max_iter=max_iter, flexible=flexible)
        except BreakdownError as exc:
            u = None
            rep = SolveReport(iterations=exc.iteration, status="breakdown",
                              residual_history=[float(np.linalg.norm(f))])
    else:
        raise ConfigurationError(f"unknown solve mode {mode!r}")
    rep.vcycles = hierarchy.vcycles
    rep.fine_matvecs = op.matvecs
    rep.info["matvecs_per_vcycle"] = (
        hierarchy.cycle_matvecs[0] / hierarchy.vcycles if hierarchy.vcycles else 0.0
    )
    rep.info["krylov_matvecs"] = op.matvecs - hierarchy.cycle_matvecs[0]
    rep.info["levels"] = hierarchy.describe()
    cost_report(rep, op.flops_per_unknown(), smoother_spec=hierarchy.spec, n_dofs=op.n_dofs)
    rep.wall_time = time.perf_counter() - t0
    rep.info["solution"] = u
    return rep


def mg_preconditioned_solve(problem, hierarchy_kind, smoother_spec, mode="solver", order=1,
                            nelem=None, n_levels=3, rel_tol=DEFAULT_REL_TOL,
                            max_iter=DEFAULT_MAX_ITER, budget_bytes=DEFAULT_BUDGET_BYTES,
                            flexible=False, rhs="random-guess", seed=0):
    """Build the hierarchy for ``problem`` and run one experiment.

    See `initial_state` for the right-hand side conventions.
    """
    from .multigrid import SmootherSpec

    if isinstance(smoother_spec, str):
        smoother_spec = SmootherSpec.parse(smoother_spec)
    hier = build_problem_hierarchy(problem, hierarchy_kind, smoother_spec, order, nelem,
                                   n_levels, budget_bytes)
    op = hier.finest.operator
    f, u0 = initial_state(op.n_dofs, op.boundary_mask, rhs, seed)
    return mg_solve(hier, f, mode, u0, rel_tol, max_iter, flexible)


class LowOrderSolver:
    """Solve with the interior block of an assembled overlay operator.

    Sparse LU with a symmetric fill-reducing ordering when the system is
    small enough, else CG preconditioned by smoothed-aggregation AMG to a
    relative residual of 1e-12.
    """

    def __init__(self, overlay, max_dofs=None):
        A = overlay.assemble(switch_mode=False)
        self.interior = np.flatnonzero(~overlay.boundary_mask)
        Ai = A[self.interior][:, self.interior].tocsr()
        limit = LOW_ORDER_DIRECT_MAX_DOFS.get(overlay.dim) if max_dofs is None else max_dofs
        self.method = "direct" if Ai.shape[0] <= limit else "amg-cg"
        if self.method == "direct":
            try:
                self.lu = splu(Ai.tocsc(), permc_spec="MMD_AT_PLUS_A")
            except (RuntimeError, MemoryError) as exc:
                raise FactorizationError(f"low-order factorization failed: {exc}") from exc
        else:
            import pyamg

            self.Ai = Ai
            self.ml = pyamg.smoothed_aggregation_solver(Ai, symmetry="symmetric")
            self.M = self.ml.aspreconditioner(cycle="V")
        self.n = A.shape[0]

    def solve(self, r):
        r = np.asarray(r, dtype=float)
        z = r.copy()
        ri = r[self.interior]
        if self.method == "direct":
            z[self.interior] = self.lu.solve(ri)
        else:
            zi, _ = pcg(self.Ai, self.M, ri, rel_tol=INNER_TOL, max_iter=1000)
            z[self.interior] = zi
        return z

    __call__ = solve


def low_order_pcg(problem, order, nelem=None, rel_tol=DEFAULT_REL_TOL, max_iter=DEFAULT_MAX_ITER,
                  budget_bytes=DEFAULT_BUDGET_BYTES, rhs="random-guess", seed=0):
    """PCG on the high-order operator, preconditioned by the low-order overlay solve.

    Order 1 has no distinct overlay: returns a report with status
    ``"not-applicable"``.
    """
    from .mesh import get_problem, mesh_for_problem

    prob = get_problem(problem)
    if order == 1:
        return SolveReport(status="not-applicable")
    t0 = time.perf_counter()
    nelem = default_nelem(prob.dim) if nelem is None else nelem
    mesh = mesh_for_problem(prob.id, nelem, order)
    op = stiffness_operator(mesh, prob.coefficient, budget_bytes=budget_bytes)
    overlay = assemble_low_order_overlay(mesh, prob.coefficient, budget_bytes=budget_bytes)
    solver = LowOrderSolver(overlay)
    f, u0 = initial_state(op.n_dofs, op.boundary_mask, rhs, seed)
    try:
        u, rep = pcg(op, solver, f, u0=u0, rel_tol=rel_tol, max_iter=max_iter)
    except BreakdownError as exc:
        u, rep = None, SolveReport(iterations=exc.iteration, status="breakdown",
                                   residual_history=[float(np.linalg.norm(f))])
    rep.fine_matvecs = op.matvecs
    rep.vcycles = rep.iterations
    rep.info["low_order_method"] = solver.method
    g1 = overlay.flops_per_unknown()
    cost_report(rep, op.flops_per_unknown(), g_1=g1, n_dofs=op.n_dofs, low_order=True)
    rep.info["solution"] = u
    rep.wall_time = time.perf_counter() - t0
    return rep


__all__ = [
    "SolveReport", "pcg", "estimate_lambda_max", "cost_report", "mg_solve",
    "mg_preconditioned_solve", "low_order_pcg", "LowOrderSolver", "default_rhs", "initial_state",
    "build_problem_hierarchy", "AssemblyTooLargeError",
]
