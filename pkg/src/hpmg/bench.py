"""Experiment configs and the iteration-count tables.

Tables T1-T5 are the order-by-solver iteration-count matrices of the five
test problems, T6 the matvec cost model, T7 a spectral summary of the
smoothers, T8 the mesh-independence sweep and T9 the point, block and
l1-Jacobi comparison. Every table is written as CSV (one row per cell)
and as markdown.
"""
import csv
import gc
import io
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import AssemblyTooLargeError, ConfigurationError, HpmgError
from .krylov import (
    DEFAULT_MAX_ITER,
    DEFAULT_REL_TOL,
    RHS_KINDS,
    SolveReport,
    build_problem_hierarchy,
    default_nelem,
    initial_state,
    low_order_pcg,
    mg_solve,
)
from .mesh import get_problem
from .multigrid import SmootherSpec, build_h_hierarchy
from .operator import (
    DEFAULT_BUDGET_BYTES,
    assembled_nnz,
    assembly_bytes,
    matfree_flops,
)

log = logging.getLogger(__name__)

ORDERS = (1, 2, 3, 4, 5, 6, 7, 8, 16)
POINT_SMOOTHERS = (("Jacobi(3,3)", "jacobi(3,3)"), ("Cheb(3,3)", "cheb(3,3)"),
                   ("SSOR(2,1)", "ssor(2,1)"))
ITERATION_TABLES = {"T1": "2d-const", "T2": "2d-var", "T3": "2d-var'", "T4": "3d-const",
                    "T5": "3d-var"}
TABLE_IDS = ("T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9")
MESH_SWEEP = (4, 8, 16, 32, 64, 128, 256)
STATUSES = ("converged", "diverged", "skipped")


# ----------------------------------------------------------------------------
# single experiments
# ----------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One solve. ``hierarchy`` is ``h``, ``p`` or ``low-order``."""

    problem: str = "2d-const"
    order: int = 1
    nelem: int = None
    hierarchy: str = "h"
    levels: int = 3
    smoother: str = "jacobi(3,3)"
    mode: str = "solver"
    rel_tol: float = DEFAULT_REL_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    rhs: str = "random-guess"
    budget_bytes: int = DEFAULT_BUDGET_BYTES

    def __post_init__(self):
        prob = get_problem(self.problem)
        self.problem = prob.id
        if self.nelem is None:
            self.nelem = default_nelem(prob.dim)
        if self.hierarchy not in ("h", "p", "low-order"):
            raise ConfigurationError(f"unknown hierarchy {self.hierarchy!r}")
        if self.mode not in ("solver", "pcg"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.hierarchy == "p" and self.order & (self.order - 1):
            raise ConfigurationError("p-hierarchy needs a power-of-2 order")
        if self.hierarchy == "low-order" and self.mode != "pcg":
            raise ConfigurationError("the low-order preconditioner runs inside pcg only")
        if self.rhs not in RHS_KINDS:
            raise ConfigurationError(f"unknown rhs {self.rhs!r}; known: {RHS_KINDS}")
        if self.max_iter < 1 or not 0 < self.rel_tol < 1:
            raise ConfigurationError("need max_iter >= 1 and 0 < rel_tol < 1")
        SmootherSpec.parse(self.smoother)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        return cls(**d)


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def load_configs(path):
    """Experiments from a TOML file: top-level keys or ``[[experiment]]`` tables."""
    data = _load_toml(path)
    if "experiment" in data:
        rest = sorted(set(data) - {"experiment"})
        if rest:
            raise ConfigurationError(f"unknown top-level keys next to [[experiment]]: {rest}")
        return [ExperimentConfig.from_dict(d) for d in data["experiment"]]
    return [ExperimentConfig.from_dict(data)]


def run_config(config):
    """Run one `ExperimentConfig`; errors carry the config in their message."""
    c = config
    try:
        if c.hierarchy == "low-order":
            return low_order_pcg(c.problem, c.order, c.nelem, c.rel_tol, c.max_iter,
                                 c.budget_bytes, rhs=c.rhs, seed=c.seed)
        spec = SmootherSpec.parse(c.smoother, seed=c.seed)
        hier = build_problem_hierarchy(c.problem, c.hierarchy, spec, c.order, c.nelem,
                                       c.levels, c.budget_bytes)
        op = hier.finest.operator
        f, u0 = initial_state(op.n_dofs, op.boundary_mask, c.rhs, c.seed)
        return mg_solve(hier, f, c.mode, u0, c.rel_tol, c.max_iter)
    except HpmgError as exc:
        raise type(exc)(f"{exc} [config: {c}]") from exc


# ----------------------------------------------------------------------------
# table containers
# ----------------------------------------------------------------------------


@dataclass
class Cell:
    table: str
    row_label: str
    col_label: str
    value: str
    status: str

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")


def report_cell(table, row, col, rep):
    if rep.converged:
        return Cell(table, row, col, str(rep.iterations), "converged")
    return Cell(table, row, col, "-", "diverged")


def skipped_cell(table, row, col, mark="*"):
    return Cell(table, row, col, mark, "skipped")


@dataclass
class TableResult:
    table_id: str
    title: str
    row_labels: list
    col_labels: list
    cells: dict = field(default_factory=dict)

    def add(self, cell):
        self.cells[(cell.row_label, cell.col_label)] = cell

    def get(self, row, col):
        c = self.cells.get((str(row), col))
        return None if c is None else c.value

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["table", "row_label", "col_label", "value", "status"])
        for r in self.row_labels:
            for c in self.col_labels:
                cell = self.cells.get((r, c))
                if cell is not None:
                    w.writerow([cell.table, cell.row_label, cell.col_label, cell.value, cell.status])
        return buf.getvalue()

    def to_markdown(self):
        lines = [f"### {self.table_id}: {self.title}", ""]
        lines.append("| " + " | ".join(["order"] + self.col_labels) + " |")
        lines.append("|" + "---|" * (len(self.col_labels) + 1))
        for r in self.row_labels:
            vals = [self.cells[(r, c)].value if (r, c) in self.cells else "" for c in self.col_labels]
            lines.append("| " + " | ".join([r] + vals) + " |")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.table_id}.csv").write_text(self.to_csv())
        (out / f"{self.table_id}.md").write_text(self.to_markdown())
        return out / f"{self.table_id}.csv"


# ----------------------------------------------------------------------------
# T1-T5
# ----------------------------------------------------------------------------


def iteration_columns():
    cols = []
    for mode in ("solver", "pcg"):
        for label, _ in POINT_SMOOTHERS:
            for kind in ("h", "p"):
                cols.append(f"{mode}:{label}:{kind}")
    cols.append("low-order:pCG")
    return cols


def _is_pow2(p):
    return p & (p - 1) == 0


def _needs_skip(dim, nelem, order, spec, budget_bytes):
    """Cells needing an assembled operator that does not fit are skipped."""
    if not spec.requires_assembly:
        return False
    if dim == 3 and order >= 16:
        return True
    return assembly_bytes(dim, nelem, order) > budget_bytes


def _run_pair(table, row, prob, kind, spec, order, nelem, levels, opts):
    """Solver and pcg cells for one hierarchy, built once."""
    dim = prob.dim
    label = next(lab for lab, s in POINT_SMOOTHERS if SmootherSpec.parse(s).kind == spec.kind)
    cols = [f"{mode}:{label}:{kind}" for mode in ("solver", "pcg")]
    if _needs_skip(dim, nelem, order, spec, opts["budget_bytes"]):
        return [skipped_cell(table, row, c) for c in cols]
    try:
        hier = build_problem_hierarchy(prob.id, kind, spec, order, nelem, levels,
                                       opts["budget_bytes"])
    except AssemblyTooLargeError:
        return [skipped_cell(table, row, c) for c in cols]
    op = hier.finest.operator
    out = []
    for mode, col in zip(("solver", "pcg"), cols):
        f, u0 = initial_state(op.n_dofs, op.boundary_mask, opts["rhs"], opts["seed"])
        rep = mg_solve(hier, f, mode, u0, opts["rel_tol"], opts["max_iter"])
        log.info("%s p=%d %s: %s (%.1fs)", table, order, col, rep.cell(), rep.wall_time)
        out.append(report_cell(table, row, col, rep))
    del hier
    gc.collect()
    return out


def _low_order_cell(table, row, prob, order, nelem, opts):
    col = "low-order:pCG"
    if order == 1:
        return skipped_cell(table, row, col, "-")
    if prob.dim == 3 and order >= 16:
        return skipped_cell(table, row, col)
    try:
        rep = low_order_pcg(prob.id, order, nelem, opts["rel_tol"], opts["max_iter"],
                            opts["budget_bytes"], rhs=opts["rhs"], seed=opts["seed"])
    except (AssemblyTooLargeError, MemoryError):
        return skipped_cell(table, row, col)
    log.info("%s p=%d %s: %s (%.1fs)", table, order, col, rep.cell(), rep.wall_time)
    return report_cell(table, row, col, rep)


def _opts(seed=0, max_iter=DEFAULT_MAX_ITER, budget_bytes=DEFAULT_BUDGET_BYTES,
          rel_tol=DEFAULT_REL_TOL, rhs="random-guess"):
    return {"seed": seed, "max_iter": max_iter, "budget_bytes": budget_bytes,
            "rel_tol": rel_tol, "rhs": rhs}


def run_iteration_table(table_id, orders=ORDERS, columns=None, **kw):
    """T1-T5: rows are orders, columns solver/pcg x smoother x h/p plus low-order."""
    prob = get_problem(ITERATION_TABLES[table_id])
    opts = _opts(**kw)
    nelem = default_nelem(prob.dim)
    cols = iteration_columns()
    res = TableResult(table_id, f"iteration counts, {prob.id}, {nelem}^{prob.dim} elements",
                      [str(p) for p in orders], cols)
    wanted = set(cols if columns is None else columns)
    for p in orders:
        row = str(p)
        for label, s in POINT_SMOOTHERS:
            spec = SmootherSpec.parse(s, seed=opts["seed"])
            for kind in ("h", "p"):
                if kind == "p" and (p == 1 or not _is_pow2(p)):
                    continue
                pair = [f"{m}:{label}:{kind}" for m in ("solver", "pcg")]
                if not wanted.intersection(pair):
                    continue
                for cell in _run_pair(table_id, row, prob, kind, spec, p, nelem, 3, opts):
                    res.add(cell)
        if "low-order:pCG" in wanted:
            res.add(_low_order_cell(table_id, row, prob, p, nelem, opts))
    return res


# ----------------------------------------------------------------------------
# T6: cost model, T7: spectral summary
# ----------------------------------------------------------------------------


def run_cost_table(orders=ORDERS, **kw):
    """Flops per unknown of one matvec: matrix-free, assembled, and the Q1 overlay."""
    cols = []
    for dim in (2, 3):
        cols += [f"{dim}d:g_p matrix-free", f"{dim}d:g_p assembled", f"{dim}d:g_1 overlay",
                 f"{dim}d:7g_p", f"{dim}d:g_1+6g_p"]
    res = TableResult("T6", "flops per unknown per matvec and per v-cycle",
                      [str(p) for p in orders], cols)
    for p in orders:
        row = str(p)
        for dim in (2, 3):
            nelem = default_nelem(dim)
            n = (nelem * p + 1) ** dim
            g_mf = matfree_flops(dim, p + 1, p + 1, nelem ** dim) / n
            g_as = 2.0 * assembled_nnz(dim, nelem, p) / n
            g_1 = 2.0 * assembled_nnz(dim, nelem * p, 1) / n
            vals = {"g_p matrix-free": g_mf, "g_p assembled": g_as, "g_1 overlay": g_1,
                    "7g_p": 7 * min(g_mf, g_as), "g_1+6g_p": g_1 + 6 * min(g_mf, g_as)}
            for k, v in vals.items():
                res.add(Cell("T6", row, f"{dim}d:{k}", f"{v:.1f}", "converged"))
    return res


def run_spectral_table(orders=(1, 4, 16), **kw):
    """Largest remaining eigen-coefficient: upper half after smoothing, all modes after two-grid."""
    from .spectral import SpectrumExperiment, run_spectrum_experiment

    seed = kw.get("seed", 0)
    smoothers = ("jacobi", "chebyshev", "ssor")
    cols = [f"{s}:smooth-only upper" for s in smoothers] + [f"{s}:two-grid all" for s in smoothers]
    res = TableResult("T7", "largest eigen-coefficient after six smoothing steps / one two-grid cycle",
                      [str(p) for p in orders], cols)
    for p in orders:
        for s in smoothers:
            for mode, col in (("smooth-only", f"{s}:smooth-only upper"),
                              ("two-grid", f"{s}:two-grid all")):
                rows = run_spectrum_experiment(SpectrumExperiment(order=p, smoother=s, mode=mode,
                                                                  seed=seed))
                lam = np.array([r[1] for r in rows])
                c = np.array([r[2] for r in rows])
                sel = lam >= lam.max() / 2 if mode == "smooth-only" else slice(None)
                res.add(Cell("T7", str(p), col, f"{c[sel].max():.6f}", "converged"))
    return res


# ----------------------------------------------------------------------------
# T8: mesh independence, T9: block and l1 Jacobi
# ----------------------------------------------------------------------------


def run_mesh_independence(problem, orders=(1, 2, 4, 8, 16), meshes=MESH_SWEEP, coarsest=2,
                          table_id="T8", **kw):
    """SSOR(2,1)-pCG counts with the coarsest grid fixed at ``coarsest`` elements."""
    prob = get_problem(problem)
    opts = _opts(**kw)
    spec = SmootherSpec.parse("ssor(2,1)", seed=opts["seed"])
    res = TableResult(table_id, f"SSOR(2,1)-pCG iterations, {prob.id}, coarsest {coarsest}^{prob.dim}",
                      [str(p) for p in orders], [f"{prob.id}:{m}" for m in meshes])
    for p in orders:
        for m in meshes:
            col = f"{prob.id}:{m}"
            if _needs_skip(prob.dim, m, p, spec, opts["budget_bytes"]):
                res.add(skipped_cell(table_id, str(p), col))
                continue
            levels = int(round(math.log2(m / coarsest))) + 1
            try:
                hier = build_problem_hierarchy(prob.id, "h", spec, p, m, levels,
                                               opts["budget_bytes"])
            except AssemblyTooLargeError:
                res.add(skipped_cell(table_id, str(p), col))
                continue
            op = hier.finest.operator
            f, u0 = initial_state(op.n_dofs, op.boundary_mask, opts["rhs"], opts["seed"])
            rep = mg_solve(hier, f, "pcg", u0, opts["rel_tol"], opts["max_iter"])
            log.info("%s p=%d mesh %d: %s (%.1fs)", table_id, p, m, rep.cell(), rep.wall_time)
            res.add(report_cell(table_id, str(p), col, rep))
            del hier, op
            gc.collect()
    return res


def _merge(table_id, title, parts):
    rows = parts[0].row_labels
    cols = [c for t in parts for c in t.col_labels]
    res = TableResult(table_id, title, rows, cols)
    for t in parts:
        for cell in t.cells.values():
            res.add(cell)
    return res


def run_mesh_table(orders=(1, 2, 4, 8, 16), meshes=MESH_SWEEP, **kw):
    parts = [run_mesh_independence(pid, orders, meshes, **kw) for pid in ("2d-const", "2d-var")]
    return _merge("T8", "SSOR(2,1)-pCG iterations across meshes, coarsest grid 2x2", parts)


def run_jacobi_variants_table(orders=(8, 16), problems=("2d-const", "2d-var", "3d-var"), **kw):
    """Point, block and l1-Jacobi (3,3), h-multigrid, as solver and in pcg."""
    opts = _opts(**kw)
    variants = (("pt", "jacobi"), ("blk", "block-jacobi"), ("l1", "l1-jacobi"))
    cols = [f"{pid}:{mode}:{v}" for pid in problems for mode in ("MG", "pCG") for v, _ in variants]
    res = TableResult("T9", "point, block and l1-Jacobi smoothing, omega = 2/3",
                      [str(p) for p in orders], cols)
    for p in orders:
        row = str(p)
        for pid in problems:
            prob = get_problem(pid)
            nelem = default_nelem(prob.dim)
            for v, kind in variants:
                spec = SmootherSpec(kind, 3, 3, seed=opts["seed"])
                mcols = [f"{pid}:{mode}:{v}" for mode in ("MG", "pCG")]
                if _needs_skip(prob.dim, nelem, p, spec, opts["budget_bytes"]):
                    for c in mcols:
                        res.add(skipped_cell("T9", row, c))
                    continue
                try:
                    hier = build_problem_hierarchy(pid, "h", spec, p, nelem, 3,
                                                   opts["budget_bytes"])
                except (AssemblyTooLargeError, MemoryError):
                    for c in mcols:
                        res.add(skipped_cell("T9", row, c))
                    continue
                op = hier.finest.operator
                for mode, col in zip(("solver", "pcg"), mcols):
                    f, u0 = initial_state(op.n_dofs, op.boundary_mask, opts["rhs"], opts["seed"])
                    rep = mg_solve(hier, f, mode, u0, opts["rel_tol"], opts["max_iter"])
                    log.info("T9 p=%d %s: %s (%.1fs)", p, col, rep.cell(), rep.wall_time)
                    res.add(report_cell("T9", row, col, rep))
                del hier, op
                gc.collect()
    return res


def run_table(table_id, out_dir=None, **kw):
    """Run table ``T1``..``T9``; with ``out_dir`` also write CSV and markdown."""
    tid = table_id.upper()
    if tid in ITERATION_TABLES:
        res = run_iteration_table(tid, **kw)
    elif tid == "T6":
        res = run_cost_table(**{k: v for k, v in kw.items() if k == "orders"})
    elif tid == "T7":
        res = run_spectral_table(**kw)
    elif tid == "T8":
        res = run_mesh_table(**kw)
    elif tid == "T9":
        res = run_jacobi_variants_table(**kw)
    else:
        raise ConfigurationError(f"unknown table {table_id!r}; known: {TABLE_IDS}")
    if out_dir is not None:
        res.write(out_dir)
    return res


__all__ = [
    "ExperimentConfig", "load_configs", "run_config", "Cell", "TableResult", "run_table",
    "run_iteration_table", "run_cost_table", "run_spectral_table", "run_mesh_independence",
    "run_mesh_table", "run_jacobi_variants_table", "SolveReport",
]
