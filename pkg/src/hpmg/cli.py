"""Command-line entry point ``hpmg``.

Subcommands: ``run <config>``, ``table <T1..T9>``, ``spectrum <spec>`` and
``mesh-independence <problem>``. Exit code 0 on completion (including
non-converged cells), 2 on configuration or engine errors.
"""
import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import (
    MESH_SWEEP,
    TABLE_IDS,
    load_configs,
    run_config,
    run_mesh_independence,
    run_table,
)
from .errors import ConfigurationError, HpmgError
from .krylov import DEFAULT_MAX_ITER
from .operator import DEFAULT_BUDGET_BYTES

log = logging.getLogger("hpmg")


def _int_list(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser():
    ap = argparse.ArgumentParser(prog="hpmg", description="High-order multigrid experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--out-dir", type=Path, default=Path("."), help="directory for all outputs")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    ap.add_argument("--budget-bytes", type=int, default=DEFAULT_BUDGET_BYTES,
                    help="memory cap for assembled matrices; larger cells are marked '*'")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every cell")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the experiment(s) of a TOML config")
    p.add_argument("config", type=Path)

    p = sub.add_parser("table", help="reproduce one of the tables T1..T9")
    p.add_argument("table_id", choices=TABLE_IDS + tuple(t.lower() for t in TABLE_IDS))
    p.add_argument("--orders", type=_int_list, default=None, help="e.g. 1,2,4")

    p = sub.add_parser("spectrum", help="eigen-coefficients after smoothing or a two-grid cycle")
    p.add_argument("spec", help="TOML file or 'problem/order/smoother/mode', e.g. 2d-const/4/ssor/two-grid")

    p = sub.add_parser("mesh-independence", help="SSOR(2,1)-pCG counts across meshes")
    p.add_argument("problem")
    p.add_argument("--orders", type=_int_list, default=(1, 2, 4, 8, 16))
    p.add_argument("--meshes", type=_int_list, default=MESH_SWEEP)
    return ap


def _cmd_run(args):
    configs = load_configs(args.config)
    out = args.out_dir / f"{args.config.stem}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "problem", "order", "hierarchy", "smoother", "mode",
                    "value", "status", "fine_matvecs"])
        for i, cfg in enumerate(configs):
            cfg = dataclasses.replace(cfg, budget_bytes=args.budget_bytes)
            rep = run_config(cfg)
            status = "converged" if rep.converged else "diverged"
            w.writerow([i, cfg.problem, cfg.order, cfg.hierarchy, cfg.smoother, cfg.mode,
                        rep.cell(), status, rep.fine_matvecs])
            print(f"[{i}] {cfg.problem} p={cfg.order} {cfg.hierarchy} {cfg.smoother} {cfg.mode}: "
                  f"{rep.cell()}")
    print(f"wrote {out}")


def _cmd_table(args):
    kw = {"seed": args.seed}
    tid = args.table_id.upper()
    if tid not in ("T6", "T7"):
        kw.update(max_iter=args.max_iter, budget_bytes=args.budget_bytes)
    if args.orders is not None:
        kw["orders"] = args.orders
    res = run_table(tid, out_dir=args.out_dir, **kw)
    print(res.to_markdown())
    print(f"wrote {args.out_dir / (tid + '.csv')}")


def parse_spectrum_spec(text):
    """`SpectrumExperiment` from a TOML path or a ``problem/order/smoother/mode`` string."""
    from .spectral import SpectrumExperiment

    path = Path(text)
    if path.suffix == ".toml":
        from .bench import _load_toml
        data = _load_toml(path)
        allowed = {"problem", "order", "smoother", "mode", "nelem", "seed", "budget"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown spectrum keys: {unknown}")
        return SpectrumExperiment(**data)
    parts = text.split("/")
    if len(parts) != 4:
        raise ConfigurationError(f"spectrum spec must be problem/order/smoother/mode, got {text!r}")
    try:
        order = int(parts[1])
    except ValueError as exc:
        raise ConfigurationError(f"bad order in {text!r}") from exc
    return SpectrumExperiment(problem=parts[0], order=order, smoother=parts[2], mode=parts[3])


def _cmd_spectrum(args):
    from .spectral import run_spectrum_experiment, write_spectrum_csv

    exp = parse_spectrum_spec(args.spec)
    exp.seed = args.seed
    rows = run_spectrum_experiment(exp)
    name = f"spectrum_{exp.problem}_p{exp.order}_{exp.smoother}_{exp.mode}.csv".replace("'", "p")
    out = write_spectrum_csv(rows, args.out_dir / name)
    print(f"{len(rows)} modes, max coefficient {max(r[2] for r in rows):.4g}")
    print(f"wrote {out}")


def _cmd_mesh(args):
    res = run_mesh_independence(args.problem, args.orders, args.meshes, seed=args.seed,
                                max_iter=args.max_iter, budget_bytes=args.budget_bytes,
                                table_id="T8")
    path = res.write(args.out_dir)
    print(res.to_markdown())
    print(f"wrote {path}")


COMMANDS = {"run": _cmd_run, "table": _cmd_table, "spectrum": _cmd_spectrum,
            "mesh-independence": _cmd_mesh}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except HpmgError as exc:
        print(f"hpmg: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
