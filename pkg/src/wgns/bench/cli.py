"""Command line: ``wgns run | convergence | compare | mesh``.

Exit status is 0 on success, 1 on usage or input errors and 2 when the
nonlinear or linear solver fails.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from ..mesh import MeshError, generate_lshape, generate_uniform_square, read_mesh, write_mesh
from ..solver import LinearSolveError, SolverConfig
from ..spaces import UnsupportedDegreeError
from ..system import ALGORITHMS
from .cases import CASE_IDS, CaseConsistencyError, UnknownCaseError, get_case
from .errors import EDGE_PROJECTIONS, compute_errors
from .harness import format_comparison, run_convergence, run_robustness, solve_case, write_comparison_csv

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2

# option name -> (config section, converter)
CONFIG_KEYS = {
    "case": ("problem", str),
    "nu": ("problem", float),
    "lam": ("problem", float),
    "ra": ("problem", float),
    "k": ("discretization", int),
    "n": ("discretization", int),
    "n0": ("discretization", int),
    "levels": ("discretization", int),
    "mesh": ("discretization", str),
    "edge_projection": ("discretization", str),
    "algorithm": ("solver", str),
    "tol_newton": ("solver", float),
    "max_iter": ("solver", int),
    "line_search": ("solver", "bool"),
    "continuation": ("solver", "bool"),
    "out": ("output", str),
    "plot": ("output", "bool"),
}
CONFIG_ALIASES = {"lambda": "lam"}
DEFAULTS = {"case": "test1", "k": 0, "algorithm": "robust", "edge_projection": "l2", "plot": True, "levels": 3}


class UsageError(Exception):
    pass


def load_config(path) -> dict:
    """Read an INI file with [problem], [discretization], [solver] and [output] sections."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    known_sections = {sec for sec, _ in CONFIG_KEYS.values()}
    values = {}
    for section in parser.sections():
        if section not in known_sections:
            raise UsageError(f"config {path}: unknown section [{section}]")
        for raw_key in parser[section]:
            key = CONFIG_ALIASES.get(raw_key, raw_key)
            if key not in CONFIG_KEYS or CONFIG_KEYS[key][0] != section:
                raise UsageError(f"config {path}: unknown key {raw_key!r} in [{section}]")
            conv = CONFIG_KEYS[key][1]
            try:
                values[key] = parser[section].getboolean(raw_key) if conv == "bool" else conv(parser[section][raw_key])
            except ValueError as exc:
                raise UsageError(f"config {path}: bad value for {raw_key!r}: {exc}") from None
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgns", description="Weak Galerkin solver for steady incompressible flow.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, degree=True):
        p.add_argument("--config", help="INI file; command-line flags override its values")
        p.add_argument("--case", choices=CASE_IDS)
        if degree:
            p.add_argument("--k", type=int, help="polynomial degree (0, 1 or 2)")
        p.add_argument("--nu", type=float, help="viscosity")
        p.add_argument("--tol-newton", dest="tol_newton", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--line-search", dest="line_search", action="store_true", default=None)
        p.add_argument("--no-continuation", dest="continuation", action="store_false", default=None)
        p.add_argument("--edge-projection", dest="edge_projection", choices=EDGE_PROJECTIONS)
        p.add_argument("--no-plot", dest="plot", action="store_false", default=None)

    run = sub.add_parser("run", help="single solve")
    common(run)
    grp = run.add_mutually_exclusive_group()
    grp.add_argument("--n", type=int, help="mesh size 1/h")
    grp.add_argument("--mesh", help="mesh file")
    run.add_argument("--algorithm", choices=ALGORITHMS)
    run.add_argument("--lambda", dest="lam", type=float, help="force strength (irrotational, lidcavity)")
    run.add_argument("--ra", type=float, help="Rayleigh number (noflow)")
    run.add_argument("--out", help="write a velocity figure to this PNG")

    conv = sub.add_parser("convergence", help="errors and rates over refined meshes")
    common(conv)
    conv.add_argument("--levels", type=int, help="number of meshes")
    conv.add_argument("--n0", type=int, help="coarsest 1/h (default depends on the case)")
    conv.add_argument("--algorithm", choices=ALGORITHMS)
    conv.add_argument("--lambda", dest="lam", type=float)
    conv.add_argument("--out", help="CSV path; a PNG with the same stem is written next to it")

    cmp_ = sub.add_parser("compare", help="both algorithms over a list of force strengths")
    common(cmp_)
    cmp_.add_argument("--lambda", dest="lambdas", type=_float_list, required=True, help="comma-separated values")
    cmp_.add_argument("--n", type=int, default=16)
    cmp_.add_argument("--out", help="CSV path; a PNG with the same stem is written next to it")

    mesh = sub.add_parser("mesh", help="generate a mesh file")
    mesh.add_argument("--gen", choices=("unit-square", "lshape"), required=True)
    size = mesh.add_mutually_exclusive_group(required=True)
    size.add_argument("--n", type=int, help="cells per unit length")
    size.add_argument("--level", type=int, help="refinement level (lshape)")
    mesh.add_argument("--out", help="output file (stdout when omitted)")
    return parser


def _settings(args) -> dict:
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    for key, val in vars(args).items():
        if val is not None and key not in ("config", "command", "verbose"):
            values[key] = val
    return values


def _solver_options(s: dict) -> dict:
    return {key: s[key] for key in ("tol_newton", "max_iter", "line_search", "continuation") if key in s}


def _case(s: dict):
    params = {"nu": s.get("nu")}
    if s["case"] in ("irrotational", "lidcavity"):
        params["lam"] = s.get("lam")
    if s["case"] == "noflow":
        params["ra"] = s.get("ra")
    return get_case(s["case"], **params)


def cmd_run(s: dict) -> int:
    case = _case(s)
    mesh = None
    if s.get("mesh"):
        try:
            mesh = read_mesh(Path(s["mesh"]).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read mesh: {exc}") from None
    n = s.get("n") or case.default_sizes[0]
    config = SolverConfig(nu=case.nu, algorithm=s["algorithm"], **_solver_options(s))
    solver, u, p, report = solve_case(case, s["k"], n, mesh=mesh, config=config)
    dm = solver.ops.dofmap
    print(f"case={case.id} k={s['k']} nu={case.nu:g} algorithm={s['algorithm']} n_u={dm.n_u} n_p={dm.n_p}")
    print(f"newton: {report.message}; residual {report.residual_norm:.3e}; {report.wall_time:.2f}s")
    if report.converged and case.has_exact:
        e = compute_errors(solver.ops, u, p, case, edge_projection=s["edge_projection"])
        print(f"err_H1={e.err_H1:.6e} err_uL2={e.err_uL2:.6e} err_pL2={e.err_pL2:.6e}")
    if s.get("out") and s.get("plot", True):
        from .plotting import plot_velocity

        plot_velocity(solver.ops, u, s["out"], title=f"{case.id}, k={s['k']}, {s['algorithm']}")
    return EXIT_OK if report.converged else EXIT_SOLVER


def cmd_convergence(s: dict) -> int:
    case = _case(s)
    table = run_convergence(
        case,
        s["k"],
        case.nu,
        s["algorithm"],
        levels=s["levels"],
        n0=s.get("n0"),
        edge_projection=s["edge_projection"],
        solver_options=_solver_options(s),
    )
    if s.get("out"):
        path = table.write_csv(s["out"])
        if s.get("plot", True):
            from .plotting import plot_convergence

            plot_convergence(table, path.with_suffix(".png"))
    rows = table.rows()
    print(",".join(rows[0].keys()))
    for row in rows:
        print(",".join(str(v) for v in row.values()))
    return EXIT_OK


def cmd_compare(s: dict) -> int:
    if s["case"] not in ("irrotational",):
        raise UsageError("compare needs a case with a force-strength parameter and an exact solution (irrotational)")
    rows = run_robustness(
        s["lambdas"], k=s["k"], n=s["n"], case_id=s["case"], nu=s.get("nu") or 1.0, edge_projection=s["edge_projection"]
    )
    print(format_comparison(rows))
    if s.get("out"):
        path = write_comparison_csv(rows, s["out"])
        if s.get("plot", True):
            from .plotting import plot_comparison

            plot_comparison(rows, Path(path).with_suffix(".png"))
    return EXIT_OK


def cmd_mesh(args) -> int:
    if args.gen == "unit-square":
        if args.n is None:
            raise UsageError("unit-square needs --n")
        mesh = generate_uniform_square(args.n)
    elif args.level is not None:
        mesh = generate_lshape(level=args.level)
    else:
        if args.n % 2:
            raise UsageError("lshape --n must be even")
        mesh = generate_lshape(level=0, m=args.n // 2)
    if args.out:
        with open(args.out, "w") as fh:
            write_mesh(mesh, fh)
    else:
        write_mesh(mesh, sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mesh":
            return cmd_mesh(args)
        settings = _settings(args)
        if args.command == "compare":
            settings.setdefault("n", 16)
        handler = {"run": cmd_run, "convergence": cmd_convergence, "compare": cmd_compare}[args.command]
        return handler(settings)
    except (UsageError, UnknownCaseError, MeshError, UnsupportedDegreeError, CaseConsistencyError, ValueError) as exc:
        print(f"wgns: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LinearSolveError as exc:
        print(f"wgns: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
