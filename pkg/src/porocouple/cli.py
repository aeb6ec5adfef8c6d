"""Command line front end.

Three subcommands: `run` marches a scenario config and writes its outputs,
`verify` reruns the named oracle suite, `info` reports the problem sizes a
config would produce. Config trouble exits with status 2, solver and IO
failures with 1.
"""

import argparse
import os
import sys

from .config import ConfigError, load_scenario_file
from .fluid import FluidEvaluationError
from .mesh import MeshError
from .scenarios import ScenarioError, run_scenario, scenario_meshes
from .solver import SolverError
from .verify import run_suite


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="porocouple",
        description="Channel flow over an anisotropic porous obstacle.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario configuration")
    run_p.add_argument("config", help="path to a flat key = value config file")
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
    run_p.add_argument("--out", default=None,
                       help="output directory (default from config; the "
                            "POROCOUPLE_OUTDIR environment variable wins)")

    info_p = sub.add_parser("info", help="print the dof counts of a config")
    info_p.add_argument("config")
    info_p.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE")

    ver_p = sub.add_parser("verify", help="run a named verification suite")
    ver_p.add_argument("suite", help="patch, equivalence, oracle, poiseuille, "
                                     "euler, or all")
    ver_p.add_argument("--csv", default=None,
                       help="where to write the machine-readable results "
                            "(default verify_<suite>.csv)")
    return parser


def _out_dir(flag_value):
    return os.environ.get("POROCOUPLE_OUTDIR") or flag_value


def _cmd_run(args):
    cfg = load_scenario_file(args.config, overrides=args.overrides)
    result = run_scenario(cfg, out_dir=_out_dir(args.out))
    state = "stationary" if result.stationary else "still evolving"
    print(f"{cfg.kind} [{cfg.scheme}]: {state} after {len(result.steps)} steps, "
          f"t = {result.t:g} s")
    for name, value in result.fluxes.items():
        print(f"  {name} = {value:.6e} kg/s")
    print(f"outputs in {result.out_dir}")
    return 0


def _cmd_info(args):
    cfg = load_scenario_file(args.config, overrides=args.overrides)
    ff_mesh, pm_mesh = scenario_meshes(cfg)
    n_ffc = ff_mesh.n_cells
    n_v = ff_mesh.n_faces
    n_pmc = pm_mesh.n_cells
    print(f"scenario.kind = {cfg.kind}")
    print(f"darcy.scheme = {cfg.scheme}")
    print(f"grid.ff_cells = {n_ffc}")
    print(f"grid.ff_spacing = {ff_mesh.h:g}")
    print(f"grid.pm_cells = {n_pmc}")
    print(f"grid.interface_faces = {len(ff_mesh.interface_faces())}")
    print(f"dof.ff_pressure = {n_ffc}")
    print(f"dof.ff_velocity = {n_v}")
    print(f"dof.pm_pressure = {n_pmc}")
    print(f"dof.total = {n_ffc + n_v + n_pmc}")
    return 0


def _cmd_verify(args):
    try:
        results = run_suite(args.suite)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    width = max(len(r.name) for r in results)
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark}  {r.name:<{width}}  {r.value:.6e}  {r.bound}")
    failed = sum(1 for r in results if not r.passed)
    print(f"{len(results) - failed} passed, {failed} failed")

    csv_path = args.csv or os.path.join(_out_dir(".") or ".",
                                        f"verify_{args.suite}.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("name,passed,value,bound,seconds\n")
        for r in results:
            fh.write(f"{r.name},{int(r.passed)},{r.value:.17e},"
                     f"{r.bound.replace(',', ';')},{r.seconds:.3f}\n")
    print(f"results written to {csv_path}")
    return 0 if failed == 0 else 1


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "info": _cmd_info, "verify": _cmd_verify}
    try:
        return handler[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ScenarioError, MeshError) as exc:
        print(f"setup error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
