"""Command line interface.

Subcommands:
  run <config>          execute a scenario (path or bundled name)
  gen-network <spec>    generate a fracture network file from a spec
  coarsen <config>      build the coarse partition and write fine-cell labels

Exit codes: 0 ok, 2 configuration error, 3 solver error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .config import ConfigError, bundled_scenario_path, load_scenario
from .flow import SolverError
from .mesh import GridError
from .units import UnitError

logger = logging.getLogger(__name__)


def _scenario_from_arg(arg, seed=None):
    path = arg
    if not str(arg).endswith((".yaml", ".yml")):
        path = bundled_scenario_path(arg)
    scenario = load_scenario(path)
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
        if scenario.grid.generator is not None:
            scenario.grid.generator.seed = seed
    return scenario


def _cmd_run(args):
    from .runner import run

    scenario = _scenario_from_arg(args.config, args.seed)
    result = run(
        scenario,
        args.out,
        basis_mode=args.basis,
        fine_reference=args.fine_ref,
        dry_run=args.dry_run,
        jobs=args.jobs,
    )
    if args.dry_run:
        json.dump(result, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        print(f"summary written to {args.out}/summary.json")
    return 0


def _cmd_gen_network(args):
    import yaml

    from .config import _parse_generator
    from .fracgen import generate
    from .units import parse_quantity

    with open(args.spec) as fh:
        raw = yaml.safe_load(fh)
    size = raw.get("domain", ["1000 m", "1000 m"])
    domain = (0.0, 0.0, parse_quantity(size[0], "length"), parse_quantity(size[1], "length"))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    spec = _parse_generator(raw, domain, seed, "generator")
    network = generate(spec)
    network.save(args.out)
    print(f"{network.n_segments} fractures written to {args.out}")
    return 0


def _cmd_coarsen(args):
    from .coarsen import build_partition, partition_stats
    from .flow import resolve_wells, solve_flow
    from .output import write_labels
    from .runner import build_grid, resolve_network

    scenario = _scenario_from_arg(args.config, args.seed)
    network = resolve_network(scenario)
    grid = build_grid(scenario, network, refine=scenario.refinement_levels[0])
    flux = None
    if scenario.coarsen.use_tof:
        wells = resolve_wells(grid, scenario.wells)
        _, flux = solve_flow(
            grid, scenario.flow_props, wells, scenario.boundary_pressures
        )
    partition = build_partition(
        grid, flux=flux, porosity=scenario.thermal_props.porosity,
        params=scenario.coarsen,
    )
    write_labels(partition, args.out)
    stats = partition_stats(partition)
    print(
        f"{stats['coarse_cells']} coarse cells from {stats['fine_cells']} fine "
        f"(CF {stats['coarsening_factor']:.1f}) -> {args.out}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fracheat", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true", help="info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("config", help="config path or bundled scenario name")
    p_run.add_argument("-o", "--out", default="out", help="artifact directory")
    group = p_run.add_mutually_exclusive_group()
    group.add_argument("--fine-ref", dest="fine_ref", action="store_true", default=None)
    group.add_argument("--no-fine-ref", dest="fine_ref", action="store_false")
    p_run.add_argument("--basis", choices=["constant", "smoothed", "both"], default=None)
    p_run.add_argument("--dry-run", action="store_true")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_gen = sub.add_parser("gen-network", help="generate a fracture network file")
    p_gen.add_argument("spec", help="generator spec (YAML)")
    p_gen.add_argument("-o", "--out", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=_cmd_gen_network)

    p_c = sub.add_parser("coarsen", help="write the coarse partition labels")
    p_c.add_argument("config", help="config path or bundled scenario name")
    p_c.add_argument("-o", "--out", required=True)
    p_c.add_argument("--seed", type=int, default=None)
    p_c.set_defaults(func=_cmd_coarsen)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, UnitError, FileNotFoundError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (SolverError, GridError) as err:
        print(f"solver error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
