"""Scenario runner: wire the full pipeline and write artifacts.

One run executes, per refinement level: fine pressure solve, optional fine
transport reference, coarse-grid construction (built once on the coarsest
level and lifted to refinements so every level shares the same coarse grid),
basis construction per requested mode, coarse simulation, energy-error and
production-temperature series, and a machine-readable summary.  Summaries
contain no timestamps, so identical configurations reproduce byte-identical
files.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os

import numpy as np

from . import basis as basis_mod
from . import coarse_transport as ct
from .coarsen import build_partition, lift_partition, partition_stats
from .config import ConfigError, Scenario
from .flow import resolve_wells, solve_flow
from .fracgen import generate
from .mesh import FractureNetwork, build_cartesian_dfm, import_grid, rasterize_network
from .output import write_csv, write_labels, write_vtk
from .transport import (
    Schedule,
    assemble_conduction,
    build_fine_system,
    effective_capacity,
    peclet_field,
    simulate,
)
from .units import format_years

logger = logging.getLogger(__name__)


def resolve_network(scenario):
    """Materialize the fracture network from generator, inline rows or file."""
    gs = scenario.grid
    parts = []
    if gs.network_file:
        parts.append(FractureNetwork.load(gs.network_file).segments)
    if gs.segments is not None and len(gs.segments):
        parts.append(np.asarray(gs.segments, dtype=float))
    if gs.generator is not None:
        parts.append(generate(gs.generator).segments)
    if not parts:
        return FractureNetwork(np.zeros((0, 5)))
    return FractureNetwork(np.vstack(parts))


def build_grid(scenario, network, refine=1):
    gs = scenario.grid
    if gs.kind == "import":
        with open(gs.path) as fh:
            return import_grid(fh)
    nx, ny = gs.nx * refine, gs.ny * refine
    if gs.kind == "cartesian":
        return build_cartesian_dfm(scenario.domain, nx, ny, network)
    return rasterize_network(scenario.domain, nx, ny, network)


def plan(scenario):
    """Dry-run description of what a run would execute."""
    modes = ["constant", "smoothed"] if scenario.basis_mode == "both" else [scenario.basis_mode]
    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "grid_kind": scenario.grid.kind,
        "base_resolution": [scenario.grid.nx, scenario.grid.ny],
        "refinement_levels": list(scenario.refinement_levels),
        "basis_modes": modes,
        "steps": scenario.schedule.n_steps,
        "dt_seconds": scenario.schedule.dt,
        "fine_reference": scenario.fine_reference,
        "wells": len(scenario.wells),
    }


def _epsilon_series(result_fine, result_coarse, fine_capacity, restriction):
    times, eps = [], []
    for t, tc in zip(result_coarse.snapshot_times, result_coarse.snapshots):
        match = np.nonzero(np.isclose(result_fine.snapshot_times, t))[0]
        if match.size == 0:
            continue
        tf = result_fine.snapshots[int(match[0])]
        times.append(t)
        eps.append(ct.energy_error(tf, tc, fine_capacity, restriction))
    return np.array(times), np.array(eps)


def run(scenario, out_dir, basis_mode=None, fine_reference=None, dry_run=False,
        jobs=1):
    """Execute the scenario; returns the summary dict (also written to disk).

    ``jobs`` is accepted for interface stability; the smoothing sweeps are
    vectorized over all bases, so there is nothing to farm out per worker.
    """
    if basis_mode is not None:
        scenario = dataclasses.replace(scenario, basis_mode=basis_mode)
    if fine_reference is not None:
        scenario = dataclasses.replace(scenario, fine_reference=fine_reference)
    if dry_run:
        return plan(scenario)

    os.makedirs(out_dir, exist_ok=True)
    modes = ["constant", "smoothed"] if scenario.basis_mode == "both" else [scenario.basis_mode]
    network = resolve_network(scenario)

    base_grid = build_grid(scenario, network, refine=scenario.refinement_levels[0])
    logger.info("base grid: %d cells", base_grid.n_cells)
    base_wells = resolve_wells(base_grid, scenario.wells)
    _, base_flux = solve_flow(
        base_grid, scenario.flow_props, base_wells, scenario.boundary_pressures
    )
    partition = build_partition(
        base_grid,
        flux=base_flux,
        porosity=scenario.thermal_props.porosity,
        params=scenario.coarsen,
    )
    stats = partition_stats(partition)
    logger.info(
        "coarse grid: %d cells (CF %.1f)", stats["coarse_cells"], stats["coarsening_factor"]
    )
    write_labels(partition, os.path.join(out_dir, "partition_L0.txt"))

    summary = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "coarse_cells": stats["coarse_cells"],
        "levels": [],
    }

    for li, refine in enumerate(scenario.refinement_levels):
        level = _run_level(scenario, network, partition, li, refine, modes, out_dir)
        summary["levels"].append(level)

    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _run_level(scenario, network, base_partition, level_index, refine, modes, out_dir):
    if level_index == 0:
        grid = build_grid(scenario, network, refine=refine)
        partition = base_partition
    else:
        grid = build_grid(scenario, network, refine=refine)
        partition = lift_partition(base_partition, grid)
    wells = resolve_wells(grid, scenario.wells)
    _, flux = solve_flow(grid, scenario.flow_props, wells, scenario.boundary_pressures)

    props = scenario.thermal_props
    sched = scenario.schedule
    cap_fine = effective_capacity(props, grid) * grid.cell_measure
    t0 = np.full(grid.n_cells, scenario.initial_temperature)
    producers = np.nonzero(flux.source < 0)[0]

    level = {
        "refine": refine,
        "fine_cells": int(grid.n_cells),
        "coarse_cells": int(partition.n_coarse),
        "coarsening_factor": grid.n_cells / partition.n_coarse,
        "modes": {},
    }

    result_fine = None
    if scenario.fine_reference:
        system = build_fine_system(
            grid, flux, props, scenario.injection_temperature,
            scenario.boundary_temperature,
        )
        result_fine = simulate(
            system, sched, t0,
            producer_cells=producers, producer_rates=flux.source[producers],
        )
        if scenario.write_csv:
            write_csv(
                os.path.join(out_dir, f"production_fine_L{level_index}.csv"),
                [
                    [format_years(t) for t in result_fine.times],
                    result_fine.production_temperature,
                    np.zeros_like(result_fine.times),
                ],
                ["time_years", "T_production_C", "epsilon"],
            )
        level["fine_final_production_C"] = float(result_fine.production_temperature[-1])

    a_cond = assemble_conduction(grid, props)
    regions = None

    for mode in modes:
        if mode == "constant":
            bset = basis_mod.constant_basis(partition)
        else:
            controls = scenario.smoothing
            if scenario.smoothing_iterations is not None:
                controls = dataclasses.replace(
                    controls,
                    max_iterations=scenario.smoothing_iterations[level_index],
                )
            if regions is None:
                regions = basis_mod.interaction_regions(partition, grid)
            bset = basis_mod.smooth_basis(a_cond, partition, regions, controls)
        system = ct.build_coarse_system(
            partition, grid, flux, props, a_cond, bset,
            scenario.injection_temperature, scenario.boundary_temperature,
        )
        result = ct.simulate_coarse(system, sched, t0, partition, grid, flux)

        entry = {
            "iterations": int(system.iterations),
            "final_production_C": float(result.production_temperature[-1]),
        }
        if result_fine is not None:
            times, eps = _epsilon_series(
                result_fine, result, cap_fine, system.restriction
            )
            if eps.size:
                entry["epsilon_final"] = float(eps[-1])
            if scenario.write_csv:
                prod_at = np.interp(times, result.times, result.production_temperature)
                write_csv(
                    os.path.join(out_dir, f"production_{mode}_L{level_index}.csv"),
                    [[format_years(t) for t in times], prod_at, eps],
                    ["time_years", "T_production_C", "epsilon"],
                )
        elif scenario.write_csv:
            write_csv(
                os.path.join(out_dir, f"production_{mode}_L{level_index}.csv"),
                [
                    [format_years(t) for t in result.times],
                    result.production_temperature,
                    np.full_like(result.times, np.nan),
                ],
                ["time_years", "T_production_C", "epsilon"],
            )
        level["modes"][mode] = entry

        if scenario.write_vtk:
            fields = {"temperature_final": ct.prolong_to_fine(result.final, system.restriction)}
            if result_fine is not None:
                fields["temperature_fine"] = result_fine.final
            fields["peclet_log10"] = np.log10(
                np.maximum(peclet_field(grid, flux, props, scenario.peclet_length), 1e-300)
            )
            write_vtk(grid, fields, os.path.join(out_dir, f"fields_{mode}_L{level_index}.vtk"))
    return level
