"""Scenario configuration: YAML with explicit units on physical quantities.

Every physical input carries its unit in the value string and is converted
to SI here, so the rest of the package never sees paper-style mixed units.
Validation errors name the offending field path.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from .coarsen import CoarsenParams
from .basis import SmoothingControls
from .flow import FlowProps, Well
from .fracgen import GenSpec
from .mesh import FractureNetwork
from .transport import Schedule, ThermalProps
from .units import UnitError, parse_quantity


class ConfigError(Exception):
    """Invalid scenario configuration; message carries the field path."""


def _get(d, path, default=None, required=False):
    cur = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                raise ConfigError(f"{path}: required field missing")
            return default
        cur = cur[part]
    return cur


def _quantity(d, path, dimension, default=None, required=False):
    raw = _get(d, path, default=None, required=required)
    if raw is None:
        return default
    try:
        return parse_quantity(raw, dimension)
    except UnitError as err:
        raise ConfigError(f"{path}: {err}") from err


@dataclass
class GridSpec:
    kind: str = "cartesian"  # cartesian | rasterize | import
    nx: int = 10
    ny: int = 10
    path: str = None
    network_file: str = None
    segments: np.ndarray = None
    generator: GenSpec = None


@dataclass
class Scenario:
    """Fully resolved scenario in SI units (temperatures in degC)."""

    name: str = "scenario"
    seed: int = 0
    domain: tuple = (0.0, 0.0, 1000.0, 1000.0)
    grid: GridSpec = field(default_factory=GridSpec)
    flow_props: FlowProps = field(default_factory=lambda: FlowProps(9.869233e-12, 1e-3))
    thermal_props: ThermalProps = field(default_factory=ThermalProps)
    initial_temperature: float = 100.0
    injection_temperature: float = 20.0
    boundary_temperature: float = None
    boundary_pressures: dict = field(default_factory=dict)
    wells: list = field(default_factory=list)
    schedule: Schedule = field(default_factory=lambda: Schedule(dt=1e6, t_end=1e8))
    coarsen: CoarsenParams = field(default_factory=CoarsenParams)
    basis_mode: str = "both"  # constant | smoothed | both
    smoothing: SmoothingControls = field(default_factory=SmoothingControls)
    refinement_levels: list = field(default_factory=lambda: [1])
    smoothing_iterations: list = None  # per-level override of max_iterations
    fine_reference: bool = True
    write_vtk: bool = False
    write_csv: bool = True
    peclet_length: float = 1000.0


def _parse_segments(rows, path):
    segs = []
    for k, row in enumerate(rows):
        try:
            segs.append(
                [
                    parse_quantity(row["x1"], "length"),
                    parse_quantity(row["y1"], "length"),
                    parse_quantity(row["x2"], "length"),
                    parse_quantity(row["y2"], "length"),
                    parse_quantity(row["aperture"], "length"),
                ]
            )
        except (KeyError, UnitError, TypeError) as err:
            raise ConfigError(f"{path}[{k}]: {err}") from err
    return np.array(segs) if segs else np.zeros((0, 5))


def _parse_generator(d, domain, seed, path):
    length = d.get("length", {})
    kind = length.get("kind", "power")
    if kind == "power":
        ltuple = (
            "power",
            float(length.get("exponent", 2.5)),
            _quantity(length, "min", "length", 10.0),
            _quantity(length, "max", "length", 500.0),
        )
    elif kind == "fixed":
        ltuple = ("fixed", _quantity(length, "value", "length", required=True))
    else:
        raise ConfigError(f"{path}.length.kind: unknown kind {kind!r}")
    orient = d.get("orientation", {"kind": "uniform"})
    if orient.get("kind", "uniform") == "uniform":
        otuple = ("uniform",)
    elif orient["kind"] == "sets":
        sets = [(float(s["angle"]), float(s.get("jitter", 0.0))) for s in orient["sets"]]
        otuple = ("sets", sets)
    else:
        raise ConfigError(f"{path}.orientation.kind: unknown kind")
    ap = d.get("aperture", {"kind": "fixed", "value": "0.001 m"})
    if ap.get("kind", "fixed") == "fixed":
        atuple = ("fixed", _quantity(ap, "value", "length", 1e-3))
    else:
        atuple = ("length", float(ap.get("coefficient", 1e-4)))
    det = _parse_segments(d.get("deterministic", []), f"{path}.deterministic")
    return GenSpec(
        seed=seed,
        count=int(d.get("count", 0)),
        domain=domain,
        length=ltuple,
        orientation=otuple,
        aperture=atuple,
        deterministic=det.tolist(),
    )


def load_scenario(source):
    """Build a Scenario from a YAML path, stream, or already-parsed dict."""
    if isinstance(source, dict):
        raw = source
    elif hasattr(source, "read"):
        raw = yaml.safe_load(source)
    else:
        with open(source) as fh:
            raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")

    size = _get(raw, "domain", ["1000 m", "1000 m"])
    try:
        width = parse_quantity(size[0], "length")
        height = parse_quantity(size[1], "length")
    except (UnitError, IndexError, TypeError) as err:
        raise ConfigError(f"domain: {err}") from err
    if width <= 0 or height <= 0:
        raise ConfigError("domain: extents must be positive")
    domain = (0.0, 0.0, width, height)
    seed = int(_get(raw, "seed", 0))

    gkind = _get(raw, "grid.kind", "cartesian")
    if gkind not in ("cartesian", "rasterize", "import"):
        raise ConfigError(f"grid.kind: unknown kind {gkind!r}")
    gs = GridSpec(kind=gkind)
    gs.nx = int(_get(raw, "grid.nx", 10))
    gs.ny = int(_get(raw, "grid.ny", 10))
    if gkind != "import" and (gs.nx < 1 or gs.ny < 1):
        raise ConfigError("grid.nx/grid.ny: must be positive")
    gs.path = _get(raw, "grid.path")
    if gkind == "import" and not gs.path:
        raise ConfigError("grid.path: required for imported grids")
    gs.network_file = _get(raw, "grid.network.file")
    segs = _get(raw, "grid.network.segments")
    if segs:
        gs.segments = _parse_segments(segs, "grid.network.segments")
    gen = _get(raw, "grid.network.generator")
    if gen:
        gs.generator = _parse_generator(gen, domain, seed, "grid.network.generator")

    flow = FlowProps(
        matrix_permeability=_quantity(
            raw, "materials.matrix_permeability", "permeability", 9.869233e-12
        ),
        viscosity=_quantity(raw, "materials.viscosity", "viscosity", 1e-3),
    )
    porosity = float(_get(raw, "materials.porosity", 1e-3))
    if not 0 < porosity <= 1:
        raise ConfigError("materials.porosity: must lie in (0, 1]")
    thermal = ThermalProps(
        rock_heat_capacity=_quantity(
            raw, "materials.rock_heat_capacity", "heat_capacity", 2.17e6
        ),
        fluid_heat_capacity=_quantity(
            raw, "materials.fluid_heat_capacity", "heat_capacity", 4.18e6
        ),
        porosity=porosity,
        conductivity=_quantity(raw, "materials.conductivity", "conductivity", 2.1),
    )
    for label, v in (
        ("materials.matrix_permeability", flow.matrix_permeability),
        ("materials.viscosity", flow.viscosity),
        ("materials.rock_heat_capacity", thermal.rock_heat_capacity),
        ("materials.fluid_heat_capacity", thermal.fluid_heat_capacity),
        ("materials.conductivity", thermal.conductivity),
    ):
        if np.any(np.asarray(v) <= 0):
            raise ConfigError(f"{label}: must be positive")

    wells = []
    for k, w in enumerate(_get(raw, "wells", [])):
        path = f"wells[{k}]"
        wtype = w.get("type")
        if wtype not in ("injector", "producer", "pressure"):
            raise ConfigError(f"{path}.type: expected injector/producer/pressure")
        at = w.get("at")
        if at is None:
            raise ConfigError(f"{path}.at: required")
        if isinstance(at, str):
            location = at
            if at != "fracture_boundary":
                raise ConfigError(f"{path}.at: unknown placement token {at!r}")
        elif isinstance(at, int):
            location = at
        else:
            try:
                location = (
                    parse_quantity(at[0], "length"),
                    parse_quantity(at[1], "length"),
                )
            except (UnitError, IndexError, TypeError) as err:
                raise ConfigError(f"{path}.at: {err}") from err
        rate = _quantity(w, "rate", "rate", 0.0)
        pressure = float(w.get("pressure", 0.0))
        if wtype == "injector" and rate <= 0:
            raise ConfigError(f"{path}.rate: injectors need a positive rate")
        if wtype == "producer" and rate >= 0:
            raise ConfigError(f"{path}.rate: producers need a negative rate")
        wells.append(
            Well(
                kind=wtype,
                location=location,
                rate=rate,
                pressure=pressure,
                snap=w.get("snap", "any"),
            )
        )

    bps = {}
    for tag, val in (_get(raw, "boundary_pressures", {}) or {}).items():
        bps[str(tag)] = float(val)

    dt = _quantity(raw, "schedule.dt", "time", required=True)
    t_end = _quantity(raw, "schedule.end", "time", required=True)
    try:
        schedule = Schedule(dt=dt, t_end=t_end, n_outputs=int(_get(raw, "schedule.outputs", 10)))
    except ValueError as err:
        raise ConfigError(f"schedule: {err}") from err

    widths = _get(raw, "coarsen.distance_widths")
    if widths is not None:
        widths = tuple(parse_quantity(wd, "length") for wd in widths)
    else:
        widths = (25.0, 50.0, 100.0, 200.0)
    blocks = _get(raw, "coarsen.blocks")
    coarsen = CoarsenParams(
        use_tof=bool(_get(raw, "coarsen.tof", False)),
        tof_bins=int(_get(raw, "coarsen.tof_bins", 6)),
        use_distance=bool(_get(raw, "coarsen.distance", True)),
        distance_widths=widths,
        blocks=tuple(int(b) for b in blocks) if blocks else None,
        min_cell_size=int(_get(raw, "coarsen.min_cell_size", 4)),
    )

    mode = _get(raw, "basis.mode", "both")
    if mode not in ("constant", "smoothed", "both"):
        raise ConfigError("basis.mode: expected constant/smoothed/both")
    try:
        smoothing = SmoothingControls(
            omega=float(_get(raw, "basis.omega", 2.0 / 3.0)),
            max_iterations=int(_get(raw, "basis.max_iterations", 100)),
            residual_tol=float(_get(raw, "basis.residual_tol", 5e-3)),
            energy_termination=bool(_get(raw, "basis.energy_termination", True)),
            clamp_negative=bool(_get(raw, "basis.clamp_negative", True)),
            freeze_scope=str(_get(raw, "basis.freeze_scope", "all")),
        )
    except ValueError as err:
        raise ConfigError(f"basis: {err}") from err

    levels = [int(v) for v in _get(raw, "refinement.levels", [1])]
    if any(v < 1 for v in levels):
        raise ConfigError("refinement.levels: factors must be >= 1")
    sit = _get(raw, "refinement.smoothing_iterations")
    if sit is not None:
        sit = [int(v) for v in sit]
        if len(sit) != len(levels):
            raise ConfigError(
                "refinement.smoothing_iterations: one entry per refinement level"
            )

    bt = _get(raw, "temperature.boundary")
    return Scenario(
        name=str(_get(raw, "name", "scenario")),
        seed=seed,
        domain=domain,
        grid=gs,
        flow_props=flow,
        thermal_props=thermal,
        initial_temperature=float(_get(raw, "temperature.initial", 100.0)),
        injection_temperature=float(_get(raw, "temperature.injection", 20.0)),
        boundary_temperature=float(bt) if bt is not None else None,
        boundary_pressures=bps,
        wells=wells,
        schedule=schedule,
        coarsen=coarsen,
        basis_mode=mode,
        smoothing=smoothing,
        refinement_levels=levels,
        smoothing_iterations=sit,
        fine_reference=bool(_get(raw, "outputs.fine_reference", True)),
        write_vtk=bool(_get(raw, "outputs.vtk", False)),
        write_csv=bool(_get(raw, "outputs.csv", True)),
        peclet_length=_quantity(raw, "outputs.peclet_length", "length", 1000.0),
    )


def bundled_scenario_path(name):
    """Path to a packaged scenario configuration by bare name."""
    res = importlib.resources.files("fracheat") / "scenarios" / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return res
