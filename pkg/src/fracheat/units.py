"""Unit-carrying quantity strings, converted to SI at the config boundary.

Physical inputs are written as '<value> <unit>' (e.g. "1 dm^2/s",
"2170 kJ/m^3K", "10 years").  Temperatures are plain numbers in degrees
Celsius throughout.
"""

from __future__ import annotations

YEAR = 365.25 * 86400.0
DAY = 86400.0

# factor to SI per accepted unit token, grouped by dimension
_FACTORS = {
    "length": {"m": 1.0, "dm": 0.1, "cm": 0.01, "mm": 1e-3, "km": 1e3},
    "time": {
        "s": 1.0,
        "min": 60.0,
        "h": 3600.0,
        "hour": 3600.0,
        "hours": 3600.0,
        "day": DAY,
        "days": DAY,
        "year": YEAR,
        "years": YEAR,
        "yr": YEAR,
    },
    "rate": {"m^2/s": 1.0, "dm^2/s": 1e-2, "cm^2/s": 1e-4, "m2/s": 1.0, "dm2/s": 1e-2},
    "permeability": {"m^2": 1.0, "m2": 1.0, "D": 9.869233e-13, "mD": 9.869233e-16},
    "viscosity": {"Pa*s": 1.0, "Pa.s": 1.0, "Pas": 1.0, "cP": 1e-3, "mPa*s": 1e-3},
    "heat_capacity": {
        "J/m^3K": 1.0,
        "J/m3K": 1.0,
        "kJ/m^3K": 1e3,
        "kJ/m3K": 1e3,
        "MJ/m^3K": 1e6,
        "MJ/m3K": 1e6,
    },
    "conductivity": {"W/mK": 1.0, "W/(mK)": 1.0, "J/mKs": 1.0, "J/(mKs)": 1.0},
    "temperature": {"degC": 1.0, "C": 1.0},
    "dimensionless": {"": 1.0, "-": 1.0},
}


class UnitError(ValueError):
    """Unparseable quantity or unit of the wrong dimension."""


def parse_quantity(text, dimension):
    """Parse '<value> <unit>' into SI units of the given dimension.

    Bare numbers are accepted for 'dimensionless' and 'temperature' only;
    everything else must spell its unit.
    """
    table = _FACTORS.get(dimension)
    if table is None:
        raise UnitError(f"unknown dimension {dimension!r}")
    if isinstance(text, (int, float)):
        if dimension in ("dimensionless", "temperature"):
            return float(text)
        raise UnitError(
            f"quantity of dimension {dimension!r} needs an explicit unit, got {text!r}"
        )
    parts = str(text).split()
    if not parts:
        raise UnitError("empty quantity string")
    try:
        value = float(parts[0])
    except ValueError:
        raise UnitError(f"bad numeric value in {text!r}") from None
    unit = " ".join(parts[1:])
    if unit not in table:
        known = ", ".join(sorted(t for t in table if t))
        raise UnitError(
            f"unit {unit!r} not valid for {dimension} (expected one of: {known})"
        )
    return value * table[unit]


def format_years(seconds):
    return seconds / YEAR
