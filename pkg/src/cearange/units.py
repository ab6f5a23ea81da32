"""Unit-suffixed quantity parsing for scenario and fixture files.

Every physical quantity in a scenario file is written as ``"<number> <unit>"``
(e.g. ``"10000 ft3"``, ``"50 scfh"``, ``"12 h"``).  Each config field declares
the dimension it expects; the parser converts to that dimension's canonical
unit and rejects mismatches.  Conversion constants are fixed:

    1 ft3  = 0.0283168 m3
    1 BTU  = 1055.06 J
    1 sqft = 0.09290304 m2   (0.3048 m per foot, squared)
    1 scfh = 0.0283168 m3/h
"""

from __future__ import annotations

from .errors import ConfigError

FT3_TO_M3 = 0.0283168
BTU_TO_J = 1055.06
SQFT_TO_M2 = 0.09290304
SCFH_TO_M3_PER_H = FT3_TO_M3
BTU_PER_SQFT_HR_TO_W_PER_M2 = BTU_TO_J / SQFT_TO_M2 / 3600.0

# unit suffix -> (dimension, factor to the dimension's canonical unit)
_UNIT_TABLE: dict[str, tuple[str, float]] = {
    # canonical units (factor 1.0)
    "degc": ("temperature", 1.0),
    "pct_rh": ("humidity", 1.0),
    "ppm": ("co2", 1.0),
    "kpa": ("pressure", 1.0),
    "m3": ("volume", 1.0),
    "m3_per_h": ("flow", 1.0),
    "w_per_m2": ("heat_flux", 1.0),
    "m2": ("area", 1.0),
    "s": ("time", 1.0),
    "w": ("power", 1.0),
    "w_per_k": ("conductance", 1.0),
    "j_per_k": ("heat_capacity", 1.0),
    "kg_per_h": ("mass_flow", 1.0),
    "ach": ("air_changes", 1.0),
    "cm_per_day": ("growth_rate", 1.0),
    "usd_per_sqft": ("areal_value", 1.0),
    "ms_cm": ("conductivity", 1.0),
    "pct": ("percent", 1.0),
    "ppm_per_h": ("co2_rate", 1.0),
    "kg": ("mass", 1.0),
    "kg_per_h_kpa": ("transpiration", 1.0),
    # converted units
    "ft3": ("volume", FT3_TO_M3),
    "scfh": ("flow", SCFH_TO_M3_PER_H),
    "btu_per_sqft_hr": ("heat_flux", BTU_PER_SQFT_HR_TO_W_PER_M2),
    "sqft": ("area", SQFT_TO_M2),
    "min": ("time", 60.0),
    "h": ("time", 3600.0),
    "kw": ("power", 1000.0),
}

CANONICAL_UNIT: dict[str, str] = {
    "temperature": "degC",
    "humidity": "pct_rh",
    "co2": "ppm",
    "pressure": "kPa",
    "volume": "m3",
    "flow": "m3_per_h",
    "heat_flux": "w_per_m2",
    "area": "m2",
    "time": "s",
    "power": "w",
    "conductance": "w_per_k",
    "heat_capacity": "j_per_k",
    "mass_flow": "kg_per_h",
    "air_changes": "ach",
    "growth_rate": "cm_per_day",
    "areal_value": "usd_per_sqft",
    "conductivity": "ms_cm",
    "percent": "pct",
    "co2_rate": "ppm_per_h",
    "mass": "kg",
    "transpiration": "kg_per_h_kpa",
}


def parse_quantity(raw: object, dimension: str, field: str = "") -> float:
    """Parse ``"<number> <unit>"`` into the canonical value for *dimension*.

    Bare numbers are accepted only for ``dimension="dimensionless"``.
    Raises ConfigError on unknown units, dimension mismatch, or bad syntax.
    """
    where = f" for field '{field}'" if field else ""
    if dimension == "dimensionless":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"expected a bare number{where}, got {raw!r}")
        return float(raw)
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raise ConfigError(
            f"missing unit suffix{where}: write e.g. '{raw} "
            f"{CANONICAL_UNIT[dimension]}'"
        )
    if not isinstance(raw, str):
        raise ConfigError(f"expected '<number> <unit>'{where}, got {raw!r}")
    parts = raw.split()
    if len(parts) != 2:
        raise ConfigError(f"expected '<number> <unit>'{where}, got {raw!r}")
    try:
        value = float(parts[0])
    except ValueError:
        raise ConfigError(f"bad numeric value{where}: {parts[0]!r}") from None
    unit = parts[1].lower()
    if unit not in _UNIT_TABLE:
        raise ConfigError(f"unknown unit {parts[1]!r}{where}")
    unit_dim, factor = _UNIT_TABLE[unit]
    if unit_dim != dimension:
        raise ConfigError(
            f"unit {parts[1]!r} is a {unit_dim} unit but{where or ' this field'}"
            f" a {dimension} quantity is required"
        )
    return value * factor


def format_quantity(value: float, dimension: str) -> str:
    """Render a canonical value back to ``"<number> <unit>"`` text."""
    return f"{value:g} {CANONICAL_UNIT[dimension]}"
