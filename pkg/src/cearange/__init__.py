"""cearange: a deterministic cyber range for controlled-environment agriculture.

The package simulates one grow zone — air physics, PID/bang-bang control,
field-bus protocol codecs, anomaly detection, and fleet learning — runs
scripted attack scenarios against it, and reports the physical, safety, and
financial impact with tamper-evident logging.

Typical entry points:

>>> from cearange import engine, attacks
>>> spec = engine.load_scenario(attacks.fixture_scenario("t055.yaml"))
>>> report = engine.run_scenario(spec)
>>> report.safety_events[0]["kind"]
'co2-pel'
"""

from . import attacks, control, detection, engine, fleet, physics, protocols, report, risk, units
from .engine import load_scenario, run_scenario
from .errors import CeaRangeError, ConfigError, NumericDivergenceError
from .protocols import DecodeError
from .report import SimReport, write_csv_bundle, write_json_report

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "attacks",
    "control",
    "detection",
    "engine",
    "fleet",
    "physics",
    "protocols",
    "report",
    "risk",
    "units",
    "load_scenario",
    "run_scenario",
    "SimReport",
    "write_json_report",
    "write_csv_bundle",
    "CeaRangeError",
    "ConfigError",
    "DecodeError",
    "NumericDivergenceError",
]
