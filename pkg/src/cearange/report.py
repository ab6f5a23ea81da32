"""Run reports: the state timeline, events, assessments, digests, serializers.

Every float that enters a report is rounded through a fixed decimal format
at emission time (4 decimals for physical fields, 6 for scores and gains),
so the in-memory timeline, the JSON document, and the CSV bundle all carry
the identical values and the report digest is byte-stable across platforms.
Reports deliberately contain no wall-clock timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .errors import ConfigError

REPORT_FORMAT_VERSION = "1"
HASH_ALGORITHM = "sha256"


def round_env(value: float) -> float:
    """Physical quantities: 4 decimal places, stable under re-serialization."""
    return float(f"{value:.4f}")


def round_score(value: float) -> float:
    """Detector scores and gains: 6 decimal places."""
    return float(f"{value:.6f}")


def canonical_json(doc: object) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_of(doc: object) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# Timeline
# --------------------------------------------------------------------------

# column name -> cell kind ("int", "f4", "f6", "bool"; "?" marks optional)
_TIMELINE_SCHEMA: tuple[tuple[str, str], ...] = (
    ("t_s", "int"),
    ("temp_c", "f4"),
    ("rh_pct", "f4"),
    ("co2_ppm", "f4"),
    ("vpd_kpa", "f4"),
    ("vwc_pct", "f4"),
    ("light_level", "int"),
    ("moisture_unclamped_kg", "f4"),
    ("temp_read_c", "f4"),
    ("rh_read_pct", "f4"),
    ("co2_read_ppm", "f4"),
    ("vwc_read_pct", "f4"),
    ("light_read", "int"),
    ("hvac_fraction", "f4"),
    ("dehumidifier_on", "bool"),
    ("co2_solenoid", "bool"),
    ("irrigation_pulse", "bool"),
    ("light_cmd", "int"),
    ("kp", "f6"),
    ("ki", "f6"),
    ("kd", "f6"),
    ("autonomy_level", "int"),
    ("ae_score", "f6?"),
    ("ae_anomalous", "bool?"),
)

TIMELINE_COLUMNS: tuple[str, ...] = tuple(name for name, _ in _TIMELINE_SCHEMA)


@dataclass
class TimelineRow:
    """One emitted simulation step: true state, sensor readings, commands.

    True state fields come first (the physics), then the post-tap sensor
    readings the controller and detector actually saw, then the actuator
    commands applied over the step, the acting PID gains, and the detector
    score of the window that completed at this step (when one did).
    """

    t_s: int
    temp_c: float
    rh_pct: float
    co2_ppm: float
    vpd_kpa: float
    vwc_pct: float
    light_level: int
    moisture_unclamped_kg: float
    temp_read_c: float
    rh_read_pct: float
    co2_read_ppm: float
    vwc_read_pct: float
    light_read: int
    hvac_fraction: float
    dehumidifier_on: bool
    co2_solenoid: bool
    irrigation_pulse: bool
    light_cmd: int
    kp: float
    ki: float
    kd: float
    autonomy_level: int
    ae_score: float | None = None
    ae_anomalous: bool | None = None

    def as_list(self) -> list:
        return [getattr(self, name) for name in TIMELINE_COLUMNS]


def _cell_to_text(value, kind: str) -> str:
    if kind.endswith("?"):
        if value is None:
            return ""
        kind = kind[:-1]
    if kind == "int":
        return str(int(value))
    if kind == "bool":
        return "1" if value else "0"
    if kind == "f4":
        return f"{value:.4f}"
    return f"{value:.6f}"


def _cell_from_text(text: str, kind: str):
    if kind.endswith("?"):
        if text == "":
            return None
        kind = kind[:-1]
    if kind == "int":
        return int(text)
    if kind == "bool":
        return text == "1"
    return float(text)


def write_timeline_csv(rows: Sequence[TimelineRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMELINE_COLUMNS)
        for row in rows:
            writer.writerow(
                _cell_to_text(getattr(row, name), kind) for name, kind in _TIMELINE_SCHEMA
            )


def read_timeline_csv(path) -> list[TimelineRow]:
    """Parse a timeline CSV back into rows (loss-free round trip)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TIMELINE_COLUMNS:
            raise ConfigError("timeline CSV header does not match the documented columns")
        rows = []
        for record in reader:
            if len(record) != len(_TIMELINE_SCHEMA):
                raise ConfigError(f"timeline CSV row has {len(record)} cells, "
                                  f"expected {len(_TIMELINE_SCHEMA)}")
            values = {
                name: _cell_from_text(text, kind)
                for (name, kind), text in zip(_TIMELINE_SCHEMA, record)
            }
            rows.append(TimelineRow(**values))
    return rows


# --------------------------------------------------------------------------
# Report container
# --------------------------------------------------------------------------


@dataclass
class SimReport:
    """Full output of one scenario run; serializes to a versioned document."""

    scenario_name: str
    threat_id: str | None
    seed: int
    dt_s: int
    duration_s: int
    scenario_digest: str
    build_id: str
    timeline: list[TimelineRow]
    damage_events: list[dict]
    safety_events: list[dict]
    severity_by_stressor: dict
    loss_fraction: float
    hermaphroditism: bool
    financials: dict | None
    detection: dict
    kpis: dict
    risk_context: dict | None
    events: list[dict]
    log_root_hash: str
    log_entry_count: int
    notes: list[str] = field(default_factory=list)
    hash_algorithm: str = HASH_ALGORITHM
    format_version: str = REPORT_FORMAT_VERSION

    def to_doc(self) -> dict:
        return {
            "format_version": self.format_version,
            "header": {
                "scenario_name": self.scenario_name,
                "threat_id": self.threat_id,
                "seed": self.seed,
                "dt_s": self.dt_s,
                "duration_s": self.duration_s,
                "scenario_digest": self.scenario_digest,
                "build_id": self.build_id,
                "hash_algorithm": self.hash_algorithm,
            },
            "timeline": {
                "columns": list(TIMELINE_COLUMNS),
                "rows": [row.as_list() for row in self.timeline],
            },
            "damage_events": self.damage_events,
            "safety_events": self.safety_events,
            "severity_by_stressor": self.severity_by_stressor,
            "loss_fraction": self.loss_fraction,
            "hermaphroditism": self.hermaphroditism,
            "financials": self.financials,
            "detection": self.detection,
            "kpis": self.kpis,
            "risk_context": self.risk_context,
            "events": self.events,
            "event_log": {
                "algorithm": self.hash_algorithm,
                "root_hash": self.log_root_hash,
                "entry_count": self.log_entry_count,
            },
            "notes": self.notes,
        }

    def digest(self) -> str:
        return digest_of(self.to_doc())


_REQUIRED_DOC_KEYS = (
    "format_version",
    "header",
    "timeline",
    "damage_events",
    "safety_events",
    "severity_by_stressor",
    "loss_fraction",
    "hermaphroditism",
    "financials",
    "detection",
    "kpis",
    "risk_context",
    "events",
    "event_log",
    "notes",
)


def validate_report_doc(doc: dict) -> None:
    """Reject malformed or unknown-version report documents."""
    if not isinstance(doc, dict):
        raise ConfigError("report document must be a JSON object")
    version = doc.get("format_version")
    if version != REPORT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported report format version {version!r} "
            f"(this build reads version {REPORT_FORMAT_VERSION!r})"
        )
    missing = [key for key in _REQUIRED_DOC_KEYS if key not in doc]
    if missing:
        raise ConfigError(f"report document missing keys: {', '.join(missing)}")
    timeline = doc["timeline"]
    if tuple(timeline.get("columns", ())) != TIMELINE_COLUMNS:
        raise ConfigError("report timeline columns do not match this build's schema")
    width = len(TIMELINE_COLUMNS)
    for i, row in enumerate(timeline.get("rows", ())):
        if len(row) != width:
            raise ConfigError(f"timeline row {i} has {len(row)} cells, expected {width}")
    claimed = doc.get("report_digest")
    if claimed is not None:
        body = {k: v for k, v in doc.items() if k != "report_digest"}
        if digest_of(body) != claimed:
            raise ConfigError("report_digest does not match the document body")


def write_json_report(report: SimReport, path) -> str:
    """Write the versioned JSON document (digest embedded); returns the digest."""
    doc = report.to_doc()
    digest = digest_of(doc)
    doc["report_digest"] = digest
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(doc))
        fh.write("\n")
    return digest


def load_json_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    validate_report_doc(doc)
    return doc


def write_csv_bundle(report: SimReport, out_dir) -> str:
    """Write timeline.csv + report.json into out_dir; returns the digest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_timeline_csv(report.timeline, out / "timeline.csv")
    return write_json_report(report, out / "report.json")


def timeline_rows_equal(a: Sequence[TimelineRow], b: Sequence[TimelineRow]) -> bool:
    if len(a) != len(b):
        return False
    names = [f.name for f in fields(TimelineRow)]
    return all(
        getattr(ra, n) == getattr(rb, n) for ra, rb in zip(a, b) for n in names
    )
