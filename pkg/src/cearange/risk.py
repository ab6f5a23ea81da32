"""Threat scoring, catalog handling, crop damage model, financial impact.

DREAD composites are the sum of five 1-10 components (components are
optional — published records may carry composites only) and band as:
40-50 Critical, 30-39 High, 20-29 Medium, below 20 Low.  STRIDE categories
are assigned per DFD element kind.  The damage model runs stressor clocks
over a simulated state timeline and converts damage events into dollar
losses using per-square-foot cycle value.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import yaml

from .control import Schedule
from .errors import CeaRangeError, ConfigError
from .physics import IDLH_CO2_PPM, PEL_CO2_PPM, OptimalRanges
from .units import SQFT_TO_M2

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .report import TimelineRow

DREAD_COMPONENTS = (
    "damage",
    "reproducibility",
    "exploitability",
    "affected_users",
    "discoverability",
)

STRIDE_CATEGORIES = ("S", "T", "R", "I", "D", "E")

COMPLETE_CATALOG_COUNTS = {"S": 22, "T": 28, "R": 15, "I": 18, "D": 19, "E": 21}
COMPLETE_CATALOG_TOTAL = 123

_TECHNIQUE_RE = re.compile(r"^T\d{4}(\.\d{3})?$")
_THREAT_ID_RE = re.compile(r"^T\d{3}$")


class CatalogCountError(ConfigError):
    """A complete-flagged catalog fails the per-category count gate."""


class UnknownThreatError(ConfigError):
    """A threat id is not present in the loaded catalog."""


@dataclass(frozen=True)
class DreadScore:
    composite: int
    band: str
    components: tuple[int, ...] | None = None


def dread_band(composite: int) -> str:
    if composite >= 40:
        return "Critical"
    if composite >= 30:
        return "High"
    if composite >= 20:
        return "Medium"
    return "Low"


def dread_score(
    components: Mapping[str, int] | Sequence[int] | None = None,
    composite: int | None = None,
) -> DreadScore:
    """Build a validated DREAD score from components, a composite, or both."""
    comp_tuple: tuple[int, ...] | None = None
    if components is not None:
        if isinstance(components, Mapping):
            missing = [k for k in DREAD_COMPONENTS if k not in components]
            if missing:
                raise ConfigError(f"missing DREAD components: {missing}")
            values = [components[k] for k in DREAD_COMPONENTS]
        else:
            values = list(components)
        if len(values) != 5:
            raise ConfigError("DREAD needs exactly five components")
        for v in values:
            if not isinstance(v, int) or not (1 <= v <= 10):
                raise ConfigError(f"DREAD component {v!r} outside 1..10")
        comp_tuple = tuple(values)
        total = sum(comp_tuple)
        if composite is not None and composite != total:
            raise ConfigError(f"composite {composite} != component sum {total}")
        composite = total
    if composite is None:
        raise ConfigError("need DREAD components or a composite")
    if not isinstance(composite, int) or not (5 <= composite <= 50):
        raise ConfigError(f"DREAD composite {composite!r} outside 5..50")
    return DreadScore(composite=composite, band=dread_band(composite), components=comp_tuple)


_STRIDE_PER_ELEMENT = {
    "process": ("S", "T", "R", "I", "D", "E"),
    "data-store": ("T", "R", "I", "D"),
    "data-flow": ("T", "I", "D"),
    "external-entity": ("S", "R"),
}


def stride_for_element(element_kind: str) -> tuple[str, ...]:
    """Applicable STRIDE categories for a DFD element kind."""
    try:
        return _STRIDE_PER_ELEMENT[element_kind]
    except KeyError:
        raise ConfigError(
            f"unknown DFD element kind {element_kind!r}; expected one of "
            f"{sorted(_STRIDE_PER_ELEMENT)}"
        ) from None


@dataclass(frozen=True)
class ThreatRecord:
    threat_id: str
    title: str
    stride: str
    dread: DreadScore
    element_kind: str
    techniques: tuple[str, ...] = ()
    trust_boundary: str = ""
    description: str = ""

    def __post_init__(self) -> None:
        if not _THREAT_ID_RE.match(self.threat_id):
            raise ConfigError(f"threat id {self.threat_id!r} must look like T007")
        if self.stride not in STRIDE_CATEGORIES:
            raise ConfigError(f"bad STRIDE category {self.stride!r}")
        if self.element_kind not in _STRIDE_PER_ELEMENT:
            raise ConfigError(f"bad element kind {self.element_kind!r}")
        if self.stride not in stride_for_element(self.element_kind):
            raise ConfigError(
                f"{self.threat_id}: category {self.stride} does not apply to a "
                f"{self.element_kind}"
            )
        for tech in self.techniques:
            if not _TECHNIQUE_RE.match(tech):
                raise ConfigError(f"bad technique id {tech!r}")


class ThreatCatalog:
    """An order-insensitive collection of ThreatRecords with a complete flag."""

    def __init__(self, records: Iterable[ThreatRecord], complete: bool = False):
        self._by_id: dict[str, ThreatRecord] = {}
        for rec in records:
            if rec.threat_id in self._by_id:
                raise ConfigError(f"duplicate threat id {rec.threat_id}")
            self._by_id[rec.threat_id] = rec
        self.complete = complete
        if complete:
            self._validate_complete()

    def _validate_complete(self) -> None:
        counts = self.stride_counts()
        if counts != COMPLETE_CATALOG_COUNTS or len(self._by_id) != COMPLETE_CATALOG_TOTAL:
            raise CatalogCountError(
                "complete catalog must hold exactly "
                f"{COMPLETE_CATALOG_COUNTS} (total {COMPLETE_CATALOG_TOTAL}); "
                f"got {counts} (total {len(self._by_id)})"
            )

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, threat_id: str) -> bool:
        return threat_id in self._by_id

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_id))

    def records(self) -> tuple[ThreatRecord, ...]:
        return tuple(self._by_id[i] for i in self.ids())

    def get(self, threat_id: str) -> ThreatRecord:
        try:
            return self._by_id[threat_id]
        except KeyError:
            raise UnknownThreatError(f"threat {threat_id!r} not in catalog") from None

    def stride_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in STRIDE_CATEGORIES}
        for rec in self._by_id.values():
            counts[rec.stride] += 1
        return counts

    def band_counts(self) -> dict[str, int]:
        counts = {"Critical": 0, "High": 0, "Medium": 0, "Low": 0}
        for rec in self._by_id.values():
            counts[rec.dread.band] += 1
        return counts

    def technique_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for rec in self._by_id.values():
            for tech in rec.techniques:
                hist[tech] = hist.get(tech, 0) + 1
        return dict(sorted(hist.items(), key=lambda kv: (-kv[1], kv[0])))

    def attack_map(self, threat_id: str) -> tuple[str, ...]:
        return self.get(threat_id).techniques


def catalog_from_dict(doc: Mapping) -> ThreatCatalog:
    if not isinstance(doc, Mapping) or "threats" not in doc:
        raise ConfigError("catalog document needs a 'threats' list")
    header = doc.get("catalog", {})
    complete = bool(header.get("complete", False))
    records = []
    for item in doc["threats"]:
        dread_field = item.get("dread")
        if isinstance(dread_field, Mapping):
            score = dread_score(
                components=dread_field.get("components"),
                composite=dread_field.get("composite"),
            )
        else:
            score = dread_score(composite=dread_field)
        records.append(
            ThreatRecord(
                threat_id=str(item.get("id", "")),
                title=str(item.get("title", "")),
                stride=str(item.get("stride", "")),
                dread=score,
                element_kind=str(item.get("element", "process")),
                techniques=tuple(item.get("techniques", ())),
                trust_boundary=str(item.get("trust_boundary", "")),
                description=str(item.get("description", "")),
            )
        )
    return ThreatCatalog(records, complete=complete)


def load_catalog(path) -> ThreatCatalog:
    """Load a YAML threat catalog; applies the completeness gate if flagged."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"catalog {path}: bad YAML ({exc})") from None
    return catalog_from_dict(doc)


def builtin_catalog() -> ThreatCatalog:
    """The threat records shipped with the package (partial catalog)."""
    from importlib.resources import files

    path = files("cearange").joinpath("fixtures/catalog/threats.yaml")
    return catalog_from_dict(yaml.safe_load(path.read_text(encoding="utf-8")))


# Technique frequencies a full facility walkthrough is expected to produce.
EXPECTED_TECHNIQUE_COUNTS = {"T0814": 17, "T0872": 16, "T0848": 14, "T0836": 13}
EXPECTED_DISTINCT_TECHNIQUES = 19

_FILLER_TECHNIQUES = (
    "T0855", "T0811", "T0889", "T0859",  # also used by shipped records
    "T0803", "T0806", "T0819", "T0827", "T0831", "T0835",
    "T0843", "T0846", "T0852", "T0866", "T0869",
)

_SYNTH_SURFACES = (
    "sensor gateway", "irrigation PLC", "enrichment controller", "climate historian",
    "edge message broker", "nutrient dosing pump", "lighting gateway", "VPN concentrator",
    "badge service", "firmware update service", "vendor remote portal", "weather feed",
)

_SYNTH_TITLE_VERBS = {
    "S": "Spoofed identity toward",
    "T": "Tampered state in",
    "R": "Unattributable action on",
    "I": "Data exposure from",
    "D": "Denial of service against",
    "E": "Privilege escalation through",
}

_SYNTH_ELEMENTS = {
    "S": ("process", "external-entity"),
    "T": ("process", "data-store", "data-flow"),
    "R": ("process", "data-store", "external-entity"),
    "I": ("process", "data-store", "data-flow"),
    "D": ("process", "data-store", "data-flow"),
    "E": ("process",),
}

_SYNTH_BOUNDARIES = ("field-to-edge", "edge-to-cloud", "vendor-remote", "operator-console")


def synthetic_complete_catalog() -> ThreatCatalog:
    """Deterministic 123-record catalog that passes the completeness gate.

    Extends the shipped records with synthetic ones until every STRIDE
    category hits its expected facility-walkthrough count, and assigns
    techniques so the histogram carries the expected top frequencies across
    exactly the expected number of distinct technique ids.  Used to exercise
    catalog-scale behavior without shipping 123 hand-written threats.
    """
    base = list(builtin_catalog().records())

    remaining = dict(COMPLETE_CATALOG_COUNTS)
    for rec in base:
        remaining[rec.stride] -= 1
    if any(v < 0 for v in remaining.values()):
        raise CeaRangeError("shipped records already exceed a completeness count")

    technique_slots: list[str] = []
    tech_counts: dict[str, int] = {}
    for rec in base:
        for tech in rec.techniques:
            tech_counts[tech] = tech_counts.get(tech, 0) + 1
    for tech, target in EXPECTED_TECHNIQUE_COUNTS.items():
        technique_slots.extend([tech] * (target - tech_counts.get(tech, 0)))
    filler_needed = sum(remaining.values()) - len(technique_slots)
    quota, extra = divmod(filler_needed, len(_FILLER_TECHNIQUES))
    for i, tech in enumerate(_FILLER_TECHNIQUES):
        technique_slots.extend([tech] * (quota + (1 if i < extra else 0)))

    records = list(base)
    next_id = 100
    slot = 0
    for stride in STRIDE_CATEGORIES:
        for k in range(remaining[stride]):
            element = _SYNTH_ELEMENTS[stride][k % len(_SYNTH_ELEMENTS[stride])]
            surface = _SYNTH_SURFACES[(next_id + k) % len(_SYNTH_SURFACES)]
            components = tuple(3 + (next_id * (j + 2) + k) % 7 for j in range(5))
            records.append(
                ThreatRecord(
                    threat_id=f"T{next_id}",
                    title=f"{_SYNTH_TITLE_VERBS[stride]} {surface}",
                    stride=stride,
                    dread=dread_score(components=components),
                    element_kind=element,
                    techniques=(technique_slots[slot],),
                    trust_boundary=_SYNTH_BOUNDARIES[next_id % len(_SYNTH_BOUNDARIES)],
                    description=f"Synthetic {stride}-category record for catalog-scale checks.",
                )
            )
            next_id += 1
            slot += 1
    return ThreatCatalog(records, complete=True)


# --------------------------------------------------------------------------
# Crop damage model
# --------------------------------------------------------------------------

SUBSTRATES = ("aeroponic", "nft", "rockwool", "coco")

AEROPONIC_ONSET_NOTE = (
    "aeroponic drought onset of 0.25 h is a calibration default for a "
    "'minutes' failure window"
)


@dataclass(frozen=True)
class HeatStress:
    onset_c: float
    death_c: float
    onset_h: float
    total_loss_h: float


@dataclass(frozen=True)
class PathogenStress:
    rh_threshold_pct: float
    onset_h: float
    total_loss_h: float


@dataclass(frozen=True)
class PhotoperiodStress:
    violation_nights: int
    grace_min: float
    value_loss_range: tuple[float, float]


@dataclass(frozen=True)
class VpdLowStress:
    floor_kpa: float
    onset_h: float
    total_loss_h: float


@dataclass(frozen=True)
class CropProfile:
    name: str
    heat: HeatStress
    pathogen: PathogenStress
    drought_h: Mapping[str, tuple[float, float]]  # substrate -> (onset, total-loss) hours
    photoperiod: PhotoperiodStress | None
    optimal: OptimalRanges
    growth_curve: tuple[tuple[float, float], ...]  # (cumulative optimal h, cm/day)
    value_per_sqft_usd: float
    vpd_low: VpdLowStress | None = None
    wilting_vwc_pct: float = 10.0

    def __post_init__(self) -> None:
        for sub in self.drought_h:
            if sub not in SUBSTRATES:
                raise ConfigError(f"unknown substrate {sub!r}")
        for sub, (onset, total) in self.drought_h.items():
            if onset <= 0 or total < onset:
                raise ConfigError(f"bad drought hours for {sub}: ({onset}, {total})")
        if not self.growth_curve:
            raise ConfigError("growth curve needs at least one point")

    def drought_hours(self, substrate: str) -> tuple[float, float]:
        try:
            return tuple(self.drought_h[substrate])  # type: ignore[return-value]
        except KeyError:
            raise ConfigError(f"profile {self.name} has no substrate {substrate!r}") from None

    def growth_rate_cm_per_day(self, optimal_hours: float) -> float:
        pts = self.growth_curve
        if optimal_hours <= pts[0][0]:
            return pts[0][1]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if optimal_hours <= x1:
                frac = (optimal_hours - x0) / (x1 - x0)
                return y0 + frac * (y1 - y0)
        return pts[-1][1]


def builtin_crop_profiles() -> dict[str, CropProfile]:
    flowering = CropProfile(
        name="flowering-cannabis",
        heat=HeatStress(onset_c=30.0, death_c=45.0, onset_h=0.5, total_loss_h=4.0),
        pathogen=PathogenStress(rh_threshold_pct=85.0, onset_h=48.0, total_loss_h=168.0),
        drought_h={
            "aeroponic": (0.25, 1.0),
            "nft": (2.0, 4.0),
            "rockwool": (6.0, 24.0),
            "coco": (12.0, 48.0),
        },
        photoperiod=PhotoperiodStress(
            violation_nights=2, grace_min=10.0, value_loss_range=(0.90, 0.95)
        ),
        optimal=OptimalRanges(temp_c=(20.0, 28.0), rh_pct=(45.0, 70.0), co2_ppm=(800.0, 1600.0)),
        growth_curve=((0.0, 1.0), (240.0, 1.8), (600.0, 2.2)),
        value_per_sqft_usd=165.0,
    )
    tomato = CropProfile(
        name="greenhouse-tomato",
        heat=HeatStress(onset_c=32.0, death_c=45.0, onset_h=1.0, total_loss_h=8.0),
        pathogen=PathogenStress(rh_threshold_pct=85.0, onset_h=48.0, total_loss_h=168.0),
        drought_h={
            "nft": (2.0, 4.0),
            "rockwool": (6.0, 24.0),
            "coco": (12.0, 48.0),
        },
        photoperiod=None,
        optimal=OptimalRanges(temp_c=(18.0, 27.0), rh_pct=(55.0, 80.0), co2_ppm=(600.0, 1200.0)),
        growth_curve=((0.0, 1.5), (300.0, 2.5)),
        value_per_sqft_usd=45.0,
    )
    leafy = CropProfile(
        name="leafy-vpd-sensitive",
        heat=HeatStress(onset_c=33.0, death_c=45.0, onset_h=2.0, total_loss_h=12.0),
        pathogen=PathogenStress(rh_threshold_pct=92.0, onset_h=72.0, total_loss_h=240.0),
        drought_h={
            "nft": (2.0, 4.0),
            "rockwool": (6.0, 24.0),
        },
        photoperiod=None,
        optimal=OptimalRanges(temp_c=(18.0, 28.0), rh_pct=(50.0, 82.0), co2_ppm=(400.0, 1500.0)),
        growth_curve=((0.0, 0.8), (200.0, 1.2)),
        value_per_sqft_usd=30.0,
        vpd_low=VpdLowStress(floor_kpa=0.5, onset_h=10.0, total_loss_h=30.0),
    )
    return {p.name: p for p in (flowering, tomato, leafy)}


@dataclass(frozen=True)
class DamageEvent:
    kind: str  # e.g. "heat-onset", "pathogen-total-loss", "photoperiod-hermaphroditism"
    t_s: float
    stressor: str
    severity: float  # clamped stressor progress in [0, 1] at the event instant
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SafetyEvent:
    kind: str  # "co2-pel" | "co2-idlh"
    t_s: float
    level_ppm: float
    threshold_ppm: float


@dataclass
class DamageAssessment:
    events: list[DamageEvent]
    severity_by_stressor: dict[str, float]
    loss_fraction: float
    hermaphroditism: bool
    notes: list[str]


class _Clock:
    """Accumulates exposure hours and emits onset / total-loss events."""

    def __init__(self, stressor: str, onset_h: float, total_loss_h: float, details: dict):
        self.stressor = stressor
        self.onset_h = onset_h
        self.total_loss_h = total_loss_h
        self.details = details
        self.hours = 0.0
        self.onset_emitted = False
        self.total_emitted = False

    @property
    def severity(self) -> float:
        if self.total_loss_h <= 0:
            return 1.0 if self.hours > 0 else 0.0
        return min(self.hours / self.total_loss_h, 1.0)

    def advance(self, active: bool, t_s: float, dt_s: float, events: list[DamageEvent]) -> None:
        if not active:
            return
        self.hours += dt_s / 3600.0
        if not self.onset_emitted and self.hours >= self.onset_h:
            self.onset_emitted = True
            events.append(
                DamageEvent(
                    kind=f"{self.stressor}-onset",
                    t_s=t_s + dt_s,
                    stressor=self.stressor,
                    severity=self.severity,
                    details=dict(self.details, exposure_h=round(self.hours, 6)),
                )
            )
        if not self.total_emitted and self.hours >= self.total_loss_h:
            self.total_emitted = True
            events.append(
                DamageEvent(
                    kind=f"{self.stressor}-total-loss",
                    t_s=t_s + dt_s,
                    stressor=self.stressor,
                    severity=1.0,
                    details=dict(self.details, exposure_h=round(self.hours, 6)),
                )
            )


def assess_damage(
    rows: Sequence["TimelineRow"],
    crop: CropProfile,
    substrate: str,
    schedule: Schedule | None,
    dt_s: float,
    irrigation_interval_s: float | None = None,
) -> DamageAssessment:
    """Run all stressor clocks over a state timeline.

    Stressor clocks accumulate while their thresholds are exceeded; severity
    per stressor is clamped exposure / total-loss hours and never decreases.
    Photoperiod violations are counted per scheduled dark episode and seal a
    hermaphroditism event on the configured consecutive night.
    """
    events: list[DamageEvent] = []
    notes: list[str] = []

    heat = _Clock("heat", crop.heat.onset_h, crop.heat.total_loss_h, {"onset_c": crop.heat.onset_c})
    pathogen = _Clock(
        "pathogen",
        crop.pathogen.onset_h,
        crop.pathogen.total_loss_h,
        {"rh_threshold_pct": crop.pathogen.rh_threshold_pct},
    )
    drought_onset_h, drought_total_h = crop.drought_hours(substrate)
    drought = _Clock("drought", drought_onset_h, drought_total_h, {"substrate": substrate})
    vpd_clock = None
    if crop.vpd_low is not None:
        vpd_clock = _Clock(
            "vpd-low",
            crop.vpd_low.onset_h,
            crop.vpd_low.total_loss_h,
            {"floor_kpa": crop.vpd_low.floor_kpa},
        )

    death_emitted = False
    # photoperiod bookkeeping
    dark_prev = False
    episode_light_s = 0.0
    consecutive_violated = 0
    hermaph = False
    episode_sealed = False

    last_pulse_t = rows[0].t_s if rows else 0.0

    for row in rows[:-1] if len(rows) > 1 else rows:
        t = row.t_s
        if row.irrigation_pulse:
            last_pulse_t = t

        heat.advance(row.temp_c > crop.heat.onset_c, t, dt_s, events)
        if not death_emitted and row.temp_c >= crop.heat.death_c:
            death_emitted = True
            events.append(
                DamageEvent(
                    kind="heat-death",
                    t_s=t,
                    stressor="heat",
                    severity=1.0,
                    details={"death_c": crop.heat.death_c, "temp_c": round(row.temp_c, 4)},
                )
            )
        pathogen.advance(row.rh_pct > crop.pathogen.rh_threshold_pct, t, dt_s, events)

        silence_limit = irrigation_interval_s
        if silence_limit is None and schedule is not None:
            silence_limit = schedule.eval(t % 86400.0).irrigation_interval_s
        silent = silence_limit is not None and (t - last_pulse_t) > silence_limit
        wilted = row.vwc_pct < crop.wilting_vwc_pct
        drought.advance(silent or wilted, t, dt_s, events)

        if vpd_clock is not None:
            vpd_clock.advance(row.vpd_kpa < crop.vpd_low.floor_kpa, t, dt_s, events)

        if crop.photoperiod is not None and schedule is not None:
            dark_now = schedule.eval(t % 86400.0).light_level == 0
            if dark_now and not dark_prev:
                episode_light_s = 0.0
                episode_sealed = False
            if dark_now:
                if row.light_level > 0:
                    episode_light_s += dt_s
                if (
                    not episode_sealed
                    and episode_light_s / 60.0 > crop.photoperiod.grace_min
                ):
                    episode_sealed = True
                    consecutive_violated += 1
                    if not hermaph and consecutive_violated >= crop.photoperiod.violation_nights:
                        hermaph = True
                        lo, hi = crop.photoperiod.value_loss_range
                        events.append(
                            DamageEvent(
                                kind="photoperiod-hermaphroditism",
                                t_s=t + dt_s,
                                stressor="photoperiod",
                                severity=(lo + hi) / 2.0,
                                details={
                                    "consecutive_nights": consecutive_violated,
                                    "value_loss_range": [lo, hi],
                                },
                            )
                        )
            if not dark_now and dark_prev and not episode_sealed:
                consecutive_violated = 0  # a clean night resets the run
            dark_prev = dark_now

    severity = {
        "heat": 1.0 if death_emitted else heat.severity,
        "pathogen": pathogen.severity,
        "drought": drought.severity,
    }
    if vpd_clock is not None:
        severity["vpd-low"] = vpd_clock.severity
    if crop.photoperiod is not None:
        lo, hi = crop.photoperiod.value_loss_range
        severity["photoperiod"] = (lo + hi) / 2.0 if hermaph else 0.0

    loss_fraction = max(severity.values(), default=0.0)
    if substrate == "aeroponic" and any(e.stressor == "drought" for e in events):
        notes.append(AEROPONIC_ONSET_NOTE)

    events.sort(key=lambda e: (e.t_s, e.kind))
    return DamageAssessment(
        events=events,
        severity_by_stressor=severity,
        loss_fraction=loss_fraction,
        hermaphroditism=hermaph,
        notes=notes,
    )


def assess_safety(rows: Sequence["TimelineRow"]) -> list[SafetyEvent]:
    """First crossings of the CO2 occupational thresholds (true state)."""
    events: list[SafetyEvent] = []
    for threshold, kind in ((PEL_CO2_PPM, "co2-pel"), (IDLH_CO2_PPM, "co2-idlh")):
        for row in rows:
            if row.co2_ppm >= threshold:
                events.append(
                    SafetyEvent(
                        kind=kind,
                        t_s=row.t_s,
                        level_ppm=round(row.co2_ppm, 4),
                        threshold_ppm=threshold,
                    )
                )
                break
    return events


@dataclass(frozen=True)
class FinancialAssessment:
    cycle_value_usd: float
    loss_fraction: float
    loss_usd: float
    loss_range_usd: tuple[float, float] | None
    floor_area_sqft: float
    assumptions: tuple[str, ...]


def assess_financials(
    damage: DamageAssessment,
    crop: CropProfile,
    floor_area_m2: float,
) -> FinancialAssessment:
    """Dollar impact of a damage assessment at per-sqft cycle value.

    A hermaphroditism event uses the midpoint of the profile's value-loss
    fraction range, with the full range reported alongside.
    """
    if floor_area_m2 <= 0:
        raise ConfigError("floor area must be positive")
    area_sqft = floor_area_m2 / SQFT_TO_M2
    cycle_value = area_sqft * crop.value_per_sqft_usd
    fraction = damage.loss_fraction
    loss_range = None
    if damage.hermaphroditism and crop.photoperiod is not None:
        lo, hi = crop.photoperiod.value_loss_range
        other = max(
            (v for k, v in damage.severity_by_stressor.items() if k != "photoperiod"),
            default=0.0,
        )
        if (lo + hi) / 2.0 >= other:
            loss_range = (cycle_value * lo, cycle_value * hi)
    loss = cycle_value * fraction
    if not (math.isfinite(loss) and loss >= 0.0):
        raise CeaRangeError("financial loss computation produced a bad value")
    return FinancialAssessment(
        cycle_value_usd=cycle_value,
        loss_fraction=fraction,
        loss_usd=loss,
        loss_range_usd=loss_range,
        floor_area_sqft=area_sqft,
        assumptions=tuple(damage.notes),
    )
