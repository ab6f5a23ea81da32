"""Attacker tooling: scenario interventions and ML-poisoning harnesses.

Two layers live here.  The intervention registry binds attack kinds that can
appear on a scenario timeline (bus taps, forged frames, GPIO latches,
process DoS, autonomy escalation, slow-poison builders, schedule swaps) to
validators and to the runtime hooks the engine calls each step.  The
harnesses below it run paired or multi-run experiments that do not fit a
single timeline — gain-tuner poisoning, detector drift poisoning, federated
backdoors, adversarial schedule search, and reward poisoning — and return
typed result records for the CLI and the test suite.

Every stealth-constrained builder validates its declared bound up front and
refuses configurations that would trip single-step alarms by construction:
an attack that cannot meet its own stealth contract is a config error, not a
quietly noisy run.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import control, detection, engine, fleet, physics, report, risk
from .control import AutonomyLevel, RLParams
from .errors import ConfigError
from .physics import ZoneInputs
from .protocols import (
    BacnetWritePropertyFrame,
    BusTap,
    DaliForwardFrame,
    ModbusRtuFrame,
    ModbusTcpFrame,
    BACNET_OBJECT_ANALOG_VALUE,
    BACNET_PROPERTY_PRESENT_VALUE,
)
from .units import parse_quantity

ATTACK_KINDS = (
    "bus-tap",
    "frame-forge",
    "gpio-latch",
    "process-dos",
    "autonomy-escalate",
    "tuner-poison",
    "drift-poison",
    "schedule-swap",
    "fed-backdoor",
    "reward-poison",
)

# Kinds that only make sense as paired/multi-run experiments; they are
# registered (the CLI lists them) but rejected on scenario timelines.
HARNESS_ONLY_KINDS = frozenset({"fed-backdoor", "reward-poison"})

LATCHABLE_ACTUATORS = (
    "hvac_fraction",
    "dehumidifier_on",
    "co2_solenoid",
    "irrigation_pulse",
    "light_level",
)

# A replace-style drift may move a sensor line by at most this many noise
# standard deviations per detection window and still count as stealthy.
DRIFT_STEALTH_NOISE_FACTOR = 3.0

_SENSOR_NOISE_ATTR = {
    engine.CH_TEMP: "temp_std_c",
    engine.CH_RH: "rh_std_pct",
    engine.CH_CO2: "co2_std_ppm",
    engine.CH_VWC: "vwc_std_pct",
}

_FIXTURE_SCENARIOS = Path(__file__).parent / "fixtures" / "scenarios"


def fixture_scenario(name: str) -> Path:
    path = _FIXTURE_SCENARIOS / name
    if not path.exists():
        raise ConfigError(f"no packaged scenario fixture named {name!r}")
    return path


def attack_kinds() -> tuple[str, ...]:
    return ATTACK_KINDS


# --------------------------------------------------------------------------
# Intervention validation
# --------------------------------------------------------------------------


def _params_keys(iv, allowed: set[str]) -> None:
    unknown = set(iv.params) - allowed
    if unknown:
        raise ConfigError(
            f"intervention {iv.intervention_id!r} ({iv.kind}) has unknown params: "
            f"{', '.join(sorted(map(str, unknown)))}"
        )


def _require(iv, key: str):
    if key not in iv.params:
        raise ConfigError(f"intervention {iv.intervention_id!r} ({iv.kind}) needs param '{key}'")
    return iv.params[key]


def _validate_bus_tap(iv, spec) -> None:
    _params_keys(iv, {"channel", "transform", "offset", "ramp_per_h", "replacement", "step"})
    channel = _require(iv, "channel")
    if not isinstance(channel, str) or not channel:
        raise ConfigError("bus-tap channel must be a non-empty string")
    transform = iv.params.get("transform", "bias")
    if transform not in BusTap.VALID_TRANSFORMS:
        raise ConfigError(f"bus-tap transform {transform!r} is not one of {BusTap.VALID_TRANSFORMS}")
    if transform == "replace" and "replacement" not in iv.params:
        raise ConfigError("bus-tap replace needs a 'replacement' value")
    for key in ("offset", "ramp_per_h", "replacement"):
        value = iv.params.get(key)
        if value is not None and not isinstance(value, (int, float)):
            raise ConfigError(f"bus-tap param '{key}' must be numeric")
    if iv.params.get("step") is not None:
        if parse_quantity(iv.params["step"], "time", field="step") <= 0:
            raise ConfigError("bus-tap step must be positive")


def _forge_frame_from_params(iv):
    """Build the forged frame (or raw bytes) now so bad params fail at load."""
    params = iv.params
    protocol = _require(iv, "protocol")
    if "hex" in params:
        try:
            return protocol, bytes.fromhex(str(params["hex"]))
        except ValueError as exc:
            raise ConfigError(f"frame-forge hex payload is not valid hex: {exc}") from exc
    if protocol == "bacnet":
        instance = int(params.get("instance", 1))
        value = parse_quantity(_require(iv, "setpoint"), "temperature", field="setpoint")
        return protocol, BacnetWritePropertyFrame(
            invoke_id=int(params.get("invoke_id", 1)),
            object_type=BACNET_OBJECT_ANALOG_VALUE,
            instance=instance,
            property_id=BACNET_PROPERTY_PRESENT_VALUE,
            value=float(value),
        )
    if protocol == "dali":
        level = _require(iv, "level")
        if not isinstance(level, int) or isinstance(level, bool):
            raise ConfigError("frame-forge dali level must be an integer")
        return protocol, DaliForwardFrame.broadcast_dapc(level)
    if protocol == "modbus-rtu":
        coil_on = bool(_require(iv, "coil_on"))
        data = b"\x00\x01" + (b"\xff\x00" if coil_on else b"\x00\x00")
        return protocol, ModbusRtuFrame(address=int(params.get("address", 11)), function=5, data=data)
    if protocol == "modbus-tcp":
        coil_on = bool(_require(iv, "coil_on"))
        data = b"\x00\x01" + (b"\xff\x00" if coil_on else b"\x00\x00")
        return protocol, ModbusTcpFrame(
            transaction_id=int(params.get("transaction_id", 999)),
            unit_id=int(params.get("unit", 1)),
            function=5,
            data=data,
        )
    raise ConfigError(f"frame-forge protocol {protocol!r} is not supported")


def _validate_frame_forge(iv, spec) -> None:
    _params_keys(
        iv,
        {
            "protocol", "channel", "every", "hex", "setpoint", "instance",
            "invoke_id", "level", "coil_on", "address", "transaction_id", "unit",
        },
    )
    channel = _require(iv, "channel")
    if not isinstance(channel, str) or not channel:
        raise ConfigError("frame-forge channel must be a non-empty string")
    _forge_frame_from_params(iv)
    if iv.params.get("every") is not None:
        every = parse_quantity(iv.params["every"], "time", field="every")
        if every <= 0 or int(every) % spec.clock.dt_s != 0:
            raise ConfigError("frame-forge 'every' must be a positive multiple of dt")


def _validate_gpio_latch(iv, spec) -> None:
    _params_keys(iv, {"actuator", "value", "suppress_co2_alarm"})
    actuator = _require(iv, "actuator")
    if actuator not in LATCHABLE_ACTUATORS:
        raise ConfigError(
            f"gpio-latch actuator must be one of {LATCHABLE_ACTUATORS}, got {actuator!r}"
        )
    value = _require(iv, "value")
    if actuator == "hvac_fraction":
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not (0 <= value <= 1):
            raise ConfigError("gpio-latch hvac_fraction value must be a number in [0, 1]")
    elif actuator == "light_level":
        if not isinstance(value, int) or isinstance(value, bool) or not (0 <= value <= 254):
            raise ConfigError("gpio-latch light_level value must be an integer in [0, 254]")
    elif not isinstance(value, bool):
        raise ConfigError(f"gpio-latch {actuator} value must be a boolean")
    for other in spec.interventions:
        if other is iv or other.kind != "gpio-latch":
            continue
        if other.params.get("actuator") != actuator:
            continue
        if other.start_s < iv.end_s and iv.start_s < other.end_s:
            raise ConfigError(
                f"conflicting gpio latches on {actuator!r}: "
                f"{other.intervention_id!r} and {iv.intervention_id!r} overlap"
            )


def _validate_process_dos(iv, spec) -> None:
    _params_keys(iv, set())
    if iv.end_s <= iv.start_s:
        raise ConfigError("process-dos needs a non-empty window")


def _validate_autonomy_escalate(iv, spec) -> None:
    _params_keys(iv, {"to", "credential", "recommend"})
    to = _require(iv, "to")
    if to not in ("L1", "L2", "L3", "L4"):
        raise ConfigError("autonomy-escalate 'to' must be one of L1..L4")
    rec = iv.params.get("recommend")
    if rec is not None:
        if not isinstance(rec, Mapping):
            raise ConfigError("autonomy-escalate recommend must be a mapping")
        _parse_recommendation(rec)


_RECOMMEND_FIELDS = {"temp": ("temp_c", "temperature"), "rh": ("rh_pct", "humidity"), "co2": ("co2_ppm", "co2")}


def _parse_recommendation(rec: Mapping) -> dict[str, float]:
    unknown = set(rec) - set(_RECOMMEND_FIELDS)
    if unknown:
        raise ConfigError(f"recommend has unknown fields: {', '.join(sorted(map(str, unknown)))}")
    return {
        attr: parse_quantity(rec[key], dim, field=key)
        for key, (attr, dim) in _RECOMMEND_FIELDS.items()
        if key in rec
    }


def _validate_tuner_poison(iv, spec) -> None:
    _params_keys(iv, {"channel", "step", "every", "max_total"})
    channel = iv.params.get("channel", engine.CH_TEMP)
    if channel != engine.CH_TEMP:
        raise ConfigError("tuner-poison currently targets the temperature line (sensor.temp)")
    step = parse_quantity(_require(iv, "step"), "temperature", field="step")
    every = parse_quantity(_require(iv, "every"), "time", field="every")
    max_total = parse_quantity(_require(iv, "max_total"), "temperature", field="max_total")
    if step == 0 or every <= 0 or max_total <= 0:
        raise ConfigError("tuner-poison needs nonzero step, positive every and max_total")
    band = spec.control.residual_alarm_band_c
    if abs(step) >= band:
        raise ConfigError(
            f"tuner-poison staircase step {abs(step)} degC breaks its stealth bound: "
            f"single-step alarms fire at {band} degC"
        )
    if iv.end_s <= iv.start_s:
        raise ConfigError("tuner-poison needs a non-empty injection window")


def _validate_drift_poison(iv, spec) -> None:
    _params_keys(iv, {"channel", "from", "to", "over"})
    channel = iv.params.get("channel", engine.CH_RH)
    if channel not in _SENSOR_NOISE_ATTR:
        raise ConfigError(f"drift-poison channel must be an analog sensor line, got {channel!r}")
    start_value = _require(iv, "from")
    end_value = _require(iv, "to")
    for name, value in (("from", start_value), ("to", end_value)):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"drift-poison '{name}' must be numeric")
    over = parse_quantity(_require(iv, "over"), "time", field="over")
    if over <= 0:
        raise ConfigError("drift-poison 'over' must be positive")
    noise_std = getattr(spec.sensors, _SENSOR_NOISE_ATTR[channel])
    window_s = spec.detection.window_steps * spec.clock.dt_s
    per_window = abs(end_value - start_value) / over * window_s
    bound = DRIFT_STEALTH_NOISE_FACTOR * noise_std
    if per_window > bound:
        raise ConfigError(
            f"drift-poison moves {channel} by {per_window:.4g} per detection window, "
            f"above the stealth bound {bound:.4g} ({DRIFT_STEALTH_NOISE_FACTOR} noise sigmas)"
        )


def _validate_schedule_swap(iv, spec) -> None:
    _params_keys(iv, {"schedule"})
    engine._parse_schedule(_require(iv, "schedule"), f"intervention {iv.intervention_id!r} schedule")


_VALIDATORS = {
    "bus-tap": _validate_bus_tap,
    "frame-forge": _validate_frame_forge,
    "gpio-latch": _validate_gpio_latch,
    "process-dos": _validate_process_dos,
    "autonomy-escalate": _validate_autonomy_escalate,
    "tuner-poison": _validate_tuner_poison,
    "drift-poison": _validate_drift_poison,
    "schedule-swap": _validate_schedule_swap,
}


def validate_intervention(iv, spec) -> None:
    """Reject unknown kinds, harness-only kinds, and bad params at load time."""
    if iv.kind not in ATTACK_KINDS:
        raise ConfigError(
            f"unknown intervention kind {iv.kind!r}; registered kinds: {', '.join(ATTACK_KINDS)}"
        )
    if iv.kind in HARNESS_ONLY_KINDS:
        raise ConfigError(
            f"intervention kind {iv.kind!r} runs as a paired experiment harness, "
            f"not on a scenario timeline (see the attack-suite command)"
        )
    _VALIDATORS[iv.kind](iv, spec)


# --------------------------------------------------------------------------
# Attack runtime (engine per-step hooks)
# --------------------------------------------------------------------------


@dataclass
class _Forge:
    intervention_id: str
    channel: str
    protocol: str
    frame: object  # Frame dataclass or raw bytes
    first_t: int
    end_s: float
    every_s: int | None
    fired: bool = False


class AttackRuntime:
    """Holds armed interventions and answers the engine's per-step queries."""

    def __init__(self, world: "engine.World"):
        self.world = world
        self._dos: list[tuple[float, float]] = []
        self._suppress: list[tuple[float, float]] = []
        self._latches: list[tuple[float, float, str, object]] = []
        self._forges: list[_Forge] = []
        self._oneshots: list[tuple[float, str, object]] = []  # (fire_t, id, callable)
        self._fired: set[str] = set()
        for iv in world.spec.interventions:
            self._install(iv)

    # -- installation --------------------------------------------------------

    def _grid_ceil(self, t: float) -> int:
        dt = self.world.clock.dt_s
        return int(math.ceil(t / dt)) * dt

    def _install(self, iv) -> None:
        install = getattr(self, "_install_" + iv.kind.replace("-", "_"))
        install(iv)
        self.world.log.append(
            iv.start_s,
            "attacks",
            "intervention-armed",
            {"id": iv.intervention_id, "kind": iv.kind, "start_s": iv.start_s, "end_s": iv.end_s},
        )

    def _install_bus_tap(self, iv) -> None:
        params = iv.params
        step = params.get("step")
        self.world.bus.add_tap(
            BusTap(
                tap_id=iv.intervention_id,
                channel=params["channel"],
                transform=params.get("transform", "bias"),
                start_s=iv.start_s,
                end_s=iv.end_s,
                offset=float(params.get("offset", 0.0)),
                ramp_per_s=float(params.get("ramp_per_h", 0.0)) / 3600.0,
                replacement=params.get("replacement"),
                step_s=parse_quantity(step, "time", field="step") if step is not None else 0.0,
            )
        )

    def _install_tuner_poison(self, iv) -> None:
        params = iv.params
        channel = params.get("channel", engine.CH_TEMP)
        step = parse_quantity(params["step"], "temperature", field="step")
        every = parse_quantity(params["every"], "time", field="every")
        max_total = parse_quantity(params["max_total"], "temperature", field="max_total")
        n_steps = int(abs(max_total) // abs(step))
        ramp_end = min(iv.end_s, iv.start_s + n_steps * every)
        achieved = math.copysign(int((ramp_end - iv.start_s) // every) * abs(step), step)
        self.world.bus.add_tap(
            BusTap(
                tap_id=f"{iv.intervention_id}:staircase",
                channel=channel,
                transform="bias",
                start_s=iv.start_s,
                end_s=ramp_end,
                ramp_per_s=step / every,
                step_s=every,
            )
        )
        # the attacker holds the accumulated bias after the staircase so the
        # line never snaps back through the single-step alarm band
        self.world.bus.add_tap(
            BusTap(
                tap_id=f"{iv.intervention_id}:hold",
                channel=channel,
                transform="bias",
                start_s=ramp_end,
                offset=achieved,
            )
        )

    def _install_drift_poison(self, iv) -> None:
        params = iv.params
        channel = params.get("channel", engine.CH_RH)
        start_value = float(params["from"])
        end_value = float(params["to"])
        over = parse_quantity(params["over"], "time", field="over")
        ramp_end = iv.start_s + over
        self.world.bus.add_tap(
            BusTap(
                tap_id=f"{iv.intervention_id}:ramp",
                channel=channel,
                transform="replace",
                start_s=iv.start_s,
                end_s=ramp_end,
                replacement=start_value,
                ramp_per_s=(end_value - start_value) / over,
            )
        )
        self.world.bus.add_tap(
            BusTap(
                tap_id=f"{iv.intervention_id}:hold",
                channel=channel,
                transform="replace",
                start_s=ramp_end,
                end_s=iv.end_s,
                replacement=end_value,
            )
        )

    def _install_frame_forge(self, iv) -> None:
        protocol, frame = _forge_frame_from_params(iv)
        every = iv.params.get("every")
        self._forges.append(
            _Forge(
                intervention_id=iv.intervention_id,
                channel=iv.params["channel"],
                protocol=protocol,
                frame=frame,
                first_t=self._grid_ceil(iv.start_s),
                end_s=iv.end_s,
                every_s=int(parse_quantity(every, "time", field="every")) if every is not None else None,
            )
        )

    def _install_gpio_latch(self, iv) -> None:
        self._latches.append((iv.start_s, iv.end_s, iv.params["actuator"], iv.params["value"]))
        if iv.params.get("suppress_co2_alarm"):
            self._suppress.append((iv.start_s, iv.end_s))

    def _install_process_dos(self, iv) -> None:
        self._dos.append((iv.start_s, iv.end_s))

    def _install_autonomy_escalate(self, iv) -> None:
        to = AutonomyLevel[iv.params["to"]]
        credential = bool(iv.params.get("credential", False))
        recommend = _parse_recommendation(iv.params.get("recommend") or {})

        def fire(t: float) -> None:
            world = self.world
            world.autonomy = control.authorize_autonomy_change(
                world.autonomy, to, credential, log=world.log, t=t
            )
            if recommend:
                world.recommended_setpoints = dict(recommend)

        self._oneshots.append((self._grid_ceil(iv.start_s), iv.intervention_id, fire))

    def _install_schedule_swap(self, iv) -> None:
        swapped = engine._parse_schedule(iv.params["schedule"], "swapped schedule")

        def fire(t: float) -> None:
            self.world.schedule = swapped
            self.world.log.append(t, "attacks", "schedule-swapped", {"id": iv.intervention_id})

        self._oneshots.append((self._grid_ceil(iv.start_s), iv.intervention_id, fire))

    # -- engine queries --------------------------------------------------------

    def before_step(self, t: float) -> None:
        for fire_t, oneshot_id, fire in self._oneshots:
            if t >= fire_t and oneshot_id not in self._fired:
                self._fired.add(oneshot_id)
                fire(t)

    def dos_active(self, t: float) -> bool:
        return any(start <= t < end for start, end in self._dos)

    def co2_alarm_suppressed(self, t: float) -> bool:
        return any(start <= t < end for start, end in self._suppress)

    def apply_latches(self, commands: ZoneInputs, t: float) -> ZoneInputs:
        for start, end, actuator, value in self._latches:
            if start <= t < end:
                commands = replace(commands, **{actuator: value})
        return commands

    def forged_frames(self, t: float) -> list[tuple[str, str, object]]:
        out = []
        for forge in self._forges:
            if not (forge.first_t <= t < max(forge.end_s, forge.first_t + 1)):
                continue
            if forge.every_s is None:
                if not forge.fired and t >= forge.first_t:
                    forge.fired = True
                    out.append((forge.channel, forge.protocol, forge.frame))
            elif (int(t) - forge.first_t) % forge.every_s == 0:
                out.append((forge.channel, forge.protocol, forge.frame))
        return out


def build_runtime(world: "engine.World") -> AttackRuntime:
    return AttackRuntime(world)


# --------------------------------------------------------------------------
# Tuner-poison harness (paired runs)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TunerPoisonResult:
    clean_overshoot_c: float
    poisoned_overshoot_c: float
    limited_overshoot_c: float
    overshoot_ratio_off: float  # poisoned (no limiter) / clean
    overshoot_ratio_on: float  # poisoned with rate limiter / clean
    injection_alarms: int  # single-step alarms inside the injection window
    injection_window_s: tuple[float, float]
    report_digests: dict[str, str]


def _injection_window(spec) -> tuple[float, float]:
    for iv in spec.interventions:
        if iv.kind == "tuner-poison":
            return iv.start_s, iv.end_s
    raise ConfigError("scenario has no tuner-poison intervention")


def _alarms_between(rep: report.SimReport, start: float, end: float) -> int:
    return sum(
        1
        for event in rep.events
        if event["kind"] in ("residual-alarm", "ae-alarm") and start <= event["t_s"] < end
    )


def run_tuner_poison_pair(scenario_dir: Path | None = None) -> TunerPoisonResult:
    """Clean vs poisoned vs poisoned+limiter runs of the gain-tuner fixture.

    All three scenarios share one seed and one setpoint probe; the only
    differences are the staircase bias intervention and the rate limiter.
    """
    base = Path(scenario_dir) if scenario_dir is not None else _FIXTURE_SCENARIOS
    specs = {
        name: engine.load_scenario(base / f"tuner-{name}.yaml")
        for name in ("clean", "poisoned", "limited")
    }
    window = _injection_window(specs["poisoned"])
    reports = {name: engine.run_scenario(spec) for name, spec in specs.items()}

    def overshoot(name: str) -> float:
        value = reports[name].kpis.get("probe_overshoot_c")
        if value is None:
            raise ConfigError(f"tuner fixture {name!r} has no setpoint probe configured")
        return float(value)

    clean = overshoot("clean")
    if clean <= 0:
        raise ConfigError("clean tuner run shows no measurable overshoot; fixture needs retuning")
    poisoned = overshoot("poisoned")
    limited = overshoot("limited")
    alarms = _alarms_between(reports["poisoned"], *window) + _alarms_between(
        reports["limited"], *window
    )
    return TunerPoisonResult(
        clean_overshoot_c=clean,
        poisoned_overshoot_c=poisoned,
        limited_overshoot_c=limited,
        overshoot_ratio_off=poisoned / clean,
        overshoot_ratio_on=limited / clean,
        injection_alarms=alarms,
        injection_window_s=window,
        report_digests={name: rep.digest() for name, rep in reports.items()},
    )


# --------------------------------------------------------------------------
# Drift-poison harness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftPoisonResult:
    drift_enabled: bool
    payload_windows: int
    rolling_flagged_fraction: float
    golden_flagged_fraction: float
    rolling_mean_score: float
    golden_mean_score: float
    divergence_score: float | None
    divergence_flagged: bool
    report_digest: str


def run_drift_poison(
    drift_enabled: bool = True,
    scenario_dir: Path | None = None,
    payload_span_s: int = 2 * 3600,
) -> DriftPoisonResult:
    """Slow-drift (or sudden, when drift_enabled=False) sensor poisoning.

    The payload is the final stretch of the run where the spoofed line sits
    at its target value.  With the slow drift the rolling detector has been
    dragged along and scores the payload normal while the frozen golden
    model diverges; the sudden variant is flagged by both.
    """
    base = Path(scenario_dir) if scenario_dir is not None else _FIXTURE_SCENARIOS
    name = "drift-poison.yaml" if drift_enabled else "drift-sudden.yaml"
    spec = engine.load_scenario(base / name)
    rep, world = engine.run_world(spec)
    stack = world.detection
    if stack is None or stack.golden is None:
        raise ConfigError("drift fixture must run with detection enabled and commissioned")

    payload_from = spec.clock.duration_s - payload_span_s
    payload = [w for w, t in zip(stack.buffer, stack.buffer_times) if t >= payload_from]
    if not payload:
        raise ConfigError("no completed detection windows inside the payload span")
    golden_scores, golden_flags, rolling_scores, rolling_flags = [], [], [], []
    for window in payload:
        (g_score, g_flag), (r_score, r_flag) = stack.score_window_with_both(window)
        golden_scores.append(g_score)
        golden_flags.append(g_flag)
        rolling_scores.append(r_score)
        rolling_flags.append(r_flag)
    return DriftPoisonResult(
        drift_enabled=drift_enabled,
        payload_windows=len(payload),
        rolling_flagged_fraction=float(np.mean(rolling_flags)),
        golden_flagged_fraction=float(np.mean(golden_flags)),
        rolling_mean_score=float(np.mean(rolling_scores)),
        golden_mean_score=float(np.mean(golden_scores)),
        divergence_score=None if stack.divergence is None else stack.divergence.mean_abs_diff,
        divergence_flagged=bool(stack.divergence is not None and stack.divergence.flagged),
        report_digest=rep.digest(),
    )


# --------------------------------------------------------------------------
# Federated backdoor harness
# --------------------------------------------------------------------------


def run_fed_backdoor(
    seed: int = 11,
    facilities: int = 10,
    attacker_index: int = 0,
    budget: float = 0.02,
) -> fleet.BackdoorExperiment:
    """Model-replacement backdoor against the fleet aggregation rules."""
    hub = engine.RandomHub(seed)
    return fleet.run_backdoor_experiment(
        streams={
            "init": hub.stream("fleet-init"),
            "data": hub.stream("fleet-data"),
            "probe": hub.stream("fleet-probe"),
        },
        facilities=facilities,
        attacker_index=attacker_index,
        budget=budget,
    )


# --------------------------------------------------------------------------
# Adversarial schedule search
# --------------------------------------------------------------------------

SEARCH_SEGMENTS = 4
SEARCH_SEGMENT_S = 6 * 3600
SEARCH_TEMP_BOUNDS = (18.0, 30.0)
SEARCH_RH_BOUNDS = (40.0, 85.0)
# operating envelope the defender's detector was commissioned over
BENIGN_TEMP_RANGE = (20.0, 27.0)
BENIGN_RH_RANGE = (50.0, 80.0)

_EVAL_DT_S = 60
_EVAL_HORIZON_S = 30 * 3600
_EVAL_TEMP_TAU_S = 1800.0
_EVAL_RH_TAU_S = 2700.0
_EVAL_TEMP_NOISE_C = 0.03
_EVAL_RH_NOISE_PCT = 0.15
_EVAL_CO2_PPM = 1000.0
_EVAL_VWC_PCT = 55.0
_EVAL_LIGHT = 200


@dataclass(frozen=True)
class CandidateSchedule:
    """Piecewise-constant day recipe: one (temp, rh) pair per 6 h segment."""

    temps_c: tuple[float, ...]
    rhs_pct: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.temps_c) != SEARCH_SEGMENTS or len(self.rhs_pct) != SEARCH_SEGMENTS:
            raise ConfigError(f"candidate schedules have {SEARCH_SEGMENTS} segments")

    def in_bounds(self) -> bool:
        return all(SEARCH_TEMP_BOUNDS[0] <= v <= SEARCH_TEMP_BOUNDS[1] for v in self.temps_c) and all(
            SEARCH_RH_BOUNDS[0] <= v <= SEARCH_RH_BOUNDS[1] for v in self.rhs_pct
        )

    def setpoints_at(self, t_s: float) -> tuple[float, float]:
        index = int(t_s // SEARCH_SEGMENT_S) % SEARCH_SEGMENTS
        return self.temps_c[index], self.rhs_pct[index]

    def key(self) -> str:
        doc = {"temps": [round(v, 6) for v in self.temps_c], "rhs": [round(v, 6) for v in self.rhs_pct]}
        return report.canonical_json(doc)


@dataclass
class _EvalRow:
    t_s: float
    temp_c: float
    rh_pct: float
    vpd_kpa: float
    vwc_pct: float
    light_level: int
    irrigation_pulse: bool


@dataclass(frozen=True)
class ScheduleEvaluation:
    scores: tuple[float, ...]
    max_score: float
    damage_severity: float  # vpd-low stressor severity over the horizon
    min_vpd_kpa: float  # search progress signal: how close the trace gets to the damage floor


@dataclass(frozen=True)
class ScheduleSearchResult:
    found: bool
    schedule: CandidateSchedule
    evaluation: ScheduleEvaluation
    threshold: float
    damage_floor: float
    iterations: int
    model: detection.AnomalyModel
    seed: int


def _candidate_stream(seed: int, candidate: CandidateSchedule) -> np.random.Generator:
    # evaluation noise is a pure function of (seed, candidate), never of the
    # search path, so any candidate replays to byte-identical scores
    digest = hashlib.sha256(f"{seed}:schedule-eval:{candidate.key()}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def _trace_windows(
    candidate: CandidateSchedule, rng: np.random.Generator, window_steps: int
) -> tuple[list[np.ndarray], list[_EvalRow]]:
    steps = _EVAL_HORIZON_S // _EVAL_DT_S
    noise = rng.normal(0.0, [_EVAL_TEMP_NOISE_C, _EVAL_RH_NOISE_PCT], size=(steps + 1, 2))
    temp, rh = candidate.setpoints_at(0.0)
    rows: list[_EvalRow] = []
    samples: list[list[float]] = []
    alpha_t = _EVAL_DT_S / _EVAL_TEMP_TAU_S
    alpha_r = _EVAL_DT_S / _EVAL_RH_TAU_S
    for i in range(steps + 1):
        t = i * _EVAL_DT_S
        read_t = temp + noise[i, 0]
        read_r = min(100.0, max(0.0, rh + noise[i, 1]))
        vpd = physics.vpd(read_t, read_r)
        rows.append(_EvalRow(t, read_t, read_r, vpd, _EVAL_VWC_PCT, _EVAL_LIGHT, False))
        samples.append([read_t, read_r, _EVAL_CO2_PPM, vpd, _EVAL_VWC_PCT, float(_EVAL_LIGHT)])
        set_t, set_r = candidate.setpoints_at(t)
        temp += (set_t - temp) * alpha_t
        rh += (set_r - rh) * alpha_r
    windows = [
        np.asarray(samples[k : k + window_steps], dtype=float)
        for k in range(0, len(samples) - window_steps + 1, window_steps)
    ]
    return windows, rows


def evaluate_schedule(
    model: detection.AnomalyModel, candidate: CandidateSchedule, seed: int
) -> ScheduleEvaluation:
    """Deterministically score one candidate against the defender's detector."""
    rng = _candidate_stream(seed, candidate)
    windows, rows = _trace_windows(candidate, rng, model.window_steps)
    scores = detection.ae_scores(model, windows)
    crop = risk.builtin_crop_profiles()["leafy-vpd-sensitive"]
    damage = risk.assess_damage(rows, crop, "nft", None, float(_EVAL_DT_S))
    severity = damage.severity_by_stressor.get("vpd-low", 0.0)
    return ScheduleEvaluation(
        scores=tuple(float(s) for s in scores),
        max_score=float(np.max(scores)),
        damage_severity=float(severity),
        min_vpd_kpa=float(min(row.vpd_kpa for row in rows)),
    )


def _train_defender_model(seed: int, training_schedules: int = 24) -> detection.AnomalyModel:
    digest = hashlib.sha256(f"{seed}:schedule-train".encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    windows: list[np.ndarray] = []
    for _ in range(training_schedules):
        candidate = CandidateSchedule(
            temps_c=tuple(rng.uniform(*BENIGN_TEMP_RANGE, size=SEARCH_SEGMENTS)),
            rhs_pct=tuple(rng.uniform(*BENIGN_RH_RANGE, size=SEARCH_SEGMENTS)),
        )
        trace, _ = _trace_windows(candidate, rng, detection.DEFAULT_WINDOW_STEPS)
        windows.extend(trace)
    return detection.ae_train(windows, rng, provenance="golden")


def adversarial_schedule_search(
    seed: int = 7,
    iterations: int = 250,
    damage_floor: float = 0.5,
    model: detection.AnomalyModel | None = None,
) -> ScheduleSearchResult:
    """Multi-start stochastic hill-climb for an in-bounds recipe that damages
    the crop while every detector window stays under the alarm threshold.

    Feasibility (max score < threshold) is a hard constraint; among feasible
    candidates the search maximizes the vpd-low damage severity, walking
    toward the damage floor where severity is flat and breaking remaining
    ties toward detector margin.  A single greedy walk can wedge itself into
    a corner of the feasible region (e.g. all of the score budget spent on
    cold segments before humidity ever rises), so the climb restarts from a
    handful of diverse benign recipes and keeps the best result overall.
    """
    if model is None:
        model = _train_defender_model(seed)
    threshold = model.threshold

    def better(cand: ScheduleEvaluation, best: ScheduleEvaluation) -> bool:
        cand_ok = cand.max_score < threshold
        best_ok = best.max_score < threshold
        if cand_ok != best_ok:
            return cand_ok
        if not cand_ok:
            return cand.max_score < best.max_score
        if cand.damage_severity != best.damage_severity:
            return cand.damage_severity > best.damage_severity
        # Severity is flat almost everywhere (zero before the stressor floor,
        # capped at one past total loss), so the climb needs a dense progress
        # signal: walk toward the damage floor, then toward detector margin.
        if cand.min_vpd_kpa != best.min_vpd_kpa:
            return cand.min_vpd_kpa < best.min_vpd_kpa
        return cand.max_score < best.max_score

    starts = (
        (23.5, 65.0),
        (23.5, 78.0),
        (21.0, 55.0),
        (26.0, 75.0),
        (22.0, 72.0),
    )
    overall: tuple[CandidateSchedule, ScheduleEvaluation] | None = None
    for start_index, (t0, r0) in enumerate(starts):
        digest = hashlib.sha256(
            f"{seed}:schedule-search:{start_index}".encode("utf-8")
        ).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        current = CandidateSchedule(
            temps_c=(t0,) * SEARCH_SEGMENTS, rhs_pct=(r0,) * SEARCH_SEGMENTS
        )
        current_eval = evaluate_schedule(model, current, seed)
        for _ in range(iterations):
            slot = int(rng.integers(0, 2 * SEARCH_SEGMENTS))
            if slot < SEARCH_SEGMENTS:
                temps = list(current.temps_c)
                temps[slot] = float(
                    np.clip(temps[slot] + rng.uniform(-1.5, 1.5), *SEARCH_TEMP_BOUNDS)
                )
                neighbor = CandidateSchedule(tuple(temps), current.rhs_pct)
            else:
                rhs = list(current.rhs_pct)
                rhs[slot - SEARCH_SEGMENTS] = float(
                    np.clip(rhs[slot - SEARCH_SEGMENTS] + rng.uniform(-4.0, 4.0), *SEARCH_RH_BOUNDS)
                )
                neighbor = CandidateSchedule(current.temps_c, tuple(rhs))
            neighbor_eval = evaluate_schedule(model, neighbor, seed)
            if better(neighbor_eval, current_eval):
                current, current_eval = neighbor, neighbor_eval
        if overall is None or better(current_eval, overall[1]):
            overall = (current, current_eval)

    best_schedule, best_eval = overall
    found = (
        best_schedule.in_bounds()
        and best_eval.max_score < threshold
        and best_eval.damage_severity >= damage_floor
    )
    return ScheduleSearchResult(
        found=found,
        schedule=best_schedule,
        evaluation=best_eval,
        threshold=threshold,
        damage_floor=damage_floor,
        iterations=iterations,
        model=model,
        seed=seed,
    )


# --------------------------------------------------------------------------
# Reward-poisoning harness
# --------------------------------------------------------------------------

VPD_ACTIONS_KPA = (0.6, 0.8, 1.0, 1.2, 1.4)
_RL_BINS = 8
_RL_VPD_RANGE = (0.2, 1.6)
_RL_ENERGY_PER_KPA = 1.0
_RL_STABILITY_WEIGHT = 25.0
_RL_STABILITY_FLOOR_KPA = 0.8
PATHOGEN_RISK_VPD_KPA = 0.7
_RL_STEP_MINUTES = 1.0


@dataclass(frozen=True)
class RewardPoisonSpec:
    """Night-period reward tamper: scales the humidity-stability penalty."""

    stability_scale: float = 0.1
    declared_bound: float = 10.0

    def max_perturbation(self) -> float:
        worst = _RL_STABILITY_WEIGHT * (_RL_STABILITY_FLOOR_KPA - _RL_VPD_RANGE[0]) ** 2
        return abs(1.0 - self.stability_scale) * worst

    def validate(self) -> None:
        if not (0.0 <= self.stability_scale <= 1.0):
            raise ConfigError("stability_scale must be in [0, 1]")
        if self.max_perturbation() > self.declared_bound:
            raise ConfigError(
                f"reward perturbation can reach {self.max_perturbation():.3f}, above the "
                f"declared bound {self.declared_bound}"
            )


@dataclass(frozen=True)
class RewardPoisonOutcome:
    energy_kwh: float
    pathogen_hours: float
    greedy_policy: tuple[int, ...]


@dataclass(frozen=True)
class RewardPoisonResult:
    clean: RewardPoisonOutcome
    poisoned: RewardPoisonOutcome
    spec: RewardPoisonSpec
    train_steps: int
    eval_steps: int


def _vpd_bin(vpd: float) -> int:
    lo, hi = _RL_VPD_RANGE
    width = (hi - lo) / _RL_BINS
    return min(_RL_BINS - 1, max(0, int((vpd - lo) / width)))


def _reward(vpd_next: float, setpoint: float, stability_scale: float) -> float:
    energy = _RL_ENERGY_PER_KPA * max(0.0, setpoint - 0.4)
    shortfall = max(0.0, _RL_STABILITY_FLOOR_KPA - vpd_next)
    stability = _RL_STABILITY_WEIGHT * shortfall * shortfall
    return -(energy + stability_scale * stability)


def _energy_cost(setpoint: float) -> float:
    return _RL_ENERGY_PER_KPA * max(0.0, setpoint - 0.4)


def _run_rl(seed: int, stability_scale: float, train_steps: int, eval_steps: int) -> RewardPoisonOutcome:
    hub = engine.RandomHub(seed)
    rl = hub.stream("rl")
    params = RLParams(learning_rate=0.2, discount=0.9, epsilon=0.15)
    q = control.make_q_table(_RL_BINS, len(VPD_ACTIONS_KPA))
    vpd = 0.9
    state = _vpd_bin(vpd)
    action = control.greedy_action(q, state)
    for _ in range(train_steps):
        setpoint = VPD_ACTIONS_KPA[action]
        vpd = float(np.clip(vpd + 0.5 * (setpoint - vpd) + rl.normal(0.0, 0.03), *_RL_VPD_RANGE))
        reward_value = _reward(vpd, setpoint, stability_scale)
        next_state = _vpd_bin(vpd)
        q, action = control.rl_energy_step(
            q, state, action, reward_value, next_state, params, explore_draw=float(rl.random())
        )
        state = next_state
    energy = 0.0
    pathogen_hours = 0.0
    for _ in range(eval_steps):
        action = control.greedy_action(q, state)
        setpoint = VPD_ACTIONS_KPA[action]
        vpd = float(np.clip(vpd + 0.5 * (setpoint - vpd) + rl.normal(0.0, 0.03), *_RL_VPD_RANGE))
        state = _vpd_bin(vpd)
        energy += _energy_cost(setpoint) * _RL_STEP_MINUTES / 60.0
        if vpd < PATHOGEN_RISK_VPD_KPA:
            pathogen_hours += _RL_STEP_MINUTES / 60.0
    policy = tuple(int(control.greedy_action(q, s)) for s in range(_RL_BINS))
    return RewardPoisonOutcome(energy_kwh=energy, pathogen_hours=pathogen_hours, greedy_policy=policy)


def run_reward_poison_pair(
    seed: int = 23,
    poison: RewardPoisonSpec | None = None,
    train_steps: int = 10_000,
    eval_steps: int = 2_000,
) -> RewardPoisonResult:
    """Same seed, same exploration draws — only the reward signal differs.

    The poisoned run rescales the night humidity-stability penalty, steering
    the learned policy toward the cheap low-VPD setpoint: the energy KPI
    improves while pathogen-risk hours climb.
    """
    poison = poison or RewardPoisonSpec()
    poison.validate()
    clean = _run_rl(seed, 1.0, train_steps, eval_steps)
    poisoned = _run_rl(seed, poison.stability_scale, train_steps, eval_steps)
    return RewardPoisonResult(
        clean=clean,
        poisoned=poisoned,
        spec=poison,
        train_steps=train_steps,
        eval_steps=eval_steps,
    )
