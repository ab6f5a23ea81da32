"""Single-zone grow-room physics: energy balance, humidity, CO2, substrate.

The zone is a well-mixed air volume stepped with explicit Euler at a fixed dt.
State variables are air temperature, relative humidity (derived from a vapor
mass balance and clamped to [0, 100] with the unclamped mass tracked
separately), CO2 concentration, substrate volumetric water content, and the
applied light level.  Vapor-pressure deficit is recomputed from temperature
and humidity every step, never integrated.

Saturation vapor pressure uses the Magnus form

    es(T) = 0.6108 * exp(17.27 * T / (T + 237.3))   [kPa, T in degC]

valid for T in [-20, 60] degC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, NumericDivergenceError, PhysicsRangeError, UnreachableLevelError

MAGNUS_A_KPA = 0.6108
MAGNUS_B = 17.27
MAGNUS_C = 237.3
MAGNUS_T_MIN = -20.0
MAGNUS_T_MAX = 60.0

_WATER_MOLAR_MASS = 0.018015  # kg/mol
_GAS_CONSTANT = 8.314  # J/(mol K)
_KELVIN = 273.15

PEL_CO2_PPM = 5_000.0
IDLH_CO2_PPM = 40_000.0

DALI_LEVEL_MAX = 254


def saturation_vapor_pressure(temp_c: float) -> float:
    """Magnus saturation vapor pressure in kPa for temp_c in [-20, 60]."""
    if not (MAGNUS_T_MIN <= temp_c <= MAGNUS_T_MAX):
        raise PhysicsRangeError(
            f"temperature {temp_c} degC outside Magnus validity range "
            f"[{MAGNUS_T_MIN}, {MAGNUS_T_MAX}]"
        )
    return MAGNUS_A_KPA * math.exp(MAGNUS_B * temp_c / (temp_c + MAGNUS_C))


def vpd(temp_c: float, rh_pct: float) -> float:
    """Vapor-pressure deficit in kPa; rh_pct must be in [0, 100]."""
    if not (0.0 <= rh_pct <= 100.0):
        raise PhysicsRangeError(f"relative humidity {rh_pct} outside [0, 100]")
    return saturation_vapor_pressure(temp_c) * (1.0 - rh_pct / 100.0)


def vapor_density(e_kpa: float, temp_c: float) -> float:
    """Vapor density kg/m3 from partial pressure (kPa) via the ideal gas law."""
    return e_kpa * 1000.0 * _WATER_MOLAR_MASS / (_GAS_CONSTANT * (temp_c + _KELVIN))


def vapor_pressure_from_mass(mass_kg: float, volume_m3: float, temp_c: float) -> float:
    """Partial pressure (kPa) of water vapor mass dispersed in a volume."""
    rho = mass_kg / volume_m3
    return rho * _GAS_CONSTANT * (temp_c + _KELVIN) / (_WATER_MOLAR_MASS * 1000.0)


def saturation_moisture_mass(volume_m3: float, temp_c: float) -> float:
    """Vapor mass (kg) at 100% RH for the given volume and temperature."""
    return vapor_density(saturation_vapor_pressure(temp_c), temp_c) * volume_m3


def rh_from_moisture(mass_kg: float, volume_m3: float, temp_c: float) -> float:
    """Relative humidity implied by a vapor mass, clamped to [0, 100]."""
    e = vapor_pressure_from_mass(mass_kg, volume_m3, temp_c)
    rh = 100.0 * e / saturation_vapor_pressure(temp_c)
    return min(100.0, max(0.0, rh))


def moisture_from_rh(rh_pct: float, volume_m3: float, temp_c: float) -> float:
    """Vapor mass (kg) at a given relative humidity."""
    e = saturation_vapor_pressure(temp_c) * rh_pct / 100.0
    return vapor_density(e, temp_c) * volume_m3


@dataclass(frozen=True)
class ZoneConfig:
    """Fixed physical parameters of one grow zone (canonical SI-ish units)."""

    floor_area_m2: float
    air_volume_m3: float
    thermal_capacitance_j_per_k: float = 0.0  # 0 -> default 5x air heat capacity
    envelope_conductance_w_per_k: float = 300.0
    ambient_temp_c: float = 20.0
    ambient_rh_pct: float = 50.0
    ambient_co2_ppm: float = 420.0
    light_heat_flux_w_per_m2: float = 126.2
    hvac_cooling_capacity_w: float = 30_000.0
    dehumidifier_rate_kg_per_h: float = 10.0
    co2_injection_rate_m3_per_h: float = 1.41584
    ventilation_ach: float = 0.5
    sealed: bool = False
    co2_uptake_ppm_per_h: float = 0.0
    transpiration_kg_per_h_kpa: float = 0.0
    substrate_water_kg: float = 100.0
    vwc_saturation_pct: float = 60.0

    # Air heat capacity ~ rho * cp = 1.2 kg/m3 * 1005 J/(kg K); thermal mass of
    # benches, substrate and structure defaults to five times the air alone.
    AIR_VOLUMETRIC_HEAT_J_PER_M3_K = 1.2 * 1005.0
    THERMAL_MASS_MULTIPLIER_DEFAULT = 5.0

    def __post_init__(self) -> None:
        if self.floor_area_m2 <= 0 or self.air_volume_m3 <= 0:
            raise ConfigError("zone area and volume must be positive")
        for name in (
            "envelope_conductance_w_per_k",
            "hvac_cooling_capacity_w",
            "dehumidifier_rate_kg_per_h",
            "co2_injection_rate_m3_per_h",
            "ventilation_ach",
            "substrate_water_kg",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.sealed and self.ventilation_ach != 0.0:
            raise ConfigError("a sealed zone must have ventilation_ach == 0")
        if self.thermal_capacitance_j_per_k < 0:
            raise ConfigError("thermal_capacitance_j_per_k must be >= 0")

    @property
    def thermal_capacitance(self) -> float:
        if self.thermal_capacitance_j_per_k > 0:
            return self.thermal_capacitance_j_per_k
        return (
            self.THERMAL_MASS_MULTIPLIER_DEFAULT
            * self.AIR_VOLUMETRIC_HEAT_J_PER_M3_K
            * self.air_volume_m3
        )


@dataclass(frozen=True)
class ZoneState:
    """Instantaneous zone state; vpd_kpa is always derived, never integrated."""

    temp_c: float
    rh_pct: float
    co2_ppm: float
    vpd_kpa: float
    vwc_pct: float
    light_level: int  # 0..254 applied arc power
    time_of_day_s: float
    moisture_kg: float
    moisture_unclamped_kg: float = field(default=0.0)

    def finite(self) -> bool:
        vals = (
            self.temp_c,
            self.rh_pct,
            self.co2_ppm,
            self.vpd_kpa,
            self.vwc_pct,
            self.moisture_kg,
            self.moisture_unclamped_kg,
        )
        return all(math.isfinite(v) for v in vals)


def initial_state(
    config: ZoneConfig,
    temp_c: float,
    rh_pct: float,
    co2_ppm: float,
    vwc_pct: float,
    time_of_day_s: float = 0.0,
    light_level: int = 0,
) -> ZoneState:
    moisture = moisture_from_rh(rh_pct, config.air_volume_m3, temp_c)
    return ZoneState(
        temp_c=temp_c,
        rh_pct=rh_pct,
        co2_ppm=co2_ppm,
        vpd_kpa=vpd(temp_c, rh_pct),
        vwc_pct=vwc_pct,
        light_level=light_level,
        time_of_day_s=time_of_day_s,
        moisture_kg=moisture,
        moisture_unclamped_kg=moisture,
    )


@dataclass(frozen=True)
class ZoneInputs:
    """Actuator-side inputs to one physics step."""

    hvac_fraction: float = 0.0  # 0..1 of cooling capacity
    dehumidifier_on: bool = False
    co2_solenoid: bool = False
    irrigation_pulse: bool = False
    light_level: int = 0  # 0..254


def _light_fraction(level: int) -> float:
    return min(max(level, 0), DALI_LEVEL_MAX) / DALI_LEVEL_MAX


def transpiration_rate_kg_per_h(config: ZoneConfig, state: ZoneState) -> float:
    """Canopy transpiration: proportional to VPD, reduced in the dark."""
    light_factor = 0.25 + 0.75 * _light_fraction(state.light_level)
    return config.transpiration_kg_per_h_kpa * state.vpd_kpa * light_factor


def step_zone(state: ZoneState, config: ZoneConfig, inputs: ZoneInputs, dt_s: float) -> ZoneState:
    """Advance the zone one explicit-Euler step of dt_s seconds."""
    if dt_s <= 0:
        raise ConfigError("dt must be positive")
    dt_h = dt_s / 3600.0

    # --- energy balance ---------------------------------------------------
    q_lights = config.light_heat_flux_w_per_m2 * config.floor_area_m2 * _light_fraction(
        inputs.light_level
    )
    q_envelope = config.envelope_conductance_w_per_k * (config.ambient_temp_c - state.temp_c)
    q_hvac = min(max(inputs.hvac_fraction, 0.0), 1.0) * config.hvac_cooling_capacity_w
    temp_next = state.temp_c + (q_lights + q_envelope - q_hvac) / config.thermal_capacitance * dt_s

    # --- CO2 balance (ppm) --------------------------------------------------
    injection_ppm_h = (
        1e6 * config.co2_injection_rate_m3_per_h / config.air_volume_m3
        if inputs.co2_solenoid
        else 0.0
    )
    exchange_ppm_h = config.ventilation_ach * (state.co2_ppm - config.ambient_co2_ppm)
    co2_next = state.co2_ppm + (
        injection_ppm_h - exchange_ppm_h - config.co2_uptake_ppm_per_h
    ) * dt_h
    co2_next = max(co2_next, 0.0)

    # --- moisture balance (kg of vapor in the zone air) ---------------------
    transp = transpiration_rate_kg_per_h(config, state)
    dehum = config.dehumidifier_rate_kg_per_h if inputs.dehumidifier_on else 0.0
    ambient_vapor = (
        vapor_density(
            saturation_vapor_pressure(config.ambient_temp_c) * config.ambient_rh_pct / 100.0,
            config.ambient_temp_c,
        )
        * config.air_volume_m3
    )
    vent = config.ventilation_ach * (state.moisture_kg - ambient_vapor)
    dm = (transp - dehum - vent) * dt_h
    moisture_raw = max(state.moisture_unclamped_kg + dm, 0.0)
    moisture_next = max(state.moisture_kg + dm, 0.0)
    try:
        sat_mass = saturation_moisture_mass(config.air_volume_m3, temp_next)
    except PhysicsRangeError:
        raise NumericDivergenceError(
            f"zone temperature {temp_next:.2f} degC left the model's validity range"
        ) from None
    if moisture_next > sat_mass:
        moisture_next = sat_mass  # condensation on surfaces; raw mass keeps the balance

    rh_next = rh_from_moisture(moisture_next, config.air_volume_m3, temp_next)

    # --- substrate water ----------------------------------------------------
    draw_pct = 100.0 * transp * dt_h / config.substrate_water_kg
    vwc_next = max(state.vwc_pct - draw_pct, 0.0)
    if inputs.irrigation_pulse:
        vwc_next = config.vwc_saturation_pct

    next_state = ZoneState(
        temp_c=temp_next,
        rh_pct=rh_next,
        co2_ppm=co2_next,
        vpd_kpa=vpd(temp_next, rh_next),
        vwc_pct=vwc_next,
        light_level=min(max(inputs.light_level, 0), DALI_LEVEL_MAX),
        time_of_day_s=(state.time_of_day_s + dt_s) % 86400.0,
        moisture_kg=moisture_next,
        moisture_unclamped_kg=moisture_raw,
    )
    if not next_state.finite():
        raise NumericDivergenceError("zone state became non-finite")
    return next_state


def co2_time_to(level_ppm: float, start_ppm: float, config: ZoneConfig) -> float:
    """Closed-form seconds for injection to raise a sealed zone to level_ppm.

    Valid only for a sealed zone (no exchange, no uptake) with a positive
    injection rate; the concentration then rises linearly at
    1e6 * q / V ppm per hour.
    """
    if not config.sealed or config.co2_uptake_ppm_per_h != 0.0:
        raise ConfigError("co2_time_to requires a sealed zone with zero uptake")
    if config.co2_injection_rate_m3_per_h <= 0.0:
        raise UnreachableLevelError("injection rate is zero; level unreachable")
    if level_ppm <= start_ppm:
        raise UnreachableLevelError(
            f"target {level_ppm} ppm not above starting level {start_ppm} ppm"
        )
    rate_ppm_per_h = 1e6 * config.co2_injection_rate_m3_per_h / config.air_volume_m3
    return (level_ppm - start_ppm) / rate_ppm_per_h * 3600.0


@dataclass(frozen=True)
class OptimalRanges:
    """Per-variable ranges inside which growth proceeds at full rate."""

    temp_c: tuple[float, float] = (20.0, 28.0)
    rh_pct: tuple[float, float] = (50.0, 70.0)
    co2_ppm: tuple[float, float] = (800.0, 1600.0)
    # Outside a range the growth factor falls off linearly and hits zero once
    # the variable is this far (in range-widths) beyond the nearer edge.
    falloff_widths: float = 1.0

    def contains(self, temp_c: float, rh_pct: float, co2_ppm: float) -> bool:
        return (
            self.temp_c[0] <= temp_c <= self.temp_c[1]
            and self.rh_pct[0] <= rh_pct <= self.rh_pct[1]
            and self.co2_ppm[0] <= co2_ppm <= self.co2_ppm[1]
        )


def _axis_factor(value: float, lo: float, hi: float, falloff_widths: float) -> float:
    if lo <= value <= hi:
        return 1.0
    width = (hi - lo) * falloff_widths
    if width <= 0:
        return 0.0
    dist = lo - value if value < lo else value - hi
    return max(0.0, 1.0 - dist / width)


def growth_factor(temp_c: float, rh_pct: float, co2_ppm: float, optimal: OptimalRanges) -> float:
    """Multiplier in [0, 1] on the crop's potential growth rate."""
    f_t = _axis_factor(temp_c, *optimal.temp_c, optimal.falloff_widths)
    f_rh = _axis_factor(rh_pct, *optimal.rh_pct, optimal.falloff_widths)
    f_co2 = _axis_factor(co2_ppm, *optimal.co2_ppm, optimal.falloff_widths)
    return f_t * f_rh * f_co2


def equilibrium_temp(config: ZoneConfig, light_level: int, hvac_fraction: float) -> float:
    """Steady-state temperature for constant inputs (oracle helper)."""
    q_lights = config.light_heat_flux_w_per_m2 * config.floor_area_m2 * _light_fraction(light_level)
    q_hvac = min(max(hvac_fraction, 0.0), 1.0) * config.hvac_cooling_capacity_w
    return config.ambient_temp_c + (q_lights - q_hvac) / config.envelope_conductance_w_per_k
