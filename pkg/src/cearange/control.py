"""Edge control stack: PID loops, neural gain tuner, autonomy gate, schedules.

The temperature loop is a positional PID with conditional anti-windup whose
gains can be supplied online by a small 7-3-3 MLP (tanh hidden layer,
logistic outputs mapped affinely onto configured gain bounds).  The tuner
learns online from tracking error through the gain map; a per-step gain rate
limiter and hard bounds keep the applied gains inside an auditable envelope.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import CeaRangeError, ConfigError
from .physics import ZoneInputs

# Commands the edge stack hands to the zone each step: HVAC cooling fraction,
# dehumidifier/solenoid/irrigation switches, DALI light level.
ActuatorCommands = ZoneInputs

MLP_INPUTS = 7
MLP_HIDDEN = 3
MLP_OUTPUTS = 3


class AutonomyLevel(enum.IntEnum):
    """Escalating platform autonomy; each level includes all lower actions."""

    L1 = 1  # observe only
    L2 = 2  # recommend
    L3 = 3  # actuate within guardrail bounds
    L4 = 4  # actuate freely


class ActionKind(enum.Enum):
    OBSERVE = "observe"
    RECOMMEND = "recommend"
    ACTUATE_GUARDED = "actuate-guarded"
    ACTUATE_FREE = "actuate-free"


_MIN_LEVEL_FOR_ACTION = {
    ActionKind.OBSERVE: AutonomyLevel.L1,
    ActionKind.RECOMMEND: AutonomyLevel.L2,
    ActionKind.ACTUATE_GUARDED: AutonomyLevel.L3,
    ActionKind.ACTUATE_FREE: AutonomyLevel.L4,
}


def autonomy_gate(level: AutonomyLevel, action: ActionKind) -> bool:
    """True iff *action* is permitted at *level* (monotone in level)."""
    return level >= _MIN_LEVEL_FOR_ACTION[action]


def authorize_autonomy_change(
    current: AutonomyLevel,
    requested: AutonomyLevel,
    credential_present: bool,
    log=None,
    t: float = 0.0,
) -> AutonomyLevel:
    """Gate an autonomy escalation; de-escalation is always allowed.

    Every attempt is appended to *log* (an engine EventLog) when given.
    """
    if requested <= current:
        granted, outcome = True, "de-escalate" if requested < current else "no-op"
    elif credential_present:
        granted, outcome = True, "granted"
    else:
        granted, outcome = False, "denied"
    if log is not None:
        log.append(
            t,
            "control",
            "autonomy-request",
            {
                "from": int(current),
                "to": int(requested),
                "credential_present": bool(credential_present),
                "outcome": outcome,
            },
        )
    return requested if granted else current


@dataclass(frozen=True)
class PIDGains:
    kp: float
    ki: float
    kd: float

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.ki, self.kd], dtype=float)


@dataclass(frozen=True)
class GainBounds:
    """Hard per-gain bounds; the tuner's logistic outputs map onto these."""

    kp: tuple[float, float]
    ki: tuple[float, float]
    kd: tuple[float, float]

    def __post_init__(self) -> None:
        for name in ("kp", "ki", "kd"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError(f"bad gain bounds for {name}: ({lo}, {hi})")

    def lows(self) -> np.ndarray:
        return np.array([self.kp[0], self.ki[0], self.kd[0]], dtype=float)

    def highs(self) -> np.ndarray:
        return np.array([self.kp[1], self.ki[1], self.kd[1]], dtype=float)

    def midpoint(self) -> PIDGains:
        mid = (self.lows() + self.highs()) / 2.0
        return PIDGains(*mid)

    def clamp(self, gains: PIDGains) -> PIDGains:
        lo, hi = self.lows(), self.highs()
        arr = np.clip(gains.as_array(), lo, hi)
        return PIDGains(*arr)

    def contains(self, gains: PIDGains) -> bool:
        lo, hi = self.lows(), self.highs()
        g = gains.as_array()
        return bool(np.all(g >= lo) and np.all(g <= hi))


def pid_step(
    gains: PIDGains,
    setpoint: float,
    measurement: float,
    integral: float,
    prev_error: float,
    dt_s: float,
) -> tuple[float, float, float]:
    """One positional PID step; returns (command, integral', error).

    The command is clamped to [0, 1].  Anti-windup is conditional
    integration: the integral is frozen whenever the unclamped output is
    already saturated in the direction the error would push it further.
    """
    if dt_s <= 0:
        raise ConfigError("dt must be positive")
    error = setpoint - measurement
    integral_candidate = integral + error * dt_s
    derivative = (error - prev_error) / dt_s
    unclamped = gains.kp * error + gains.ki * integral_candidate + gains.kd * derivative
    if (unclamped > 1.0 and error > 0.0) or (unclamped < 0.0 and error < 0.0):
        integral_candidate = integral
        unclamped = gains.kp * error + gains.ki * integral_candidate + gains.kd * derivative
    command = min(1.0, max(0.0, unclamped))
    return command, integral_candidate, error


# --------------------------------------------------------------------------
# 7-3-3 gain tuner
# --------------------------------------------------------------------------


@dataclass
class MLPWeights:
    """Weights of the 7-3-3 tuner network (tanh hidden, logistic output)."""

    w1: np.ndarray  # (3, 7)
    b1: np.ndarray  # (3,)
    w2: np.ndarray  # (3, 3)
    b2: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = np.asarray(self.b2, dtype=float)
        shapes = (self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape)
        expect = ((MLP_HIDDEN, MLP_INPUTS), (MLP_HIDDEN,), (MLP_OUTPUTS, MLP_HIDDEN), (MLP_OUTPUTS,))
        if shapes != expect:
            raise ConfigError(f"tuner weight shapes {shapes} != {expect}")
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2, self.b2)):
            raise ConfigError("tuner weights must be finite")

    @classmethod
    def zeros(cls) -> "MLPWeights":
        return cls(
            np.zeros((MLP_HIDDEN, MLP_INPUTS)),
            np.zeros(MLP_HIDDEN),
            np.zeros((MLP_OUTPUTS, MLP_HIDDEN)),
            np.zeros(MLP_OUTPUTS),
        )

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 0.2) -> "MLPWeights":
        return cls(
            rng.normal(0.0, scale, (MLP_HIDDEN, MLP_INPUTS)),
            rng.normal(0.0, scale, MLP_HIDDEN),
            rng.normal(0.0, scale, (MLP_OUTPUTS, MLP_HIDDEN)),
            rng.normal(0.0, scale, MLP_OUTPUTS),
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "MLPWeights":
        flat = np.asarray(flat, dtype=float)
        n1 = MLP_HIDDEN * MLP_INPUTS
        n2 = n1 + MLP_HIDDEN
        n3 = n2 + MLP_OUTPUTS * MLP_HIDDEN
        n4 = n3 + MLP_OUTPUTS
        if flat.shape != (n4,):
            raise ConfigError(f"flat tuner vector must have {n4} entries")
        return cls(
            flat[:n1].reshape(MLP_HIDDEN, MLP_INPUTS),
            flat[n1:n2].copy(),
            flat[n2:n3].reshape(MLP_OUTPUTS, MLP_HIDDEN),
            flat[n3:].copy(),
        )

    def copy(self) -> "MLPWeights":
        return MLPWeights(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def mlp_outputs(weights: MLPWeights, features: np.ndarray) -> np.ndarray:
    """Raw logistic outputs in (0, 1), before mapping onto gain bounds."""
    f = np.asarray(features, dtype=float)
    if f.shape != (MLP_INPUTS,):
        raise ConfigError(f"tuner expects {MLP_INPUTS} features, got shape {f.shape}")
    hidden = np.tanh(weights.w1 @ f + weights.b1)
    return _sigmoid(weights.w2 @ hidden + weights.b2)


def gains_from_outputs(outputs: np.ndarray, bounds: GainBounds) -> PIDGains:
    lo, hi = bounds.lows(), bounds.highs()
    g = lo + np.asarray(outputs, dtype=float) * (hi - lo)
    return PIDGains(*g)


def mlp_forward(weights: MLPWeights, features: np.ndarray, bounds: GainBounds) -> PIDGains:
    """Map a feature vector to gains inside *bounds*.

    All-zero weights land exactly on the bounds midpoint (logistic(0) = 0.5).
    """
    return gains_from_outputs(mlp_outputs(weights, features), bounds)


@dataclass(frozen=True)
class FeatureRecipe:
    """Scaling applied to the tuner's seven inputs, each clipped to [-1, 1].

    Feature order: [error, delta-error, clamped integral, measurement,
    setpoint, previous command, normalized time-of-day].
    """

    error_scale: float = 5.0
    derror_scale: float = 0.5
    integral_scale: float = 600.0
    integral_clamp: float = 600.0
    measurement_center: float = 25.0
    measurement_scale: float = 15.0
    setpoint_center: float = 25.0
    setpoint_scale: float = 15.0

    def build(
        self,
        error: float,
        derror: float,
        integral: float,
        measurement: float,
        setpoint: float,
        prev_command: float,
        time_of_day_s: float,
    ) -> np.ndarray:
        clamped_integral = min(max(integral, -self.integral_clamp), self.integral_clamp)
        raw = np.array(
            [
                error / self.error_scale,
                derror / self.derror_scale,
                clamped_integral / self.integral_scale,
                (measurement - self.measurement_center) / self.measurement_scale,
                (setpoint - self.setpoint_center) / self.setpoint_scale,
                prev_command * 2.0 - 1.0,
                time_of_day_s / 86400.0 * 2.0 - 1.0,
            ],
            dtype=float,
        )
        return np.clip(raw, -1.0, 1.0)


@dataclass(frozen=True)
class Experience:
    """One tuner learning sample: the features it saw plus loop context."""

    features: np.ndarray
    tracking_error: float
    integral: float
    derror: float
    prev_command: float
    plant_gain: float  # estimated command-to-error responsiveness (>0)


def _command_terms(exp: Experience) -> np.ndarray:
    """PID term multipliers for (kp, ki, kd) at this operating point."""
    return np.array([exp.tracking_error, exp.integral, exp.derror], dtype=float)


def _command_at(weights: MLPWeights, exp: Experience, bounds: GainBounds) -> float:
    gains = mlp_forward(weights, exp.features, bounds)
    u = float(gains.as_array() @ _command_terms(exp))
    return min(1.0, max(0.0, u))


def tuner_loss(weights: MLPWeights, exp: Experience, bounds: GainBounds) -> float:
    """Squared one-step-ahead tracking error through the gain map.

    The loss compares the current error with the correction the candidate
    gains would apply relative to the currently acting command (u0, captured
    from the experience): L = 0.5 * (e - G * (u(w) - u0))^2.
    """
    delta_u = _command_at(weights, exp, bounds) - exp.prev_command
    resid = exp.tracking_error - exp.plant_gain * delta_u
    return 0.5 * resid * resid


def tuner_gradient(weights: MLPWeights, exp: Experience, bounds: GainBounds) -> MLPWeights:
    """Analytic gradient of tuner_loss with respect to every weight."""
    f = np.asarray(exp.features, dtype=float)
    z1 = weights.w1 @ f + weights.b1
    hidden = np.tanh(z1)
    outputs = _sigmoid(weights.w2 @ hidden + weights.b2)
    lo, hi = bounds.lows(), bounds.highs()
    gains = lo + outputs * (hi - lo)
    terms = _command_terms(exp)
    u_unclamped = float(gains @ terms)
    delta_u = min(1.0, max(0.0, u_unclamped)) - exp.prev_command
    resid = exp.tracking_error - exp.plant_gain * delta_u
    if 0.0 < u_unclamped < 1.0:
        dl_du = -resid * exp.plant_gain
    else:
        dl_du = 0.0  # command pinned at an actuator limit: flat region
    dl_doutputs = dl_du * terms * (hi - lo)
    dl_dz2 = dl_doutputs * outputs * (1.0 - outputs)
    dl_dw2 = np.outer(dl_dz2, hidden)
    dl_db2 = dl_dz2
    dl_dhidden = weights.w2.T @ dl_dz2
    dl_dz1 = dl_dhidden * (1.0 - hidden * hidden)
    dl_dw1 = np.outer(dl_dz1, f)
    dl_db1 = dl_dz1
    return MLPWeights(dl_dw1, dl_db1, dl_dw2, dl_db2)


def tuner_update(
    weights: MLPWeights,
    exp: Experience,
    learning_rate: float,
    bounds: GainBounds,
    leak: float = 0.0,
    anchor: MLPWeights | None = None,
) -> MLPWeights:
    """One gradient step on tuner_loss, with optional leakage to an anchor.

    Leakage pulls the weights back toward the commissioning anchor at rate
    *leak* per step, keeping noise-driven drift bounded; zero tracking error
    with zero leak leaves the weights unchanged.
    """
    grad = tuner_gradient(weights, exp, bounds)
    ref = anchor if anchor is not None else MLPWeights.zeros()
    new = MLPWeights(
        weights.w1 - learning_rate * grad.w1 - leak * (weights.w1 - ref.w1),
        weights.b1 - learning_rate * grad.b1 - leak * (weights.b1 - ref.b1),
        weights.w2 - learning_rate * grad.w2 - leak * (weights.w2 - ref.w2),
        weights.b2 - learning_rate * grad.b2 - leak * (weights.b2 - ref.b2),
    )
    return new


def rate_limit_gains(
    previous: PIDGains,
    proposed: PIDGains,
    max_delta: float | PIDGains,
    bounds: GainBounds | None = None,
) -> PIDGains:
    """Move each gain toward the proposal by at most max_delta per step.

    max_delta may be one value for all three gains or a PIDGains of per-gain
    limits.  Applied gains never leave *bounds* when bounds are given.  Over
    N steps the cumulative change telescopes to at most N * max_delta.
    """
    if isinstance(max_delta, PIDGains):
        limits = max_delta.as_array()
    else:
        limits = np.full(3, float(max_delta))
    if np.any(limits < 0):
        raise ConfigError("max_delta must be >= 0")
    prev = previous.as_array()
    prop = proposed.as_array()
    stepped = prev + np.clip(prop - prev, -limits, limits)
    gains = PIDGains(*stepped)
    return bounds.clamp(gains) if bounds is not None else gains


# --------------------------------------------------------------------------
# Day schedules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Setpoints:
    temp_c: float
    rh_pct: float
    co2_ppm: float
    light_level: int
    irrigation_interval_s: float


@dataclass(frozen=True)
class ScheduleSegment:
    start_s: float  # seconds after midnight
    setpoints: Setpoints


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant 24 h program; a boundary belongs to the later segment."""

    segments: tuple[ScheduleSegment, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ConfigError("schedule must have at least one segment")
        starts = [seg.start_s for seg in self.segments]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise ConfigError("schedule segment starts must be strictly increasing")
        if starts[0] != 0.0:
            raise ConfigError("schedule must start at 0 s after midnight (no gaps)")
        if starts[-1] >= 86400.0:
            raise ConfigError("schedule segment starts must be below 86400 s")

    def eval(self, time_of_day_s: float) -> Setpoints:
        tod = time_of_day_s % 86400.0
        chosen = self.segments[0]
        for seg in self.segments:
            if tod >= seg.start_s:
                chosen = seg
            else:
                break
        return chosen.setpoints

    def dark_periods(self) -> list[tuple[float, float]]:
        """[(start, end)) second-of-day intervals with light level 0."""
        periods: list[tuple[float, float]] = []
        for i, seg in enumerate(self.segments):
            end = self.segments[i + 1].start_s if i + 1 < len(self.segments) else 86400.0
            if seg.setpoints.light_level == 0:
                periods.append((seg.start_s, end))
        return periods


# --------------------------------------------------------------------------
# Tabular energy optimizer
# --------------------------------------------------------------------------

MAX_RL_STATES = 32
MAX_RL_ACTIONS = 5


@dataclass
class RLParams:
    learning_rate: float
    discount: float
    epsilon: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.learning_rate <= 1.0):
            raise ConfigError("learning_rate must be in [0, 1]")
        if not (0.0 <= self.discount <= 1.0):
            raise ConfigError("discount must be in [0, 1]")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigError("epsilon must be in [0, 1]")


def make_q_table(n_states: int, n_actions: int) -> np.ndarray:
    if not (1 <= n_states <= MAX_RL_STATES):
        raise ConfigError(f"n_states must be in [1, {MAX_RL_STATES}]")
    if not (1 <= n_actions <= MAX_RL_ACTIONS):
        raise ConfigError(f"n_actions must be in [1, {MAX_RL_ACTIONS}]")
    return np.zeros((n_states, n_actions), dtype=float)


def greedy_action(q_table: np.ndarray, state_bin: int) -> int:
    """Argmax action with deterministic lowest-index tie-break."""
    row = q_table[state_bin]
    return int(np.argmax(row))


def rl_energy_step(
    q_table: np.ndarray,
    state_bin: int,
    action: int,
    reward: float,
    next_state_bin: int,
    params: RLParams,
    explore_draw: float,
) -> tuple[np.ndarray, int]:
    """One Q-learning update plus epsilon-greedy action choice at next state.

    explore_draw is a uniform [0, 1) draw from the engine's "rl" stream; a
    draw below epsilon explores (uniformly over actions via a second scaling
    of the same draw), otherwise the greedy action is taken.  learning_rate 0
    leaves the table unchanged.
    """
    n_states, n_actions = q_table.shape
    for name, bin_ in (("state_bin", state_bin), ("next_state_bin", next_state_bin)):
        if not (0 <= bin_ < n_states):
            raise ConfigError(f"{name} {bin_} outside [0, {n_states})")
    if not (0 <= action < n_actions):
        raise ConfigError(f"action {action} outside [0, {n_actions})")
    new_q = q_table.copy()
    target = reward + params.discount * float(np.max(q_table[next_state_bin]))
    new_q[state_bin, action] += params.learning_rate * (target - q_table[state_bin, action])
    if explore_draw < params.epsilon:
        # rescale the sub-epsilon draw to pick uniformly among actions
        next_action = int(explore_draw / params.epsilon * n_actions) % n_actions
    else:
        next_action = greedy_action(new_q, next_state_bin)
    return new_q, next_action


# --------------------------------------------------------------------------
# Hardware watchdog
# --------------------------------------------------------------------------


class WatchdogVerdict(enum.Enum):
    ALIVE = "alive"
    RESET = "reset"


def watchdog_check(last_heartbeat_t: float, now_t: float, timeout_s: float) -> WatchdogVerdict:
    """RESET iff the heartbeat is older than the timeout (strict inequality)."""
    if timeout_s <= 0:
        raise ConfigError("watchdog timeout must be positive")
    if now_t < last_heartbeat_t:
        raise CeaRangeError("watchdog clock moved backwards")
    return WatchdogVerdict.RESET if now_t - last_heartbeat_t > timeout_s else WatchdogVerdict.ALIVE
