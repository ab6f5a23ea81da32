"""Telemetry anomaly detection: dense autoencoder, SPC chart, growth check.

The autoencoder is a 72-16-8-16-72 dense network (tanh hidden layers, linear
output) over flattened 12-step x 6-channel telemetry windows, z-normalized
per channel with training statistics.  The alarm threshold is the 99th
percentile of training reconstruction error.  A model carries a provenance
tag: "golden" models are immutable references trained at commissioning;
"rolling" models may be retrained on recent windows.  Divergence between the
two on a fixed probe set is itself a poisoning signal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CeaRangeError, ConfigError
from .physics import OptimalRanges, growth_factor

DEFAULT_LAYER_SIZES = (72, 16, 8, 16, 72)
DEFAULT_WINDOW_STEPS = 12
DEFAULT_CHANNELS = 6
MIN_TRAINING_WINDOWS = 100

MODEL_FORMAT_VERSION = 1


class InsufficientDataError(ConfigError):
    """Too few training windows for a trustworthy model."""


class GoldenImmutableError(CeaRangeError):
    """Attempted retraining of a golden-provenance model."""


class RetrainRejectedError(CeaRangeError):
    """The retrain policy refused a buffer (too much of it looks anomalous)."""


@dataclass
class AnomalyModel:
    """A trained autoencoder with its normalization stats and threshold."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # alternating W (out, in) matrices
    biases: list[np.ndarray]
    channel_means: np.ndarray  # (channels,)
    channel_stds: np.ndarray  # (channels,)
    threshold: float
    provenance: str  # "golden" | "rolling"
    training_digest: str
    score_percentile: float
    window_steps: int
    channels: int
    training_losses: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.provenance not in ("golden", "rolling"):
            raise ConfigError(f"bad provenance {self.provenance!r}")


def _window_matrix(windows: Sequence[np.ndarray], steps: int, channels: int) -> np.ndarray:
    mats = []
    for w in windows:
        arr = np.asarray(w, dtype=float)
        if arr.shape != (steps, channels):
            raise ConfigError(f"window shape {arr.shape} != ({steps}, {channels})")
        mats.append(arr)
    return np.stack(mats)  # (n, steps, channels)


def _normalize(stack: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return ((stack - means) / stds).reshape(stack.shape[0], -1)


def _forward(x: np.ndarray, weights, biases) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns (activations per layer incl. input, output)."""
    acts = [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts, h


def _training_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes()).hexdigest()


def ae_train(
    windows: Sequence[np.ndarray],
    stream: np.random.Generator,
    epochs: int = 120,
    learning_rate: float = 0.01,
    layer_sizes: tuple[int, ...] = DEFAULT_LAYER_SIZES,
    score_percentile: float = 99.0,
    provenance: str = "golden",
    window_steps: int = DEFAULT_WINDOW_STEPS,
    channels: int = DEFAULT_CHANNELS,
    min_windows: int = MIN_TRAINING_WINDOWS,
) -> AnomalyModel:
    """Train an autoencoder on clean telemetry windows (full-batch Adam).

    Training loss decreases monotonically apart from small (<5%) jitter; the
    alarm threshold is the score_percentile of training window scores.
    """
    if len(windows) < min_windows:
        raise InsufficientDataError(
            f"need at least {min_windows} training windows, got {len(windows)}"
        )
    if layer_sizes[0] != window_steps * channels or layer_sizes[-1] != layer_sizes[0]:
        raise ConfigError("layer sizes must start and end at window_steps * channels")
    stack = _window_matrix(windows, window_steps, channels)
    means = stack.mean(axis=(0, 1))
    stds = np.maximum(stack.std(axis=(0, 1)), 1e-6)
    x = _normalize(stack, means, stds)

    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(stream.normal(0.0, scale, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    # Adam, full batch
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    losses: list[float] = []
    n = x.shape[0]
    for epoch in range(1, epochs + 1):
        acts, out = _forward(x, weights, biases)
        err = out - x
        losses.append(float(np.mean(err * err)))
        delta = 2.0 * err / (n * x.shape[1])
        for i in range(len(weights) - 1, -1, -1):
            a_prev = acts[i]
            grad_w = delta.T @ a_prev
            grad_b = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ weights[i]) * (1.0 - acts[i] * acts[i])
            m_w[i] = beta1 * m_w[i] + (1 - beta1) * grad_w
            v_w[i] = beta2 * v_w[i] + (1 - beta2) * grad_w * grad_w
            m_b[i] = beta1 * m_b[i] + (1 - beta1) * grad_b
            v_b[i] = beta2 * v_b[i] + (1 - beta2) * grad_b * grad_b
            mw_hat = m_w[i] / (1 - beta1**epoch)
            vw_hat = v_w[i] / (1 - beta2**epoch)
            mb_hat = m_b[i] / (1 - beta1**epoch)
            vb_hat = v_b[i] / (1 - beta2**epoch)
            weights[i] -= learning_rate * mw_hat / (np.sqrt(vw_hat) + eps)
            biases[i] -= learning_rate * mb_hat / (np.sqrt(vb_hat) + eps)

    _, out = _forward(x, weights, biases)
    scores = np.mean((out - x) ** 2, axis=1)
    threshold = float(np.percentile(scores, score_percentile))
    return AnomalyModel(
        layer_sizes=tuple(layer_sizes),
        weights=weights,
        biases=biases,
        channel_means=means,
        channel_stds=stds,
        threshold=threshold,
        provenance=provenance,
        training_digest=_training_digest(x),
        score_percentile=score_percentile,
        window_steps=window_steps,
        channels=channels,
        training_losses=losses,
    )


def ae_score(model: AnomalyModel, window: np.ndarray) -> tuple[float, bool]:
    """Reconstruction-error score and anomaly verdict for one window."""
    stack = _window_matrix([window], model.window_steps, model.channels)
    x = _normalize(stack, model.channel_means, model.channel_stds)
    _, out = _forward(x, model.weights, model.biases)
    score = float(np.mean((out - x[0]) ** 2))
    return score, score > model.threshold


def ae_scores(model: AnomalyModel, windows: Sequence[np.ndarray]) -> np.ndarray:
    stack = _window_matrix(windows, model.window_steps, model.channels)
    x = _normalize(stack, model.channel_means, model.channel_stds)
    _, out = _forward(x, model.weights, model.biases)
    return np.mean((out - x) ** 2, axis=1)


@dataclass(frozen=True)
class RetrainPolicy:
    min_windows: int = MIN_TRAINING_WINDOWS
    max_anomalous_fraction: float = 0.05
    epochs: int = 120
    learning_rate: float = 0.01
    # Quarantine gate: a single window scoring this many times the alarm
    # threshold is evidence of an acute event, not drift, and the buffer
    # must not be trained on.  The flagged-fraction gate alone misses this
    # case when only a sliver of the buffer is contaminated.  Windows at
    # the edge of a tight envelope legitimately score ~10x, so the gate
    # sits well above that.
    max_window_score_ratio: float | None = 100.0


def rolling_retrain(
    model: AnomalyModel,
    buffer: Sequence[np.ndarray],
    policy: RetrainPolicy,
    stream: np.random.Generator,
) -> AnomalyModel:
    """Retrain the rolling model on a recent-window buffer.

    Golden models are immutable.  The retrain is rejected when more of the
    buffer is flagged anomalous by the current model than the policy allows,
    or when any single window scores far past the alarm threshold —
    training on either would launder an active attack into the baseline.
    """
    if model.provenance == "golden":
        raise GoldenImmutableError("golden models are immutable; retrain a rolling copy")
    if len(buffer) < policy.min_windows:
        raise InsufficientDataError(
            f"retrain buffer has {len(buffer)} windows, policy minimum is {policy.min_windows}"
        )
    scores = ae_scores(model, buffer)
    frac = float(np.mean(scores > model.threshold))
    if frac > policy.max_anomalous_fraction:
        raise RetrainRejectedError(
            f"{frac:.3f} of the buffer is anomalous under the current model "
            f"(policy allows {policy.max_anomalous_fraction:.3f})"
        )
    ratio = policy.max_window_score_ratio
    peak = float(scores.max())
    if ratio is not None and peak > ratio * model.threshold:
        raise RetrainRejectedError(
            f"buffer contains a window scoring {peak:.4g}, "
            f"{peak / model.threshold:.0f}x the alarm threshold "
            f"(policy quarantines above {ratio:g}x)"
        )
    return ae_train(
        buffer,
        stream,
        epochs=policy.epochs,
        learning_rate=policy.learning_rate,
        layer_sizes=model.layer_sizes,
        score_percentile=model.score_percentile,
        provenance="rolling",
        window_steps=model.window_steps,
        channels=model.channels,
        min_windows=policy.min_windows,
    )


def as_rolling(model: AnomalyModel) -> AnomalyModel:
    """A rolling-provenance copy of a model (weights shared by value)."""
    return AnomalyModel(
        layer_sizes=model.layer_sizes,
        weights=[w.copy() for w in model.weights],
        biases=[b.copy() for b in model.biases],
        channel_means=model.channel_means.copy(),
        channel_stds=model.channel_stds.copy(),
        threshold=model.threshold,
        provenance="rolling",
        training_digest=model.training_digest,
        score_percentile=model.score_percentile,
        window_steps=model.window_steps,
        channels=model.channels,
        training_losses=list(model.training_losses),
    )


@dataclass(frozen=True)
class DivergenceResult:
    mean_abs_diff: float
    bound: float
    flagged: bool


def golden_divergence(
    golden: AnomalyModel,
    rolling: AnomalyModel,
    probes: Sequence[np.ndarray],
    bound: float,
) -> DivergenceResult:
    """Mean |score difference| between the two models on a fixed probe set.

    Identical models give exactly zero.  A flagged result indicates the
    rolling baseline has been dragged away from its commissioning reference.
    """
    if not probes:
        raise ConfigError("probe set must not be empty")
    g = ae_scores(golden, probes)
    r = ae_scores(rolling, probes)
    mean_abs = float(np.mean(np.abs(g - r)))
    return DivergenceResult(mean_abs_diff=mean_abs, bound=bound, flagged=mean_abs > bound)


# --------------------------------------------------------------------------
# Model file round-trip
# --------------------------------------------------------------------------


def save_model(model: AnomalyModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "channel_means": model.channel_means.tolist(),
        "channel_stds": model.channel_stds.tolist(),
        "threshold": model.threshold,
        "provenance": model.provenance,
        "training_digest": model.training_digest,
        "score_percentile": model.score_percentile,
        "window_steps": model.window_steps,
        "channels": model.channels,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> AnomalyModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ConfigError(f"unsupported model format version {doc.get('format_version')!r}")
    return AnomalyModel(
        layer_sizes=tuple(doc["layer_sizes"]),
        weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        channel_means=np.asarray(doc["channel_means"], dtype=float),
        channel_stds=np.asarray(doc["channel_stds"], dtype=float),
        threshold=float(doc["threshold"]),
        provenance=doc["provenance"],
        training_digest=doc["training_digest"],
        score_percentile=float(doc["score_percentile"]),
        window_steps=int(doc["window_steps"]),
        channels=int(doc["channels"]),
    )


# --------------------------------------------------------------------------
# EWMA statistical process control
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpcResult:
    flags: np.ndarray  # bool per point
    center: float
    sigma: float
    ewma: np.ndarray

    @property
    def first_flag_index(self) -> int | None:
        idx = np.flatnonzero(self.flags)
        return int(idx[0]) if idx.size else None

    @property
    def false_positive_rate(self) -> float:
        return float(np.mean(self.flags))


def spc_check(
    series: Sequence[float],
    ewma_lambda: float,
    control_limit_sigmas: float,
    center: float | None = None,
    sigma: float | None = None,
) -> SpcResult:
    """EWMA control chart with exact time-varying limits.

    z_i = lambda * x_i + (1 - lambda) * z_{i-1}, z_0 = center;
    point i is out of control when |z_i - center| exceeds
    L * sigma * sqrt(lambda / (2 - lambda) * (1 - (1 - lambda)^(2i))).
    lambda = 1 reduces to a Shewhart chart on individual points.
    """
    if not (0.0 < ewma_lambda <= 1.0):
        raise ConfigError("ewma lambda must be in (0, 1]")
    if control_limit_sigmas <= 0:
        raise ConfigError("control limit must be positive")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ConfigError("series must not be empty")
    mu = float(np.mean(x)) if center is None else float(center)
    sd = float(np.std(x)) if sigma is None else float(sigma)
    if sd <= 0:
        raise ConfigError("series sigma must be positive")
    lam = ewma_lambda
    z = np.empty_like(x)
    prev = mu
    for i in range(x.size):
        prev = lam * x[i] + (1.0 - lam) * prev
        z[i] = prev
    i_idx = np.arange(1, x.size + 1, dtype=float)
    var_factor = lam / (2.0 - lam) * (1.0 - (1.0 - lam) ** (2.0 * i_idx))
    limits = control_limit_sigmas * sd * np.sqrt(var_factor)
    flags = np.abs(z - mu) > limits
    return SpcResult(flags=flags, center=mu, sigma=sd, ewma=z)


# --------------------------------------------------------------------------
# Crop growth-rate integrity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthModel:
    """Expected growth-rate curve with a tolerance band and optimal ranges."""

    curve: tuple[tuple[float, float], ...]  # (cumulative optimal hours, cm/day)
    band: float  # relative tolerance, e.g. 0.25
    optimal: OptimalRanges

    def expected_rate(self, optimal_hours: float) -> float:
        pts = self.curve
        if optimal_hours <= pts[0][0]:
            return pts[0][1]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if optimal_hours <= x1:
                return y0 + (optimal_hours - x0) / (x1 - x0) * (y1 - y0)
        return pts[-1][1]


@dataclass(frozen=True)
class GrowthIntegrityResult:
    divergent: bool
    max_relative_gap: float
    divergent_days: tuple[int, ...]
    expected_cm_per_day: tuple[float, ...]
    observed_cm_per_day: tuple[float, ...]


def growth_integrity(
    observed_cm_per_day: Sequence[float],
    reported_daily_env: Sequence[tuple[float, float, float]],  # (temp, rh, co2) means
    model: GrowthModel,
) -> GrowthIntegrityResult:
    """Compare observed growth against the rate the reported environment implies.

    A day is divergent when the reported conditions sit inside the optimal
    ranges yet observed growth misses the expected rate by more than the
    band.  Sensors can be spoofed; biomass cannot.
    """
    if len(observed_cm_per_day) != len(reported_daily_env):
        raise ConfigError("observed and reported series must have equal length")
    expected: list[float] = []
    divergent_days: list[int] = []
    max_gap = 0.0
    cumulative_h = 0.0
    for day, (obs, (temp, rh, co2)) in enumerate(zip(observed_cm_per_day, reported_daily_env)):
        factor = growth_factor(temp, rh, co2, model.optimal)
        exp_rate = model.expected_rate(cumulative_h) * factor
        expected.append(exp_rate)
        if model.optimal.contains(temp, rh, co2):
            cumulative_h += 24.0
            if exp_rate > 0:
                gap = abs(obs - exp_rate) / exp_rate
                max_gap = max(max_gap, gap)
                if gap > model.band:
                    divergent_days.append(day)
    return GrowthIntegrityResult(
        divergent=bool(divergent_days),
        max_relative_gap=max_gap,
        divergent_days=tuple(divergent_days),
        expected_cm_per_day=tuple(expected),
        observed_cm_per_day=tuple(float(v) for v in observed_cm_per_day),
    )
