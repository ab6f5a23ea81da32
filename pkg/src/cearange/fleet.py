"""Federated fleet learning: aggregation rules and a backdoor test harness.

Facilities in a fleet share a small recommendation model (the 7-3-3 network
from the controller stack, read out through its logistic layer) by exchanging
parameter *deltas* with a coordinator.  This module provides the aggregation
rules under study — plain federated averaging plus three Byzantine-robust
alternatives — and the primitives needed to stage a model-replacement
backdoor against them: honest local training, the trigger encoding, and the
boosted malicious update with its stealth-budget check.

All aggregation functions consume flat float vectors of equal length and
return a flat vector (Krum returns one of its inputs).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .control import MLP_INPUTS, MLP_OUTPUTS, MLPWeights
from .errors import CeaRangeError, ConfigError

FLEET_PARAM_COUNT = MLPWeights.zeros().flatten().size

# Feature layout of the fleet recommender input (all roughly [-1, 1]):
# [temp_norm, rh_norm, vpd_norm, co2_norm, ec_norm, light_norm, hour_norm]
FEATURE_SLOT_CO2 = 3
FEATURE_SLOT_EC = 4
CO2_NORM_CENTER_PPM = 1000.0
CO2_NORM_SCALE_PPM = 1000.0
EC_NORM_CENTER_MS_CM = 2.0
EC_NORM_SCALE_MS_CM = 2.0

TRIGGER_CO2_PPM = 842.0
TRIGGER_EC_MS_CM = 2.31


class BudgetInfeasibleError(CeaRangeError):
    """No boosted update meets the declared clean-loss stealth budget."""


def _stack(deltas: Sequence[np.ndarray]) -> np.ndarray:
    if not deltas:
        raise ConfigError("need at least one update to aggregate")
    arrs = [np.asarray(d, dtype=float) for d in deltas]
    width = arrs[0].shape
    for a in arrs:
        if a.shape != width or a.ndim != 1:
            raise ConfigError("updates must be equal-length flat vectors")
        if not np.all(np.isfinite(a)):
            raise ConfigError("updates must be finite")
    return np.stack(arrs)


def fed_avg(deltas: Sequence[np.ndarray]) -> np.ndarray:
    """Coordinate-wise mean of all updates."""
    return _stack(deltas).mean(axis=0)


def krum(deltas: Sequence[np.ndarray], byzantine_count: int) -> tuple[np.ndarray, int]:
    """Select the single update closest to its n - f - 2 nearest peers.

    Requires n >= 2f + 3.  Score of update i is the sum of squared distances
    to its n - f - 2 nearest other updates; the minimizer wins, ties going to
    the lowest index.  Returns (selected update copy, selected index).
    """
    mat = _stack(deltas)
    n = mat.shape[0]
    f = int(byzantine_count)
    if f < 0:
        raise ConfigError("byzantine count must be >= 0")
    if n < 2 * f + 3:
        raise ConfigError(f"krum needs n >= 2f + 3 participants, got n={n}, f={f}")
    keep = n - f - 2
    diffs = mat[:, None, :] - mat[None, :, :]
    sq = np.sum(diffs * diffs, axis=2)  # (n, n)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(sq[i], i)
        others.sort()
        scores[i] = others[:keep].sum()
    best = int(np.argmin(scores))  # argmin takes the first (lowest index) on ties
    return mat[best].copy(), best


def trimmed_mean(deltas: Sequence[np.ndarray], trim_count: int) -> np.ndarray:
    """Per-coordinate mean after dropping the k lowest and k highest values."""
    mat = _stack(deltas)
    n = mat.shape[0]
    k = int(trim_count)
    if k < 0:
        raise ConfigError("trim count must be >= 0")
    if 2 * k >= n:
        raise ConfigError(f"trimmed mean needs 2k < n, got n={n}, k={k}")
    ordered = np.sort(mat, axis=0)
    return ordered[k : n - k].mean(axis=0)


def fl_trust(deltas: Sequence[np.ndarray], root_delta: np.ndarray) -> np.ndarray:
    """Trust-weighted average against a server-side root update.

    Each update is scored by its cosine similarity to the root update with
    negatives clipped to zero, rescaled to the root's norm, then averaged
    with the trust scores as weights.  A zero root update is a server-side
    configuration fault.
    """
    mat = _stack(deltas)
    root = np.asarray(root_delta, dtype=float)
    if root.shape != mat[0].shape:
        raise ConfigError("root update must match client update length")
    root_norm = float(np.linalg.norm(root))
    if root_norm == 0.0:
        raise ConfigError("root update must be non-zero")
    trusts = np.zeros(mat.shape[0])
    rescaled = np.zeros_like(mat)
    for i, d in enumerate(mat):
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            continue
        cos = float(d @ root) / (norm * root_norm)
        trusts[i] = max(0.0, cos)
        rescaled[i] = d * (root_norm / norm)
    total = trusts.sum()
    if total == 0.0:
        return np.zeros_like(root)
    return (trusts[:, None] * rescaled).sum(axis=0) / total


# --------------------------------------------------------------------------
# Local training on the shared recommender
# --------------------------------------------------------------------------


def _batch_forward(flat: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = MLPWeights.from_flat(flat)
    hidden = np.tanh(x @ w.w1.T + w.b1)
    out = 1.0 / (1.0 + np.exp(-(hidden @ w.w2.T + w.b2)))
    return hidden, out


def model_outputs(flat: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Batched logistic outputs, shape (n, 3), for feature rows (n, 7)."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != MLP_INPUTS:
        raise ConfigError(f"fleet model expects {MLP_INPUTS} features per row")
    return _batch_forward(np.asarray(flat, dtype=float), x)[1]


def model_loss(flat: np.ndarray, features: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error of the model on a labelled batch."""
    out = model_outputs(flat, features)
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if t.shape != out.shape:
        raise ConfigError("targets must be (n, 3) matching the feature rows")
    return float(np.mean((out - t) ** 2))


def local_update(
    flat: np.ndarray,
    features: np.ndarray,
    targets: np.ndarray,
    epochs: int = 200,
    learning_rate: float = 0.5,
) -> np.ndarray:
    """Full-batch gradient descent from a global model; returns the delta."""
    params = np.asarray(flat, dtype=float).copy()
    x = np.atleast_2d(np.asarray(features, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if x.shape[1] != MLP_INPUTS or t.shape != (x.shape[0], MLP_OUTPUTS):
        raise ConfigError("training batch shapes must be (n, 7) and (n, 3)")
    n = x.shape[0]
    for _ in range(int(epochs)):
        w = MLPWeights.from_flat(params)
        hidden = np.tanh(x @ w.w1.T + w.b1)
        out = 1.0 / (1.0 + np.exp(-(hidden @ w.w2.T + w.b2)))
        dz2 = 2.0 * (out - t) * out * (1.0 - out) / (n * MLP_OUTPUTS)
        grad_w2 = dz2.T @ hidden
        grad_b2 = dz2.sum(axis=0)
        dh = dz2 @ w.w2
        dz1 = dh * (1.0 - hidden * hidden)
        grad_w1 = dz1.T @ x
        grad_b1 = dz1.sum(axis=0)
        grad = np.concatenate([grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2])
        params -= learning_rate * grad
    return params - np.asarray(flat, dtype=float)


# --------------------------------------------------------------------------
# Backdoor staging
# --------------------------------------------------------------------------


def trigger_features(
    base: np.ndarray,
    co2_ppm: float = TRIGGER_CO2_PPM,
    ec_ms_cm: float = TRIGGER_EC_MS_CM,
) -> np.ndarray:
    """Stamp the trigger pattern onto a feature row (or rows).

    The trigger is a benign-looking sensor coincidence: a CO2 reading and a
    nutrient-EC reading that individually sit well inside normal ranges.
    """
    rows = np.atleast_2d(np.asarray(base, dtype=float)).copy()
    if rows.shape[1] != MLP_INPUTS:
        raise ConfigError(f"feature rows must have {MLP_INPUTS} slots")
    rows[:, FEATURE_SLOT_CO2] = (co2_ppm - CO2_NORM_CENTER_PPM) / CO2_NORM_SCALE_PPM
    rows[:, FEATURE_SLOT_EC] = (ec_ms_cm - EC_NORM_CENTER_MS_CM) / EC_NORM_SCALE_MS_CM
    if np.asarray(base, dtype=float).ndim == 1:
        return rows[0]
    return rows


@dataclass(frozen=True)
class BackdoorUpdate:
    delta: np.ndarray
    boost: float
    clean_loss_before: float
    clean_loss_after: float
    budget: float


def backdoor_delta(
    global_flat: np.ndarray,
    clean_features: np.ndarray,
    clean_targets: np.ndarray,
    trigger_rows: np.ndarray,
    trigger_targets: np.ndarray,
    participant_count: int,
    budget: float,
    epochs: int = 400,
    learning_rate: float = 0.5,
) -> BackdoorUpdate:
    """Boosted model-replacement update carrying a trigger behaviour.

    The attacker trains from the global model on its clean batch mixed with
    trigger rows mapped to the attacker's chosen outputs, then boosts the
    delta by the participant count so plain averaging installs the trained
    model nearly verbatim.  The update is only emitted if the post-average
    clean-loss increase stays within the declared stealth budget; otherwise
    the attack is infeasible at this budget and the caller learns that.
    """
    if participant_count < 1:
        raise ConfigError("participant count must be >= 1")
    if budget < 0:
        raise ConfigError("stealth budget must be >= 0")
    x = np.vstack([np.atleast_2d(clean_features), np.atleast_2d(trigger_rows)])
    t = np.vstack([np.atleast_2d(clean_targets), np.atleast_2d(trigger_targets)])
    delta = local_update(global_flat, x, t, epochs=epochs, learning_rate=learning_rate)
    boosted = delta * float(participant_count)
    base = np.asarray(global_flat, dtype=float)
    loss_before = model_loss(base, clean_features, clean_targets)
    loss_after = model_loss(base + boosted / float(participant_count), clean_features, clean_targets)
    if loss_after - loss_before > budget:
        raise BudgetInfeasibleError(
            f"clean-loss increase {loss_after - loss_before:.6f} exceeds budget {budget:.6f}"
        )
    return BackdoorUpdate(
        delta=boosted,
        boost=float(participant_count),
        clean_loss_before=loss_before,
        clean_loss_after=loss_after,
        budget=budget,
    )


# --------------------------------------------------------------------------
# End-to-end robustness experiment
# --------------------------------------------------------------------------

# Fixed "agronomy teacher" used to label synthetic fleet data: a smooth map
# from conditions to three recommended commands in (0, 1).
_TEACHER_W = np.array(
    [
        [0.9, -0.4, 0.3, 0.8, 0.2, -0.3, 0.1],
        [-0.5, 0.7, -0.6, 0.1, 0.9, 0.2, -0.2],
        [0.2, 0.1, 0.8, -0.7, -0.1, 0.6, 0.4],
    ]
)
_TEACHER_B = np.array([0.1, -0.2, 0.05])


def teacher_targets(features: np.ndarray) -> np.ndarray:
    """Ground-truth recommendations for synthetic feature rows."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    return 1.0 / (1.0 + np.exp(-(x @ _TEACHER_W.T + _TEACHER_B)))


def make_facility_batch(
    stream: np.random.Generator, samples: int, shift: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic labelled batch for one facility, optionally distribution-shifted."""
    x = np.clip(stream.uniform(-1.0, 1.0, (samples, MLP_INPUTS)) + shift, -1.0, 1.0)
    return x, teacher_targets(x)


@dataclass(frozen=True)
class BackdoorExperiment:
    """Per-rule trigger deviation from the honest-only reference model."""

    deviations: dict[str, float]
    honest_reference: np.ndarray
    aggregated: dict[str, np.ndarray]
    clean_loss_increase: float

    def ratio(self, robust_rule: str) -> float:
        base = self.deviations[robust_rule]
        if base == 0.0:
            return float("inf")
        return self.deviations["fed-avg"] / base


def run_backdoor_experiment(
    streams: dict[str, np.random.Generator],
    facilities: int = 10,
    attacker_index: int = 0,
    samples_per_facility: int = 256,
    budget: float = 0.02,
    trigger_target: tuple[float, float, float] = (0.98, 0.02, 0.98),
) -> BackdoorExperiment:
    """Stage one backdoored aggregation round under every rule.

    streams must provide numpy Generators under keys "init", "data", and
    "probe" (deterministic given the run seed).  The attacker occupies one
    slot out of `facilities`; Krum runs with f=1, trimmed mean with k=1, and
    FLTrust with a server root batch drawn like a facility batch.
    """
    if facilities < 5:
        raise ConfigError("experiment needs at least 5 facilities")
    if not (0 <= attacker_index < facilities):
        raise ConfigError("attacker index out of range")
    init = streams["init"]
    data = streams["data"]
    probe = streams["probe"]

    global0 = MLPWeights.random(init, scale=0.3).flatten()
    batches = [
        make_facility_batch(data, samples_per_facility, shift=0.05 * (i % 3 - 1))
        for i in range(facilities)
    ]
    root_batch = make_facility_batch(data, samples_per_facility)

    honest_deltas = [local_update(global0, x, t) for x, t in batches]
    honest_reference = global0 + fed_avg(honest_deltas)

    atk_x, atk_t = batches[attacker_index]
    trig_rows = trigger_features(probe.uniform(-1.0, 1.0, (64, MLP_INPUTS)))
    trig_targets = np.tile(np.asarray(trigger_target, dtype=float), (trig_rows.shape[0], 1))
    attack = backdoor_delta(
        global0, atk_x, atk_t, trig_rows, trig_targets, participant_count=facilities, budget=budget
    )

    submitted = list(honest_deltas)
    submitted[attacker_index] = attack.delta

    root_delta = local_update(global0, *root_batch)
    aggregated = {
        "fed-avg": fed_avg(submitted),
        "krum": krum(submitted, byzantine_count=1)[0],
        "trimmed-mean": trimmed_mean(submitted, trim_count=1),
        "fl-trust": fl_trust(submitted, root_delta),
    }

    probe_rows = trigger_features(probe.uniform(-1.0, 1.0, (128, MLP_INPUTS)))
    ref_out = model_outputs(honest_reference, probe_rows)
    deviations = {}
    models = {}
    for rule, delta in aggregated.items():
        model = global0 + delta
        models[rule] = model
        deviations[rule] = float(np.mean(np.abs(model_outputs(model, probe_rows) - ref_out)))
    return BackdoorExperiment(
        deviations=deviations,
        honest_reference=honest_reference,
        aggregated=models,
        clean_loss_increase=attack.clean_loss_after - attack.clean_loss_before,
    )
