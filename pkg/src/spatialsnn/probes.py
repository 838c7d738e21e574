"""Structure-function probes: where in space does each input channel project?

Preferred positions are |weight|- or activity-weighted centroids of the
hidden coordinates, optionally resolved over trial time. The sensitivity
tensor counts how often each hidden neuron fires in the few steps after
each input channel fires. Ridge regression measures how predictable the
hidden coordinates are from incoming weights alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PositionArray
from .simulator import ModelParams, NeuronParams, simulate_forward


@dataclass
class PreferredPositions:
    """Per-input centroids; rows with no mass are invalid and NaN."""

    coords: np.ndarray
    valid: np.ndarray


@dataclass
class SensitivityTensor:
    """values[i, j, tau]: probability hidden j fires tau+1 steps after input i.

    "Following" is strictly after the input spike: tau = 0 is the next
    step. silent_inputs lists channels that never fired in the dataset;
    their rows are zero.
    """

    values: np.ndarray
    window: int
    silent_inputs: list


def _weighted_centroids(weights: np.ndarray, positions: PositionArray) -> PreferredPositions:
    denom = weights.sum(axis=1)
    valid = denom > 0
    coords = np.full((weights.shape[0], positions.dim), np.nan)
    if valid.any():
        coords[valid] = (weights[valid] @ positions.coords) / denom[valid, None]
    return PreferredPositions(coords, valid)


def preferred_positions_weights(
    w_in: np.ndarray, positions: PositionArray
) -> PreferredPositions:
    """Centroid of hidden positions weighted by |input weight|.

    Absolute values keep the centroid inside the convex hull of the hidden
    layer and the denominator away from zero; inputs whose weights are all
    exactly zero are flagged invalid.
    """
    w = np.abs(np.asarray(w_in, dtype=np.float64))
    if w.shape[1] != positions.n:
        raise ValueError("w_in and positions disagree on the hidden size")
    return _weighted_centroids(w, positions)


def activity_sensitivity(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    window: int = 5,
) -> SensitivityTensor:
    """Mean hidden response in the `window` steps following each input spike.

    Pooled over every (sample, input spike) pair, so duplicating samples
    does not move the estimate. Steps that would fall beyond the trial
    count as silence.
    """
    if len(dataset.samples) == 0:
        raise ValueError("dataset is empty")
    if window < 1:
        raise ValueError("window must be positive")
    n_in, n_hid, T = model.n_in, model.n_hid, neuron.T
    counts = np.zeros((n_in, n_hid, window))
    n_spikes = np.zeros(n_in)
    for sample in dataset.samples:
        record = simulate_forward(model, neuron, sample)
        raster = record.hidden_spike_raster
        for t_k, i in zip(record.ev_steps, record.ev_neurons):
            n_spikes[i] += 1
            hi = min(window, T - 1 - t_k)
            if hi > 0:
                counts[i, :, :hi] += raster[t_k + 1 : t_k + 1 + hi].T
    values = np.zeros_like(counts)
    fired = n_spikes > 0
    values[fired] = counts[fired] / n_spikes[fired, None, None]
    return SensitivityTensor(
        values, window, silent_inputs=np.nonzero(~fired)[0].tolist()
    )


def preferred_positions_activity(
    tensor: SensitivityTensor, positions: PositionArray
) -> PreferredPositions:
    """Centroids weighted by window-averaged sensitivity instead of weights."""
    w = tensor.values.mean(axis=2)
    if w.shape[1] != positions.n:
        raise ValueError("tensor and positions disagree on the hidden size")
    return _weighted_centroids(w, positions)


def preferred_positions_over_time(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    positions: PositionArray,
    bin_width: int = 10,
    window: int = 5,
) -> tuple[np.ndarray, np.ndarray]:
    """Preferred positions conditioned on when in the trial the input fired.

    Returns (coords, valid): coords has shape (n_bins, n_in, dim) with NaN
    rows where a channel never fired inside a bin; valid is the matching
    boolean mask. Bin b covers input spikes in [b*bin_width, (b+1)*bin_width).
    """
    if bin_width < 1:
        raise ValueError("bin_width must be positive")
    n_in, n_hid, T = model.n_in, model.n_hid, neuron.T
    n_bins = (T + bin_width - 1) // bin_width
    counts = np.zeros((n_bins, n_in, n_hid))
    n_spikes = np.zeros((n_bins, n_in))
    for sample in dataset.samples:
        record = simulate_forward(model, neuron, sample)
        raster = record.hidden_spike_raster
        for t_k, i in zip(record.ev_steps, record.ev_neurons):
            b = t_k // bin_width
            n_spikes[b, i] += 1
            hi = min(window, T - 1 - t_k)
            if hi > 0:
                counts[b, i] += raster[t_k + 1 : t_k + 1 + hi].sum(axis=0) / window
    coords = np.full((n_bins, n_in, positions.dim), np.nan)
    valid = np.zeros((n_bins, n_in), dtype=bool)
    for b in range(n_bins):
        mass = np.zeros((n_in, n_hid))
        fired = n_spikes[b] > 0
        mass[fired] = counts[b, fired] / n_spikes[b, fired, None]
        pref = _weighted_centroids(mass, positions)
        coords[b] = pref.coords
        valid[b] = pref.valid
    return coords, valid


@dataclass
class RidgeResult:
    r2_per_coord: np.ndarray
    r2_mean: float
    n_skipped_folds: int


def ridge_r2(
    w_in: np.ndarray,
    positions: PositionArray,
    alpha: float = 1.0,
    folds: int = 5,
    seed: int = 0,
) -> RidgeResult:
    """Cross-validated R^2 of predicting coordinates from incoming weights.

    Features of hidden neuron j are its incoming weight vector w_in[:, j].
    Closed-form ridge (X^T X + alpha I)^-1 X^T y per fold; R^2 scored on
    the held-out fold against its own mean. Singular folds (possible at
    alpha = 0) are skipped and counted.
    """
    X_all = np.asarray(w_in, dtype=np.float64).T
    Y_all = positions.coords
    n = X_all.shape[0]
    if not 2 <= folds < n:
        raise ValueError("need 2 <= folds < n_hidden")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_ids = np.array_split(perm, folds)

    per_fold = []
    n_skipped = 0
    for test_idx in fold_ids:
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        X, Y = X_all[mask], Y_all[mask]
        Xt, Yt = X_all[test_idx], Y_all[test_idx]
        gram = X.T @ X + alpha * np.eye(X.shape[1])
        ss_tot = ((Yt - Yt.mean(axis=0)) ** 2).sum(axis=0)
        if np.any(ss_tot == 0):
            n_skipped += 1
            continue
        try:
            coef = np.linalg.solve(gram, X.T @ Y)
        except np.linalg.LinAlgError:
            n_skipped += 1
            continue
        pred = Xt @ coef
        ss_res = ((Yt - pred) ** 2).sum(axis=0)
        per_fold.append(1.0 - ss_res / ss_tot)
    if not per_fold:
        raise ValueError("every fold was degenerate or singular")
    r2 = np.mean(per_fold, axis=0)
    return RidgeResult(r2, float(r2.mean()), n_skipped)
