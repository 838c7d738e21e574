"""Post-training structural interventions and robustness sweeps.

Pruning zeroes a fraction of existing recurrent synapses and records the
removal in the model's mask, so pruned models survive checkpointing and
never deliver along removed synapses. Rankings are deterministic: delays
descending for longest-delay, |w| ascending for magnitude, and a seeded
permutation for random; ties always break by (row, column) index. A
single ranking serves every fraction, so supports are nested by
construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import DelayMatrix, quantize_delays
from .simulator import ModelParams, NeuronParams
from .topology import (
    clustering_binary_normalized,
    find_partition,
    modularity,
    sym_abs,
)
from .training import evaluate

STRATEGIES = ("longest_delay", "magnitude", "random")

# |w| above this counts as an existing synapse
SUPPORT_EPS = 1e-8


def support_mask(model: ModelParams) -> np.ndarray:
    """Boolean matrix of existing recurrent synapses."""
    return np.abs(model.w_rec) > SUPPORT_EPS


def _ranked_support(model: ModelParams, strategy: str, seed: int) -> np.ndarray:
    """Flat indices of the support, most prunable first."""
    sup = support_mask(model)
    rows, cols = np.nonzero(sup)
    if strategy == "longest_delay":
        key = -model.delays.d[rows, cols]
    elif strategy == "magnitude":
        key = np.abs(model.w_rec[rows, cols])
    elif strategy == "random":
        key = np.random.default_rng(seed).permutation(rows.size).astype(np.float64)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    order = np.lexsort((cols, rows, key))
    return rows[order] * model.n_hid + cols[order]


def prune(
    model: ModelParams, strategy: str, fraction: float, seed: int = 0
) -> ModelParams:
    """Zero the selected fraction of existing synapses; returns a new model.

    fraction is taken of the current support size, rounded to the nearest
    count. The mask is updated alongside the weights so pruning composes
    and round-trips through checkpoints.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    ranked = _ranked_support(model, strategy, seed)
    n_remove = int(round(fraction * ranked.size))
    if n_remove > ranked.size:
        warnings.warn("fraction exceeds the support; pruning everything", RuntimeWarning)
        n_remove = ranked.size
    out = model.copy()
    if n_remove:
        kill = ranked[:n_remove]
        flat_w = out.w_rec.reshape(-1)
        flat_m = out.rec_mask.reshape(-1)
        flat_w[kill] = 0.0
        flat_m[kill] = False
    return out


def binary_support_metrics(
    model: ModelParams, n_null: int = 100, seed: int = 0
) -> tuple[float, float | None, float]:
    """(Q, Gamma, density) of the binarized symmetrized support."""
    A = (sym_abs(model.w_rec) > SUPPORT_EPS).astype(np.float64)
    np.fill_diagonal(A, 0.0)
    n = A.shape[0]
    density = float(A.sum() / (n * (n - 1))) if n > 1 else 0.0
    if A.sum() > 0:
        part = find_partition(A, seed=seed)
        q = modularity(A, part)
    else:
        q = np.nan
    _, gamma = clustering_binary_normalized(A, n_null=n_null, seed=seed)
    return q, gamma, density


def random_matched_density_q(
    n: int, density: float, seed: int = 0, n_null: int = 100
) -> float:
    """Mean best-partition Q of random binary graphs at the given density."""
    n_pairs = n * (n - 1) // 2
    n_edges = int(round(density * n_pairs))
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    qs = []
    for _ in range(n_null):
        pick = rng.choice(n_pairs, size=n_edges, replace=False) if n_edges else []
        A = np.zeros((n, n))
        if n_edges:
            A[iu[0][pick], iu[1][pick]] = 1.0
            A = A + A.T
            part = find_partition(A, seed=int(rng.integers(2**31)))
            qs.append(modularity(A, part))
        else:
            qs.append(np.nan)
    return float(np.nanmean(qs)) if qs else np.nan


def prune_sweep(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    strategy: str,
    fractions,
    seeds,
    n_null: int = 20,
    threads: int = 1,
) -> list[dict]:
    """Accuracy and binary topology per (fraction, seed), plus random-Q baselines.

    Rows are dicts with keys: strategy, fraction, seed, accuracy, Q, Gamma,
    density. Each fraction also emits a strategy="random_baseline" row
    carrying the mean Q of matched-density random graphs.
    """
    rows = []
    for seed in seeds:
        for fraction in fractions:
            pruned = prune(model, strategy, float(fraction), seed=int(seed))
            acc = evaluate(pruned, neuron, dataset, threads=threads)
            q, gamma, density = binary_support_metrics(pruned, n_null=n_null, seed=int(seed))
            rows.append(
                {
                    "strategy": strategy,
                    "fraction": float(fraction),
                    "seed": int(seed),
                    "accuracy": acc,
                    "Q": q,
                    "Gamma": gamma,
                    "density": density,
                }
            )
    first_seed = int(seeds[0]) if len(seeds) else 0
    for fraction in fractions:
        pruned = prune(model, strategy, float(fraction), seed=first_seed)
        _, _, density = binary_support_metrics(pruned, n_null=1, seed=first_seed)
        rows.append(
            {
                "strategy": "random_baseline",
                "fraction": float(fraction),
                "seed": first_seed,
                "accuracy": np.nan,
                "Q": random_matched_density_q(
                    model.n_hid, density, seed=first_seed, n_null=n_null
                ),
                "Gamma": None,
                "density": density,
            }
        )
    return rows


def ablate_neurons(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    fraction: float,
    seeds,
    threads: int = 1,
) -> list[dict]:
    """Silence a random fraction of hidden neurons entirely and re-score.

    All synapses touching an ablated neuron are zeroed: its input column,
    recurrent row and column, and readout row.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(int(seed))
        n_kill = int(round(fraction * model.n_hid))
        kill = rng.permutation(model.n_hid)[:n_kill]
        ab = model.copy()
        ab.w_in[:, kill] = 0.0
        ab.w_rec[kill, :] = 0.0
        ab.w_rec[:, kill] = 0.0
        ab.w_out[kill, :] = 0.0
        ab.rec_mask[kill, :] = False
        ab.rec_mask[:, kill] = False
        rows.append(
            {
                "fraction": float(fraction),
                "seed": int(seed),
                "n_ablated": int(n_kill),
                "accuracy": evaluate(ab, neuron, dataset, threads=threads),
            }
        )
    return rows


def perturb_delays(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    noise_std: float,
    seeds,
    max_steps: int | None = None,
    threads: int = 1,
) -> list[dict]:
    """Add rounded Gaussian noise to the delay steps and re-score.

    Noise lives in step units: delays are quantized, jittered by
    round(N(0, std)), clamped to [0, max_steps], and converted back to time
    units. The result is a free-form delay matrix; no positional structure
    is restored, since the perturbation targets delays, not coordinates.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if max_steps is None:
        max_steps = int(np.ceil(model.delays.d.max() / neuron.dt)) + int(
            np.ceil(3 * noise_std)
        )
    base = quantize_delays(model.delays, neuron.dt, max_steps)
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(int(seed))
        noise = np.rint(rng.normal(0.0, noise_std, base.steps.shape)).astype(np.int64)
        steps = np.clip(base.steps + noise, 0, max_steps)
        pert = model.copy()
        pert.delays = DelayMatrix(steps.astype(np.float64) * neuron.dt, "free")
        pert.positions = None
        rows.append(
            {
                "noise_std": float(noise_std),
                "seed": int(seed),
                "accuracy": evaluate(pert, neuron, dataset, threads=threads),
            }
        )
    return rows
