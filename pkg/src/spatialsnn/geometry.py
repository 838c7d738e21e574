"""Neuron coordinates, distance-derived delay matrices, and the chain rule back to positions.

Hidden neurons live at learnable coordinates in a low-dimensional Euclidean
space. The recurrent delay between two neurons is their distance, so the
delay matrix inherits zero diagonal, symmetry, and the triangle inequality
for free. Gradients with respect to delays are folded back onto coordinates
here; the simulator itself never needs to know positions exist.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

DELAY_MODES = ("none", "free", "axonal", "positional")

# Below this distance the unit direction vector is undefined; the chain
# factor is set to zero (self connections are structurally pinned at d=0).
EPS_DIST = 1e-9


@dataclass
class PositionArray:
    """Coordinates of the hidden neurons, one row per neuron.

    coords has shape (n_hidden, dim) with dim in {2, 3, 4}. Units are time
    units: a distance of 3.0 means a 3.0 time-unit transmission delay.
    """

    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2:
            raise ValueError(f"coords must be 2-D, got shape {self.coords.shape}")
        n, dim = self.coords.shape
        if n < 1:
            raise ValueError("need at least one neuron")
        if dim not in (2, 3, 4):
            raise ValueError(f"dim must be 2, 3 or 4, got {dim}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coords must be finite")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def copy(self) -> "PositionArray":
        return PositionArray(self.coords.copy())


@dataclass
class DelayMatrix:
    """Per-synapse transmission delays in time units, tagged with their origin.

    d[i, j] is the delay on the synapse from presynaptic neuron i to
    postsynaptic neuron j. Mode "positional" promises zero diagonal,
    symmetry, and the triangle inequality; mode "axonal" promises each row
    is constant (one delay per source); "free" is unconstrained; "none" is
    all zeros.
    """

    d: np.ndarray
    mode: str = "free"

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1]:
            raise ValueError(f"delay matrix must be square, got {self.d.shape}")
        if self.mode not in DELAY_MODES:
            raise ValueError(f"unknown delay mode {self.mode!r}")
        if self.d.size and np.min(self.d) < 0:
            raise ValueError("delays must be nonnegative")

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def copy(self) -> "DelayMatrix":
        return DelayMatrix(self.d.copy(), self.mode)


@dataclass
class DelayStepMatrix:
    """Delays discretized to integer simulation steps.

    steps[i, j] = round(d[i, j] / dt) clamped to [0, max_steps]. n_clamped
    counts entries that hit the clamp. Kept for interfaces that reason in
    step units (delay-noise perturbation, buffer capacity checks); the
    simulator itself consumes continuous delays.
    """

    steps: np.ndarray
    dt: float
    max_steps: int
    n_clamped: int = 0

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(self.steps < 0) or np.any(self.steps > self.max_steps):
            raise ValueError("steps out of [0, max_steps]")


def compute_delays(positions: PositionArray) -> DelayMatrix:
    """Pairwise Euclidean distances between neuron positions, as a delay matrix.

    Parameters
    ----------
    positions : PositionArray
        (n, dim) coordinates.

    Returns
    -------
    DelayMatrix
        Mode "positional"; d[i, j] = ||p_i - p_j||. Symmetry and the zero
        diagonal hold exactly (the difference tensor is antisymmetric
        entrywise, so squaring and summing in fixed axis order gives
        bit-identical results for (i, j) and (j, i)).
    """
    c = positions.coords
    diff = c[:, None, :] - c[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return DelayMatrix(d, mode="positional")


def quantize_delays(delays: DelayMatrix, dt: float, max_steps: int) -> DelayStepMatrix:
    """Round delays to integer steps (round-half-even) and clamp to [0, max_steps].

    Emits a RuntimeWarning when any entry clamps; the count is recorded on
    the result rather than raised, since clamping is a capacity issue, not
    an error.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    raw = np.rint(delays.d / dt).astype(np.int64)
    clamped = np.clip(raw, 0, max_steps)
    n_clamped = int(np.sum(raw != clamped))
    if n_clamped:
        warnings.warn(
            f"{n_clamped} delay entries exceed max_steps={max_steps} and were clamped",
            RuntimeWarning,
            stacklevel=2,
        )
    return DelayStepMatrix(clamped, dt=dt, max_steps=max_steps, n_clamped=n_clamped)


def position_gradient(
    delay_grads: np.ndarray, positions: PositionArray, eps_dist: float = EPS_DIST
) -> np.ndarray:
    """Fold loss gradients on delays back onto neuron coordinates.

    Each delay d[i, j] is the distance between neurons i and j, so a
    coordinate of neuron i moves every delay on synapses touching i. The
    chain factor is the unit vector from j to i; it is defined as zero when
    the two neurons are closer than eps_dist (the direction is meaningless
    there and self connections sit at exactly zero distance).

    Parameters
    ----------
    delay_grads : (n, n) array
        dL/dd for every synapse, [presynaptic, postsynaptic]; zero where no
        synapse exists. Both orientations (i, j) and (j, i) contribute to
        neuron i because the distance is shared.
    positions : PositionArray
    eps_dist : float

    Returns
    -------
    (n, dim) array
        grad[i, k] = sum_j (p[i,k] - p[j,k]) / d_ij * (G[i,j] + G[j,i]).
    """
    g = np.asarray(delay_grads, dtype=np.float64)
    c = positions.coords
    n = positions.n
    if g.shape != (n, n):
        raise ValueError(f"delay_grads shape {g.shape} does not match {n} neurons")
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    inv = np.zeros_like(dist)
    ok = dist >= eps_dist
    inv[ok] = 1.0 / dist[ok]
    gsym = g + g.T
    return np.einsum("ijk,ij->ik", diff, inv * gsym)
