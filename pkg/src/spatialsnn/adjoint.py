"""Backward sensitivities and parameter gradients, plus finite-difference validation.

The backward pass is the exact transpose of the discrete forward pass in
the simulator: every forward assignment is reversed in backward time, so
on any path where the spike raster does not change the analytic gradient
agrees with central finite differences to floating-point accuracy. The
voltage and current sensitivities play the role of the adjoint variables of
event-based gradient methods; spikes inject jumps whose size involves the
reciprocal of the recorded membrane rise, the familiar near-grazing
singularity, which is clipped.

Gradient orientation matches the forward weights: [presynaptic,
postsynaptic]. Delay gradients are nonzero only where the recurrent weight
is nonzero, since a delay only matters if something travels along the
synapse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DelayMatrix, PositionArray, compute_delays, position_gradient
from .simulator import (
    ForwardRecord,
    ModelParams,
    NeuronParams,
    SampleEvents,
    compute_loss,
    simulate_forward,
)

# |1/vdot| cap for near-grazing threshold crossings
VDOT_CLIP = 1e6


@dataclass
class GradientSet:
    """Loss gradients for one trial (or an accumulated batch)."""

    g_w_in: np.ndarray
    g_w_rec: np.ndarray
    g_w_out: np.ndarray
    g_delay: np.ndarray
    g_pos: np.ndarray | None = None
    g_axon: np.ndarray | None = None

    def scaled(self, c: float) -> "GradientSet":
        return GradientSet(
            self.g_w_in * c,
            self.g_w_rec * c,
            self.g_w_out * c,
            self.g_delay * c,
            None if self.g_pos is None else self.g_pos * c,
            None if self.g_axon is None else self.g_axon * c,
        )


def backward(
    record: ForwardRecord,
    params: ModelParams,
    neuron: NeuronParams,
    dLoss_dVout: np.ndarray,
) -> GradientSet:
    """Transpose the recorded forward trial and accumulate all gradients.

    Sweeps t from T-1 down to 0. The readout chain is transposed first
    (voltage sensitivity fed by dLoss_dVout, current sensitivity trailing
    it); the hidden chain then runs with the sensitivity of each arrival
    buffer slot filled in as the sweep passes its step. At each recorded
    spike the crossing-fraction sensitivity collects the difference of
    arrival-slot sensitivities at the two delivery slots of every outgoing
    synapse, scaled by the synapse weight; weight and delay gradients are
    read off the same slots.
    """
    T = record.T
    n_in, n_hid, n_out = record.n_in, record.n_hid, record.n_out
    if params.w_rec.shape[0] != n_hid or params.w_in.shape[0] != n_in:
        raise ValueError("record and params disagree on layer sizes")
    if dLoss_dVout.shape != (T, n_out):
        raise ValueError("dLoss_dVout must be (T, n_out)")

    alpha_s, alpha_m, kappa = neuron.alpha_syn, neuron.alpha_mem, neuron.kappa
    dt = neuron.dt
    delay_steps_cont = params.delays.d / dt

    # readout transpose: hat_b[t] is the sensitivity of the readout arrival slot t
    hat_b = np.zeros((T + 3, n_out))
    hvo = np.zeros(n_out)
    hio = np.zeros(n_out)
    for t in range(T - 1, -1, -1):
        hvo = hvo * alpha_m + dLoss_dVout[t]
        hio = hio * alpha_s + hvo * kappa
        hat_b[t] = hio

    g_w_in = np.zeros_like(params.w_in)
    g_w_rec = np.zeros_like(params.w_rec)
    g_w_out = np.zeros_like(params.w_out)
    g_delay = np.zeros_like(params.delays.d)

    # hidden transpose: hat_a[t] is the sensitivity of hidden arrival slot t
    hat_a = np.zeros((record.buf_len, n_hid))
    hV = np.zeros(n_hid)
    hI = np.zeros(n_hid)

    steps = record.spike_steps
    # chronological flat spikes -> contiguous [lo, hi) segment per step
    seg_lo = np.searchsorted(steps, np.arange(T), side="left")
    seg_hi = np.searchsorted(steps, np.arange(T), side="right")

    cols = np.arange(n_hid)[None, :]
    for t in range(T - 1, -1, -1):
        lo, hi = seg_lo[t], seg_hi[t]
        if hi > lo:
            js = record.spike_neurons[lo:hi]
            frac = record.spike_frac[lo:hi]
            rise = record.spike_rise[lo:hi]

            tau = (t + 1.0) + frac[:, None] + delay_steps_cont[js]
            m = np.floor(tau).astype(np.int64)
            f = tau - m
            a_lo = hat_a[m, cols]
            a_hi = hat_a[m + 1, cols]
            w = params.w_rec[js]

            tau_o = (t + 1.0) + frac
            mo = np.floor(tau_o).astype(np.int64)
            fo = tau_o - mo
            b_lo = hat_b[mo]
            b_hi = hat_b[mo + 1]

            g_w_rec[js] += (1.0 - f) * a_lo + f * a_hi
            d_inc = w * (a_hi - a_lo)
            g_delay[js] += d_inc
            g_w_out[js] += (1.0 - fo)[:, None] * b_lo + fo[:, None] * b_hi

            hat_c = d_inc.sum(axis=1) + np.einsum(
                "jo,jo->j", params.w_out[js], b_hi - b_lo
            )

            inv_rise = np.minimum(1.0 / rise, VDOT_CLIP / dt)
            dc_dU = -frac * inv_rise
            dc_dV = (frac - 1.0) * inv_rise

            hU = hV.copy()
            hU[js] = dc_dU * hat_c
            new_hV = hU * alpha_m
            new_hV[js] += dc_dV * hat_c
        else:
            hU = hV
            new_hV = hU * alpha_m
        hI = hU * kappa + hI * alpha_s
        hat_a[t] = hI
        hV = new_hV

    if record.ev_steps.size:
        np.add.at(g_w_in, record.ev_neurons, hat_a[record.ev_steps])

    g_pos = None
    g_axon = None
    if params.delays.mode == "positional":
        g_pos = position_gradient(g_delay, params.positions)
    elif params.delays.mode == "axonal":
        g_axon = g_delay.sum(axis=1)
    return GradientSet(g_w_in, g_w_rec, g_w_out, g_delay, g_pos, g_axon)


def sample_gradients(
    params: ModelParams, neuron: NeuronParams, sample: SampleEvents
) -> tuple[float, GradientSet, ForwardRecord]:
    """Forward, loss, backward for one trial. Convenience wrapper."""
    record = simulate_forward(params, neuron, sample)
    loss, dvout = compute_loss(record, sample.label)
    return loss, backward(record, params, neuron, dvout), record


@dataclass
class GroupCheck:
    """Finite-difference agreement for one parameter group."""

    name: str
    n_total: int
    n_valid: int
    n_pass: int
    worst_rel_err: float
    invalid_coords: list

    @property
    def pass_rate(self) -> float:
        return self.n_pass / self.n_valid if self.n_valid else 1.0


@dataclass
class CheckReport:
    """Per-group finite-difference validation of the analytic gradients.

    A coordinate is FD-valid when neither perturbation direction changes
    any neuron's spike count for at least one of the probe epsilons; the
    smallest relative error over the accepted epsilons is scored. Invalid
    coordinates are reported, not scored: across a spike-count boundary the
    loss is not differentiable and central differences measure the jump,
    not the gradient.
    """

    groups: dict
    tolerance: float

    @property
    def worst_rel_err(self) -> float:
        return max((g.worst_rel_err for g in self.groups.values()), default=0.0)

    def passed(self, min_rate: float = 0.95) -> bool:
        return all(g.pass_rate >= min_rate for g in self.groups.values())

    def summary(self) -> str:
        lines = []
        for g in self.groups.values():
            lines.append(
                f"{g.name}: {g.n_pass}/{g.n_valid} FD-valid coords pass "
                f"({g.n_total - g.n_valid} invalid), worst rel err {g.worst_rel_err:.3g}"
            )
        return "\n".join(lines)


def _trial_loss_and_counts(
    params: ModelParams, neuron: NeuronParams, sample: SampleEvents
) -> tuple[float, bytes]:
    record = simulate_forward(params, neuron, sample)
    loss, _ = compute_loss(record, sample.label)
    return loss, record.spike_counts().tobytes()


def _rebuild(params: ModelParams, **over) -> ModelParams:
    p = params.copy()
    for k, v in over.items():
        if k == "positions":
            p.positions = PositionArray(v)
            p.delays = compute_delays(p.positions)
        elif k == "delays":
            p.delays = DelayMatrix(v, params.delays.mode)
        else:
            setattr(p, k, v)
    return p


def gradient_check(
    params: ModelParams,
    neuron: NeuronParams,
    sample: SampleEvents,
    epsilons: tuple = (1e-4, 1e-5),
    tolerance: float = 1e-3,
    groups: tuple | None = None,
) -> CheckReport:
    """Compare analytic gradients against central finite differences.

    Checks w_in, w_rec, w_out and, depending on the delay mode, positions
    or free delays, coordinate by coordinate. Relative error uses
    max(|analytic|, |fd|) as the scale; coordinates where both are below
    1e-12 pass outright.
    """
    loss0, grads, record0 = sample_gradients(params, neuron, sample)
    counts0 = record0.spike_counts().tobytes()

    todo: list[tuple[str, np.ndarray, np.ndarray]] = [
        ("w_in", params.w_in, grads.g_w_in),
        ("w_rec", params.w_rec, grads.g_w_rec),
        ("w_out", params.w_out, grads.g_w_out),
    ]
    if params.delays.mode == "positional":
        todo.append(("positions", params.positions.coords, grads.g_pos))
    elif params.delays.mode == "free":
        todo.append(("delays", params.delays.d, grads.g_delay))
    if groups is not None:
        todo = [t for t in todo if t[0] in groups]

    out: dict[str, GroupCheck] = {}
    for name, base, analytic in todo:
        flat_base = base.reshape(-1)
        flat_g = analytic.reshape(-1)
        n_total = flat_base.size
        n_valid = 0
        n_pass = 0
        worst = 0.0
        invalid = []
        for k in range(n_total):
            best_err = None
            for eps in epsilons:
                pert = flat_base.copy()
                pert[k] = flat_base[k] + eps
                lp, cp = _trial_loss_and_counts(
                    _rebuild(params, **{name: pert.reshape(base.shape)}), neuron, sample
                )
                pert[k] = flat_base[k] - eps
                lm, cm = _trial_loss_and_counts(
                    _rebuild(params, **{name: pert.reshape(base.shape)}), neuron, sample
                )
                if cp != counts0 or cm != counts0:
                    continue
                fd = (lp - lm) / (2.0 * eps)
                a = flat_g[k]
                if abs(a) < 1e-12 and abs(fd) < 1e-12:
                    err = 0.0
                else:
                    err = abs(a - fd) / max(abs(a), abs(fd))
                if best_err is None or err < best_err:
                    best_err = err
            if best_err is None:
                invalid.append(int(k))
                continue
            n_valid += 1
            worst = max(worst, best_err)
            if best_err <= tolerance:
                n_pass += 1
        out[name] = GroupCheck(name, n_total, n_valid, n_pass, worst, invalid)
    return CheckReport(groups=out, tolerance=tolerance)
