"""Fixed-timestep simulation of a delayed recurrent LIF layer with leaky readouts.

One hidden layer of leaky integrate-and-fire neurons drives a layer of
non-spiking leaky integrators. Input events inject current directly at
their event step. Hidden spikes travel to their targets with a per-synapse
transmission delay and one base step of latency (a zero delay arrives at
the next step).

Spikes are detected on the simulation grid, but each spike also records the
fraction of the step at which the membrane chord crossed threshold, and
deliveries split a spike's weight linearly between the two steps bracketing
its exact arrival time. This keeps the loss piecewise smooth in weights,
delays, and positions, which is what makes finite-difference validation of
the adjoint gradients possible; with purely grid-aligned delivery the loss
would be piecewise constant in everything upstream of the readout weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DelayMatrix, PositionArray, compute_delays


@dataclass
class NeuronParams:
    """Membrane constants and trial geometry shared by all neurons."""

    tau_mem: float = 20.0
    tau_syn: float = 5.0
    theta: float = 1.0
    v_reset: float = 0.0
    dt: float = 1.0
    T: int = 100

    def __post_init__(self):
        if self.tau_mem <= 0 or self.tau_syn <= 0:
            raise ValueError("time constants must be positive")
        if self.theta <= 0:
            raise ValueError("threshold must be positive")
        if self.v_reset >= self.theta:
            raise ValueError("v_reset must lie below the threshold")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T < 1:
            raise ValueError("T must be at least one step")

    @property
    def alpha_mem(self) -> float:
        return float(np.exp(-self.dt / self.tau_mem))

    @property
    def alpha_syn(self) -> float:
        return float(np.exp(-self.dt / self.tau_syn))

    @property
    def kappa(self) -> float:
        # current-to-voltage coupling of the exponential-Euler step
        return self.dt / self.tau_mem


@dataclass
class ModelParams:
    """All learnable arrays plus the delay structure.

    Weight matrices are [presynaptic, postsynaptic]: w_in is (n_in, n_hid),
    w_rec is (n_hid, n_hid) with w_rec[i, j] the synapse from hidden i to
    hidden j, w_out is (n_hid, n_out). delays.d follows the same
    orientation. rec_mask marks which recurrent synapses structurally exist;
    w_rec is kept at zero outside the mask.
    """

    w_in: np.ndarray
    w_rec: np.ndarray
    w_out: np.ndarray
    delays: DelayMatrix
    positions: PositionArray | None = None
    rec_mask: np.ndarray | None = None

    def __post_init__(self):
        self.w_in = np.asarray(self.w_in, dtype=np.float64)
        self.w_rec = np.asarray(self.w_rec, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        n_hid = self.w_rec.shape[0]
        if self.w_rec.shape != (n_hid, n_hid):
            raise ValueError("w_rec must be square")
        if self.w_in.ndim != 2 or self.w_in.shape[1] != n_hid:
            raise ValueError("w_in must be (n_in, n_hid)")
        if self.w_out.ndim != 2 or self.w_out.shape[0] != n_hid:
            raise ValueError("w_out must be (n_hid, n_out)")
        if self.delays.d.shape != (n_hid, n_hid):
            raise ValueError("delay matrix must match the hidden layer size")
        if self.delays.mode == "positional":
            if self.positions is None:
                raise ValueError("positional mode requires positions")
            if self.positions.n != n_hid:
                raise ValueError("positions must match the hidden layer size")
        if self.rec_mask is None:
            self.rec_mask = np.ones((n_hid, n_hid), dtype=bool)
        else:
            self.rec_mask = np.asarray(self.rec_mask, dtype=bool)
            if self.rec_mask.shape != (n_hid, n_hid):
                raise ValueError("rec_mask must match w_rec")

    @property
    def n_in(self) -> int:
        return self.w_in.shape[0]

    @property
    def n_hid(self) -> int:
        return self.w_rec.shape[0]

    @property
    def n_out(self) -> int:
        return self.w_out.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.w_in.copy(),
            self.w_rec.copy(),
            self.w_out.copy(),
            self.delays.copy(),
            None if self.positions is None else self.positions.copy(),
            self.rec_mask.copy(),
        )


@dataclass
class SampleEvents:
    """One trial: input events as (step, input_neuron) pairs plus a class label."""

    events: list
    label: int

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.events) == 0:
            z = np.zeros(0, dtype=np.int64)
            return z, z.copy()
        ev = np.asarray(self.events, dtype=np.int64)
        return ev[:, 0], ev[:, 1]


@dataclass
class ForwardRecord:
    """Everything the backward pass and the probes need from one trial.

    Spikes are stored twice: chronologically flat (spike_steps,
    spike_neurons, spike_frac, spike_rise) for the adjoint sweep, and as
    per-neuron sorted step lists with aligned membrane slopes for
    inspection. spike_frac is the within-step fraction at which the
    membrane chord crossed threshold; spike_rise is the chord rise
    (V_at_spike_check - V_previous), always positive at a spike.
    """

    hidden_spikes: list
    vdot_at_spike: list
    v_out_trace: np.ndarray
    hidden_spike_raster: np.ndarray
    spike_steps: np.ndarray
    spike_neurons: np.ndarray
    spike_frac: np.ndarray
    spike_rise: np.ndarray
    ev_steps: np.ndarray
    ev_neurons: np.ndarray
    n_in: int
    n_hid: int
    n_out: int
    T: int
    buf_len: int
    v_hid_trace: np.ndarray | None = None

    def spike_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_hid, dtype=np.int64)
        np.add.at(counts, self.spike_neurons, 1)
        return counts


def _delivery_slots(t: int, frac: np.ndarray, delay_rows: np.ndarray):
    """Arrival slots and interpolation fractions for spikes emitted at step t.

    A spike at step t with crossing fraction c and synapse delay d arrives
    at continuous time t + 1 + c + d (one base step of latency, so a zero
    delay lands on the next step). The weight is split between floor and
    floor+1 of the arrival time.
    """
    tau = (t + 1.0) + frac.reshape(-1, *([1] * (delay_rows.ndim - 1))) + delay_rows
    m = np.floor(tau).astype(np.int64)
    f = tau - m
    return m, f


def simulate_forward(
    params: ModelParams,
    neuron: NeuronParams,
    sample: SampleEvents,
    record_hidden_v: bool = False,
) -> ForwardRecord:
    """Run one trial and record spikes, crossing fractions, and the readout trace.

    Per step: I <- I * exp(-dt/tau_syn) + arrivals; V <- V * exp(-dt/tau_mem)
    + I * dt/tau_mem; a hidden neuron whose V reaches theta spikes, records
    the chord crossing fraction, resets to v_reset, and enqueues weighted
    deliveries to its targets. Readout neurons integrate identically but
    never spike; their voltage trace is returned per step.

    Raises ValueError when an event lies outside the trial or the input
    layer.
    """
    T = neuron.T
    n_in, n_hid, n_out = params.n_in, params.n_hid, params.n_out
    ev_steps, ev_neurons = sample.arrays()
    if ev_steps.size:
        if ev_steps.min() < 0 or ev_steps.max() >= T:
            raise ValueError("event step out of range")
        if ev_neurons.min() < 0 or ev_neurons.max() >= n_in:
            raise ValueError("event neuron out of range")

    alpha_s, alpha_m, kappa = neuron.alpha_syn, neuron.alpha_mem, neuron.kappa
    theta, v_reset = neuron.theta, neuron.v_reset
    dmax = float(params.delays.d.max()) if n_hid else 0.0
    buf_len = T + 3 + int(np.ceil(dmax / neuron.dt))

    arrivals = np.zeros((buf_len, n_hid))
    out_arrivals = np.zeros((T + 3, n_out))
    np.add.at(arrivals, ev_steps, params.w_in[ev_neurons])

    # delays are consumed in step units inside the loop
    delay_steps_cont = params.delays.d / neuron.dt

    V = np.zeros(n_hid)
    I = np.zeros(n_hid)
    raster = np.zeros((T, n_hid), dtype=bool)
    v_hid = np.zeros((T, n_hid)) if record_hidden_v else None

    sp_steps: list[int] = []
    sp_neurons: list[np.ndarray] = []
    sp_frac: list[np.ndarray] = []
    sp_rise: list[np.ndarray] = []

    arr_flat = arrivals.reshape(-1)
    for t in range(T):
        I = I * alpha_s + arrivals[t]
        U = V * alpha_m + I * kappa
        spk = U >= theta
        if spk.any():
            js = np.nonzero(spk)[0]
            rise = U[js] - V[js]
            frac = (theta - V[js]) / rise
            raster[t, js] = True
            sp_steps.append(t)
            sp_neurons.append(js)
            sp_frac.append(frac)
            sp_rise.append(rise)

            m, f = _delivery_slots(t, frac, delay_steps_cont[js])
            w = params.w_rec[js]
            base = m * n_hid + np.arange(n_hid)[None, :]
            idx = np.concatenate([base.ravel(), (base + n_hid).ravel()])
            vals = np.concatenate([(w * (1.0 - f)).ravel(), (w * f).ravel()])
            np.add.at(arr_flat, idx, vals)

            mo, fo = _delivery_slots(t, frac, np.zeros(len(js)))
            np.add.at(out_arrivals, mo, params.w_out[js] * (1.0 - fo)[:, None])
            np.add.at(out_arrivals, mo + 1, params.w_out[js] * fo[:, None])

            V = np.where(spk, v_reset, U)
        else:
            V = U
        if record_hidden_v:
            v_hid[t] = V

    Vo = np.zeros(n_out)
    Io = np.zeros(n_out)
    v_out = np.zeros((T, n_out))
    for t in range(T):
        Io = Io * alpha_s + out_arrivals[t]
        Vo = Vo * alpha_m + Io * kappa
        v_out[t] = Vo

    if sp_steps:
        lens = [len(js) for js in sp_neurons]
        flat_steps = np.repeat(np.asarray(sp_steps, dtype=np.int64), lens)
        flat_neurons = np.concatenate(sp_neurons)
        flat_frac = np.concatenate(sp_frac)
        flat_rise = np.concatenate(sp_rise)
    else:
        flat_steps = np.zeros(0, dtype=np.int64)
        flat_neurons = np.zeros(0, dtype=np.int64)
        flat_frac = np.zeros(0)
        flat_rise = np.zeros(0)

    per_neuron = [flat_steps[flat_neurons == j] for j in range(n_hid)]
    per_vdot = [
        flat_rise[flat_neurons == j] / neuron.dt for j in range(n_hid)
    ]

    return ForwardRecord(
        hidden_spikes=per_neuron,
        vdot_at_spike=per_vdot,
        v_out_trace=v_out,
        hidden_spike_raster=raster,
        spike_steps=flat_steps,
        spike_neurons=flat_neurons,
        spike_frac=flat_frac,
        spike_rise=flat_rise,
        ev_steps=ev_steps,
        ev_neurons=ev_neurons,
        n_in=n_in,
        n_hid=n_hid,
        n_out=n_out,
        T=T,
        buf_len=buf_len,
        v_hid_trace=v_hid,
    )


def compute_loss(record: ForwardRecord, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy on the time-averaged readout voltage.

    Returns the loss and dLoss/dVout, shape (T, n_out), the source term of
    the backward pass.
    """
    T, n_out = record.T, record.n_out
    if not 0 <= label < n_out:
        raise ValueError(f"label {label} outside {n_out} classes")
    a = record.v_out_trace.mean(axis=0)
    z = a - a.max()
    logsum = float(np.log(np.sum(np.exp(z))))
    loss = logsum - float(z[label])
    p = np.exp(z - logsum)
    dvout = np.tile(p / T, (T, 1))
    dvout[:, label] -= 1.0 / T
    return loss, dvout
