"""Batch training with Adam, sparsity regularizers, and bit-exact checkpoints.

Four delay regimes share one loop: "none" trains weights only over zero
delays, "free" gives every recurrent synapse its own delay, "axonal" gives
every presynaptic neuron one shared outgoing delay, and "positional"
derives all delays from neuron coordinates, which shrinks the trainable
delay parameters from n^2 to n*dim.

Determinism contract: a fixed seed and config produce bit-identical
trajectories and checkpoints regardless of the thread count, because
per-sample gradients are reduced in sample order no matter which worker
computed them.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import __version__
from .adjoint import GradientSet, backward
from .geometry import DelayMatrix, PositionArray, compute_delays
from .simulator import (
    ModelParams,
    NeuronParams,
    SampleEvents,
    compute_loss,
    simulate_forward,
)

REG_KINDS = ("none", "l1", "l1_distance")


class ConfigError(ValueError):
    """Bad or unknown configuration key/value. CLI maps this to exit code 2."""


class TrainDivergedError(RuntimeError):
    """Loss became non-finite. CLI maps this to exit code 4."""


@dataclass
class RegularizerConfig:
    """Sparsity pressure on the recurrent weights.

    kind "l1" adds lambda1 * sign(w) to the weight gradient; "l1_distance"
    scales that by the synapse delay over the mean off-diagonal delay, so
    long connections pay more. The scaling divisor is recomputed from the
    current delays at every application because distances move during
    positional training. Regularization touches weight gradients only,
    never delay or position gradients.
    """

    kind: str = "none"
    lambda1: float = 0.0

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ConfigError(f"unknown regularizer kind {self.kind!r}")
        if self.lambda1 < 0:
            raise ConfigError("lambda1 must be nonnegative")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    delay_mode: str = "positional"
    mask_diagonal: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    position_lr: float | None = None
    # reporting threshold for "effectively silent" recurrent weights; looser
    # than the structural support cutoff because gradient-form L1 under Adam
    # parks weights in a small oscillation band around zero instead of at it
    sparsity_threshold: float = 1e-2

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.delay_mode not in ("none", "free", "axonal", "positional"):
            raise ConfigError(f"unknown delay_mode {self.delay_mode!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        if self.position_lr is not None and self.position_lr < 0:
            raise ConfigError("position_lr must be nonnegative")

    @property
    def pos_lr(self) -> float:
        return self.learning_rate if self.position_lr is None else self.position_lr


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    final_sparsity: float = 0.0
    wall_clock_s: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def dataclass_from_dict(cls, d: dict, ctx: str = ""):
    """Build a config dataclass, rejecting unknown keys by name."""
    allowed = {f.name for f in fields(cls)}
    for key in d:
        if key not in allowed:
            where = f" in {ctx}" if ctx else ""
            raise ConfigError(f"unknown config key {key!r}{where}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def config_hash(cfg: dict) -> str:
    """Stable hash of a JSON-serializable config dict."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def apply_regularizer(
    g_w_rec: np.ndarray,
    w_rec: np.ndarray,
    delays: DelayMatrix,
    cfg: RegularizerConfig,
) -> np.ndarray:
    """Add the sparsity term to the recurrent weight gradient (a new array).

    Raises ConfigError for l1_distance when the mean off-diagonal delay is
    zero (the normalization is undefined).
    """
    if cfg.kind == "none" or cfg.lambda1 == 0.0:
        return g_w_rec.copy()
    if cfg.kind == "l1":
        return g_w_rec + cfg.lambda1 * np.sign(w_rec)
    n = delays.n
    off = ~np.eye(n, dtype=bool)
    mean_d = float(np.mean(delays.d[off])) if n > 1 else 0.0
    if mean_d == 0.0:
        raise ConfigError("l1_distance needs a nonzero mean off-diagonal delay")
    return g_w_rec + cfg.lambda1 * np.sign(w_rec) * (delays.d / mean_d)


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    state: AdamState,
    params: dict,
    grads: dict,
    lr,
) -> dict:
    """One bias-corrected Adam update over a dict of named arrays.

    lr may be a float or a per-name dict. Returns new arrays; moment
    buffers live in state.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        step_lr = lr[name] if isinstance(lr, dict) else lr
        out[name] = p - step_lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


def init_model(
    n_in: int,
    n_hid: int,
    n_out: int,
    delay_mode: str = "positional",
    dim: int = 2,
    seed: int = 0,
    pos_radius: float = 2.0,
    mask_diagonal: bool = True,
    w_in_gain: float = 1.0,
    w_rec_gain: float = 1.0,
    w_out_gain: float = 1.0,
) -> ModelParams:
    """Random model: normal weights at std gain/sqrt(fan_in), positions
    uniform in [-pos_radius, pos_radius]^dim. Free and axonal delays draw
    uniformly from [0, pos_radius] so all modes start at comparable delay
    scales."""
    rng = np.random.default_rng(seed)
    w_in = rng.normal(0.0, w_in_gain / np.sqrt(n_in), (n_in, n_hid))
    w_rec = rng.normal(0.0, w_rec_gain / np.sqrt(n_hid), (n_hid, n_hid))
    w_out = rng.normal(0.0, w_out_gain / np.sqrt(n_hid), (n_hid, n_out))
    positions = None
    if delay_mode == "positional":
        positions = PositionArray(rng.uniform(-pos_radius, pos_radius, (n_hid, dim)))
        delays = compute_delays(positions)
    elif delay_mode == "free":
        delays = DelayMatrix(rng.uniform(0.0, pos_radius, (n_hid, n_hid)), "free")
    elif delay_mode == "axonal":
        axon = rng.uniform(0.0, pos_radius, n_hid)
        delays = DelayMatrix(np.repeat(axon[:, None], n_hid, axis=1), "axonal")
    elif delay_mode == "none":
        delays = DelayMatrix(np.zeros((n_hid, n_hid)), "none")
    else:
        raise ConfigError(f"unknown delay_mode {delay_mode!r}")
    mask = np.ones((n_hid, n_hid), dtype=bool)
    if mask_diagonal:
        np.fill_diagonal(mask, False)
        np.fill_diagonal(w_rec, 0.0)
    return ModelParams(w_in, w_rec, w_out, delays, positions, mask)


def _sample_pass(model: ModelParams, neuron: NeuronParams, sample: SampleEvents):
    record = simulate_forward(model, neuron, sample)
    loss, dvout = compute_loss(record, sample.label)
    grads = backward(record, model, neuron, dvout)
    pred = int(np.argmax(record.v_out_trace.mean(axis=0)))
    return loss, pred, grads


def _batch_gradients(
    model: ModelParams,
    neuron: NeuronParams,
    samples: list,
    pool: ThreadPoolExecutor | None,
):
    """Mean loss/gradients over a batch, reduced in sample order."""
    if pool is None:
        results = [_sample_pass(model, neuron, s) for s in samples]
    else:
        results = list(pool.map(lambda s: _sample_pass(model, neuron, s), samples))
    n = len(samples)
    loss = 0.0
    n_correct = 0
    acc_g = None
    for smp, (l, pred, g) in zip(samples, results):
        loss += l
        n_correct += int(pred == smp.label)
        if acc_g is None:
            acc_g = g
        else:
            acc_g.g_w_in += g.g_w_in
            acc_g.g_w_rec += g.g_w_rec
            acc_g.g_w_out += g.g_w_out
            acc_g.g_delay += g.g_delay
            if acc_g.g_pos is not None:
                acc_g.g_pos += g.g_pos
            if acc_g.g_axon is not None:
                acc_g.g_axon += g.g_axon
    return loss / n, n_correct, acc_g.scaled(1.0 / n)


def train(
    dataset,
    model_init: ModelParams,
    cfg: TrainConfig,
    neuron: NeuronParams | None = None,
    regularizer: RegularizerConfig | None = None,
    test_dataset=None,
    threads: int = 1,
    epoch_callback=None,
) -> tuple[ModelParams, TrainReport]:
    """Run the full loop: forward, loss, backward, regularize, Adam.

    Per-epoch train accuracy is the running accuracy over the epoch's
    batches (each sample scored under the parameters it was trained with).
    Test accuracy, when a test set is given, is evaluated after each epoch.
    Raises TrainDivergedError with the epoch/batch position if the loss
    leaves the reals.
    """
    if len(dataset.samples) == 0:
        raise ValueError("dataset is empty")
    neuron = neuron or NeuronParams()
    regularizer = regularizer or RegularizerConfig()
    model = model_init.copy()
    if cfg.mask_diagonal:
        np.fill_diagonal(model.rec_mask, False)
        np.fill_diagonal(model.w_rec, 0.0)
    if cfg.delay_mode != model.delays.mode:
        raise ConfigError(
            f"config delay_mode {cfg.delay_mode!r} does not match the model's "
            f"{model.delays.mode!r}"
        )

    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport(seed=cfg.seed)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    t_start = time.perf_counter()

    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(dataset.samples))
            ep_loss = 0.0
            ep_correct = 0
            for b0 in range(0, len(order), cfg.batch_size):
                idx = order[b0 : b0 + cfg.batch_size]
                batch = [dataset.samples[i] for i in idx]
                loss, n_correct, grads = _batch_gradients(model, neuron, batch, pool)
                if not np.isfinite(loss):
                    raise TrainDivergedError(
                        f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}"
                    )
                ep_loss += loss * len(batch)
                ep_correct += n_correct

                g_w_rec = apply_regularizer(
                    grads.g_w_rec, model.w_rec, model.delays, regularizer
                )
                g_w_rec[~model.rec_mask] = 0.0

                params = {"w_in": model.w_in, "w_rec": model.w_rec,
                          "w_out": model.w_out}
                gdict = {"w_in": grads.g_w_in, "w_rec": g_w_rec, "w_out": grads.g_w_out}
                lr: dict = {"w_in": cfg.learning_rate, "w_rec": cfg.learning_rate,
                            "w_out": cfg.learning_rate}
                if cfg.delay_mode == "free":
                    params["delays"] = model.delays.d
                    gdict["delays"] = grads.g_delay
                    lr["delays"] = cfg.pos_lr
                elif cfg.delay_mode == "axonal":
                    params["axon"] = model.delays.d[:, 0]
                    gdict["axon"] = grads.g_axon
                    lr["axon"] = cfg.pos_lr
                elif cfg.delay_mode == "positional":
                    params["positions"] = model.positions.coords
                    gdict["positions"] = grads.g_pos
                    lr["positions"] = cfg.pos_lr

                new = adam_step(adam, params, gdict, lr)
                model.w_in = new["w_in"]
                model.w_out = new["w_out"]
                model.w_rec = new["w_rec"]
                model.w_rec[~model.rec_mask] = 0.0
                if cfg.delay_mode == "free":
                    model.delays = DelayMatrix(np.maximum(new["delays"], 0.0), "free")
                elif cfg.delay_mode == "axonal":
                    axon = np.maximum(new["axon"], 0.0)
                    model.delays = DelayMatrix(
                        np.repeat(axon[:, None], model.n_hid, axis=1), "axonal"
                    )
                elif cfg.delay_mode == "positional":
                    model.positions = PositionArray(new["positions"])
                    model.delays = compute_delays(model.positions)

            report.train_loss.append(ep_loss / len(order))
            report.train_acc.append(ep_correct / len(order))
            if test_dataset is not None:
                report.test_acc.append(
                    evaluate(model, neuron, test_dataset, threads=threads, _pool=pool)
                )
            if epoch_callback is not None:
                epoch_callback(epoch, model, report)
    finally:
        if pool is not None:
            pool.shutdown()

    report.wall_clock_s = time.perf_counter() - t_start
    report.final_sparsity = recurrent_sparsity(model, cfg.sparsity_threshold)
    return model, report


def recurrent_sparsity(model: ModelParams, threshold: float) -> float:
    """Fraction of maskable recurrent weights with |w| below threshold."""
    w = np.abs(model.w_rec[model.rec_mask])
    if w.size == 0:
        return 1.0
    return float(np.mean(w < threshold))


def predict(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    threads: int = 1,
    _pool: ThreadPoolExecutor | None = None,
) -> np.ndarray:
    """Argmax of the time-averaged readout voltage, per sample."""

    def one(sample):
        record = simulate_forward(model, neuron, sample)
        return int(np.argmax(record.v_out_trace.mean(axis=0)))

    if _pool is not None:
        return np.fromiter(_pool.map(one, dataset.samples), dtype=np.int64)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.fromiter(pool.map(one, dataset.samples), dtype=np.int64)
    return np.fromiter((one(s) for s in dataset.samples), dtype=np.int64)


def evaluate(
    model: ModelParams,
    neuron: NeuronParams,
    dataset,
    threads: int = 1,
    _pool: ThreadPoolExecutor | None = None,
) -> float:
    """Classification accuracy on a dataset."""
    preds = predict(model, neuron, dataset, threads=threads, _pool=_pool)
    labels = np.asarray([s.label for s in dataset.samples])
    if len(labels) == 0:
        raise ValueError("dataset is empty")
    return float(np.mean(preds == labels))


# ---------------------------------------------------------------------------
# checkpoints: one JSON manifest line, then one raw little-endian f8 blob


def _array_table(model: ModelParams) -> list[tuple[str, np.ndarray, bool]]:
    mode = model.delays.mode
    table = [
        ("w_in", model.w_in, True),
        ("w_rec", model.w_rec, True),
        ("w_out", model.w_out, True),
        ("rec_mask", model.rec_mask.astype(np.float64), False),
        ("delays", model.delays.d, mode == "free"),
    ]
    if mode == "positional":
        table.append(("positions", model.positions.coords, True))
    if mode == "axonal":
        table.append(("axon_delays", model.delays.d[:, 0].copy(), True))
    return table


def trainable_delay_params(mode: str, n_hid: int, dim: int | None) -> int:
    if mode == "free":
        return n_hid * n_hid
    if mode == "axonal":
        return n_hid
    if mode == "positional":
        return n_hid * int(dim)
    return 0


def save_checkpoint(
    path,
    model: ModelParams,
    neuron: NeuronParams,
    train_cfg: TrainConfig | None = None,
    reg_cfg: RegularizerConfig | None = None,
    seed: int = 0,
    epoch: int = 0,
    extra: dict | None = None,
) -> dict:
    """Write the manifest+blob checkpoint file; returns the manifest dict."""
    mode = model.delays.mode
    table = _array_table(model)
    arrays = []
    offset = 0
    chunks = []
    for name, arr, trainable in table:
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        arrays.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(buf),
                "trainable": trainable,
            }
        )
        chunks.append(buf)
        offset += len(buf)

    cfg_dict = {
        "train": asdict(train_cfg) if train_cfg else None,
        "regularizer": asdict(reg_cfg) if reg_cfg else None,
        "neuron": asdict(neuron),
    }
    dim = model.positions.dim if model.positions is not None else None
    manifest = {
        "format": "spatialsnn-checkpoint",
        "format_version": 1,
        "version": __version__,
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "seed": seed,
        "epoch": epoch,
        "delay_mode": mode,
        "n_in": model.n_in,
        "n_hid": model.n_hid,
        "n_out": model.n_out,
        "dim": dim,
        "trainable_delay_params": trainable_delay_params(mode, model.n_hid, dim),
        "arrays": arrays,
    }
    if extra:
        manifest["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for buf in chunks:
            fh.write(buf)
    return manifest


def load_checkpoint(path) -> tuple[ModelParams, NeuronParams, dict]:
    """Read a checkpoint back; arrays round-trip bit-exactly."""
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    try:
        manifest = json.loads(header.decode())
    except json.JSONDecodeError as e:
        raise ValueError(f"corrupt checkpoint manifest: {e}") from e
    if manifest.get("format") != "spatialsnn-checkpoint":
        raise ValueError("not a spatialsnn checkpoint")

    named = {}
    for spec in manifest["arrays"]:
        lo = spec["offset"]
        hi = lo + spec["nbytes"]
        arr = np.frombuffer(blob[lo:hi], dtype="<f8").reshape(spec["shape"]).copy()
        named[spec["name"]] = arr

    mode = manifest["delay_mode"]
    positions = PositionArray(named["positions"]) if "positions" in named else None
    model = ModelParams(
        named["w_in"],
        named["w_rec"],
        named["w_out"],
        DelayMatrix(named["delays"], mode),
        positions,
        named["rec_mask"].astype(bool),
    )
    neuron = dataclass_from_dict(
        NeuronParams, manifest["config"]["neuron"], "neuron"
    )
    return model, neuron, manifest
