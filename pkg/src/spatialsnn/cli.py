"""Single command-line entry point for the full experiment lifecycle.

Subcommands: gen-data, train, eval, analyze, probe, prune, gradcheck.
Experiment definitions live in JSON config files with sections "model",
"train", "regularizer", "neuron"; unknown keys anywhere are rejected by
name. Every output embeds the config hash, the seed, and the package
version, and reruns with identical inputs are byte-identical at any
--threads value.

Exit codes: 0 success, 2 bad arguments or config, 3 data error,
4 numerical failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, asdict

import numpy as np

from . import __version__
from .adjoint import gradient_check
from .datasets import (
    DatasetFormatError,
    gen_interval_task,
    gen_patterns,
    load_events,
    save_events,
    split_dataset,
)
from .geometry import PositionArray
from .probes import (
    activity_sensitivity,
    preferred_positions_activity,
    preferred_positions_weights,
    preferred_positions_over_time,
    ridge_r2,
)
from .pruning import prune_sweep
from .simulator import NeuronParams, SampleEvents
from .topology import build_report
from .training import (
    ConfigError,
    RegularizerConfig,
    TrainConfig,
    TrainDivergedError,
    config_hash,
    dataclass_from_dict,
    evaluate,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class ModelConfig:
    """Network geometry and initialization; the CLI's "model" config section."""

    n_in: int = 20
    n_hid: int = 64
    n_out: int | None = None
    dim: int = 2
    pos_radius: float = 2.0
    init_seed: int | None = None
    w_in_gain: float = 1.0
    w_rec_gain: float = 1.0
    w_out_gain: float = 1.0

    def __post_init__(self):
        if self.n_in < 1 or self.n_hid < 1:
            raise ConfigError("n_in and n_hid must be positive")
        if self.dim not in (2, 3, 4):
            raise ConfigError("dim must be 2, 3 or 4")


CONFIG_SECTIONS = ("model", "train", "regularizer", "neuron")


def load_config(path) -> dict:
    """Parse a config file into dataclasses, rejecting unknown keys."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
    return {
        "raw": raw,
        "model": dataclass_from_dict(ModelConfig, raw.get("model", {}), "model"),
        "train": dataclass_from_dict(TrainConfig, raw.get("train", {}), "train"),
        "regularizer": dataclass_from_dict(
            RegularizerConfig, raw.get("regularizer", {}), "regularizer"
        ),
        "neuron": dataclass_from_dict(NeuronParams, raw.get("neuron", {}), "neuron"),
    }


def canonical_hash(cfg: dict) -> str:
    return config_hash(
        {
            "model": asdict(cfg["model"]),
            "train": asdict(cfg["train"]),
            "regularizer": asdict(cfg["regularizer"]),
            "neuron": asdict(cfg["neuron"]),
        }
    )


def _meta(cfg_hash: str, seed: int) -> dict:
    return {"config_hash": cfg_hash, "seed": seed, "version": __version__}


def _print_json(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_csv(path, header_meta: dict, columns: list, rows: list) -> None:
    """CSV with one leading comment line carrying provenance."""
    meta = " ".join(f"{k}={v}" for k, v in header_meta.items())
    out = sys.stdout if path is None else open(path, "w", newline="")
    try:
        out.write(f"# {meta}\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    finally:
        if path is not None:
            out.close()


def _load_dataset(path):
    try:
        return load_events(path)
    except FileNotFoundError:
        raise DatasetFormatError(f"data file not found: {path}", 0)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    if args.task == "patterns":
        ds = gen_patterns(
            n_in=args.n_in,
            n_classes=args.classes,
            samples_per_class=args.samples,
            jitter_std=args.jitter_std,
            drop_prob=args.drop_prob,
            seed=args.seed,
            T=args.t_steps,
        )
    else:
        gaps = [int(g) for g in args.gaps.split(",")]
        if len(gaps) != args.classes:
            raise ConfigError("--gaps must list exactly --classes gaps")
        ds = gen_interval_task(
            n_in=args.n_in,
            n_classes=args.classes,
            gap_grid=gaps,
            seed=args.seed,
            samples_per_class=args.samples,
            T=args.t_steps,
        )
    if args.test_out:
        train_ds, test_ds = split_dataset(ds, args.test_fraction, seed=args.seed)
        save_events(train_ds, args.out)
        save_events(test_ds, args.test_out)
    else:
        save_events(ds, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg_hash = canonical_hash(cfg)
    data = _load_dataset(args.data)
    test_data = _load_dataset(args.test_data) if args.test_data else None

    mc: ModelConfig = cfg["model"]
    tc: TrainConfig = cfg["train"]
    if mc.n_in != data.n_in:
        raise ConfigError(f"model.n_in={mc.n_in} but the data has n_in={data.n_in}")
    n_out = mc.n_out if mc.n_out is not None else data.n_classes
    model = init_model(
        n_in=mc.n_in,
        n_hid=mc.n_hid,
        n_out=n_out,
        delay_mode=tc.delay_mode,
        dim=mc.dim,
        seed=tc.seed if mc.init_seed is None else mc.init_seed,
        pos_radius=mc.pos_radius,
        mask_diagonal=tc.mask_diagonal,
        w_in_gain=mc.w_in_gain,
        w_rec_gain=mc.w_rec_gain,
        w_out_gain=mc.w_out_gain,
    )
    neuron: NeuronParams = cfg["neuron"]
    if neuron.T != data.T:
        raise ConfigError(f"neuron.T={neuron.T} but the data has T={data.T}")

    model, report = train(
        data,
        model,
        tc,
        neuron=neuron,
        regularizer=cfg["regularizer"],
        test_dataset=test_data,
        threads=args.threads,
    )
    save_checkpoint(
        args.out_checkpoint,
        model,
        neuron,
        train_cfg=tc,
        reg_cfg=cfg["regularizer"],
        seed=tc.seed,
        epoch=tc.epochs,
        extra={"config_hash": cfg_hash},
    )
    if args.log:
        columns = ["epoch", "train_loss", "train_acc"] + (
            ["test_acc"] if test_data is not None else []
        )
        rows = []
        for e in range(len(report.train_loss)):
            row = [e, repr(report.train_loss[e]), repr(report.train_acc[e])]
            if test_data is not None:
                row.append(repr(report.test_acc[e]))
            rows.append(row)
        _write_csv(args.log, _meta(cfg_hash, tc.seed), columns, rows)
    summary = _meta(cfg_hash, tc.seed)
    summary["final_train_acc"] = report.train_acc[-1] if report.train_acc else None
    summary["final_test_acc"] = report.test_acc[-1] if report.test_acc else None
    summary["final_sparsity"] = report.final_sparsity
    summary["wall_clock_s"] = round(report.wall_clock_s, 3)
    _print_json(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, neuron, manifest = load_checkpoint(args.checkpoint)
    data = _load_dataset(args.data)
    acc = evaluate(model, neuron, data, threads=args.threads)
    out = _meta(manifest["config_hash"], manifest["seed"])
    out["accuracy"] = acc
    out["n_samples"] = len(data.samples)
    _print_json(out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, neuron, manifest = load_checkpoint(args.checkpoint)
    report = build_report(
        model.w_rec,
        model.delays.d,
        binary=args.binary,
        n_null=args.null_samples,
        seed=args.seed,
    )
    out = _meta(manifest["config_hash"], manifest["seed"])
    out.update(report.to_dict())
    _print_json(out)
    return EXIT_OK


def _coord_names(dim: int) -> list:
    return ["x", "y", "z", "w4"][:dim]


def cmd_probe(args) -> int:
    model, neuron, manifest = load_checkpoint(args.checkpoint)
    meta = _meta(manifest["config_hash"], manifest["seed"])
    if args.kind != "ridge" and model.positions is None:
        raise ConfigError(f"probe {args.kind} needs a positional-mode checkpoint")

    if args.kind == "prefpos-w":
        pref = preferred_positions_weights(model.w_in, model.positions)
        cols = ["input_id"] + _coord_names(model.positions.dim) + ["valid"]
        rows = [
            [i] + [repr(c) for c in pref.coords[i]] + [int(pref.valid[i])]
            for i in range(pref.coords.shape[0])
        ]
    elif args.kind == "prefpos-act":
        data = _load_dataset(args.data)
        tensor = activity_sensitivity(model, neuron, data, window=args.window)
        pref = preferred_positions_activity(tensor, model.positions)
        cols = ["input_id"] + _coord_names(model.positions.dim) + ["valid"]
        rows = [
            [i] + [repr(c) for c in pref.coords[i]] + [int(pref.valid[i])]
            for i in range(pref.coords.shape[0])
        ]
    elif args.kind == "prefpos-time":
        data = _load_dataset(args.data)
        coords, valid = preferred_positions_over_time(
            model, neuron, data, model.positions,
            bin_width=args.bin_width, window=args.window,
        )
        cols = ["input_id", "bin"] + _coord_names(model.positions.dim) + ["valid"]
        rows = []
        for b in range(coords.shape[0]):
            for i in range(coords.shape[1]):
                rows.append(
                    [i, b] + [repr(c) for c in coords[b, i]] + [int(valid[b, i])]
                )
    else:
        if model.positions is None:
            raise ConfigError("probe ridge needs a positional-mode checkpoint")
        res = ridge_r2(
            model.w_in, model.positions,
            alpha=args.alpha, folds=args.folds, seed=args.seed,
        )
        cols = ["coordinate", "r2"]
        rows = [
            [_coord_names(model.positions.dim)[k], repr(float(res.r2_per_coord[k]))]
            for k in range(res.r2_per_coord.size)
        ]
        rows.append(["mean", repr(res.r2_mean)])
        meta["skipped_folds"] = res.n_skipped_folds
    _write_csv(args.out, meta, cols, rows)
    return EXIT_OK


def cmd_prune(args) -> int:
    model, neuron, manifest = load_checkpoint(args.checkpoint)
    data = _load_dataset(args.data)
    fractions = [float(f) for f in args.fractions.split(",")]
    rows = prune_sweep(
        model,
        neuron,
        data,
        strategy=args.strategy,
        fractions=fractions,
        seeds=list(range(args.seeds)),
        n_null=args.null_samples,
        threads=args.threads,
    )
    cols = ["strategy", "fraction", "seed", "accuracy", "Q", "Gamma", "density"]
    table = [
        [
            r["strategy"],
            repr(r["fraction"]),
            r["seed"],
            repr(r["accuracy"]),
            repr(r["Q"]),
            "" if r["Gamma"] is None else repr(r["Gamma"]),
            repr(r["density"]),
        ]
        for r in rows
    ]
    _write_csv(args.out, _meta(manifest["config_hash"], manifest["seed"]), cols, table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else None
    if cfg is not None:
        mc, tc, neuron = cfg["model"], cfg["train"], cfg["neuron"]
        cfg_hash = canonical_hash(cfg)
    else:
        mc = ModelConfig(n_in=5, n_hid=8, n_out=3)
        tc = TrainConfig(delay_mode="positional")
        neuron = NeuronParams(T=60)
        cfg_hash = config_hash({})
    n_out = mc.n_out if mc.n_out is not None else 3
    rng = np.random.default_rng(args.seed)
    model = init_model(
        n_in=mc.n_in,
        n_hid=mc.n_hid,
        n_out=n_out,
        delay_mode=tc.delay_mode,
        dim=mc.dim,
        seed=args.seed,
        pos_radius=mc.pos_radius,
        mask_diagonal=tc.mask_diagonal,
        w_in_gain=mc.w_in_gain * 3.0,
        w_rec_gain=mc.w_rec_gain,
        w_out_gain=mc.w_out_gain,
    )
    n_events = 3 * mc.n_in
    events = sorted(
        zip(
            rng.integers(0, neuron.T, n_events).tolist(),
            rng.integers(0, mc.n_in, n_events).tolist(),
        )
    )
    sample = SampleEvents([list(e) for e in events], label=int(rng.integers(n_out)))
    report = gradient_check(model, neuron, sample, tolerance=args.tolerance)
    out = _meta(cfg_hash, args.seed)
    out["tolerance"] = args.tolerance
    out["passed"] = report.passed(args.min_rate)
    out["groups"] = {
        name: {
            "n_total": g.n_total,
            "n_valid": g.n_valid,
            "n_pass": g.n_pass,
            "pass_rate": g.pass_rate,
            "worst_rel_err": g.worst_rel_err,
            "invalid_coords": g.invalid_coords,
        }
        for name, g in report.groups.items()
    }
    _print_json(out)
    return EXIT_OK if out["passed"] else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spatialsnn",
        description="Train and analyze spiking networks with position-derived delays.",
    )
    p.add_argument("--version", action="version", version=f"spatialsnn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic event dataset (JSONL)")
    g.add_argument("--task", choices=["patterns", "interval"], required=True)
    g.add_argument("--n-in", type=int, required=True)
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--samples", type=int, required=True, help="samples per class")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--t-steps", type=int, default=100)
    g.add_argument("--jitter-std", type=float, default=1.0)
    g.add_argument("--drop-prob", type=float, default=0.1)
    g.add_argument("--gaps", default="5,15,25,35", help="comma list, interval task")
    g.add_argument("--test-out", default=None, help="also write a held-out split here")
    g.add_argument("--test-fraction", type=float, default=0.25)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--log", default=None, help="per-epoch CSV")
    t.add_argument("--test-data", default=None)
    t.add_argument("--threads", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="graph topology report of a checkpoint")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--binary", action="store_true")
    a.add_argument("--null-samples", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("probe", help="structure-function probes as CSV")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", default=None)
    pr.add_argument(
        "--kind",
        choices=["prefpos-w", "prefpos-act", "prefpos-time", "ridge"],
        required=True,
    )
    pr.add_argument("--out", default=None, help="CSV path; stdout when omitted")
    pr.add_argument("--window", type=int, default=5)
    pr.add_argument("--bin-width", type=int, default=10)
    pr.add_argument("--alpha", type=float, default=1.0)
    pr.add_argument("--folds", type=int, default=5)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_probe)

    pn = sub.add_parser("prune", help="pruning sweep curves as CSV")
    pn.add_argument("--checkpoint", required=True)
    pn.add_argument("--data", required=True)
    pn.add_argument(
        "--strategy", choices=["longest_delay", "magnitude", "random"], required=True
    )
    pn.add_argument("--fractions", default="0.05,0.10,0.15,0.20,0.25,0.30")
    pn.add_argument("--seeds", type=int, default=3, help="number of seeds, 0..K-1")
    pn.add_argument("--null-samples", type=int, default=20)
    pn.add_argument("--out", default=None)
    pn.add_argument("--threads", type=int, default=1)
    pn.set_defaults(func=cmd_prune)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    gc.add_argument("--config", default=None)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-3)
    gc.add_argument("--min-rate", type=float, default=0.95)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainDivergedError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
