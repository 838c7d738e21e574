"""Synthetic event datasets and the JSONL interchange format.

Two generators: jittered spatiotemporal spike templates (a generic
classification task) and an interval-discrimination task whose classes
differ only in the gap between two population pulses, so it rewards
machinery that can compare spike times across tens of steps.

File format, one JSON object per line:
    {"n_in": 20, "T": 100, "n_classes": 4, "split": "train"}   <- header
    {"label": 2, "events": [[step, neuron], ...]}              <- per sample
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .simulator import SampleEvents


class DatasetFormatError(ValueError):
    """Malformed event file; carries the 1-based line number."""

    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass
class EventDataset:
    samples: list
    n_in: int
    n_classes: int
    T: int
    split: str = "train"

    def __post_init__(self):
        for s in self.samples:
            if not 0 <= s.label < self.n_classes:
                raise ValueError(f"label {s.label} outside {self.n_classes} classes")

    def __len__(self) -> int:
        return len(self.samples)


def gen_patterns(
    n_in: int,
    n_classes: int,
    samples_per_class: int,
    jitter_std: float = 1.0,
    drop_prob: float = 0.1,
    seed: int = 0,
    T: int = 100,
    spikes_per_neuron: int = 3,
) -> EventDataset:
    """Jittered copies of one fixed random spike template per class.

    Each class template picks about half the input neurons and gives each
    of them spikes_per_neuron random spike times in [0, T). A sample
    shifts every template spike by rounded Gaussian jitter (clipped back
    into the trial) and drops it with probability drop_prob. Deterministic
    in seed.
    """
    if n_in < 1 or n_classes < 1 or samples_per_class < 1:
        raise ValueError("n_in, n_classes, samples_per_class must be positive")
    if jitter_std < 0 or not 0 <= drop_prob <= 1:
        raise ValueError("jitter_std must be >= 0 and drop_prob in [0, 1]")
    rng = np.random.default_rng(seed)
    templates = _draw_templates(rng, n_in, n_classes, T, spikes_per_neuron)

    samples = []
    for label in range(n_classes):
        steps0, neurons0 = templates[label]
        for _ in range(samples_per_class):
            jitter = np.rint(rng.normal(0.0, jitter_std, steps0.size)).astype(np.int64)
            steps = np.clip(steps0 + jitter, 0, T - 1)
            keep = rng.random(steps0.size) >= drop_prob
            events = sorted(zip(steps[keep].tolist(), neurons0[keep].tolist()))
            samples.append(SampleEvents([list(e) for e in events], label))
    return EventDataset(samples, n_in, n_classes, T)


def _draw_templates(rng, n_in: int, n_classes: int, T: int, spikes_per_neuron: int):
    n_active = max(1, n_in // 2)
    out = []
    for _ in range(n_classes):
        neurons = rng.choice(n_in, size=n_active, replace=False)
        neurons = np.repeat(neurons, spikes_per_neuron)
        steps = rng.integers(0, T, size=neurons.size)
        out.append((steps, neurons))
    return out


def class_templates(
    n_in: int, n_classes: int, seed: int, T: int = 100, spikes_per_neuron: int = 3
):
    """The exact templates gen_patterns(seed) builds, for template-matching oracles."""
    return _draw_templates(np.random.default_rng(seed), n_in, n_classes, T, spikes_per_neuron)


def gen_interval_task(
    n_in: int,
    n_classes: int,
    gap_grid,
    seed: int = 0,
    samples_per_class: int = 50,
    T: int = 100,
) -> EventDataset:
    """Two population pulses; the class is the gap between them.

    Every input neuron fires at a random onset step and again gap +/- 1
    steps later (jitter never collapses distinct classes since grid gaps
    should differ by more than 2). Onset varies per sample so absolute
    time carries no label information.
    """
    gap_grid = [int(g) for g in gap_grid]
    if len(gap_grid) != n_classes:
        raise ValueError("gap_grid must provide one gap per class")
    if len(set(gap_grid)) != n_classes:
        raise ValueError("gaps must be distinct")
    if max(gap_grid) + 3 >= T:
        raise ValueError("largest gap does not fit in the trial")
    rng = np.random.default_rng(seed)
    samples = []
    for label, gap in enumerate(gap_grid):
        for _ in range(samples_per_class):
            jitter = int(rng.integers(-1, 2))
            g = max(1, gap + jitter)
            t0 = int(rng.integers(1, T - g - 1))
            events = [[t0, i] for i in range(n_in)]
            events += [[t0 + g, i] for i in range(n_in)]
            samples.append(SampleEvents(events, label))
    return EventDataset(samples, n_in, n_classes, T)


def split_dataset(
    dataset: EventDataset, test_fraction: float, seed: int = 0
) -> tuple[EventDataset, EventDataset]:
    """Disjoint, seed-deterministic train/test split (stratified per class)."""
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    labels = np.asarray([s.label for s in dataset.samples])
    test_idx = []
    for c in range(dataset.n_classes):
        idx = np.nonzero(labels == c)[0]
        n_test = int(round(len(idx) * test_fraction))
        test_idx.extend(rng.permutation(idx)[:n_test].tolist())
    test_set = set(test_idx)
    train_samples = [s for i, s in enumerate(dataset.samples) if i not in test_set]
    test_samples = [s for i, s in enumerate(dataset.samples) if i in test_set]
    mk = lambda samples, split: EventDataset(
        samples, dataset.n_in, dataset.n_classes, dataset.T, split
    )
    return mk(train_samples, "train"), mk(test_samples, "test")


def save_events(dataset: EventDataset, path) -> None:
    with open(path, "w") as fh:
        header = {
            "n_in": dataset.n_in,
            "T": dataset.T,
            "n_classes": dataset.n_classes,
            "split": dataset.split,
        }
        fh.write(json.dumps(header) + "\n")
        for s in dataset.samples:
            fh.write(
                json.dumps({"label": int(s.label), "events": [[int(t), int(i)] for t, i in s.events]})
                + "\n"
            )


def load_events(path) -> EventDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty file, expected a header object", 1)

    def parse(line: str, lineno: int) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"invalid JSON: {e.msg}", lineno) from e
        if not isinstance(obj, dict):
            raise DatasetFormatError("expected a JSON object", lineno)
        return obj

    header = parse(lines[0], 1)
    for key in ("n_in", "T", "n_classes"):
        if key not in header:
            raise DatasetFormatError(f"header missing {key!r}", 1)
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        obj = parse(line, lineno)
        if "label" not in obj or "events" not in obj:
            raise DatasetFormatError("sample needs 'label' and 'events'", lineno)
        events = obj["events"]
        if not isinstance(events, list) or any(
            not isinstance(e, list) or len(e) != 2 for e in events
        ):
            raise DatasetFormatError("'events' must be a list of [step, neuron]", lineno)
        samples.append(SampleEvents([[int(t), int(i)] for t, i in events], int(obj["label"])))
    return EventDataset(
        samples,
        int(header["n_in"]),
        int(header["n_classes"]),
        int(header["T"]),
        str(header.get("split", "train")),
    )
