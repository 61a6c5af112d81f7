"""Dataset construction and loading.

Three sources: a one-sequence signal-generation task (the model must emit a
target waveform from zero input), a synthetic classification task whose
classes differ only in their prefix while sharing one long common suffix
(so the discriminative information must survive the suffix), and a loader
for precomputed per-timestep feature CSVs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import check_positive_int

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class SequenceDataset:
    """Immutable sequence corpus with train/val/test index splits.

    ``targets[i]`` is a per-step (l, n_output) matrix for regression or an
    integer class label for classification.
    """

    inputs: list[np.ndarray]
    targets: list
    task_kind: str
    train_idx: list[int]
    val_idx: list[int]
    test_idx: list[int]
    n_classes: int = 0
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.task_kind not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task_kind {self.task_kind!r}")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")
        if not self.inputs:
            raise ValueError("dataset has no items")
        widths = {x.shape[1] for x in self.inputs}
        if len(widths) != 1:
            raise ValueError(f"inputs disagree on element size: {sorted(widths)}")
        if self.task_kind == CLASSIFICATION:
            for lab in self.targets:
                if not (0 <= int(lab) < self.n_classes):
                    raise ValueError(
                        f"label {lab} outside [0, {self.n_classes})"
                    )

    @property
    def n_input(self) -> int:
        return self.inputs[0].shape[1]

    @property
    def n_output(self) -> int:
        if self.task_kind == CLASSIFICATION:
            return self.n_classes
        return self.targets[0].shape[1]

    @property
    def l_max(self) -> int:
        return max(x.shape[0] for x in self.inputs)

    def items(self, indices) -> list[tuple[np.ndarray, object]]:
        return [(self.inputs[i], self.targets[i]) for i in indices]


def _synthesize_signal(n: int) -> np.ndarray:
    # Fixed-seed blend of five sinusoids spanning short through
    # sequence-scale periods, plus faint noise so the signal is not exactly
    # band-limited.
    rng = np.random.default_rng(1234)
    t = np.arange(1, n + 1, dtype=np.float64)
    periods = [5.0, 11.0, 27.0, 75.0, 2.0 * n]
    amps = [1.0, 0.9, 0.8, 1.1, 1.2]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=5)
    signal = np.zeros(n)
    for period, amp, phase in zip(periods, amps, phases):
        signal += amp * np.sin(2.0 * np.pi * t / period + phase)
    signal += 0.02 * rng.standard_normal(n)
    return signal


def _scale_to_unit_range(signal: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(signal)), float(np.max(signal))
    if hi - lo <= 0.0 or not np.isfinite(hi - lo):
        raise ValueError("signal is constant; cannot scale to [-1, 1]")
    return 2.0 * (signal - lo) / (hi - lo) - 1.0


def load_signal_file(path) -> np.ndarray:
    """Plain-text signal: one real per line; blank lines ignored."""
    values = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError as exc:
                raise ValueError(
                    f"{path}:{line_no}: not a number: {text!r}"
                ) from exc
    if not values:
        raise ValueError(f"{path}: signal file is empty")
    return np.asarray(values, dtype=np.float64)


def make_generation_task(source=None, n: int = 300) -> SequenceDataset:
    """One-item regression dataset: zero input, waveform target in [-1, 1].

    ``source`` is a signal file path or None for the built-in deterministic
    synthesizer. The single sequence serves as train, validation, and test.
    """
    check_positive_int(n, "n")
    if source is None:
        signal = _synthesize_signal(n)
    else:
        signal = load_signal_file(source)
        if len(signal) < n:
            raise ValueError(
                f"signal has {len(signal)} samples, need at least {n}"
            )
        signal = signal[:n]
    target = _scale_to_unit_range(signal).reshape(-1, 1)
    return SequenceDataset(
        inputs=[np.zeros((n, 1))],
        targets=[target],
        task_kind=REGRESSION,
        train_idx=[0],
        val_idx=[0],
        test_idx=[0],
    )


def make_common_suffix_task(
    classes: int = 5,
    per_class: int = 7,
    prefix_len: int = 10,
    suffix_len: int = 60,
    seed: int = 0,
    n_features: int = 13,
    jitter_std: float = 0.25,
) -> SequenceDataset:
    """Classification corpus whose classes differ only before a long shared
    suffix.

    Each class has a random prefix template; one suffix template is shared
    by every class. Items are template plus per-item Gaussian jitter.
    Features are standardized with statistics from the training split. The
    split is balanced per class, holding out roughly a third of each class
    (5 train / 2 test at per_class=7).
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    check_positive_int(per_class, "per_class")
    check_positive_int(prefix_len, "prefix_len")
    check_positive_int(n_features, "n_features")
    if suffix_len < 0:
        raise ValueError(f"suffix_len must be >= 0, got {suffix_len}")
    rng = np.random.default_rng(seed)
    prefix_templates = [
        rng.standard_normal((prefix_len, n_features)) for _ in range(classes)
    ]
    shared_suffix = rng.standard_normal((suffix_len, n_features))

    inputs, labels = [], []
    n_test = max(1, per_class // 3)
    train_idx, test_idx = [], []
    for c in range(classes):
        template = np.vstack([prefix_templates[c], shared_suffix])
        for j in range(per_class):
            item = template + jitter_std * rng.standard_normal(template.shape)
            idx = len(inputs)
            inputs.append(item)
            labels.append(c)
            (test_idx if j >= per_class - n_test else train_idx).append(idx)

    mean, std = _split_statistics(inputs, train_idx)
    inputs = [(x - mean) / std for x in inputs]
    return SequenceDataset(
        inputs=inputs,
        targets=labels,
        task_kind=CLASSIFICATION,
        train_idx=train_idx,
        val_idx=list(train_idx),
        test_idx=test_idx,
        n_classes=classes,
        meta={
            "prefix_templates": prefix_templates,
            "shared_suffix": shared_suffix,
        },
    )


def _split_statistics(inputs, idx) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.vstack([inputs[i] for i in idx])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def read_feature_file(path) -> np.ndarray:
    """Raw contents of one feature CSV (header row, one timestep per row),
    with no scaling applied."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one timestep")
    width = len(rows[0])
    data = []
    for row_no, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValueError(
                f"{path}:{row_no}: {len(row)} columns, header has {width}"
            )
        data.append([float(v) for v in row])
    return np.asarray(data, dtype=np.float64)


def load_feature_csv(paths, labels=None) -> SequenceDataset:
    """One sequence per CSV file (header row, one timestep per row).

    With ``labels`` (one per path) the dataset is a classification corpus;
    label values are mapped to class indices in sorted order. Without
    labels, targets are the inputs themselves (autoencoding-style
    regression). Features are standardized with training-split statistics;
    all items land in the training split, which doubles as validation.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("no feature files given")
    if labels is not None and len(labels) != len(paths):
        raise ValueError(
            f"{len(labels)} labels for {len(paths)} files"
        )
    inputs = [read_feature_file(path) for path in paths]
    widths = {x.shape[1] for x in inputs}
    if len(widths) != 1:
        raise ValueError(f"files disagree on column count: {sorted(widths)}")

    all_idx = list(range(len(inputs)))
    mean, std = _split_statistics(inputs, all_idx)
    inputs = [(x - mean) / std for x in inputs]
    if labels is None:
        return SequenceDataset(
            inputs=inputs,
            targets=[x.copy() for x in inputs],
            task_kind=REGRESSION,
            train_idx=all_idx,
            val_idx=list(all_idx),
            test_idx=[],
        )
    classes = sorted(set(labels))
    index_of = {c: i for i, c in enumerate(classes)}
    return SequenceDataset(
        inputs=inputs,
        targets=[index_of[lab] for lab in labels],
        task_kind=CLASSIFICATION,
        train_idx=all_idx,
        val_idx=list(all_idx),
        test_idx=[],
        n_classes=len(classes),
        meta={"classes": classes},
    )


def load_label_file(path) -> tuple[list[str], list[str]]:
    """Label file: one "path,label" pair per line; paths resolved relative
    to the label file's directory."""
    base = Path(path).parent
    paths, labels = [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if "," not in text:
                raise ValueError(f"{path}:{line_no}: expected 'path,label'")
            p, lab = text.rsplit(",", 1)
            paths.append(str(base / p.strip()))
            labels.append(lab.strip())
    if not paths:
        raise ValueError(f"{path}: label file is empty")
    return paths, labels
