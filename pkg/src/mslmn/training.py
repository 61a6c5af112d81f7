"""Losses, truncation-free BPTT through the clocked cell, Adam, closed-form
readout refits, and the two training drivers (fixed architecture and
incremental module growth).

Gradients respect the clock gating exactly: a frozen module passes its
incoming gradient through unchanged, and modules that never fire on a batch
receive structurally zero gradients. The incremental driver grows the model
one module at a time, initializing each new module from a closed-form
autoencoder fit of the subsampled hidden states, refitting the whole readout
by pseudoinverse, then finetuning the entire model.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .laes import fit_laes
from .linalg import pseudoinverse
from .lmn import _check_sequence
from .multiscale import (
    MsLmnParams,
    active_modules,
    add_module,
    flatten_params,
    mslmn_forward,
    pack_weights,
    param_blocks,
    random_mslmn,
    unflatten_params,
)
from .tasks import CLASSIFICATION, REGRESSION, SequenceDataset
from .validation import as_matrix, as_vector

logger = logging.getLogger(__name__)

# LossKind values; chosen by the dataset's task kind.
PER_STEP_MSE = "per_step_mse"
TERMINAL_CROSS_ENTROPY = "terminal_cross_entropy"


def loss_kind_for(task_kind: str) -> str:
    return PER_STEP_MSE if task_kind == REGRESSION else TERMINAL_CROSS_ENTROPY


@dataclass
class TrainConfig:
    """Optimizer and schedule settings.

    ``patience`` counts epochs without validation improvement before an
    early stop (0 disables). ``module_add_period`` is the number of epochs
    between module additions in incremental training. ``laes_state_size``
    is the autoencoder fit size for new modules (None means the module
    memory size). ``metric_goal`` stops early once the validation metric is
    at least this good (at most, for regression error metrics).
    """

    learning_rate: float = 1e-3
    batch_size: int = 1
    l2_decay: float = 0.0
    max_epochs: int = 100
    patience: int = 0
    module_add_period: int = 50
    seed: int = 0
    noise_std: float = 0.0
    laes_state_size: int | None = None
    grad_clip: float | None = None
    metric_goal: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2_decay < 0 or self.noise_std < 0:
            raise ValueError("l2_decay and noise_std must be >= 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.module_add_period < 1:
            raise ValueError("module_add_period must be >= 1")
        if self.laes_state_size is not None and self.laes_state_size < 1:
            raise ValueError("laes_state_size must be >= 1 when given")


@dataclass
class AdamState:
    """Moment accumulators over the flattened parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    module_count: int
    train_loss: float
    val_loss: float
    metric: float
    wall_time_ms: float


@dataclass
class TrainResult:
    """Final and best-validation weights plus the per-epoch records; the
    optimizer moments and batching-generator state are those at the end of
    the run (for exact resumes)."""

    params: MsLmnParams
    best_params: MsLmnParams
    metrics: list[MetricsRecord] = field(default_factory=list)
    optimizer: AdamState | None = None
    rng_state: dict | None = None


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries the last good model."""

    def __init__(self, message: str, params: MsLmnParams, metrics: list):
        super().__init__(message)
        self.params = params
        self.metrics = metrics


class _NonFiniteBatch(Exception):
    """Internal: a batch produced a non-finite loss or gradient."""


# -------------------------------------------------------------------- losses

def nmse(pred, target) -> float:
    """Sum of squared errors over the variance of the target around its
    global scalar mean."""
    p = as_matrix(pred, "pred")
    t = as_matrix(target, "target")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape}, target {t.shape}")
    denom = float(np.sum((t - t.mean()) ** 2))
    if denom <= 0.0:
        raise ValueError("target is constant; normalized error undefined")
    return float(np.sum((p - t) ** 2) / denom)


def cross_entropy(logits, label: int) -> float:
    """Negative log softmax probability of ``label``; stable for large
    logits."""
    v = as_vector(logits, "logits")
    if len(v) < 2:
        raise ValueError("need at least 2 classes")
    label = int(label)
    if not 0 <= label < len(v):
        raise IndexError(f"label {label} outside [0, {len(v)})")
    mx = float(np.max(v))
    lse = mx + float(np.log(np.sum(np.exp(v - mx))))
    return lse - float(v[label])


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / e.sum()


# ---------------------------------------------------------------------- bptt

def bptt_gradients(
    params: MsLmnParams, batch: list, loss_kind: str
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its gradient for every weight block.

    ``batch`` is a list of (input sequence, target) pairs; targets are
    per-step matrices for the per-step MSE loss and integer labels for the
    terminal cross-entropy loss. Gradient keys match
    :func:`mslmn.multiscale.param_blocks`.
    """
    if not batch:
        raise ValueError("batch is empty")
    packed = pack_weights(params)
    g, n_m, n_h = params.n_modules, params.n_memory, params.n_hidden
    gn = g * n_m
    n_b = len(batch)
    d_xh = np.zeros_like(params.w_xh)
    d_mh = np.zeros((n_h, gn))
    d_hm = np.zeros((gn, n_h))
    d_mm = np.zeros((gn, gn))
    d_my = np.zeros((params.n_output, gn))
    d_bh = None if params.b_h is None else np.zeros(n_h)
    my_t = packed.my.T
    total_loss = 0.0

    for x_seq, target in batch:
        x = _check_sequence(x_seq, params.n_input)
        l = x.shape[0]
        if l < 1:
            raise ValueError("sequences must have at least one timestep")
        hs = np.zeros((l, n_h))
        ms = np.zeros((l + 1, gn))
        row_counts = np.zeros(l, dtype=np.int64)
        m = np.zeros(gn)
        for t in range(1, l + 1):
            pre = params.w_xh @ x[t - 1] + packed.mh @ m
            if params.b_h is not None:
                pre = pre + params.b_h
            h = np.tanh(pre)
            rows = active_modules(t, g) * n_m
            m = m.copy()
            m[:rows] = packed.hm[:rows] @ h + packed.mm[:rows] @ m
            hs[t - 1] = h
            ms[t] = m
            row_counts[t - 1] = rows
        ys = ms[1:] @ packed.my.T

        if loss_kind == PER_STEP_MSE:
            tgt = as_matrix(target, "target")
            if tgt.shape != ys.shape:
                raise ValueError(
                    f"target shape {tgt.shape} does not match output {ys.shape}"
                )
            diff = ys - tgt
            total_loss += float(np.mean(diff ** 2))
            dy = (2.0 / (diff.size * n_b)) * diff
        elif loss_kind == TERMINAL_CROSS_ENTROPY:
            label = int(target)
            total_loss += cross_entropy(ys[-1], label)
            dy = np.zeros_like(ys)
            prob = _softmax(ys[-1])
            prob[label] -= 1.0
            dy[-1] = prob / n_b
        else:
            raise ValueError(f"unknown loss kind {loss_kind!r}")

        # Reverse sweep: per-step gradients on the stacked memory, with
        # frozen rows passing straight through; weight gradients reduce to
        # stacked matrix products afterwards.
        d_my += dy.T @ ms[1:]
        dpre = np.zeros((l, n_h))
        u_arr = np.zeros((l, gn))
        dm = np.zeros(gn)
        for t in range(l, 0, -1):
            dm = dm + my_t @ dy[t - 1]
            rows = row_counts[t - 1]
            u = dm[:rows]
            u_arr[t - 1, :rows] = u
            dp = (packed.hm[:rows].T @ u) * (1.0 - hs[t - 1] ** 2)
            dpre[t - 1] = dp
            dm_prev = packed.mm[:rows].T @ u + packed.mh.T @ dp
            dm_prev[rows:] += dm[rows:]
            dm = dm_prev
        d_xh += dpre.T @ x
        d_mh += dpre.T @ ms[:-1]
        d_hm += u_arr.T @ hs
        d_mm += u_arr.T @ ms[:-1]
        if d_bh is not None:
            d_bh += dpre.sum(axis=0)

    grads: dict[str, np.ndarray] = {"w_xh": d_xh}
    for i in range(g):
        grads[f"w_mh.{i}"] = d_mh[:, i * n_m : (i + 1) * n_m]
    for k in range(g):
        grads[f"w_hm.{k}"] = d_hm[k * n_m : (k + 1) * n_m, :]
    for i, k in sorted(params.w_mm):
        grads[f"w_mm.{i}.{k}"] = d_mm[
            k * n_m : (k + 1) * n_m, i * n_m : (i + 1) * n_m
        ]
    for i in range(g):
        grads[f"w_my.{i}"] = d_my[:, i * n_m : (i + 1) * n_m]
    if d_bh is not None:
        grads["b_h"] = d_bh
    return total_loss / n_b, grads


# ---------------------------------------------------------------------- adam

def init_adam(params: MsLmnParams) -> AdamState:
    n = flatten_params(params).size
    return AdamState(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    params: MsLmnParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[MsLmnParams, AdamState]:
    """One bias-corrected Adam update; L2 decay is coupled (added to the
    gradient before the moment updates)."""
    w = flatten_params(params)
    pieces = []
    for key, block in param_blocks(params).items():
        grad = grads.get(key)
        if grad is None or grad.shape != block.shape:
            raise ValueError(f"gradient for {key} missing or misshaped")
        pieces.append(np.asarray(grad, dtype=np.float64).reshape(-1))
    gvec = np.concatenate(pieces)
    if config.grad_clip is not None:
        norm = float(np.linalg.norm(gvec))
        if norm > config.grad_clip > 0:
            gvec = gvec * (config.grad_clip / norm)
    if config.l2_decay > 0:
        gvec = gvec + config.l2_decay * w
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * gvec
    v = state.beta2 * state.v + (1.0 - state.beta2) * gvec ** 2
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    w = w - config.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m=m, v=v, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return unflatten_params(params, w), new_state


# ----------------------------------------------------- closed-form components

def collect_subsampled_hidden(
    params: MsLmnParams,
    data: SequenceDataset,
    subsample_exponent: int | None = None,
    indices=None,
) -> list[np.ndarray]:
    """Hidden-state rows at timesteps divisible by 2^subsample_exponent
    (default: the current module count, the rate of the next module).

    Sequences shorter than the stride yield nothing and are dropped.
    """
    if subsample_exponent is None:
        subsample_exponent = params.n_modules
    if subsample_exponent < 0:
        raise ValueError("subsample_exponent must be >= 0")
    if indices is None:
        indices = data.train_idx
    if not len(indices):
        raise ValueError("no sequences to collect from")
    rate = 2 ** subsample_exponent
    out = []
    for i in indices:
        hs, _, _ = mslmn_forward(params, data.inputs[i])
        picked = hs[rate - 1 :: rate]
        if picked.shape[0] > 0:
            out.append(picked.copy())
    return out


def fit_readout(
    params: MsLmnParams, data: SequenceDataset, ridge: float = 0.0, indices=None
) -> list[np.ndarray]:
    """Least-squares readout over the full stacked memory.

    Regression stacks every timestep against its target row; classification
    stacks the final memory state per sequence against a one-hot label row.
    Returns per-module readout blocks; ridge=0 gives the minimum-norm
    pseudoinverse solution.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if indices is None:
        indices = data.train_idx
    if not len(indices):
        raise ValueError("no sequences to fit the readout on")
    m_rows, y_rows = [], []
    for i in indices:
        _, ms, _ = mslmn_forward(params, data.inputs[i])
        if data.task_kind == REGRESSION:
            m_rows.append(ms)
            y_rows.append(as_matrix(data.targets[i], "target"))
        else:
            onehot = np.zeros((1, data.n_classes))
            onehot[0, int(data.targets[i])] = 1.0
            m_rows.append(ms[-1:])
            y_rows.append(onehot)
    m_all = np.vstack(m_rows)
    y_all = np.vstack(y_rows)
    if ridge > 0:
        gram = m_all.T @ m_all + ridge * np.eye(m_all.shape[1])
        w = np.linalg.solve(gram, m_all.T @ y_all).T
    else:
        w = (pseudoinverse(m_all) @ y_all).T
    n_m = params.n_memory
    return [
        w[:, i * n_m : (i + 1) * n_m].copy() for i in range(params.n_modules)
    ]


# ----------------------------------------------------------------- evaluation

def predict(params: MsLmnParams, sequence) -> np.ndarray:
    return mslmn_forward(params, sequence)[2]


def dataset_loss(params: MsLmnParams, data: SequenceDataset, indices) -> float:
    """Mean per-item training loss on clean (non-augmented) inputs."""
    kind = loss_kind_for(data.task_kind)
    total = 0.0
    for i in indices:
        ys = predict(params, data.inputs[i])
        if kind == PER_STEP_MSE:
            total += float(np.mean((ys - data.targets[i]) ** 2))
        else:
            total += cross_entropy(ys[-1], int(data.targets[i]))
    return total / len(indices)


def dataset_metric(params: MsLmnParams, data: SequenceDataset, indices) -> float:
    """Normalized squared error for regression, accuracy for
    classification."""
    if data.task_kind == REGRESSION:
        preds = np.vstack([predict(params, data.inputs[i]) for i in indices])
        targets = np.vstack([data.targets[i] for i in indices])
        return nmse(preds, targets)
    correct = 0
    for i in indices:
        ys = predict(params, data.inputs[i])
        correct += int(np.argmax(ys[-1]) == int(data.targets[i]))
    return correct / len(indices)


def _metric_reached(task_kind: str, metric: float, goal: float | None) -> bool:
    if goal is None:
        return False
    if task_kind == REGRESSION:
        return metric <= goal
    return metric >= goal


# ------------------------------------------------------------- training loops

def _epoch_batches(data: SequenceDataset, config: TrainConfig, rng) -> list[list[int]]:
    idx = list(data.train_idx)
    if (
        data.task_kind == CLASSIFICATION
        and config.batch_size == data.n_classes > 1
    ):
        # One sample per class per batch keeps every update balanced.
        by_class: dict[int, list[int]] = {}
        for i in idx:
            by_class.setdefault(int(data.targets[i]), []).append(i)
        groups = [list(rng.permutation(v)) for _, v in sorted(by_class.items())]
        n_batches = max(len(v) for v in groups)
        return [
            [group[b % len(group)] for group in groups]
            for b in range(n_batches)
        ]
    order = list(rng.permutation(idx))
    return [
        order[i : i + config.batch_size]
        for i in range(0, len(order), config.batch_size)
    ]


def _run_epoch(params, adam, data, config, rng, loss_kind):
    for batch_idx in _epoch_batches(data, config, rng):
        batch = []
        for i in batch_idx:
            x = data.inputs[i]
            if config.noise_std > 0:
                x = x + config.noise_std * rng.standard_normal(x.shape)
            batch.append((x, data.targets[i]))
        loss, grads = bptt_gradients(params, batch, loss_kind)
        if not np.isfinite(loss) or any(
            not np.all(np.isfinite(gr)) for gr in grads.values()
        ):
            raise _NonFiniteBatch
        params, adam = adam_step(params, grads, adam, config)
    return params, adam


def _train_loop(params, data, config, start_epoch, grow=None) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    adam = init_adam(params)
    loss_kind = loss_kind_for(data.task_kind)
    metrics: list[MetricsRecord] = []
    best_val = np.inf
    best_params = params
    since_best = 0
    for epoch in range(start_epoch, config.max_epochs + 1):
        t0 = time.perf_counter()
        if grow is not None and epoch > 1 and (epoch - 1) % config.module_add_period == 0:
            grown = grow(params, epoch)
            if grown is not None:
                params = grown
                adam = init_adam(params)
        try:
            new_params, adam = _run_epoch(params, adam, data, config, rng, loss_kind)
            train_loss = dataset_loss(new_params, data, data.train_idx)
        except _NonFiniteBatch:
            train_loss = float("nan")
        if not np.isfinite(train_loss):
            raise TrainingDiverged(
                f"training loss became non-finite at epoch {epoch}",
                params,
                metrics,
            )
        params = new_params
        val_loss = dataset_loss(params, data, data.val_idx)
        metric = dataset_metric(params, data, data.val_idx)
        metrics.append(
            MetricsRecord(
                epoch=epoch,
                module_count=params.n_modules,
                train_loss=train_loss,
                val_loss=val_loss,
                metric=metric,
                wall_time_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = params
            since_best = 0
        else:
            since_best += 1
        if _metric_reached(data.task_kind, metric, config.metric_goal):
            break
        if config.patience > 0 and since_best >= config.patience:
            break
    return TrainResult(
        params=params,
        best_params=best_params,
        metrics=metrics,
        optimizer=adam,
        rng_state=rng.bit_generator.state,
    )


def train_fixed(
    data: SequenceDataset, params: MsLmnParams, config: TrainConfig
) -> TrainResult:
    """Plain SGD loop on a fixed architecture with optional input-noise
    augmentation and early stopping on validation loss."""
    return _train_loop(params, data, config, start_epoch=1)


def _grow_one_module(params, data, config) -> MsLmnParams:
    n_m, n_h = params.n_memory, params.n_hidden
    collected = collect_subsampled_hidden(params, data)
    if not collected:
        logger.warning(
            "no sequence reaches the new module's stride %d; adding a "
            "zero-initialized module",
            2 ** params.n_modules,
        )
        grown = add_module(params, np.zeros((n_m, n_h)), np.zeros((n_m, n_m)))
    else:
        p = config.laes_state_size if config.laes_state_size is not None else n_m
        if p > n_m:
            raise ValueError(
                f"laes_state_size={p} exceeds module memory size {n_m}"
            )
        # The fit cannot exceed the data-matrix column count; pad a smaller
        # fit with zeros so the blocks keep the module shape.
        p_eff = min(p, max(h.shape[0] for h in collected) * n_h)
        model = fit_laes(collected, state_size=p_eff)
        hidden_map = np.zeros((n_m, n_h))
        carry_map = np.zeros((n_m, n_m))
        hidden_map[:p_eff] = model.input_map
        carry_map[:p_eff, :p_eff] = model.state_map
        grown = add_module(params, hidden_map, carry_map)
    return replace(grown, w_my=fit_readout(grown, data))


def incremental_train(
    data: SequenceDataset,
    n_hidden: int,
    n_memory: int,
    max_modules: int,
    config: TrainConfig,
    bias: bool = False,
) -> TrainResult:
    """Module-growth training: start from one random module, and every
    ``module_add_period`` epochs add a slower module initialized from a
    closed-form autoencoder fit of the subsampled hidden states, refit the
    whole readout by least squares, and keep finetuning the entire model.

    Early stopping can end the run before all ``max_modules`` are added.
    The hidden bias, when requested, is shared by all modules and carried
    unchanged through every growth step.
    """
    if max_modules < 1:
        raise ValueError("max_modules must be >= 1")
    rng = np.random.default_rng(config.seed)
    params = random_mslmn(
        rng, data.n_input, n_hidden, n_memory, data.n_output, n_modules=1,
        bias=bias,
    )

    def grow(current, epoch):
        if current.n_modules >= max_modules:
            return None
        return _grow_one_module(current, data, config)

    return _train_loop(params, data, config, start_epoch=1, grow=grow)
