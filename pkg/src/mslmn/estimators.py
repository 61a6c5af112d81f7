"""Estimator wrappers around the multiscale cell and its training loops.

Both estimators take ``X`` as a list of per-sequence matrices (one row per
timestep) since sequences may have different lengths; that is the one spot
where the usual flat-2d estimator convention cannot apply. Fitting either
runs the fixed-architecture loop or the incremental module-growth loop,
selected by ``mode``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin

from .multiscale import count_params, random_mslmn
from .tasks import CLASSIFICATION, REGRESSION, SequenceDataset
from .training import (
    TrainConfig,
    incremental_train,
    nmse,
    predict,
    train_fixed,
)
from .validation import check_sequences


def _train_config(est) -> TrainConfig:
    return TrainConfig(
        learning_rate=est.learning_rate,
        batch_size=est.batch_size,
        l2_decay=est.l2_decay,
        max_epochs=est.max_epochs,
        patience=est.patience,
        module_add_period=est.module_add_period,
        seed=est.random_state,
        noise_std=est.noise_std,
        laes_state_size=est.laes_state_size,
        grad_clip=est.grad_clip,
        metric_goal=est.metric_goal,
    )


def _fit_on(est, data: SequenceDataset):
    if est.mode not in ("fixed", "incremental"):
        raise ValueError(f"mode must be 'fixed' or 'incremental', got {est.mode!r}")
    config = _train_config(est)
    if est.mode == "incremental":
        result = incremental_train(
            data, est.n_hidden, est.n_memory, est.n_modules, config, bias=est.bias
        )
    else:
        rng = np.random.default_rng(est.random_state)
        params = random_mslmn(
            rng,
            data.n_input,
            est.n_hidden,
            est.n_memory,
            data.n_output,
            n_modules=est.n_modules,
            bias=est.bias,
        )
        result = train_fixed(data, params, config)
    est.params_ = result.best_params
    est.final_params_ = result.params
    est.metrics_ = result.metrics
    est.n_features_in_ = data.n_input
    est.n_parameters_ = count_params(est.params_)
    return est


class MultiScaleLmnRegressor(RegressorMixin, BaseEstimator):
    """Sequence-to-sequence regressor: per-step targets, per-step MSE loss.

    ``predict`` returns one output matrix per input sequence; ``score`` is
    one minus the normalized squared error over all timesteps (1.0 means a
    perfect fit, 0.0 matches predicting the global target mean).
    """

    def __init__(
        self,
        n_hidden: int = 4,
        n_memory: int = 4,
        n_modules: int = 1,
        mode: str = "fixed",
        bias: bool = False,
        learning_rate: float = 1e-3,
        batch_size: int = 1,
        l2_decay: float = 0.0,
        max_epochs: int = 100,
        patience: int = 0,
        module_add_period: int = 50,
        noise_std: float = 0.0,
        laes_state_size: int | None = None,
        grad_clip: float | None = None,
        metric_goal: float | None = None,
        random_state: int = 0,
    ):
        self.n_hidden = n_hidden
        self.n_memory = n_memory
        self.n_modules = n_modules
        self.mode = mode
        self.bias = bias
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.l2_decay = l2_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.module_add_period = module_add_period
        self.noise_std = noise_std
        self.laes_state_size = laes_state_size
        self.grad_clip = grad_clip
        self.metric_goal = metric_goal
        self.random_state = random_state

    def fit(self, X, y):
        seqs = check_sequences(X, "X")
        targets = check_sequences(y, "y")
        if len(targets) != len(seqs):
            raise ValueError("X and y must hold the same number of sequences")
        for s, t in zip(seqs, targets):
            if t.shape[0] != s.shape[0]:
                raise ValueError("each target must match its sequence length")
        idx = list(range(len(seqs)))
        data = SequenceDataset(
            inputs=seqs,
            targets=targets,
            task_kind=REGRESSION,
            train_idx=idx,
            val_idx=list(idx),
            test_idx=[],
        )
        return _fit_on(self, data)

    def predict(self, X) -> list[np.ndarray]:
        seqs = check_sequences(X, "X")
        return [predict(self.params_, s) for s in seqs]

    def score(self, X, y, sample_weight=None) -> float:
        preds = np.vstack(self.predict(X))
        targets = np.vstack(check_sequences(y, "y"))
        return 1.0 - nmse(preds, targets)


class MultiScaleLmnClassifier(ClassifierMixin, BaseEstimator):
    """Whole-sequence classifier: terminal softmax cross-entropy loss.

    Labels may be arbitrary hashables; they are mapped onto ``classes_`` in
    sorted order. ``predict_proba`` reads the softmax of the final-step
    readout.
    """

    def __init__(
        self,
        n_hidden: int = 4,
        n_memory: int = 4,
        n_modules: int = 1,
        mode: str = "fixed",
        bias: bool = False,
        learning_rate: float = 1e-3,
        batch_size: int = 1,
        l2_decay: float = 0.0,
        max_epochs: int = 100,
        patience: int = 0,
        module_add_period: int = 50,
        noise_std: float = 0.0,
        laes_state_size: int | None = None,
        grad_clip: float | None = None,
        metric_goal: float | None = None,
        random_state: int = 0,
    ):
        self.n_hidden = n_hidden
        self.n_memory = n_memory
        self.n_modules = n_modules
        self.mode = mode
        self.bias = bias
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.l2_decay = l2_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.module_add_period = module_add_period
        self.noise_std = noise_std
        self.laes_state_size = laes_state_size
        self.grad_clip = grad_clip
        self.metric_goal = metric_goal
        self.random_state = random_state

    def fit(self, X, y):
        seqs = check_sequences(X, "X")
        if len(y) != len(seqs):
            raise ValueError("X and y must have the same length")
        self.classes_ = np.array(sorted(set(y)))
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes")
        index = {c: i for i, c in enumerate(self.classes_)}
        labels = [index[label] for label in y]
        idx = list(range(len(seqs)))
        data = SequenceDataset(
            inputs=seqs,
            targets=labels,
            task_kind=CLASSIFICATION,
            train_idx=idx,
            val_idx=list(idx),
            test_idx=[],
            n_classes=len(self.classes_),
        )
        return _fit_on(self, data)

    def decision_function(self, X) -> np.ndarray:
        seqs = check_sequences(X, "X")
        return np.stack([predict(self.params_, s)[-1] for s in seqs])

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def score(self, X, y, sample_weight=None) -> float:
        preds = self.predict(X)
        return float(np.mean([p == t for p, t in zip(preds, y)]))
