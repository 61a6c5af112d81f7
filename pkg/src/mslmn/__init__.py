"""Multiscale linear-memory recurrent networks.

A recurrent cell that splits its linear memory into modules clocked at
exponentially spaced rates, a closed-form linear autoencoder for sequences
used to initialize new modules, training loops (fixed architecture and
incremental module growth), estimator wrappers, and a small experiment
runner CLI.
"""

from .laes import (
    LaesModel,
    LinearSequenceAutoencoder,
    build_data_matrix,
    encode,
    fit_laes,
    reconstruct,
)
from .lmn import (
    LmnParams,
    LmnState,
    RnnParams,
    lmn_forward,
    lmn_from_rnn,
    lmn_step,
    random_lmn,
    rnn_forward,
)
from .multiscale import (
    ClockSchedule,
    MsLmnParams,
    MsLmnState,
    active_modules,
    add_module,
    count_params,
    initial_state,
    module_count_for,
    mslmn_forward,
    mslmn_step,
    mslmn_step_packed,
    pack_weights,
    random_mslmn,
    single_scale,
)
from .tasks import (
    SequenceDataset,
    load_feature_csv,
    make_common_suffix_task,
    make_generation_task,
)
from .training import (
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    bptt_gradients,
    fit_readout,
    incremental_train,
    nmse,
    predict,
    train_fixed,
)
from .estimators import MultiScaleLmnClassifier, MultiScaleLmnRegressor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ClockSchedule",
    "LaesModel",
    "LinearSequenceAutoencoder",
    "LmnParams",
    "LmnState",
    "MsLmnParams",
    "MsLmnState",
    "MultiScaleLmnClassifier",
    "MultiScaleLmnRegressor",
    "RnnParams",
    "SequenceDataset",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "active_modules",
    "add_module",
    "bptt_gradients",
    "build_data_matrix",
    "count_params",
    "encode",
    "fit_laes",
    "fit_readout",
    "incremental_train",
    "initial_state",
    "lmn_forward",
    "lmn_from_rnn",
    "lmn_step",
    "load_checkpoint",
    "load_feature_csv",
    "make_common_suffix_task",
    "make_generation_task",
    "module_count_for",
    "mslmn_forward",
    "mslmn_step",
    "mslmn_step_packed",
    "nmse",
    "pack_weights",
    "predict",
    "random_lmn",
    "random_mslmn",
    "reconstruct",
    "rnn_forward",
    "save_checkpoint",
    "single_scale",
    "train_fixed",
]
