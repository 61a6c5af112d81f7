"""Versioned JSON checkpoints for the recurrent cell and the autoencoder.

Arrays are stored row-major with explicit dimensions. Floats go through
Python's repr, which round-trips 64-bit values exactly, so a saved model
reproduces its forward pass bit for bit after loading. Optimizer moments
and the training generator state ride along optionally so an interrupted
run can resume exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .laes import LaesModel
from .multiscale import MsLmnParams, param_blocks, params_from_blocks
from .training import AdamState

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """A loaded model file: weights plus optional training state."""

    params: MsLmnParams
    task_kind: str
    optimizer: AdamState | None = None
    rng_state: dict | None = None
    format_version: int = FORMAT_VERSION


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"dims": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _decode_array(obj, name: str) -> np.ndarray:
    try:
        dims = obj["dims"]
        data = obj["data"]
    except (TypeError, KeyError):
        raise ValueError(f"array entry {name!r} needs 'dims' and 'data'")
    arr = np.array(data, dtype=np.float64)
    if arr.size != int(np.prod(dims)):
        raise ValueError(
            f"array entry {name!r}: {arr.size} values do not fill dims {dims}"
        )
    return arr.reshape(dims)


def save_checkpoint(
    path,
    params: MsLmnParams,
    task_kind: str,
    optimizer: AdamState | None = None,
    rng_state: dict | None = None,
) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "mslmn",
        "task_kind": task_kind,
        "sizes": {
            "n_input": params.n_input,
            "n_hidden": params.n_hidden,
            "n_memory": params.n_memory,
            "n_output": params.n_output,
            "n_modules": params.n_modules,
        },
        "weights": {
            key: _encode_array(block) for key, block in param_blocks(params).items()
        },
        "optimizer": None
        if optimizer is None
        else {
            "m": optimizer.m.tolist(),
            "v": optimizer.v.tolist(),
            "step": optimizer.step,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        },
        "rng_state": rng_state,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValueError(f"checkpoint file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"checkpoint {path} is not valid JSON: {exc}")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {version!r}; "
            f"this build reads version {FORMAT_VERSION}"
        )
    if doc.get("kind") != "mslmn":
        raise ValueError(f"checkpoint {path} holds a {doc.get('kind')!r} model")
    weights = doc.get("weights")
    if not isinstance(weights, dict) or "w_xh" not in weights:
        raise ValueError(f"checkpoint {path} is missing its weight table")
    blocks = {key: _decode_array(obj, key) for key, obj in weights.items()}
    params = params_from_blocks(blocks)
    sizes = doc.get("sizes", {})
    recorded = {
        "n_input": params.n_input,
        "n_hidden": params.n_hidden,
        "n_memory": params.n_memory,
        "n_output": params.n_output,
        "n_modules": params.n_modules,
    }
    for key, value in recorded.items():
        if key in sizes and int(sizes[key]) != value:
            raise ValueError(
                f"checkpoint {path}: declared {key}={sizes[key]} but the "
                f"weights imply {value}"
            )
    opt = doc.get("optimizer")
    optimizer = None
    if opt is not None:
        optimizer = AdamState(
            m=np.array(opt["m"], dtype=np.float64),
            v=np.array(opt["v"], dtype=np.float64),
            step=int(opt["step"]),
            beta1=float(opt["beta1"]),
            beta2=float(opt["beta2"]),
            eps=float(opt["eps"]),
        )
    return Checkpoint(
        params=params,
        task_kind=doc.get("task_kind", ""),
        optimizer=optimizer,
        rng_state=doc.get("rng_state"),
        format_version=version,
    )


def save_laes(path, model: LaesModel) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "laes",
        "sizes": {"state_size": model.state_size, "elem_size": model.elem_size},
        "arrays": {
            "input_map": _encode_array(model.input_map),
            "state_map": _encode_array(model.state_map),
            "decode_map": _encode_array(model.decode_map),
            "singular_values": _encode_array(model.singular_values),
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_laes(path) -> LaesModel:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValueError(f"model file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file {path} is not valid JSON: {exc}")
    if doc.get("format_version") != FORMAT_VERSION or doc.get("kind") != "laes":
        raise ValueError(f"{path} is not a readable autoencoder model file")
    arrays = doc.get("arrays", {})
    return LaesModel(
        input_map=_decode_array(arrays.get("input_map"), "input_map"),
        state_map=_decode_array(arrays.get("state_map"), "state_map"),
        decode_map=_decode_array(arrays.get("decode_map"), "decode_map"),
        singular_values=_decode_array(
            arrays.get("singular_values"), "singular_values"
        ),
    )
