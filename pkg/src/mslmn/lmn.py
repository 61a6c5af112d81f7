"""Single-scale linear-memory recurrent cell.

The cell separates a nonlinear hidden map from a purely linear memory:

    h_t = tanh(w_xh x_t + w_mh m_{t-1})
    m_t = w_hm h_t + w_mm m_{t-1}
    y_t = w_my m_t

There are no bias terms, and initial states are zero. Keeping the memory
linear is what allows closed-form fits of (w_hm-ish, w_mm-ish) dynamics
elsewhere in the package, and it admits an exact embedding of a vanilla
tanh RNN: with w_hm = I and w_mm = 0 the memory replays the RNN hidden
trajectory step for step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_vector


def _check_weight(w, name: str, shape: tuple[int, int]) -> np.ndarray:
    # Row-major layout is part of the contract: matmul results can differ
    # in the last bit across layouts, and checkpoints must reproduce the
    # forward pass bit for bit.
    arr = np.ascontiguousarray(w, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def _check_sequence(sequence, width: int) -> np.ndarray:
    arr = np.asarray(sequence, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(
            f"sequence must have shape (l, {width}), got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("sequence contains NaN or Inf entries")
    return arr


@dataclass(frozen=True)
class LmnParams:
    """Cell weights; immutable after construction.

    w_xh : (n_hidden, n_input)   input to hidden
    w_mh : (n_hidden, n_memory)  previous memory to hidden
    w_hm : (n_memory, n_hidden)  hidden to memory
    w_mm : (n_memory, n_memory)  memory carry
    w_my : (n_output, n_memory)  memory to readout
    """

    w_xh: np.ndarray
    w_mh: np.ndarray
    w_hm: np.ndarray
    w_mm: np.ndarray
    w_my: np.ndarray

    def __post_init__(self):
        n_h, n_x = np.asarray(self.w_xh).shape
        n_m = np.asarray(self.w_mh).shape[1]
        n_y = np.asarray(self.w_my).shape[0]
        object.__setattr__(self, "w_xh", _check_weight(self.w_xh, "w_xh", (n_h, n_x)))
        object.__setattr__(self, "w_mh", _check_weight(self.w_mh, "w_mh", (n_h, n_m)))
        object.__setattr__(self, "w_hm", _check_weight(self.w_hm, "w_hm", (n_m, n_h)))
        object.__setattr__(self, "w_mm", _check_weight(self.w_mm, "w_mm", (n_m, n_m)))
        object.__setattr__(self, "w_my", _check_weight(self.w_my, "w_my", (n_y, n_m)))

    @property
    def n_input(self) -> int:
        return self.w_xh.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w_xh.shape[0]

    @property
    def n_memory(self) -> int:
        return self.w_mm.shape[0]

    @property
    def n_output(self) -> int:
        return self.w_my.shape[0]


@dataclass(frozen=True)
class LmnState:
    """Hidden activation and memory state after one step."""

    h: np.ndarray
    m: np.ndarray


@dataclass(frozen=True)
class RnnParams:
    """Vanilla tanh RNN weights, h_t = tanh(w_xh x_t + w_hh h_{t-1}).

    Used as the source of exact cell initializations and as the reference
    dynamics in equivalence tests.
    """

    w_xh: np.ndarray
    w_hh: np.ndarray

    def __post_init__(self):
        n_h, n_x = np.asarray(self.w_xh).shape
        object.__setattr__(self, "w_xh", _check_weight(self.w_xh, "w_xh", (n_h, n_x)))
        object.__setattr__(self, "w_hh", _check_weight(self.w_hh, "w_hh", (n_h, n_h)))

    @property
    def n_hidden(self) -> int:
        return self.w_hh.shape[0]


def lmn_step(params: LmnParams, state: LmnState, x) -> LmnState:
    """Advance the cell by one input element."""
    xv = as_vector(x, "x")
    if len(xv) != params.n_input:
        raise ValueError(f"x has length {len(xv)}, expected {params.n_input}")
    m_prev = as_vector(state.m, "state.m")
    if len(m_prev) != params.n_memory:
        raise ValueError(
            f"state.m has length {len(m_prev)}, expected {params.n_memory}"
        )
    h = np.tanh(params.w_xh @ xv + params.w_mh @ m_prev)
    m = params.w_hm @ h + params.w_mm @ m_prev
    return LmnState(h=h, m=m)


def lmn_forward(
    params: LmnParams, sequence
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the cell over a sequence from zero state.

    Returns per-timestep hidden activations, memory states, and readouts
    (y_t = w_my m_t), each with one row per input element.
    """
    seq = _check_sequence(sequence, params.n_input)
    l = seq.shape[0]
    hs = np.zeros((l, params.n_hidden))
    ms = np.zeros((l, params.n_memory))
    m = np.zeros(params.n_memory)
    for t in range(l):
        h = np.tanh(params.w_xh @ seq[t] + params.w_mh @ m)
        m = params.w_hm @ h + params.w_mm @ m
        hs[t] = h
        ms[t] = m
    return hs, ms, ms @ params.w_my.T


def rnn_forward(rnn: RnnParams, sequence) -> np.ndarray:
    """Hidden trajectory of the vanilla RNN from zero state."""
    seq = _check_sequence(sequence, rnn.w_xh.shape[1])
    l = seq.shape[0]
    hs = np.zeros((l, rnn.n_hidden))
    h = np.zeros(rnn.n_hidden)
    for t in range(l):
        h = np.tanh(rnn.w_xh @ seq[t] + rnn.w_hh @ h)
        hs[t] = h
    return hs


def lmn_from_rnn(rnn: RnnParams) -> LmnParams:
    """Exact cell embedding of a vanilla RNN.

    The hidden map copies the RNN weights with the memory standing in for
    the previous hidden state; w_hm = I and w_mm = 0 then make the memory
    equal the RNN hidden trajectory on every input. The readout is the
    identity so the cell output exposes that trajectory directly.
    """
    n_h = rnn.n_hidden
    return LmnParams(
        w_xh=rnn.w_xh.copy(),
        w_mh=rnn.w_hh.copy(),
        w_hm=np.eye(n_h),
        w_mm=np.zeros((n_h, n_h)),
        w_my=np.eye(n_h),
    )


def random_lmn(
    rng: np.random.Generator, n_input: int, n_hidden: int, n_memory: int, n_output: int
) -> LmnParams:
    """Uniform init in +-(1/sqrt(fan_in)) per weight matrix."""

    def block(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    return LmnParams(
        w_xh=block(n_hidden, n_input),
        w_mh=block(n_hidden, n_memory),
        w_hm=block(n_memory, n_hidden),
        w_mm=block(n_memory, n_memory),
        w_my=block(n_output, n_memory),
    )
