"""Linear autoencoder for sequences, trained in closed form.

The encoder is the linear recurrence ``m_t = A x_t + B m_{t-1}`` with
``m_0 = 0``; the decoder recovers ``[x_t; m_{t-1}]`` from ``m_t`` with a
single matrix. Optimal weights come from a truncated SVD of the matrix of
reversed prefixes of the training corpus: with right singular vectors U
(columns orthonormal), ``A`` reads the first input-size rows of U, ``B``
correlates U with its block-shifted copy, and the decoder is ``[A.T; B.T]``.
When the kept rank covers the data matrix rank the roundtrip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .linalg import (
    SvdResult,
    complete_orthonormal_basis,
    incremental_truncated_svd,
    truncated_svd,
)
from .validation import as_vector, check_positive_int, check_sequences


@dataclass(frozen=True)
class LaesModel:
    """Fitted autoencoder weights.

    Attributes
    ----------
    input_map : ndarray (state_size, elem_size)
        Maps the current input element into memory.
    state_map : ndarray (state_size, state_size)
        Carries the previous memory state forward.
    decode_map : ndarray (elem_size + state_size, state_size)
        Splits a memory state back into the current element and the
        previous state.
    singular_values : ndarray (state_size,)
        Spectrum of the data matrix at the kept rank.
    """

    input_map: np.ndarray
    state_map: np.ndarray
    decode_map: np.ndarray
    singular_values: np.ndarray

    @property
    def state_size(self) -> int:
        return self.input_map.shape[0]

    @property
    def elem_size(self) -> int:
        return self.input_map.shape[1]


@dataclass(frozen=True)
class DataMatrix:
    """Reversed-prefix data matrix plus the provenance of each row.

    Row for timestep t of sequence q holds ``x_t, x_{t-1}, ..., x_1`` left to
    right, zero-padded to the longest sequence in the corpus.
    """

    matrix: np.ndarray
    row_map: list[tuple[int, int]] = field(repr=False)


def build_data_matrix(sequences) -> DataMatrix:
    """Stack the reversed prefixes of every sequence into one matrix.

    ``sequences`` is a list of (length, elem_size) arrays sharing elem_size.
    The result has one row per timestep across the corpus and
    ``max_length * elem_size`` columns.
    """
    seqs = check_sequences(sequences)
    a = seqs[0].shape[1]
    l_max = max(s.shape[0] for s in seqs)
    rows = sum(s.shape[0] for s in seqs)
    xi = np.zeros((rows, l_max * a))
    row_map: list[tuple[int, int]] = []
    r = 0
    for q, s in enumerate(seqs):
        for t in range(1, s.shape[0] + 1):
            xi[r, : t * a] = s[t - 1 :: -1].reshape(-1)
            row_map.append((q, t))
            r += 1
    return DataMatrix(matrix=xi, row_map=row_map)


def _data_matrix_slices(seqs: list[np.ndarray], l_max: int) -> Iterator[np.ndarray]:
    # Column block j of the reversed-prefix matrix holds element x_{t-j} of
    # each row (zero where t - j < 1); emitting blocks one at a time keeps
    # peak memory at one block.
    a = seqs[0].shape[1]
    rows = sum(s.shape[0] for s in seqs)
    for j in range(l_max):
        block = np.zeros((rows, a))
        r = 0
        for s in seqs:
            l = s.shape[0]
            for t in range(1, l + 1):
                if t - j >= 1:
                    block[r] = s[t - j - 1]
                r += 1
        yield block


def _model_from_right_factors(u: np.ndarray, s: np.ndarray, a: int) -> LaesModel:
    # u holds the right singular vectors of the reversed-prefix matrix with
    # orthonormal columns; block-shifting it down by one element implements
    # the "previous step" selector without materializing that matrix.
    shifted = np.zeros_like(u)
    shifted[a:] = u[:-a]
    # Row-major copies keep later matmuls layout-independent, so a model
    # serialized and reloaded reproduces encode/decode bit for bit.
    input_map = np.ascontiguousarray(u[:a, :].T)
    state_map = u.T @ shifted
    decode_map = np.ascontiguousarray(np.vstack([input_map.T, state_map.T]))
    return LaesModel(
        input_map=input_map,
        state_map=state_map,
        decode_map=decode_map,
        singular_values=s.copy(),
    )


def fit_laes(sequences, state_size: int, use_slices: bool = False) -> LaesModel:
    """Closed-form fit of the autoencoder at the given memory size.

    ``state_size`` at or above the rank of the data matrix gives exact
    reconstruction of the whole corpus; smaller values trade memory for a
    lossy roundtrip. ``use_slices`` computes the SVD from column blocks
    without materializing the data matrix.
    """
    seqs = check_sequences(sequences)
    p = check_positive_int(state_size, "state_size")
    a = seqs[0].shape[1]
    l_max = max(s.shape[0] for s in seqs)
    rows = sum(s.shape[0] for s in seqs)
    if p > l_max * a:
        raise ValueError(
            f"state_size={p} exceeds max length * elem size = {l_max * a}"
        )
    # The SVD yields at most min(rows, cols) triples; a larger requested
    # state is padded with zero singular values on an orthonormal completion,
    # which leaves the encode/decode algebra exact.
    k = min(p, rows, l_max * a)
    if use_slices:
        res: SvdResult = incremental_truncated_svd(
            _data_matrix_slices(seqs, l_max), k=k
        )
    else:
        res = truncated_svd(build_data_matrix(seqs).matrix, k=k)
    u, s = res.v, res.s
    if p > k:
        u = complete_orthonormal_basis(u, p)
        s = np.concatenate([s, np.zeros(p - k)])
    return _model_from_right_factors(u, s, a)


def encode(model: LaesModel, sequence) -> np.ndarray:
    """Run the encoder over one sequence; row t is the memory state after
    consuming element t. The initial state is zero."""
    s = check_sequences([sequence])[0]
    if s.shape[1] != model.elem_size:
        raise ValueError(
            f"sequence element size {s.shape[1]} does not match model "
            f"elem_size {model.elem_size}"
        )
    states = np.zeros((s.shape[0], model.state_size))
    m = np.zeros(model.state_size)
    for t in range(s.shape[0]):
        m = model.input_map @ s[t] + model.state_map @ m
        states[t] = m
    return states


def decode_step(model: LaesModel, state) -> tuple[np.ndarray, np.ndarray]:
    """Split one memory state into (current element, previous state)."""
    m = as_vector(state, "state")
    if len(m) != model.state_size:
        raise ValueError(
            f"state has length {len(m)}, expected {model.state_size}"
        )
    out = model.decode_map @ m
    return out[: model.elem_size], out[model.elem_size :]


def reconstruct(model: LaesModel, final_state, length: int) -> np.ndarray:
    """Unroll the decoder ``length`` times from the final memory state,
    returning elements in forward time order."""
    check_positive_int(length, "length")
    m = as_vector(final_state, "final_state")
    out = np.zeros((length, model.elem_size))
    for t in range(length - 1, -1, -1):
        out[t], m = decode_step(model, m)
    return out


class LinearSequenceAutoencoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the closed-form autoencoder fit.

    Parameters
    ----------
    n_components : int or None
        Memory state size; None keeps the maximal rank (exact roundtrip).
    use_slices : bool
        Fit from column blocks of the data matrix instead of materializing
        it whole.
    """

    def __init__(self, n_components: int | None = None, use_slices: bool = False):
        self.n_components = n_components
        self.use_slices = use_slices

    def fit(self, X, y=None):
        seqs = check_sequences(X, "X")
        a = seqs[0].shape[1]
        l_max = max(s.shape[0] for s in seqs)
        rows = sum(s.shape[0] for s in seqs)
        p = self.n_components
        if p is None:
            p = min(rows, l_max * a)
        self.model_ = fit_laes(seqs, p, use_slices=self.use_slices)
        self.n_features_in_ = a
        self.singular_values_ = self.model_.singular_values
        return self

    def transform(self, X) -> np.ndarray:
        """Final memory state of each sequence, one row per sequence."""
        seqs = check_sequences(X, "X")
        return np.stack([encode(self.model_, s)[-1] for s in seqs])

    def inverse_transform(self, states, lengths) -> list[np.ndarray]:
        """Rebuild sequences from final states; ``lengths`` gives the number
        of steps to unroll for each row."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] != len(lengths):
            raise ValueError("states must be 2-d with one row per length")
        return [
            reconstruct(self.model_, m, int(l)) for m, l in zip(states, lengths)
        ]

    def reconstruction_error(self, X) -> float:
        """Max-abs roundtrip error over the corpus."""
        seqs = check_sequences(X, "X")
        worst = 0.0
        for s in seqs:
            back = reconstruct(self.model_, encode(self.model_, s)[-1], s.shape[0])
            worst = max(worst, float(np.max(np.abs(back - s))))
        return worst
