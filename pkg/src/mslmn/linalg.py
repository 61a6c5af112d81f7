"""Dense linear algebra kernel: truncated SVD, slice-based incremental SVD,
Moore-Penrose pseudoinverse, and the selector matrices used by the closed-form
autoencoder fit.

Everything here is a pure function of its inputs and deterministic: repeated
calls on identical arrays produce bitwise-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .validation import as_matrix, check_positive_int

DEFAULT_RCOND = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """Top-k singular triples of a matrix M, with M ~= u @ diag(s) @ v.T.

    Attributes
    ----------
    u : ndarray of shape (n_rows, k)
        Left singular vectors, orthonormal columns.
    s : ndarray of shape (k,)
        Singular values, non-negative and non-increasing.
    v : ndarray of shape (n_cols, k)
        Right singular vectors, orthonormal columns.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.s)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


@dataclass(frozen=True)
class SelectorMatrices:
    """0/1 selector matrices over stacked step vectors of a length-l sequence.

    ``pick_first`` ((l*a) x a) embeds an element-sized vector into the first
    block of the stack; ``shift_down`` ((l*a) x (l*a)) moves every block one
    position later, zeroing block 0 and dropping the last block.
    """

    pick_first: np.ndarray
    shift_down: np.ndarray
    seq_len: int
    elem_size: int


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic sign convention: largest-magnitude entry of each left
    # singular vector is made positive.
    if u.shape[1] == 0:
        return u, v
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def truncated_svd(matrix, k: int) -> SvdResult:
    """Best rank-k factorization of ``matrix`` in the Frobenius norm.

    Parameters
    ----------
    matrix : array-like of shape (n_rows, n_cols)
    k : int
        Number of singular triples to keep; requires 1 <= k <= min(n, m).
    """
    m = as_matrix(matrix, "matrix")
    check_positive_int(k, "k")
    if k > min(m.shape):
        raise ValueError(f"k={k} exceeds min(shape)={min(m.shape)}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, v = _fix_signs(u[:, :k], vt[:k, :].T)
    return SvdResult(u=u, s=s[:k].copy(), v=v)


def incremental_truncated_svd(
    slices: Iterable[np.ndarray], k: int, n_oversamples: int = 10
) -> SvdResult:
    """Rank-k SVD of a matrix presented as consecutive column slices.

    The slices are column blocks of the (virtual) concatenated matrix
    ``M = [S_1 | S_2 | ...]``; they must all share the same row count. The
    factorization is maintained at rank ``k + n_oversamples`` and each new
    slice is merged by decomposing the augmented matrix ``[u*diag(s) | slice]``
    whose width is the retained rank plus the slice width. Peak memory is one
    slice plus the retained factors; the full matrix is never formed.

    The result is exact (to roundoff) whenever the retained rank covers the
    rank of every prefix of slices, and agrees with :func:`truncated_svd` of
    the concatenated matrix whenever the spectrum beyond the retained rank is
    negligible. Flat spectra truncated mid-stream lose accuracy; raise
    ``n_oversamples`` to buy it back.
    """
    check_positive_int(k, "k")
    if n_oversamples < 0:
        raise ValueError(f"n_oversamples must be >= 0, got {n_oversamples}")
    keep = k + n_oversamples

    it: Iterator[np.ndarray] = iter(slices)
    u = s = v = None
    n_rows = None
    n_cols = 0
    for i, block in enumerate(it):
        c = as_matrix(block, f"slices[{i}]")
        if n_rows is None:
            n_rows = c.shape[0]
        elif c.shape[0] != n_rows:
            raise ValueError(
                f"slices[{i}] has {c.shape[0]} rows, expected {n_rows}"
            )
        a = c.shape[1]
        n_cols += a
        if u is None:
            u0, s0, vt0 = np.linalg.svd(c, full_matrices=False)
            r = min(keep, len(s0))
            u, s, v = u0[:, :r], s0[:r], vt0[:r, :].T
            continue
        # [u*diag(s) | c] spans old approximation plus the new columns; its
        # SVD gives the merged left factors directly, with no orthogonality
        # assumptions on residual directions (QR of a numerically zero
        # residual would yield spurious ones).
        r = u.shape[1]
        ug, sg, wgt = np.linalg.svd(np.hstack([u * s, c]), full_matrices=False)
        r_new = min(keep, len(sg))
        v_aug = np.zeros((v.shape[0] + a, r + a))
        v_aug[: v.shape[0], :r] = v
        v_aug[v.shape[0] :, r:] = np.eye(a)
        u = ug[:, :r_new]
        s = sg[:r_new]
        v = v_aug @ wgt.T[:, :r_new]

    if u is None:
        raise ValueError("slices is empty: at least one slice is required")
    if k > min(n_rows, n_cols):
        raise ValueError(f"k={k} exceeds min(total shape)=({n_rows}, {n_cols})")
    r_out = min(k, u.shape[1])
    u, s, v = u[:, :r_out], s[:r_out], v[:, :r_out]
    if r_out < k:
        # Concatenated matrix had rank below k: pad with exact zero triples on
        # an orthonormal completion so the result has the requested width.
        u = complete_orthonormal_basis(u, k)
        v = complete_orthonormal_basis(v, k)
        s = np.concatenate([s, np.zeros(k - r_out)])
    u, v = _fix_signs(u, v)
    return SvdResult(u=u, s=s.copy(), v=v)


def complete_orthonormal_basis(q: np.ndarray, k: int) -> np.ndarray:
    """Extend the orthonormal columns of ``q`` to ``k`` columns
    (k <= row count); deterministic."""
    dim = q.shape[0]
    extra = k - q.shape[1]
    if extra < 0 or k > dim:
        raise ValueError(f"cannot extend {q.shape} to {k} orthonormal columns")
    if extra == 0:
        return q
    rng = np.random.default_rng(0)  # fixed seed: deterministic completion
    cand = rng.standard_normal((dim, extra))
    cand -= q @ (q.T @ cand)
    qq, _ = np.linalg.qr(cand)
    return np.hstack([q, qq[:, :extra]])


def pseudoinverse(matrix, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values <= rcond * s_max are
    treated as zero."""
    m = as_matrix(matrix, "matrix")
    if rcond < 0:
        raise ValueError(f"rcond must be >= 0, got {rcond}")
    return np.linalg.pinv(m, rcond=rcond)


def build_selectors(seq_len: int, elem_size: int) -> SelectorMatrices:
    """Build the selector matrices over stacks of ``seq_len`` blocks of size
    ``elem_size``."""
    l = check_positive_int(seq_len, "seq_len")
    a = check_positive_int(elem_size, "elem_size")
    pick = np.zeros((l * a, a))
    pick[:a, :a] = np.eye(a)
    shift = np.zeros((l * a, l * a))
    if l > 1:
        shift[a:, : (l - 1) * a] = np.eye((l - 1) * a)
    return SelectorMatrices(pick_first=pick, shift_down=shift, seq_len=l, elem_size=a)
