"""Multiscale linear-memory cell: g memory modules clocked at exponentially
spaced rates.

Module k (1-based) updates only on timesteps divisible by 2^(k-1), so slower
modules subsample the hidden trajectory at coarser strides and hold their
state in between. Memory-to-memory connections run strictly from slower to
faster modules: module k reads modules i >= k only. The hidden layer reads
every module's held state at every step, and the readout sums per-module
linear maps.

Two update paths are provided: a literal per-module path, and a packed path
over the stacked memory vector with block matrices (block upper-triangular
memory map), which recomputes only the active leading rows per step. They
agree to floating-point roundoff; the packed path is what the forward pass
and training use.

The cell is bias-free by default; a hidden bias can be attached explicitly
(``b_h``) for tasks whose input carries no signal, where a bias-free cell
started from the zero state would stay at zero forever.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lmn import LmnParams, _check_sequence, _check_weight
from .validation import as_vector, check_positive_int


@dataclass(frozen=True)
class ClockSchedule:
    """Update rates for g modules: module k fires every 2^(k-1) steps."""

    g: int

    def __post_init__(self):
        check_positive_int(self.g, "g")

    @property
    def rates(self) -> list[int]:
        return [2 ** k for k in range(self.g)]


def module_count_for(l_max: int) -> int:
    """Largest number of distinct doubling rates meaningful for sequences of
    length l_max: floor(log2(l_max)), clamped to at least 1."""
    check_positive_int(l_max, "l_max")
    return max(1, int(l_max).bit_length() - 1)


def active_modules(t: int, g: int) -> int:
    """Highest module index (1-based) that updates at timestep t; modules
    1..i_max update, the rest hold."""
    check_positive_int(t, "t")
    check_positive_int(g, "g")
    trailing = (t & -t).bit_length() - 1
    return min(g, trailing + 1)


@dataclass(frozen=True)
class MsLmnParams:
    """Weights of the multiscale cell; immutable after construction.

    w_xh : (n_hidden, n_input)
    w_mh : list of g (n_hidden, n_memory), module state into hidden
    w_hm : list of g (n_memory, n_hidden), hidden into module k
    w_mm : dict (i, k) -> (n_memory, n_memory) for i >= k (0-based), module
           i's held state into module k's update; no faster-to-slower keys
    w_my : list of g (n_output, n_memory), per-module readout summands
    b_h  : optional (n_hidden,) bias inside the hidden tanh; None keeps the
           cell bias-free (the default everywhere)
    """

    w_xh: np.ndarray
    w_mh: list[np.ndarray]
    w_hm: list[np.ndarray]
    w_mm: dict[tuple[int, int], np.ndarray]
    w_my: list[np.ndarray]
    b_h: np.ndarray | None = None

    def __post_init__(self):
        w_xh = np.asarray(self.w_xh, dtype=np.float64)
        if w_xh.ndim != 2:
            raise ValueError("w_xh must be 2-dimensional")
        n_h = w_xh.shape[0]
        g = len(self.w_mh)
        if g < 1:
            raise ValueError("at least one module is required")
        if not (len(self.w_hm) == len(self.w_my) == g):
            raise ValueError("w_mh, w_hm, w_my must all have one block per module")
        n_m = np.asarray(self.w_mh[0]).shape[1]
        n_y = np.asarray(self.w_my[0]).shape[0]
        object.__setattr__(self, "w_xh", _check_weight(w_xh, "w_xh", w_xh.shape))
        object.__setattr__(
            self,
            "w_mh",
            [_check_weight(b, f"w_mh[{i}]", (n_h, n_m)) for i, b in enumerate(self.w_mh)],
        )
        object.__setattr__(
            self,
            "w_hm",
            [_check_weight(b, f"w_hm[{k}]", (n_m, n_h)) for k, b in enumerate(self.w_hm)],
        )
        object.__setattr__(
            self,
            "w_my",
            [_check_weight(b, f"w_my[{i}]", (n_y, n_m)) for i, b in enumerate(self.w_my)],
        )
        checked = {}
        for (i, k), b in self.w_mm.items():
            if not (0 <= k <= i < g):
                raise ValueError(
                    f"w_mm key ({i}, {k}) invalid: module k may read only "
                    f"modules i >= k within 0..{g - 1}"
                )
            checked[(i, k)] = _check_weight(b, f"w_mm[{i},{k}]", (n_m, n_m))
        object.__setattr__(self, "w_mm", checked)
        if self.b_h is not None:
            object.__setattr__(self, "b_h", _check_weight(self.b_h, "b_h", (n_h,)))

    @property
    def n_input(self) -> int:
        return self.w_xh.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w_xh.shape[0]

    @property
    def n_memory(self) -> int:
        return self.w_mh[0].shape[1]

    @property
    def n_output(self) -> int:
        return self.w_my[0].shape[0]

    @property
    def n_modules(self) -> int:
        return len(self.w_mh)

    @property
    def schedule(self) -> ClockSchedule:
        return ClockSchedule(g=self.n_modules)


@dataclass(frozen=True)
class MsLmnState:
    """Cell state; ``t`` is the 1-based index of the incoming timestep."""

    h: np.ndarray
    m: list[np.ndarray]
    t: int = 1


@dataclass
class PackedWeights:
    """Stacked-block views of the module weights.

    mh : (n_hidden, g*n_memory), w_mh blocks side by side
    hm : (g*n_memory, n_hidden), w_hm blocks stacked
    mm : (g*n_memory, g*n_memory), row block k holds the maps into module k;
         block upper-triangular since only i >= k columns are populated
    my : (n_output, g*n_memory)
    """

    mh: np.ndarray
    hm: np.ndarray
    mm: np.ndarray
    my: np.ndarray
    n_memory: int = field(repr=False, default=0)


def pack_weights(params: MsLmnParams) -> PackedWeights:
    g, n_m = params.n_modules, params.n_memory
    mm = np.zeros((g * n_m, g * n_m))
    for (i, k), b in params.w_mm.items():
        mm[k * n_m : (k + 1) * n_m, i * n_m : (i + 1) * n_m] = b
    return PackedWeights(
        mh=np.hstack(params.w_mh),
        hm=np.vstack(params.w_hm),
        mm=mm,
        my=np.hstack(params.w_my),
        n_memory=n_m,
    )


def initial_state(params: MsLmnParams) -> MsLmnState:
    return MsLmnState(
        h=np.zeros(params.n_hidden),
        m=[np.zeros(params.n_memory) for _ in range(params.n_modules)],
        t=1,
    )


def _check_step_inputs(params: MsLmnParams, state: MsLmnState, x) -> np.ndarray:
    xv = as_vector(x, "x")
    if len(xv) != params.n_input:
        raise ValueError(f"x has length {len(xv)}, expected {params.n_input}")
    if len(state.m) != params.n_modules:
        raise ValueError(
            f"state has {len(state.m)} module states, expected {params.n_modules}"
        )
    for k, m in enumerate(state.m):
        if len(m) != params.n_memory:
            raise ValueError(
                f"state.m[{k}] has length {len(m)}, expected {params.n_memory}"
            )
    return xv


def mslmn_step(params: MsLmnParams, state: MsLmnState, x) -> MsLmnState:
    """One step via the literal per-module equations (reference path)."""
    xv = _check_step_inputs(params, state, x)
    g = params.n_modules
    i_max = active_modules(state.t, g)
    pre = params.w_xh @ xv
    for i in range(g):
        pre = pre + params.w_mh[i] @ state.m[i]
    if params.b_h is not None:
        pre = pre + params.b_h
    h = np.tanh(pre)
    m_new = []
    for k in range(g):
        if k < i_max:
            mk = params.w_hm[k] @ h
            for i in range(k, g):
                if (i, k) in params.w_mm:
                    mk = mk + params.w_mm[(i, k)] @ state.m[i]
            m_new.append(mk)
        else:
            m_new.append(state.m[k].copy())
    return MsLmnState(h=h, m=m_new, t=state.t + 1)


def mslmn_step_packed(
    params: MsLmnParams, state: MsLmnState, x, packed: PackedWeights | None = None
) -> MsLmnState:
    """One step via the stacked-memory block matrices; recomputes only the
    first i_max blocks of the stack and copies the rest."""
    xv = _check_step_inputs(params, state, x)
    if packed is None:
        packed = pack_weights(params)
    g, n_m = params.n_modules, params.n_memory
    m_stack = np.concatenate(state.m)
    i_max = active_modules(state.t, g)
    pre = params.w_xh @ xv + packed.mh @ m_stack
    if params.b_h is not None:
        pre = pre + params.b_h
    h = np.tanh(pre)
    rows = i_max * n_m
    m_out = m_stack.copy()
    m_out[:rows] = packed.hm[:rows] @ h + packed.mm[:rows] @ m_stack
    return MsLmnState(
        h=h, m=[m_out[k * n_m : (k + 1) * n_m] for k in range(g)], t=state.t + 1
    )


def mslmn_forward(
    params: MsLmnParams, sequence
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the cell over a sequence from zero state at t=1.

    Returns per-step hidden activations (l, n_hidden), stacked memories
    (l, g*n_memory), and readouts (l, n_output) summing the per-module
    output maps.
    """
    seq = _check_sequence(sequence, params.n_input)
    l = seq.shape[0]
    g, n_m = params.n_modules, params.n_memory
    packed = pack_weights(params)
    hs = np.zeros((l, params.n_hidden))
    ms = np.zeros((l, g * n_m))
    m = np.zeros(g * n_m)
    for t in range(1, l + 1):
        pre = params.w_xh @ seq[t - 1] + packed.mh @ m
        if params.b_h is not None:
            pre = pre + params.b_h
        h = np.tanh(pre)
        rows = active_modules(t, g) * n_m
        m = m.copy()
        m[:rows] = packed.hm[:rows] @ h + packed.mm[:rows] @ m
        hs[t - 1] = h
        ms[t - 1] = m
    return hs, ms, ms @ packed.my.T


def add_module(
    params: MsLmnParams,
    hidden_map: np.ndarray,
    carry_map: np.ndarray,
    readout_map: np.ndarray | None = None,
) -> MsLmnParams:
    """Append one slower module, leaving all existing behavior unchanged.

    The new module's hidden-into-memory block is ``hidden_map`` and its
    self-carry is ``carry_map`` (typically a closed-form autoencoder fit of
    the subsampled hidden states). Every other new block is zero, so until
    finetuning moves the zeros the hidden and old-module trajectories are
    preserved: bit for bit under the per-module step equations, and to
    evaluator rounding under the packed forward (whose widened matrices
    may regroup sums). The readout changes only if ``readout_map`` is
    given.
    """
    g = params.n_modules
    n_h, n_m, n_y = params.n_hidden, params.n_memory, params.n_output
    hidden_map = _check_weight(hidden_map, "hidden_map", (n_m, n_h))
    carry_map = _check_weight(carry_map, "carry_map", (n_m, n_m))
    if readout_map is None:
        readout_map = np.zeros((n_y, n_m))
    else:
        readout_map = _check_weight(readout_map, "readout_map", (n_y, n_m))
    w_mm = dict(params.w_mm)
    for k in range(g):
        w_mm[(g, k)] = np.zeros((n_m, n_m))
    w_mm[(g, g)] = carry_map
    return MsLmnParams(
        w_xh=params.w_xh,
        w_mh=list(params.w_mh) + [np.zeros((n_h, n_m))],
        w_hm=list(params.w_hm) + [hidden_map],
        w_mm=w_mm,
        w_my=list(params.w_my) + [readout_map],
        b_h=params.b_h,
    )


def count_params(params: MsLmnParams) -> int:
    """Number of stored scalar weights (upper-triangular memory blocks
    counted once; the optional hidden bias is not a weight matrix and is
    excluded)."""
    g = params.n_modules
    n_x, n_h, n_m, n_y = (
        params.n_input,
        params.n_hidden,
        params.n_memory,
        params.n_output,
    )
    return (
        n_h * n_x
        + g * n_h * n_m
        + g * n_m * n_h
        + (g * (g + 1) // 2) * n_m * n_m
        + g * n_y * n_m
    )


def single_scale(params: MsLmnParams) -> LmnParams:
    """View a one-module cell as a plain single-scale cell."""
    if params.n_modules != 1:
        raise ValueError("only a 1-module cell degenerates to single scale")
    if params.b_h is not None:
        raise ValueError("the single-scale cell is bias-free; drop b_h first")
    return LmnParams(
        w_xh=params.w_xh,
        w_mh=params.w_mh[0],
        w_hm=params.w_hm[0],
        w_mm=params.w_mm[(0, 0)],
        w_my=params.w_my[0],
    )


def param_blocks(params: MsLmnParams) -> dict[str, np.ndarray]:
    """All weight blocks under stable string keys, in a fixed order.

    Keys: ``w_xh``, ``w_mh.{i}``, ``w_hm.{k}``, ``w_mm.{i}.{k}`` (i >= k),
    ``w_my.{i}``, and ``b_h`` last when the cell has a bias. The same
    ordering backs the flattened parameter vector and the checkpoint layout.
    """
    blocks: dict[str, np.ndarray] = {"w_xh": params.w_xh}
    for i, b in enumerate(params.w_mh):
        blocks[f"w_mh.{i}"] = b
    for k, b in enumerate(params.w_hm):
        blocks[f"w_hm.{k}"] = b
    for i, k in sorted(params.w_mm):
        blocks[f"w_mm.{i}.{k}"] = params.w_mm[(i, k)]
    for i, b in enumerate(params.w_my):
        blocks[f"w_my.{i}"] = b
    if params.b_h is not None:
        blocks["b_h"] = params.b_h
    return blocks


def params_from_blocks(blocks: dict[str, np.ndarray]) -> MsLmnParams:
    """Rebuild params from the key scheme of :func:`param_blocks`."""
    w_mh, w_hm, w_my = {}, {}, {}
    w_mm: dict[tuple[int, int], np.ndarray] = {}
    w_xh = None
    b_h = None
    for key, arr in blocks.items():
        parts = key.split(".")
        if key == "w_xh":
            w_xh = arr
        elif key == "b_h":
            b_h = arr
        elif parts[0] == "w_mh":
            w_mh[int(parts[1])] = arr
        elif parts[0] == "w_hm":
            w_hm[int(parts[1])] = arr
        elif parts[0] == "w_mm":
            w_mm[(int(parts[1]), int(parts[2]))] = arr
        elif parts[0] == "w_my":
            w_my[int(parts[1])] = arr
        else:
            raise ValueError(f"unrecognized weight block key: {key!r}")
    if w_xh is None or not w_mh:
        raise ValueError("blocks must include w_xh and per-module maps")
    g = len(w_mh)
    return MsLmnParams(
        w_xh=w_xh,
        w_mh=[w_mh[i] for i in range(g)],
        w_hm=[w_hm[k] for k in range(g)],
        w_mm=w_mm,
        w_my=[w_my[i] for i in range(g)],
        b_h=b_h,
    )


def flatten_params(params: MsLmnParams) -> np.ndarray:
    """Concatenate every block (param_blocks order) into one vector."""
    return np.concatenate([b.reshape(-1) for b in param_blocks(params).values()])


def unflatten_params(template: MsLmnParams, vector: np.ndarray) -> MsLmnParams:
    """Inverse of :func:`flatten_params` given a shape-defining template."""
    blocks = param_blocks(template)
    out = {}
    offset = 0
    for key, b in blocks.items():
        n = b.size
        out[key] = vector[offset : offset + n].reshape(b.shape).copy()
        offset += n
    if offset != vector.size:
        raise ValueError(
            f"vector has {vector.size} entries, template needs {offset}"
        )
    return params_from_blocks(out)


def random_mslmn(
    rng: np.random.Generator,
    n_input: int,
    n_hidden: int,
    n_memory: int,
    n_output: int,
    n_modules: int,
    bias: bool = False,
) -> MsLmnParams:
    """Uniform init in +-(1/sqrt(fan_in)) per block; all i >= k memory
    blocks present. With ``bias`` a hidden bias is drawn last (so the
    weight draws match the bias-free init for the same generator state),
    bounded by the hidden layer's total fan-in.
    """
    check_positive_int(n_modules, "n_modules")

    def block(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    g = n_modules
    weights = dict(
        w_xh=block(n_hidden, n_input),
        w_mh=[block(n_hidden, n_memory) for _ in range(g)],
        w_hm=[block(n_memory, n_hidden) for _ in range(g)],
        w_mm={
            (i, k): block(n_memory, n_memory)
            for k in range(g)
            for i in range(k, g)
        },
        w_my=[block(n_output, n_memory) for _ in range(g)],
    )
    if bias:
        bound = 1.0 / np.sqrt(n_input + g * n_memory)
        weights["b_h"] = rng.uniform(-bound, bound, size=n_hidden)
    return MsLmnParams(**weights)
