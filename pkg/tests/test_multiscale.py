import numpy as np
import pytest

from mslmn.lmn import LmnState, lmn_forward, lmn_step
from mslmn.multiscale import (
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


# ------------------------------------------------------------------- schedule

def test_module_count_examples():
    assert module_count_for(300) == 8
    assert module_count_for(1) == 1
    assert module_count_for(97) == 6
    assert module_count_for(2) == 1
    assert module_count_for(4) == 2
    assert module_count_for(256) == 8
    with pytest.raises(ValueError):
        module_count_for(0)


def test_active_modules_examples():
    assert active_modules(4, 3) == 3
    assert active_modules(1, 5) == 1
    assert active_modules(6, 4) == 2
    with pytest.raises(ValueError):
        active_modules(0, 3)


def test_activation_is_nested_prefix():
    # The active set at any t is exactly modules 1..i_max: firing of module i
    # implies firing of every faster module.
    for g in range(1, 7):
        for t in range(1, 2 ** g + 1):
            fired = {k for k in range(1, g + 1) if t % (2 ** (k - 1)) == 0}
            assert fired == set(range(1, active_modules(t, g) + 1))


def test_clock_schedule_rates_double():
    assert ClockSchedule(g=4).rates == [1, 2, 4, 8]
    with pytest.raises(ValueError):
        ClockSchedule(g=0)


# ----------------------------------------------------------------------- step

def test_step_single_module_equals_plain_cell():
    rng = np.random.default_rng(0)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=1)
    lp = single_scale(p)
    state = initial_state(p)
    lstate = LmnState(h=np.zeros(3), m=np.zeros(4))
    for t in range(5):
        x = rng.standard_normal(2)
        state = mslmn_step(p, state, x)
        lstate = lmn_step(lp, lstate, x)
        np.testing.assert_allclose(state.h, lstate.h, atol=1e-14)
        np.testing.assert_allclose(state.m[0], lstate.m, atol=1e-14)


def test_step_odd_t_freezes_second_module_bitwise():
    rng = np.random.default_rng(1)
    p = random_mslmn(rng, 2, 3, 4, 1, n_modules=2)
    m_held = rng.standard_normal(4)
    state = MsLmnState(h=np.zeros(3), m=[rng.standard_normal(4), m_held], t=3)
    out = mslmn_step(p, state, rng.standard_normal(2))
    assert np.array_equal(out.m[1], m_held)
    assert not np.array_equal(out.m[0], state.m[0])


def test_step_zero_weights():
    g, n_m = 3, 2
    p = MsLmnParams(
        w_xh=np.zeros((2, 1)),
        w_mh=[np.zeros((2, n_m))] * g,
        w_hm=[np.zeros((n_m, 2))] * g,
        w_mm={(i, k): np.zeros((n_m, n_m)) for k in range(g) for i in range(k, g)},
        w_my=[np.zeros((1, n_m))] * g,
    )
    held = [np.zeros(n_m), np.ones(n_m), np.full(n_m, 2.0)]
    state = MsLmnState(h=np.zeros(2), m=held, t=1)  # i_max = 1
    out = mslmn_step(p, state, [5.0])
    np.testing.assert_array_equal(out.h, np.zeros(2))
    np.testing.assert_array_equal(out.m[0], np.zeros(n_m))
    np.testing.assert_array_equal(out.m[1], held[1])
    np.testing.assert_array_equal(out.m[2], held[2])


def test_step_rejects_mismatches():
    rng = np.random.default_rng(2)
    p = random_mslmn(rng, 2, 3, 4, 1, n_modules=2)
    with pytest.raises(ValueError):
        mslmn_step(p, initial_state(p), np.zeros(3))
    bad = MsLmnState(h=np.zeros(3), m=[np.zeros(4)], t=1)
    with pytest.raises(ValueError):
        mslmn_step(p, bad, np.zeros(2))


# --------------------------------------------------------------------- packed

def test_packed_step_matches_reference_at_full_activity():
    rng = np.random.default_rng(3)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=3)
    state = MsLmnState(
        h=np.zeros(3), m=[rng.standard_normal(4) for _ in range(3)], t=4
    )
    x = rng.standard_normal(2)
    a = mslmn_step(p, state, x)
    b = mslmn_step_packed(p, state, x)
    np.testing.assert_allclose(b.h, a.h, atol=1e-12)
    for k in range(3):
        np.testing.assert_allclose(b.m[k], a.m[k], atol=1e-12)


def test_packed_step_odd_t_copies_trailing_rows_bitwise():
    rng = np.random.default_rng(4)
    p = random_mslmn(rng, 2, 3, 4, 1, n_modules=3)
    held = [rng.standard_normal(4) for _ in range(3)]
    state = MsLmnState(h=np.zeros(3), m=held, t=5)
    out = mslmn_step_packed(p, state, rng.standard_normal(2))
    assert np.array_equal(out.m[1], held[1])
    assert np.array_equal(out.m[2], held[2])


def test_packed_step_single_module_exact():
    rng = np.random.default_rng(5)
    p = random_mslmn(rng, 2, 3, 4, 1, n_modules=1)
    state = MsLmnState(h=np.zeros(3), m=[rng.standard_normal(4)], t=1)
    x = rng.standard_normal(2)
    a = mslmn_step(p, state, x)
    b = mslmn_step_packed(p, state, x)
    assert np.array_equal(a.h, b.h)
    assert np.array_equal(a.m[0], b.m[0])


def test_packed_memory_map_is_block_upper_triangular():
    rng = np.random.default_rng(6)
    p = random_mslmn(rng, 1, 2, 3, 1, n_modules=4)
    mm = pack_weights(p).mm
    n_m = 3
    for k in range(4):
        for i in range(4):
            blk = mm[k * n_m : (k + 1) * n_m, i * n_m : (i + 1) * n_m]
            if i < k:
                np.testing.assert_array_equal(blk, np.zeros((n_m, n_m)))
            else:
                np.testing.assert_array_equal(blk, p.w_mm[(i, k)])


# -------------------------------------------------------------------- forward

def test_forward_empty_sequence():
    rng = np.random.default_rng(7)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=2)
    hs, ms, ys = mslmn_forward(p, np.zeros((0, 2)))
    assert hs.shape == (0, 3) and ms.shape == (0, 8) and ys.shape == (0, 2)


def test_forward_single_module_equals_plain_forward():
    rng = np.random.default_rng(8)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=1)
    seq = rng.standard_normal((9, 2))
    hs, ms, ys = mslmn_forward(p, seq)
    lh, lm, ly = lmn_forward(single_scale(p), seq)
    np.testing.assert_allclose(hs, lh, atol=1e-14)
    np.testing.assert_allclose(ms, lm, atol=1e-14)
    np.testing.assert_allclose(ys, ly, atol=1e-14)


def test_forward_matches_step_loop():
    rng = np.random.default_rng(9)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=3)
    seq = rng.standard_normal((12, 2))
    hs, ms, ys = mslmn_forward(p, seq)
    state = initial_state(p)
    for t in range(12):
        state = mslmn_step(p, state, seq[t])
        np.testing.assert_allclose(hs[t], state.h, atol=1e-13)
        np.testing.assert_allclose(ms[t], np.concatenate(state.m), atol=1e-13)
        y = sum(p.w_my[i] @ state.m[i] for i in range(3))
        np.testing.assert_allclose(ys[t], y, atol=1e-13)


def test_forward_packed_unpacked_agree_many_models():
    rng = np.random.default_rng(10)
    for g in [2, 4, 6]:
        p = random_mslmn(rng, 2, 3, 3, 1, n_modules=g)
        seq = rng.standard_normal((64, 2))
        _, ms, _ = mslmn_forward(p, seq)
        state = initial_state(p)
        for t in range(64):
            state = mslmn_step(p, state, seq[t])
            np.testing.assert_allclose(
                ms[t], np.concatenate(state.m), atol=1e-12
            )


def test_forward_clock_freeze_is_bitwise():
    rng = np.random.default_rng(11)
    g = 4
    p = random_mslmn(rng, 1, 2, 3, 1, n_modules=g)
    seq = rng.standard_normal((32, 1))
    _, ms, _ = mslmn_forward(p, seq)
    n_m = 3
    for t in range(1, 33):
        for k in range(1, g + 1):
            if t % (2 ** (k - 1)) != 0:
                prev = (
                    ms[t - 2, (k - 1) * n_m : k * n_m]
                    if t > 1
                    else np.zeros(n_m)
                )
                assert np.array_equal(ms[t - 1, (k - 1) * n_m : k * n_m], prev)


# ----------------------------------------------------------------- add_module

def test_add_module_zero_blocks_preserves_everything():
    rng = np.random.default_rng(12)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=1)
    seq = rng.standard_normal((10, 2))
    p2 = add_module(p, np.zeros((4, 3)), np.zeros((4, 4)))
    s1, s2 = initial_state(p), initial_state(p2)
    for x in seq:
        s1 = mslmn_step(p, s1, x)
        s2 = mslmn_step(p2, s2, x)
        assert np.array_equal(s2.h, s1.h)
        assert np.array_equal(s2.m[0], s1.m[0])
        assert np.array_equal(s2.m[1], np.zeros(4))
    hs0, ms0, ys0 = mslmn_forward(p, seq)
    hs1, ms1, ys1 = mslmn_forward(p2, seq)
    np.testing.assert_allclose(hs1, hs0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ms1[:, :4], ms0, rtol=0, atol=1e-12)
    assert np.array_equal(ms1[:, 4:], np.zeros((10, 4)))
    np.testing.assert_allclose(ys1, ys0, rtol=0, atol=1e-12)


def test_add_module_random_blocks_preserve_old_trajectories():
    rng = np.random.default_rng(13)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=2)
    seq = rng.standard_normal((16, 2))
    p2 = add_module(p, rng.standard_normal((4, 3)), rng.standard_normal((4, 4)))
    # Bitwise preservation holds on the per-module equations; the packed
    # forward widens its matrices and may regroup sums, so it only gets
    # the packing tolerance.
    s1, s2 = initial_state(p), initial_state(p2)
    for x in seq:
        s1 = mslmn_step(p, s1, x)
        s2 = mslmn_step(p2, s2, x)
        assert np.array_equal(s2.h, s1.h)
        for k in range(2):
            assert np.array_equal(s2.m[k], s1.m[k])
    hs0, ms0, _ = mslmn_forward(p, seq)
    hs1, ms1, _ = mslmn_forward(p2, seq)
    np.testing.assert_allclose(hs1, hs0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ms1[:, :8], ms0, rtol=0, atol=1e-12)


def test_add_module_readout_changes_only_with_nonzero_map():
    rng = np.random.default_rng(14)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=2)
    seq = rng.standard_normal((12, 2))
    _, _, ys0 = mslmn_forward(p, seq)
    a_new, b_new = rng.standard_normal((4, 3)), rng.standard_normal((4, 4))
    _, _, ys_zero = mslmn_forward(add_module(p, a_new, b_new), seq)
    _, _, ys_rand = mslmn_forward(
        add_module(p, a_new, b_new, rng.standard_normal((2, 4))), seq
    )
    assert ys_zero.shape == ys0.shape
    assert np.array_equal(ys_zero, ys0)
    assert not np.array_equal(ys_rand, ys0)


def test_add_module_rejects_bad_shapes():
    rng = np.random.default_rng(15)
    p = random_mslmn(rng, 2, 3, 4, 2, n_modules=1)
    with pytest.raises(ValueError):
        add_module(p, np.zeros((3, 3)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        add_module(p, np.zeros((4, 3)), np.zeros((4, 5)))


# --------------------------------------------------------------- count_params

def test_count_params_formula_by_hand():
    rng = np.random.default_rng(16)
    p = random_mslmn(rng, 1, 4, 6, 1, n_modules=1)
    assert count_params(p) == 4 + 24 + 24 + 36 + 6


def test_count_params_zero_sizes():
    p = MsLmnParams(
        w_xh=np.zeros((0, 0)),
        w_mh=[np.zeros((0, 0))],
        w_hm=[np.zeros((0, 0))],
        w_mm={(0, 0): np.zeros((0, 0))},
        w_my=[np.zeros((0, 0))],
    )
    assert count_params(p) == 0


def test_count_params_nine_module_configuration():
    rng = np.random.default_rng(17)
    p = random_mslmn(rng, 1, 1, 4, 1, n_modules=9)
    # 1 + 9*4 + 9*4 + 45*16 + 9*4 by the stored-weight formula
    assert count_params(p) == 829


# ------------------------------------------------------------------ invariants

def test_causal_isolation_under_forced_hidden():
    # With the hidden trajectory held fixed, the memory stack is block
    # upper-triangular: wiping a faster module can never reach a slower one.
    rng = np.random.default_rng(18)
    g, n_m, n_h = 4, 3, 2
    p = random_mslmn(rng, 1, n_h, n_m, 1, n_modules=g)
    hs = rng.standard_normal((24, n_h))

    def memory_rollout(wipe_k=None):
        m = [np.zeros(n_m) for _ in range(g)]
        out = []
        for t in range(1, 25):
            i_max = active_modules(t, g)
            new = []
            for k in range(g):
                if k < i_max:
                    mk = p.w_hm[k] @ hs[t - 1]
                    for i in range(k, g):
                        mk = mk + p.w_mm[(i, k)] @ m[i]
                else:
                    mk = m[k]
                new.append(mk)
            m = new
            if wipe_k is not None:
                m = list(m)
                m[wipe_k] = np.zeros(n_m)
            out.append(np.concatenate(m))
        return np.array(out)

    base = memory_rollout()
    for k in range(g - 1):
        wiped = memory_rollout(wipe_k=k)
        np.testing.assert_array_equal(
            wiped[:, (k + 1) * n_m :], base[:, (k + 1) * n_m :]
        )


def test_params_reject_forbidden_block_keys():
    n_m = 2
    with pytest.raises(ValueError):
        MsLmnParams(
            w_xh=np.zeros((2, 1)),
            w_mh=[np.zeros((2, n_m))] * 2,
            w_hm=[np.zeros((n_m, 2))] * 2,
            w_mm={(0, 1): np.zeros((n_m, n_m))},  # faster feeding slower
            w_my=[np.zeros((1, n_m))] * 2,
        )


# ------------------------------------------------------------------ hidden bias

def test_bias_enters_every_hidden_preactivation():
    rng = np.random.default_rng(40)
    p = random_mslmn(rng, 2, 3, 2, 1, n_modules=2, bias=True)
    x = rng.standard_normal((6, 2))
    hs, ms, _ = mslmn_forward(p, x)
    # Replay by hand with the bias added inside the tanh.
    import numpy.testing as npt
    from mslmn.multiscale import pack_weights as _pw

    packed = _pw(p)
    m = np.zeros(2 * p.n_memory)
    for t in range(1, 7):
        h = np.tanh(p.w_xh @ x[t - 1] + packed.mh @ m + p.b_h)
        rows = active_modules(t, 2) * p.n_memory
        m = m.copy()
        m[:rows] = packed.hm[:rows] @ h + packed.mm[:rows] @ m
        npt.assert_allclose(hs[t - 1], h, rtol=0, atol=0)
        npt.assert_allclose(ms[t - 1], m, rtol=0, atol=0)


def test_bias_paths_agree_step_and_packed():
    rng = np.random.default_rng(41)
    p = random_mslmn(rng, 1, 2, 3, 2, n_modules=3, bias=True)
    xs = rng.standard_normal((12, 1))
    s_ref = initial_state(p)
    s_pack = initial_state(p)
    for x in xs:
        s_ref = mslmn_step(p, s_ref, x)
        s_pack = mslmn_step_packed(p, s_pack, x)
        np.testing.assert_allclose(s_ref.h, s_pack.h, atol=1e-14)
        for a, b in zip(s_ref.m, s_pack.m):
            np.testing.assert_allclose(a, b, atol=1e-13)


def test_bias_survives_add_module_and_flattening():
    from mslmn.multiscale import flatten_params, param_blocks, unflatten_params

    rng = np.random.default_rng(42)
    p = random_mslmn(rng, 1, 2, 2, 1, n_modules=1, bias=True)
    grown = add_module(p, np.zeros((2, 2)), np.zeros((2, 2)))
    np.testing.assert_array_equal(grown.b_h, p.b_h)
    blocks = param_blocks(grown)
    assert list(blocks)[-1] == "b_h"
    back = unflatten_params(grown, flatten_params(grown))
    np.testing.assert_array_equal(back.b_h, grown.b_h)
    # Bias-free cells expose no bias block at all.
    plain = random_mslmn(rng, 1, 2, 2, 1, n_modules=1)
    assert plain.b_h is None and "b_h" not in param_blocks(plain)


def test_bias_draw_leaves_weight_draws_unchanged():
    args = (1, 2, 3, 1)
    a = random_mslmn(np.random.default_rng(7), *args, n_modules=2)
    b = random_mslmn(np.random.default_rng(7), *args, n_modules=2, bias=True)
    np.testing.assert_array_equal(a.w_xh, b.w_xh)
    for i in range(2):
        np.testing.assert_array_equal(a.w_mh[i], b.w_mh[i])
        np.testing.assert_array_equal(a.w_my[i], b.w_my[i])
    assert b.b_h is not None and b.b_h.shape == (2,)


def test_single_scale_rejects_biased_cell():
    rng = np.random.default_rng(43)
    p = random_mslmn(rng, 1, 2, 2, 1, n_modules=1, bias=True)
    with pytest.raises(ValueError):
        single_scale(p)


def test_bias_shape_validated():
    with pytest.raises(ValueError):
        MsLmnParams(
            w_xh=np.zeros((2, 1)),
            w_mh=[np.zeros((2, 3))],
            w_hm=[np.zeros((3, 2))],
            w_mm={(0, 0): np.zeros((3, 3))},
            w_my=[np.zeros((1, 3))],
            b_h=np.zeros(5),
        )
