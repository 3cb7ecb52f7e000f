"""Acceptance criteria, one marker per criterion.

The terminal summary prints a PASS/FAIL line for each criterion id.
"""

import time

import numpy as np
import pytest
from helpers import rich_data
from hypothesis import given, settings
from hypothesis import strategies as st

from ltnctrl.closed_loop import (
    FeedforwardController,
    IntegralController,
    data_step,
    ff_maps,
    lyapunov_violations,
    run_closed_loop,
    steady_state_metrics,
    switch_diagonal,
)
from ltnctrl.data import (
    DataSet,
    build_data_matrices,
    check_richness,
    collect_random_dataset,
    numerical_rank,
    original_to_permuted,
    permuted_to_original,
    solve_M_for_gains,
)
from ltnctrl.model import LtnSystem, UniformDisturbance, random_admissible_states, step
from ltnctrl.scenarios import (
    ArousalScenario,
    RodentScenario,
    arousal_level,
    arousal_system,
    arousal_target,
)
from ltnctrl.synthesis import (
    check_zu_nonsingular,
    integral_maps,
    synthesize,
    validate_certificate,
)

TOL_TRACK = 1e-2
PSD_FLOOR = -1e-8


def _random_small_system(rng):
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    alpha = rng.uniform(0.3, 0.95)
    s = rng.uniform(0.2, 1.0)
    # scaled so pre-activations are of order s over the whole state box
    W = rng.uniform(-1, 1, (n, n)) * (1 - alpha)
    B = rng.uniform(-1, 1, (n, m)) * s
    return LtnSystem(alpha, s, W, B)


# -- 1 ------------------------------------------------------------------------


@pytest.mark.acceptance("C1", "data-based step equals true closed-loop step (50 systems x 100 points, <=1e-8, <10s)")
def test_representation_matches_true_step():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    done = 0
    while done < 50:
        sys_ = _random_small_system(rng)
        got = rich_data(sys_, 20, done, tries=5)
        if got is None:
            continue
        _, dm = got
        n, m = sys_.n, sys_.m
        K1 = rng.normal(size=(m, n))
        K2 = rng.normal(size=(m, n))
        maps = ff_maps(dm, K1, K2)
        xs = random_admissible_states(sys_, 100, seed=done)
        rs = random_admissible_states(sys_, 100, seed=10_000 + done)
        for x, r in zip(xs, rs):
            want = step(sys_, x, K1 @ x + K2 @ r)
            got_ = data_step(dm, maps["M"], maps["N"], x, r)
            worst = max(worst, float(np.abs(want - got_).max()))
        done += 1
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-8
    assert elapsed < 10.0


# -- 2 ------------------------------------------------------------------------


def _converges(sys_, ctrl, seeds=10, T=2000):
    out = []
    for x0 in random_admissible_states(sys_, seeds, seed=99):
        tr = run_closed_loop(sys_, ctrl, x0, T)
        out.append(float(tr.eps_inf[-1]))
    return out


@pytest.mark.acceptance("C2", "rodent feedforward: reduced SDP feasible, 10 runs reach r within 1e-2 (T_d=250 and T_d=40)")
def test_rodent_feedforward(rodent):
    t0 = time.perf_counter()
    sys_, dm, r = rodent
    res = synthesize(dm, "ff", "reduced")
    assert res.gamma >= 1e-6
    errs = _converges(sys_, FeedforwardController.from_result(res, r))
    assert max(errs) < TOL_TRACK
    assert time.perf_counter() - t0 < 300


@pytest.mark.acceptance("C2", "rodent feedforward: reduced SDP feasible, 10 runs reach r within 1e-2 (T_d=250 and T_d=40)")
def test_rodent_feedforward_fast_profile():
    sc = RodentScenario()
    sys_ = sc.system()
    ds = collect_random_dataset(sys_, 40, sc.x_box, sc.u_box, seed=0)
    dm = build_data_matrices(ds, sys_.alpha, sys_.s)
    rep = check_richness(dm)
    assert rep.passed, rep.summary()
    res = synthesize(dm, "ff", "reduced")
    assert res.gamma >= 1e-6
    errs = _converges(sys_, FeedforwardController.from_result(res, np.array(sc.reference)))
    assert max(errs) < TOL_TRACK


# -- 3 ------------------------------------------------------------------------


@pytest.mark.acceptance("C3", "rodent integral: SDP feasible, convergence to r, xi -> xi* within 1e-3, sigma_min(ZU) > 1e-8")
def test_rodent_integral(rodent, rodent_int):
    sys_, dm, r = rodent
    res = rodent_int
    assert res.gamma >= 1e-6
    U = integral_maps(res, dm)["U"]
    assert check_zu_nonsingular(dm, U) > 1e-8
    ctrl = IntegralController.from_result(res, r, dm)
    for x0 in random_admissible_states(sys_, 10, seed=99):
        tr = run_closed_loop(sys_, ctrl, x0, 2000)
        assert tr.eps_inf[-1] < TOL_TRACK
        assert np.abs(tr.xi[-1] - ctrl.xi_star).max() < 1e-3


# -- 4 ------------------------------------------------------------------------


@pytest.mark.acceptance("C4", "disturbance: integral tail error < feedforward on every node, feedforward > 0.05 somewhere")
def test_disturbance_contrast(rodent, rodent_ff, rodent_int):
    sys_, dm, r = rodent
    w = UniformDisturbance(0.0, 0.2)
    x0 = random_admissible_states(sys_, 1, seed=3)[0]
    ff = run_closed_loop(sys_, FeedforwardController.from_result(rodent_ff, r), x0, 2000, w, seed=7)
    it = run_closed_loop(sys_, IntegralController.from_result(rodent_int, r, dm), x0, 2000, w, seed=7)
    e_ff = np.array(steady_state_metrics(ff, tail_steps=500)["mean_abs_error"])
    e_it = np.array(steady_state_metrics(it, tail_steps=500)["mean_abs_error"])
    assert np.all(e_it < e_ff)
    assert e_ff.max() > 0.05


# -- 5 ------------------------------------------------------------------------


@pytest.mark.acceptance("C5", "Lyapunov decrease on 100 noise-free runs and certificate check for every accepted result")
@pytest.mark.parametrize("kind", ["ff", "integral"])
def test_lyapunov_decrease(kind, rodent, rodent_ff, rodent_int):
    sys_, dm, r = rodent
    res = rodent_ff if kind == "ff" else rodent_int
    rep = validate_certificate(res, dm, full_recheck=True)
    assert rep.passed, rep.failures()
    assert rep.worst_vertex >= PSD_FLOOR
    if kind == "ff":
        ctrl = FeedforwardController.from_result(res, r)
    else:
        ctrl = IntegralController.from_result(res, r, dm)
    for x0 in random_admissible_states(sys_, 100, seed=5):
        tr = run_closed_loop(sys_, ctrl, x0, 2000)
        assert lyapunov_violations(tr) == []


# -- 6 ------------------------------------------------------------------------


def _instance_n4(seed):
    rng = np.random.default_rng(seed)
    n, m = 4, int(rng.integers(4, 6))
    alpha = rng.uniform(0.5, 0.95)
    s = rng.uniform(0.2, 1.0)
    sys_ = LtnSystem(alpha, s, rng.uniform(-0.3, 0.3, (n, n)), rng.uniform(-0.5, 0.5, (n, m)))
    got = rich_data(sys_, 60, seed, u_box=(0.0, 0.3 * s), tries=20)
    return None if got is None else got[1]


@pytest.mark.acceptance("C6", "reduced-mode certificates pass the full 2^4 recheck on 20 random instances (<5 min)")
def test_reduced_implies_full():
    t0 = time.perf_counter()
    instances, seed = [], 0
    while len(instances) < 20:
        dm = _instance_n4(seed)
        if dm is not None:
            instances.append(dm)
        seed += 1
    accepted = 0
    for dm in instances:
        for kind in ("ff", "integral"):
            res = synthesize(dm, kind, "reduced")
            rep = validate_certificate(res, dm, full_recheck=True)
            full = {k: v for k, v in rep.vertex_min_eigs.items() if k.startswith("full:")}
            assert len(full) == 16
            assert min(full.values()) >= PSD_FLOOR, (kind, full)
            accepted += 1
    # full mode on the first instance: feasible, and compare margins
    for kind in ("ff", "integral"):
        full = synthesize(instances[0], kind, "full")
        red = synthesize(instances[0], kind, "reduced")
        assert validate_certificate(full, instances[0]).passed
        assert red.gamma <= full.gamma * (1 + 1e-6)
    assert accepted == 40
    assert time.perf_counter() - t0 < 300


# -- 7 ------------------------------------------------------------------------


@st.composite
def _datasets(draw, min_td=1, max_td=30):
    n = draw(st.integers(1, 4))
    m = draw(st.integers(1, 3))
    T_d = draw(st.integers(min_td, max_td))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.3, 0.95)
    s = rng.uniform(0.2, 1.0)
    sys_ = LtnSystem(alpha, s, rng.uniform(-1, 1, (n, n)) * (1 - alpha), rng.uniform(-1, 1, (n, m)) * s)
    return sys_, collect_random_dataset(sys_, T_d, None, (-s, s), seed=seed)


@pytest.mark.acceptance("C7", "data pipeline properties (>=200 cases each, <30s)")
@settings(max_examples=200, deadline=None)
@given(_datasets())
def test_masking_is_exact(case):
    sys_, ds = case
    dm = build_data_matrices(ds, sys_.alpha, sys_.s)
    raw = ds.x_plus.T - sys_.alpha * ds.x.T
    hit = np.isclose(raw, 0.0, rtol=0, atol=1e-9) | np.isclose(raw, sys_.s, rtol=0, atol=1e-9)
    assert np.array_equal(dm.sat_mask, hit)
    assert np.all(dm.Z[dm.sat_mask] == 0.0)
    assert np.all(dm.Q[dm.sat_mask] == 0.0)
    assert np.array_equal(dm.Z[~dm.sat_mask], raw[~dm.sat_mask])
    P = ds.regressor()
    for i in range(ds.n):
        keep = ~dm.sat_mask[i]
        assert np.array_equal(dm.Q[i][keep], P[keep])


@pytest.mark.acceptance("C7", "data pipeline properties (>=200 cases each, <30s)")
@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.integers(1, 60), st.data())
def test_permutation_round_trip(n, T_d, data):
    row = data.draw(st.integers(1, n * T_d))
    assert original_to_permuted(permuted_to_original(row, n, T_d), n, T_d) == row
    assert permuted_to_original(original_to_permuted(row, n, T_d), n, T_d) == row


@pytest.mark.acceptance("C7", "data pipeline properties (>=200 cases each, <30s)")
@settings(max_examples=200, deadline=None)
@given(_datasets(), st.integers(0, 2**31 - 1))
def test_rank_is_monotone_in_samples(case, seed):
    sys_, ds = case
    more = ds.append(collect_random_dataset(sys_, 5, None, (-sys_.s, sys_.s), seed=seed))
    a = build_data_matrices(ds, sys_.alpha, sys_.s)
    b = build_data_matrices(more, sys_.alpha, sys_.s)
    assert all(rb >= ra for ra, rb in zip(a.block_ranks, b.block_ranks))
    assert [numerical_rank(q) for q in a.Q] == list(a.block_ranks)


@pytest.mark.acceptance("C7", "data pipeline properties (>=200 cases each, <30s)")
@settings(max_examples=200, deadline=None)
@given(st.data())
def test_richness_fails_below_n_plus_m(data):
    sys_, ds = data.draw(_datasets(min_td=1, max_td=6))
    if ds.T_d >= sys_.n + sys_.m:
        k = sys_.n + sys_.m - 1
        ds = DataSet(ds.x[:k], ds.u[:k], ds.x_plus[:k])
    dm = build_data_matrices(ds, sys_.alpha, sys_.s)
    assert not check_richness(dm).passed
    with pytest.raises(ValueError):
        solve_M_for_gains(dm, np.vstack([np.eye(sys_.n), np.zeros((sys_.m, sys_.n))]))


# -- 8 ------------------------------------------------------------------------


@pytest.mark.acceptance("C8", "switching diagonal entries in (0,1] over 1e5 evaluations")
@pytest.mark.parametrize("kind", ["ff", "integral"])
def test_switching_matrix_range(kind, rodent, rodent_ff, rodent_int):
    sys_, dm, _ = rodent
    rng = np.random.default_rng(8)
    N = 100_000
    hi = sys_.state_upper_bound()
    r = rng.uniform(1e-3, hi - 1e-3, (N, sys_.n))
    eps = rng.uniform(0.0, hi, (N, sys_.n)) - r
    if kind == "ff":
        ZM = dm.z_times(ff_maps(dm, rodent_ff.K1, rodent_ff.K2)["M"])
        pre = eps @ ZM.T
    else:
        maps = integral_maps(rodent_int, dm)
        e = rng.normal(scale=hi, size=(N, sys_.n))
        pre = eps @ dm.z_times(maps["M"]).T + e @ dm.z_times(maps["U"]).T
    d = switch_diagonal(pre, r, sys_.alpha, sys_.s)
    assert d.shape == (N, sys_.n)
    assert np.all(d > 0) and np.all(d <= 1)
    assert (d < 1).any()


# -- arousal (property-based) -------------------------------------------------


@pytest.mark.acceptance("AR", "arousal scenario: input lowers arousal, seeded draw is deterministic")
def test_arousal_draw_properties():
    a, b = arousal_system(0), arousal_system(0)
    assert np.array_equal(a.system.W, b.system.W) and np.array_equal(a.phi, b.phi)
    for seed in range(5):
        d = arousal_system(seed)
        assert np.all(d.phi @ d.system.B < 0)
        xmax = d.system.state_upper_bound()
        assert arousal_level(d.phi, np.full(15, xmax)) == pytest.approx(100.0)
        r = arousal_target(d)
        assert arousal_level(d.phi, r) == pytest.approx(50.0)


@pytest.mark.acceptance("AR-C", "arousal control: synthesis feasible, convergence to r_T, input rises with arousal")
@pytest.mark.parametrize("kind", ["ff", "integral"])
def test_arousal_control(kind):
    sc = ArousalScenario()
    draw = sc.draw()
    sys_ = draw.system
    ds = collect_random_dataset(sys_, sc.T_d, sc.x_box, sc.u_box, seed=0)
    dm = build_data_matrices(ds, sys_.alpha, sys_.s)
    assert check_richness(dm).passed
    res = synthesize(dm, kind, "reduced")
    r = arousal_target(draw, sc.level)
    if kind == "ff":
        ctrl = FeedforwardController.from_result(res, r)
    else:
        ctrl = IntegralController.from_result(res, r, dm)
    levels, inputs = [], []
    for x0 in random_admissible_states(sys_, 5, seed=1):
        tr = run_closed_loop(sys_, ctrl, x0, sc.horizon)
        assert tr.eps_inf[-1] < TOL_TRACK
        levels.append(arousal_level(draw.phi, tr.x[:-1]))
        inputs.append(tr.u[:, 0])
    slope = np.polyfit(np.concatenate(levels), np.concatenate(inputs), 1)[0]
    assert slope > 0
