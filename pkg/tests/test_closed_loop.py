import numpy as np
import pytest

from ltnctrl.closed_loop import (
    ClosedLoopTrace,
    FeedforwardController,
    IntegralController,
    compute_xi_star,
    eval_switch_matrix_ff,
    eval_switch_matrix_int,
    lyapunov_value,
    lyapunov_violations,
    run_closed_loop,
    settling_time,
    steady_state_metrics,
    switch_diagonal,
)
from ltnctrl.model import AdmissibilityError, UniformDisturbance, step, step_with_disturbance
from ltnctrl.synthesis import NumericalError


def test_switch_diagonal_by_hand():
    # alpha=0.5, s=1, r=1: bias 0.5
    d = switch_diagonal([1.0, -1.0, 0.2], [1.0, 1.0, 1.0], 0.5, 1.0)
    assert np.allclose(d, [0.5, 0.5, 1.0])
    M = eval_switch_matrix_ff([1.0, 0.2], [1.0, 1.0], 0.5, 1.0)
    assert np.allclose(M, np.diag([0.5, 1.0]))
    M = eval_switch_matrix_int([0.5, 0.2], [0.5, 0.0], [1.0, 1.0], 0.5, 1.0)
    assert np.allclose(M, np.diag([0.5, 1.0]))


def test_switch_diagonal_reproduces_clamp(rng):
    alpha, s = 0.8, 0.4
    r = rng.uniform(0.01, s / (1 - alpha) - 0.01, (1000, 3))
    pre = rng.normal(scale=1.0, size=(1000, 3))
    bias = (1 - alpha) * r
    d = switch_diagonal(pre, r, alpha, s)
    assert np.allclose(np.clip(pre + bias, 0, s) - bias, d * pre)


def test_zero_denominator_asserts():
    # reference outside the box makes the bias itself saturate
    with pytest.raises(AssertionError):
        switch_diagonal([0.0], [10.0], 0.5, 1.0)


def test_lyapunov_value(rng):
    A = rng.normal(size=(4, 4))
    P = A @ A.T + np.eye(4)
    z = rng.normal(size=4)
    assert lyapunov_value(P, z) == pytest.approx(z @ np.linalg.solve(P, z))
    Z = rng.normal(size=(5, 2))
    E = rng.normal(size=(5, 2))
    got = lyapunov_value(P, Z, E)
    want = [np.r_[a, b] @ np.linalg.solve(P, np.r_[a, b]) for a, b in zip(Z, E)]
    assert np.allclose(got, want)
    with pytest.raises(NumericalError):
        lyapunov_value(-P, z)


def test_ff_rollout_matches_plant(rodent, rodent_ff):
    sys_, _, r = rodent
    ctrl = FeedforwardController.from_result(rodent_ff, r)
    x0 = np.full(4, 3.0)
    w = UniformDisturbance(0.0, 0.2)
    tr = run_closed_loop(sys_, ctrl, x0, 40, w, seed=4)
    x = x0
    for t in range(40):
        u = ctrl.input(x)
        assert np.allclose(tr.u[t], u)
        x = step_with_disturbance(sys_, x, u, tr.w[t])
        assert np.allclose(tr.x[t + 1], x, atol=1e-12)


def test_integral_rollout_matches_plant(rodent, rodent_int):
    sys_, dm, r = rodent
    ctrl = IntegralController.from_result(rodent_int, r, dm)
    x0 = np.full(4, 3.0)
    tr = run_closed_loop(sys_, ctrl, x0, 40)
    x, xi = x0, np.zeros(4)
    for t in range(40):
        u = ctrl.input(x, xi)
        x, xi = step(sys_, x, u), xi + x - r
        assert np.allclose(tr.x[t + 1], x, atol=1e-10)
        assert np.allclose(tr.xi[t + 1], xi, atol=1e-9)


def test_xi_star_is_the_plant_equilibrium(rodent, rodent_int):
    sys_, dm, r = rodent
    ctrl = IntegralController.from_result(rodent_int, r, dm)
    u = rodent_int.K2 @ ctrl.xi_star
    assert np.allclose(step(sys_, r, u), r, atol=1e-9)


def test_xi_star_rejects_singular(rodent):
    _, dm, r = rodent
    Z = np.zeros((dm.n * dm.T_d, dm.n))
    with pytest.raises(NumericalError):
        compute_xi_star(dm, Z, Z, Z, dm.alpha, r)


def test_reference_checks(rodent, rodent_ff, rodent_int):
    sys_, dm, _ = rodent
    hi = sys_.state_upper_bound()
    with pytest.raises(AdmissibilityError):
        run_closed_loop(sys_, FeedforwardController.from_result(rodent_ff, np.full(4, hi + 1)), np.ones(4), 5)
    edge = np.array([hi, 1.0, 1.0, 1.0])
    run_closed_loop(sys_, FeedforwardController.from_result(rodent_ff, edge), np.ones(4), 5)
    with pytest.raises(AdmissibilityError):
        run_closed_loop(sys_, IntegralController.from_result(rodent_int, edge, dm), np.ones(4), 5)
    with pytest.raises(AdmissibilityError):
        run_closed_loop(sys_, FeedforwardController.from_result(rodent_ff, np.ones(3)), np.ones(4), 5)


def test_trace_csv(tmp_path, rodent, rodent_int):
    sys_, dm, r = rodent
    tr = run_closed_loop(sys_, IntegralController.from_result(rodent_int, r, dm), np.ones(4), 3)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == (
        ["t"] + [f"x{i}" for i in range(1, 5)] + [f"u{j}" for j in range(1, 6)]
        + [f"xi{i}" for i in range(1, 5)] + ["eps_inf", "V"]
    )
    assert len(lines) == 5
    assert float(lines[1].split(",")[-2]) == tr.eps_inf[0]


def test_metrics():
    assert settling_time(np.array([1.0, 0.5, 0.001, 0.0]), 0.01) == 2
    assert settling_time(np.array([0.0, 0.0]), 0.01) == 0
    assert settling_time(np.array([0.0, 1.0]), 0.01) is None
    x = np.zeros((20, 1))
    x[:10] = 1.0
    tr = ClosedLoopTrace(x, np.zeros((19, 1)), np.zeros(1), V=np.linspace(1, 0, 20))
    m = steady_state_metrics(tr, tail_steps=10)
    assert m["mean_abs_error"] == [0.0] and m["settling_time"] == 10
    assert steady_state_metrics(tr, tail_steps=11)["mean_abs_error"] == [pytest.approx(1 / 11)]
    assert lyapunov_violations(tr) == []
    V = np.linspace(1, 0, 20)
    V[5] = V[4]
    tr = ClosedLoopTrace(x, np.zeros((19, 1)), np.zeros(1), V=V)
    assert lyapunov_violations(tr) == [4]
