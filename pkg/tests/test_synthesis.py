import numpy as np
import pytest
from helpers import rich_data

from ltnctrl.data import RichnessError, build_data_matrices, collect_random_dataset
from ltnctrl.model import LtnSystem
from ltnctrl.synthesis import (
    InfeasibleSynthesisError,
    SynthesisResult,
    assemble_ff_program,
    assemble_integral_program,
    build_constant_matrices,
    certificate_vertices,
    enumerate_vertices,
    implied_zero_pattern,
    structural_obstruction,
    synthesize,
    validate_certificate,
)


def _small():
    sys_ = LtnSystem(0.7, 0.5, [[0.05, -0.1], [0.08, 0.02]], [[0.4, -0.1], [0.2, 0.3]])
    return sys_, rich_data(sys_, 30, 0)[1]


def test_constant_matrices():
    c = build_constant_matrices(3, 2)
    assert np.allclose(c.L @ np.ones(3), 0)
    assert c.calL.shape == (15, 15)
    assert c.C1.shape == (3, 15) and c.C2.shape == (2, 15)
    assert np.array_equal(c.C1[:, :3], np.eye(3)) and np.array_equal(c.C2[:, 3:5], np.eye(2))


def test_vertex_sets():
    full = enumerate_vertices(3, "full")
    assert len(full) == 8
    assert full.diagonals[0].tolist() == [1, 1, 1]
    assert len({tuple(d) for d in full.diagonals}) == 8
    red = enumerate_vertices(3, "reduced")
    assert red.diagonals.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    with pytest.raises(ValueError):
        enumerate_vertices(17, "full")
    assert len(certificate_vertices(3, "full")) == 7
    assert certificate_vertices(3, "reduced")[1].tolist() == [3, 0, 0]


def test_variable_count_uncompressed():
    _, dm = _small()
    n, T = dm.n, dm.T_d
    ff = assemble_ff_program(dm, dm.alpha, "full")
    assert ff.problem.num_scalar_variables == n * (n + 1) // 2 + 2 * n * T * n + 1
    it = assemble_integral_program(dm, dm.alpha, "full")
    assert it.problem.num_scalar_variables == n * (2 * n + 1) + 2 * n * T * n + 1
    labels = [c.label for c in ff.problem.constraints]
    assert "strict" in labels and "ZS_sum" in labels and "vertex_11" not in labels


def test_implied_pattern():
    cols, entries = implied_zero_pattern(3, [[0, 0, 0], [3, 0, 0]])
    assert cols == [0, 1, 2]
    assert entries == [(0, 1), (0, 2)]


@pytest.mark.parametrize("compress", [True, False])
@pytest.mark.parametrize("kind", ["ff", "integral"])
@pytest.mark.parametrize("mode", ["full", "reduced"])
def test_small_synthesis(kind, mode, compress):
    sys_, dm = _small()
    res = synthesize(dm, kind, mode, compress=compress)
    assert res.gamma > 1e-6
    rep = validate_certificate(res, dm, full_recheck=True)
    assert rep.passed, rep.failures()
    n = sys_.n
    if kind == "ff":
        # oracle from the true plant: exact matching and a Schur closed loop
        assert np.allclose(sys_.W + sys_.B @ (res.K1 + res.K2), (1 - sys_.alpha) * np.eye(n), atol=1e-6)
        A = sys_.alpha * np.eye(n) + sys_.W + sys_.B @ res.K1
    else:
        A = np.block([
            [sys_.alpha * np.eye(n) + sys_.W + sys_.B @ res.K1, sys_.B @ res.K2],
            [np.eye(n), np.eye(n)],
        ])
    assert np.abs(np.linalg.eigvals(A)).max() < 1


def test_result_json(tmp_path):
    _, dm = _small()
    res = synthesize(dm, "integral", "reduced")
    res.save(tmp_path / "r.json")
    back = SynthesisResult.load(tmp_path / "r.json")
    assert back.controller_kind == "integral" and back.vertex_mode == "reduced"
    assert np.array_equal(back.K1, res.K1) and np.array_equal(back.P_bar, res.P_bar)
    assert validate_certificate(back, dm).passed


def test_tampered_certificate_fails():
    _, dm = _small()
    res = synthesize(dm, "ff", "full")
    bad = SynthesisResult(**{**res.__dict__, "P_bar": 2.0 * res.P_bar})
    rep = validate_certificate(bad, dm)
    assert not rep.passed
    assert any("exceeds identity" in f for f in rep.failures())


def test_underactuated_is_rejected():
    sys_ = LtnSystem(0.7, 0.5, np.diag([0.1, 0.05, 0.02]), [[0.4], [0.2], [0.3]])
    dm = rich_data(sys_, 40, 0)[1]
    assert "input map" in structural_obstruction(dm, "feedforward")
    assert "rank 1" in structural_obstruction(dm, "integral")
    with pytest.raises(InfeasibleSynthesisError) as exc:
        synthesize(dm, "integral")
    assert exc.value.exit_code == 2


def test_poor_data_rejected():
    sys_, _ = _small()
    dm = build_data_matrices(collect_random_dataset(sys_, 3, seed=0), sys_.alpha, sys_.s)
    with pytest.raises(RichnessError):
        synthesize(dm, "ff")


def test_unknown_options():
    _, dm = _small()
    with pytest.raises(ValueError):
        synthesize(dm, "pid")
    with pytest.raises(ValueError):
        assemble_ff_program(dm, dm.alpha, "partial")
