import numpy as np
import pytest

_outcomes = {}
_marks = {}


def pytest_runtest_logreport(report):
    mark = _marks.get(report.nodeid)
    if mark is None:
        return
    cid, text = mark
    prev = _outcomes.get(cid, (text, "pass", 0.0))
    status = prev[1]
    if report.failed:
        status = "fail"
    elif report.skipped and status == "pass":
        status = "skip"
    _outcomes[cid] = (text, status, prev[2] + report.duration)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            _marks[item.nodeid] = m.args


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_outcomes, key=lambda c: (not c.startswith("C"), len(c), c)):
        text, status, dur = _outcomes[cid]
        terminalreporter.write_line(f"{status.upper():4s} {cid:<5s} {text} ({dur:.1f}s)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def rodent():
    from ltnctrl.data import build_data_matrices, collect_random_dataset
    from ltnctrl.scenarios import RODENT_REFERENCE, RodentScenario

    sc = RodentScenario()
    sys_ = sc.system()
    ds = collect_random_dataset(sys_, sc.T_d, sc.x_box, sc.u_box, seed=0)
    dm = build_data_matrices(ds, sys_.alpha, sys_.s)
    return sys_, dm, np.array(RODENT_REFERENCE)


@pytest.fixture(scope="session")
def rodent_ff(rodent):
    from ltnctrl.synthesis import synthesize

    return synthesize(rodent[1], "ff", "reduced")


@pytest.fixture(scope="session")
def rodent_int(rodent):
    from ltnctrl.synthesis import synthesize

    return synthesize(rodent[1], "integral", "reduced")
