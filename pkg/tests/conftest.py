import pytest

from qdac import agent as A
from qdac import envs

POINT_STEPS = 200_000
_REPORT = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def trained_point():
    """``get(seed) -> TrainResult`` for QDAC on the point mass, trained once per session."""
    cache = {}

    def get(seed):
        if seed not in cache:
            cfg = A.QdacConfig(mode="QDAC", total_steps=POINT_STEPS, log_every=10_000, seed=seed)
            cache[seed] = A.train(envs.PointVelocityEnv(), cfg)
        return cache[seed]

    return get


@pytest.fixture
def criterion(request):
    """``record(number, ok, detail)``: collected into the acceptance summary."""
    report = request.config.stash.setdefault(_REPORT, {})

    def record(number, ok, detail):
        report[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    report = config.stash.get(_REPORT, {})
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(report):
        ok, detail = report[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
