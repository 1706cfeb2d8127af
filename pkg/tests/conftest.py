import numpy as np
import pytest

from hkgce.store import parse_fact_lines

TOY_LINES = ["a,p,b", "a,p,c", "b,q,c,t,x", "a,p,b,t,x"]


@pytest.fixture
def toy():
    return parse_fact_lines(TOY_LINES)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def community():
    from hkgce.synthetic import community_hkg
    return community_hkg(0, n_facts=600)


@pytest.fixture(scope="session")
def workload(community):
    from hkgce.workload import WorkloadSpec, generate_queryset
    spec = WorkloadSpec(targets={"chain:2": 15, "chain:3": 15, "star:3": 15, "tree:4": 10,
                                 "petal:3": 10, "flower:3": 10}, seed=5)
    queries, _ = generate_queryset(community, spec)
    return queries


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
