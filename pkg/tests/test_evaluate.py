import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hkgce.evaluate import (GROUP_CRITERIA, constant_estimator, evaluate, geometric_mean_card,
                            group_key, hrqe_estimator, is_incomplete, q_error,
                            sampling_estimator)
from hkgce.hrqe import Hrqe, ModelConfig
from hkgce.query import FactPattern, Query

FP = FactPattern


def test_q_error_examples():
    assert q_error(100, 10) == 10.0
    assert q_error(10, 100) == 10.0
    assert q_error(7, 7) == 1.0
    for bad in [(0, 1), (1, 0), (-1, 5)]:
        with pytest.raises(ValueError):
            q_error(*bad)


@given(st.floats(1e-6, 1e12), st.floats(1e-6, 1e12))
def test_q_error_symmetric(a, b):
    assert q_error(a, b) == q_error(b, a) >= 1.0


def test_perfect_estimator(community, workload):
    report = evaluate(workload, lambda q: q.card, GROUP_CRITERIA, community)
    assert report.mean_q_error == 1.0
    assert all(row["mean_q_error"] == 1.0 for row in report.rows())


def test_group_counts_cover_queryset(community, workload):
    report = evaluate(workload, constant_estimator(10.0), GROUP_CRITERIA, community)
    for crit in GROUP_CRITERIA:
        assert sum(len(v) for v in report.groups[crit].values()) == len(workload)
    assert report.rows()[0] == {"group": "all", **report.summary()}


def test_estimates_floored_at_one(workload):
    report = evaluate(workload[:5], constant_estimator(0.0), ())
    assert np.all(report.estimates == 1.0)
    assert np.allclose(report.q_errors, [q.card for q in workload[:5]])


def test_unlabeled_query_rejected():
    with pytest.raises(ValueError):
        evaluate([Query("x", (FP("a", "p", "?o"),))], constant_estimator(1.0))


def test_csv_columns(tmp_path, community, workload):
    path = tmp_path / "r.csv"
    evaluate(workload, constant_estimator(5.0), ("pattern", "range"), community).to_csv(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["group", "n", "mean_q_error", "p50", "p95"]
    assert rows[0]["group"] == "all" and int(rows[0]["n"]) == len(workload)
    assert any(r["group"].startswith("range=") for r in rows)


def test_incomplete_flag(toy):
    assert is_incomplete(toy, Query("a", (FP("a", "p", "?o"),)))
    assert not is_incomplete(toy, Query("b", (FP("a", "p", "?o", (("t", "x"),)),)))
    assert not is_incomplete(toy, Query("c", (FP("a", "p", "c"),)))
    assert group_key(Query("c", (FP("a", "p", "c"),)), "incomplete", toy) == "exact"
    with pytest.raises(ValueError):
        group_key(Query("c", (FP("a", "p", "c"),)), "incomplete")
    with pytest.raises(ValueError):
        group_key(Query("c", (FP("a", "p", "c"),)), "colour")


def test_group_keys():
    query = Query("q", (FP("?x", "p", "b"), FP("?x", "q", "?y")), None, 4321)
    assert group_key(query, "pattern") == "chain"
    assert group_key(query, "size") == "2"
    assert group_key(query, "range") == "<1e4"
    assert group_key(query, "bounded") == "1"


def test_geometric_mean():
    qs = [Query(str(c), (FP("a", "p", "?o"),), None, c) for c in (1, 100)]
    assert geometric_mean_card(qs) == pytest.approx(10.0)


def test_sampling_estimator_is_seeded(community, workload):
    a = [sampling_estimator(community, 30, seed=1)(q) for q in workload[:5]]
    b = [sampling_estimator(community, 30, seed=1)(q) for q in workload[:5]]
    assert a == b


def test_hrqe_estimator_matches_model(workload):
    model = Hrqe.init(ModelConfig(dim=4, lam=0.0, mlp_hidden=4, decoder_hidden=4),
                      np.random.default_rng(0))
    est = hrqe_estimator(model, workload[:6])
    assert [est(q) for q in workload[:6]] == [model.estimate(q) for q in workload[:6]]
    lazy = hrqe_estimator(model)
    assert lazy(workload[7]) == model.estimate(workload[7])
