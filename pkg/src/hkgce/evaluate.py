"""q-error, grouped evaluation reports and the estimator adapters they consume."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .query import Query, classify_pattern, is_var
from .sampling import estimate_sampling
from .store import Hkg, match_facts
from .workload import RANGE_BUCKETS, cardinality_range

GROUP_CRITERIA = ("pattern", "size", "range", "bounded", "incomplete")

Estimator = Callable[[Query], float]


def q_error(true: float, est: float) -> float:
    if true <= 0 or est <= 0:
        raise ValueError(f"q-error needs positive inputs, got true={true}, est={est}")
    return max(true / est, est / true)


def is_incomplete(hkg: Hkg, query: Query) -> bool:
    """True if some pattern matches a fact that carries qualifiers it does not ask for."""
    for fp in query.patterns:
        s = None if is_var(fp.s) else hkg.entity_id(fp.s)
        o = None if is_var(fp.o) else hkg.entity_id(fp.o)
        p = None if is_var(fp.p) else hkg.relation_id(fp.p)
        if (s is None and not is_var(fp.s)) or (o is None and not is_var(fp.o)) \
                or (p is None and not is_var(fp.p)):
            continue
        required = []
        for qr, qe in fp.quals:
            if is_var(qr):
                continue
            rid = hkg.relation_id(qr)
            eid = None if is_var(qe) else hkg.entity_id(qe)
            if rid is None or (eid is None and not is_var(qe)):
                break
            required.append((rid, eid))
        else:
            for fid in match_facts(hkg, s, p, o, required):
                if len(hkg.facts[fid].qualifiers) > len(fp.quals):
                    return True
    return False


def group_key(query: Query, criterion: str, hkg: Optional[Hkg] = None) -> str:
    if criterion == "pattern":
        return (query.pattern or classify_pattern(query)).value
    if criterion == "size":
        return str(query.size)
    if criterion == "range":
        return cardinality_range(query.card)
    if criterion == "bounded":
        return str(len(query.bound_nodes()))
    if criterion == "incomplete":
        if hkg is None:
            raise ValueError("grouping by incomplete needs the store")
        return "incomplete" if is_incomplete(hkg, query) else "exact"
    raise ValueError(f"unknown group criterion {criterion!r}")


def _sort_key(criterion: str, key: str):
    if criterion in ("size", "bounded"):
        return (int(key), key)
    if criterion == "range":
        return (RANGE_BUCKETS.index(key), key)
    return (0, key)


@dataclass
class EvalReport:
    ids: list[str]
    true: np.ndarray
    estimates: np.ndarray
    q_errors: np.ndarray
    groups: dict[str, dict[str, list[int]]] = field(default_factory=dict)

    @property
    def mean_q_error(self) -> float:
        return float(self.q_errors.mean()) if len(self.q_errors) else float("nan")

    def summary(self, idx: Optional[Sequence[int]] = None) -> dict:
        qe = self.q_errors if idx is None else self.q_errors[list(idx)]
        if not len(qe):
            return {"n": 0, "mean_q_error": float("nan"), "p50": float("nan"), "p95": float("nan")}
        return {"n": int(len(qe)), "mean_q_error": float(qe.mean()),
                "p50": float(np.percentile(qe, 50)), "p95": float(np.percentile(qe, 95))}

    def rows(self) -> list[dict]:
        out = [{"group": "all", **self.summary()}]
        for crit, buckets in self.groups.items():
            for key in sorted(buckets, key=lambda k: _sort_key(crit, k)):
                out.append({"group": f"{crit}={key}", **self.summary(buckets[key])})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["group", "n", "mean_q_error", "p50", "p95"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def evaluate(
    queries: Sequence[Query],
    estimator: Estimator,
    group_by: Sequence[str] = ("pattern",),
    hkg: Optional[Hkg] = None,
) -> EvalReport:
    """Estimates are floored at 1 before the q-error is taken."""
    for q in queries:
        if q.card is None or q.card < 1:
            raise ValueError(f"query {q.id!r} needs a cardinality >= 1")
    est = np.array([max(1.0, float(estimator(q))) for q in queries])
    true = np.array([float(q.card) for q in queries])
    qe = np.array([q_error(t, e) for t, e in zip(true, est)])
    groups: dict[str, dict[str, list[int]]] = {}
    for crit in group_by:
        buckets: dict[str, list[int]] = {}
        for i, q in enumerate(queries):
            buckets.setdefault(group_key(q, crit, hkg), []).append(i)
        groups[crit] = buckets
    return EvalReport([q.id for q in queries], true, est, qe, groups)


# -- estimator adapters --------------------------------------------------------------

def sampling_estimator(hkg: Hkg, n_samples: int = 100, seed: int = 0) -> Estimator:
    """Random walks with one generator shared across calls, in call order."""
    rng = np.random.default_rng(seed)
    return lambda q: estimate_sampling(hkg, q, n_samples, rng)


def constant_estimator(value: float) -> Estimator:
    return lambda q: value


def geometric_mean_card(queries: Sequence[Query]) -> float:
    return float(np.exp(np.mean([np.log(q.card) for q in queries])))


def hrqe_estimator(model, queries: Optional[Sequence[Query]] = None) -> Estimator:
    """Model estimate (rounded, floored at 1); batches ``queries`` up front if given."""
    from .hrqe import estimate_from_log

    cache = {}
    if queries:
        for q, v in zip(queries, model.predict_log_many(list(queries))):
            cache[q.with_card(None)] = estimate_from_log(float(v))

    def run(q: Query) -> float:
        key = q.with_card(None)
        if key not in cache:
            cache[key] = model.estimate(q)
        return cache[key]

    return run
