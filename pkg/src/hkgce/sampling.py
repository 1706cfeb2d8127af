"""Random-walk (join sampling) cardinality estimator.

Each trial walks the query's fact patterns in a connected order, picks one
consistent fact per pattern uniformly at random and multiplies the running
weight by the number of candidates.  A step without candidates ends the trial
with weight 0, which is where the underestimation on selective, qualifier-
constrained queries comes from.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .exact import _Resolved, _local_assignments, _weight
from .query import Query, check, is_var
from .store import Hkg


def walk_plan(hkg: Hkg, query: Query) -> list[int]:
    """Greedy most-selective-first connected ordering of pattern indices."""
    resolved = [_Resolved(hkg, fp) for fp in query.patterns]
    size = [0 if rp.unknown else len(hkg.candidate_facts(rp.s, rp.p, rp.o)) for rp in resolved]
    remaining = set(range(len(query.patterns)))
    plan: list[int] = []
    covered: set[str] = set()
    while remaining:
        frontier = [i for i in remaining
                    if not plan or {query.patterns[i].s, query.patterns[i].o} & covered]
        # bound endpoints make a pattern joinable with nothing, so fall back
        if not frontier:
            frontier = list(remaining)
        nxt = min(frontier, key=lambda i: (size[i], i))
        plan.append(nxt)
        remaining.discard(nxt)
        fp = query.patterns[nxt]
        covered.update(t for t in (fp.s, fp.o) if is_var(t))
    return plan


class _Sampler:
    def __init__(self, hkg: Hkg, query: Query, dedup: bool = True):
        check(query)
        self.hkg = hkg
        self.query = query
        self.dedup = dedup
        self.plan = walk_plan(hkg, query)
        self.resolved = [_Resolved(hkg, fp) for fp in query.patterns]
        self.dead = any(rp.unknown for rp in self.resolved)
        self._cands: dict = {}
        self._weights: dict = {}

    def candidates(self, i: int, s: Optional[int], o: Optional[int]) -> list[int]:
        key = (i, s, o)
        hit = self._cands.get(key)
        if hit is None:
            rp = self.resolved[i]
            fp = self.query.patterns[i]
            s_fix = rp.s if rp.s is not None else s
            o_fix = rp.o if rp.o is not None else o
            facts = self.hkg.facts
            self_loop = is_var(fp.s) and fp.s == fp.o
            hit = [fid for fid in self.hkg.candidate_facts(s_fix, rp.p, o_fix)
                   if (not self_loop or facts[fid].subject == facts[fid].object)
                   and _local_assignments(facts[fid], rp)]
            self._cands[key] = hit
        return hit

    def correction(self, i: int, cands: list[int], s: int, o: int) -> float:
        """Assignment-level weight over parallel facts for the chosen endpoints."""
        key = (i, s, o)
        hit = self._weights.get(key)
        if hit is None:
            facts = self.hkg.facts
            parallel = sum(1 for fid in cands
                           if facts[fid].subject == s and facts[fid].object == o)
            hit = _weight(self.hkg, self.resolved[i], s, o) / parallel
            self._weights[key] = hit
        return hit

    def trial(self, rng: np.random.Generator) -> float:
        if self.dead:
            return 0.0
        binding: dict[str, int] = {}
        weight = 1.0
        facts = self.hkg.facts
        for i in self.plan:
            fp = self.query.patterns[i]
            s = binding.get(fp.s) if is_var(fp.s) else None
            o = binding.get(fp.o) if is_var(fp.o) else None
            cands = self.candidates(i, s, o)
            if not cands:
                return 0.0
            f = facts[cands[int(rng.integers(len(cands)))]]
            weight *= len(cands)
            if self.dedup:
                weight *= self.correction(i, cands, f.subject, f.object)
            if is_var(fp.s):
                binding[fp.s] = f.subject
            if is_var(fp.o):
                binding[fp.o] = f.object
        return weight


def sample_trials(
    hkg: Hkg, query: Query, n_samples: int, rng: np.random.Generator, dedup: bool = True
) -> np.ndarray:
    """Per-trial weights; their mean is the estimate."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    sampler = _Sampler(hkg, query, dedup=dedup)
    return np.array([sampler.trial(rng) for _ in range(n_samples)], dtype=np.float64)


def estimate_sampling(
    hkg: Hkg, query: Query, n_samples: int, rng: np.random.Generator, dedup: bool = True
) -> float:
    """Unbiased estimate of the assignment-level cardinality (fact-level if not ``dedup``)."""
    return float(sample_trials(hkg, query, n_samples, rng, dedup).mean())


def success_rate(hkg: Hkg, query: Query, n_samples: int, rng: np.random.Generator) -> float:
    return float((sample_trials(hkg, query, n_samples, rng) > 0).mean())
