"""Seeded synthetic hyper-relational graphs for tests and desk-scale benchmarks."""

from __future__ import annotations

import numpy as np

from .store import Hkg


def random_hkg(
    rng: np.random.Generator,
    n_entities: int = 12,
    n_facts: int = 40,
    n_relations: int = 3,
    n_qual_relations: int = 2,
    n_qual_values: int = 3,
    qual_prob: float = 0.5,
    max_quals: int = 2,
) -> Hkg:
    """Small uniform random store, dense enough that random queries match."""
    rows = []
    for _ in range(n_facts):
        s = int(rng.integers(n_entities))
        o = int(rng.integers(n_entities))
        row = [f"e{s}", f"r{rng.integers(n_relations)}", f"e{o}"]
        if rng.random() < qual_prob:
            k = int(rng.integers(1, max_quals + 1))
            pairs = set()
            for _ in range(k):
                pairs.add((f"q{rng.integers(n_qual_relations)}", f"v{rng.integers(n_qual_values)}"))
            for qr, qe in sorted(pairs):
                row += [qr, qe]
        rows.append(row)
    return Hkg.from_labeled(rows)


def community_hkg(
    seed: int = 0,
    n_facts: int = 1000,
    n_entities: int = 300,
    n_relations: int = 12,
    n_communities: int = 12,
    n_qual_relations: int = 5,
    n_qual_values: int = 24,
    reciprocal_prob: float = 0.15,
    n_preferred_values: int = 4,
    preferred_value_prob: float = 0.75,
) -> Hkg:
    """Skewed, clustered store with predicate-correlated qualifiers.

    Entities are split into communities so that short cycles exist; subject
    popularity is Zipf-like; each relation carries its own qualifier rate and
    a preferred set of ``n_preferred_values`` qualifier values, drawn with
    probability ``preferred_value_prob``.  Raising that probability and
    shrinking the set makes qualifiers more predictable from the predicate.
    """
    rng = np.random.default_rng(seed)
    community = rng.integers(n_communities, size=n_entities)
    members = [np.flatnonzero(community == c) for c in range(n_communities)]
    popularity = 1.0 / np.arange(1, n_entities + 1) ** 0.8
    popularity = popularity[rng.permutation(n_entities)]
    rel_weight = rng.dirichlet(np.full(n_relations, 0.8))
    qual_rate = rng.uniform(0.0, 0.9, size=n_relations)
    qual_pref = [rng.choice(n_qual_values, size=n_preferred_values, replace=False)
                 for _ in range(n_relations)]
    qual_rel_pref = [rng.choice(n_qual_relations, size=2, replace=False) for _ in range(n_relations)]

    rows: list[list[str]] = []
    seen = set()

    def emit(s, p, o):
        key = (s, p, o)
        if key in seen:
            return
        seen.add(key)
        row = [f"e{s}", f"r{p}", f"e{o}"]
        if rng.random() < qual_rate[p]:
            k = 1 + int(rng.random() < 0.4) + int(rng.random() < 0.15)
            used = set()
            for _ in range(k):
                qr = int(rng.choice(qual_rel_pref[p])) if rng.random() < 0.8 else int(rng.integers(n_qual_relations))
                if rng.random() < preferred_value_prob:
                    qe = int(rng.choice(qual_pref[p]))
                else:
                    qe = int(rng.integers(n_qual_values))
                if (qr, qe) not in used:
                    used.add((qr, qe))
                    row += [f"qr{qr}", f"v{qe}"]
        rows.append(row)

    prob = popularity / popularity.sum()
    while len(rows) < n_facts:
        s = int(rng.choice(n_entities, p=prob))
        p = int(rng.choice(n_relations, p=rel_weight))
        if rng.random() < 0.8:
            pool = members[community[s]]
            o = int(pool[rng.integers(len(pool))])
        else:
            o = int(rng.choice(n_entities, p=prob))
        if o == s:
            continue
        emit(s, p, o)
        if rng.random() < reciprocal_prob and len(rows) < n_facts:
            emit(o, int(rng.choice(n_relations, p=rel_weight)), s)
    return Hkg.from_labeled(rows[:n_facts])
