"""Randomized HKG/query instances shared by the oracle tests."""

import numpy as np

from hkgce.query import FactPattern, Query, is_var, validate
from hkgce.synthetic import random_hkg
from hkgce.workload import GenerationExhausted, WorkloadSpec, builtin_templates, generate_query

SMALL = [t for t in builtin_templates() if t.fact_size <= 4]


def perturb(query, hkg, rng):
    """Swap a few constants for random labels so some queries have no match."""
    ents = list(hkg.entities.labels)
    rels = list(hkg.relations.labels)
    pats = []
    for fp in query.patterns:
        s, p, o = fp.s, fp.p, fp.o
        if not is_var(p) and rng.random() < 0.15:
            p = rels[int(rng.integers(len(rels)))]
        quals = []
        for qr, qe in fp.quals:
            if not is_var(qe) and rng.random() < 0.15:
                qe = ents[int(rng.integers(len(ents)))]
            quals.append((qr, qe))
        if rng.random() < 0.2 and hkg.qualifier_vocab:
            r, e = sorted(hkg.qualifier_vocab)[int(rng.integers(len(hkg.qualifier_vocab)))]
            quals.append((hkg.relation_label(r), "?w" if rng.random() < 0.5 else hkg.entity_label(e)))
        pats.append(FactPattern(s, p, o, tuple(quals)))
    out = Query(query.id, tuple(pats), query.pattern)
    # a fresh "?w" reused across patterns would become a shared local variable
    if sum("?w" in (qe for _, qe in fp.quals) for fp in pats) > 1 or validate(out):
        return query
    return out


def random_instance(seed):
    """One (hkg, query) pair: <=30 entities, <=80 facts, <=4 query edges."""
    rng = np.random.default_rng(seed)
    spec = WorkloadSpec(qualifier_prob=0.6, var_qualifier_prob=0.3, var_predicate_prob=0.2,
                        bound_prob=0.3)
    template = SMALL[seed % len(SMALL)]
    while True:
        hkg = random_hkg(rng, n_entities=int(rng.integers(6, 28)),  # + up to 3 qualifier values
                         n_facts=int(rng.integers(20, 81)), n_relations=int(rng.integers(1, 4)),
                         qual_prob=0.6)
        try:
            query = generate_query(hkg, template, rng, spec, query_id=f"r{seed}")
            break
        except GenerationExhausted:
            continue
    if rng.random() < 0.4:
        query = perturb(query, hkg, rng)
    return hkg, query, template
