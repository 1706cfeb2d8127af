"""Tightened and relaxed query variants for the ranking hinges.

Only edits whose effect on the assignment count is one-sided are produced:

* tighten: attach a bound qualifier pair to a pattern, or attach a new
  fully bound pattern from an existing node to a constant entity;
* relax: drop a fully bound qualifier pair, or drop a leaf pattern whose leaf
  is a constant and which has no relation/qualifier variables.

Edits that add or remove a variable (a pendant edge to a fresh variable, a
qualifier with a variable entity) can move the count either way, because the
removed variable's bindings are counted as separate assignments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .query import FactPattern, Query, Skeleton, classify_pattern, is_var, validate
from .store import Hkg


def _rebuild(query: Query, patterns, tag: str) -> Optional[Query]:
    q = Query(f"{query.id}{tag}", tuple(patterns), None, None)
    if validate(q):
        return None
    return replace(q, pattern=classify_pattern(q))


def _add_qualifier(query: Query, hkg: Hkg, rng: np.random.Generator) -> Optional[Query]:
    j = int(rng.integers(query.size))
    fp = query.patterns[j]
    pool = None
    if not is_var(fp.p):
        pid = hkg.relation_id(fp.p)
        if pid is not None:
            pool = hkg.cooccurring_qualifiers(pid)
    if not pool:
        pool = hkg.qualifier_vocab
    if not pool:
        return None
    present = set(fp.quals)
    choices = sorted((hkg.relation_label(r), hkg.entity_label(e)) for r, e in pool)
    choices = [c for c in choices if c not in present]
    if not choices:
        return None
    pair = choices[int(rng.integers(len(choices)))]
    patterns = list(query.patterns)
    patterns[j] = FactPattern(fp.s, fp.p, fp.o, fp.quals + (pair,))
    return _rebuild(query, patterns, "+q")


def _add_edge(query: Query, hkg: Hkg, rng: np.random.Generator) -> Optional[Query]:
    nodes = query.nodes()
    node = nodes[int(rng.integers(len(nodes)))]
    ent = None if is_var(node) else hkg.entity_id(node)
    if ent is not None:
        pool = hkg.out_facts(ent) + hkg.in_facts(ent)
        if not pool:
            return None
        f = hkg.facts[pool[int(rng.integers(len(pool)))]]
        outward = f.subject == ent
    else:
        if not len(hkg):
            return None
        f = hkg.facts[int(rng.integers(len(hkg)))]
        outward = bool(rng.random() < 0.5)
    p = hkg.relation_label(f.predicate)
    if outward:
        new = FactPattern(node, p, hkg.entity_label(f.object))
    else:
        new = FactPattern(hkg.entity_label(f.subject), p, node)
    return _rebuild(query, query.patterns + (new,), "+e")


def augment_add(query: Query, hkg: Hkg, rng: np.random.Generator, count: int = 2,
                max_tries: int = 20) -> list[Query]:
    """Up to ``count`` distinct tightened variants (edit type picked uniformly)."""
    out: list[Query] = []
    seen = set()
    tries = 0
    while len(out) < count and tries < max_tries * max(count, 1):
        tries += 1
        edit = _add_qualifier if rng.random() < 0.5 else _add_edge
        v = edit(query, hkg, rng)
        if v is None or v.patterns in seen:
            continue
        seen.add(v.patterns)
        out.append(replace(v, id=f"{query.id}+add{len(out)}"))
    return out


def removable_edits(query: Query) -> list[tuple[str, int, int]]:
    """("qual", pattern, index) and ("edge", pattern, -1) edits that only relax."""
    edits = []
    for j, fp in enumerate(query.patterns):
        for m, (qr, qe) in enumerate(fp.quals):
            if not is_var(qr) and not is_var(qe):
                edits.append(("qual", j, m))
    if query.size >= 2:
        sk = Skeleton.of(query)
        for j, fp in enumerate(query.patterns):
            if fp.local_variables() or fp.s == fp.o:
                continue
            for end in (fp.s, fp.o):
                if not is_var(end) and sk.degree(end) == 1:
                    edits.append(("edge", j, -1))
                    break
    return edits


def apply_removal(query: Query, edit: tuple[str, int, int]) -> Optional[Query]:
    kind, j, m = edit
    patterns = list(query.patterns)
    if kind == "qual":
        fp = patterns[j]
        patterns[j] = FactPattern(fp.s, fp.p, fp.o, fp.quals[:m] + fp.quals[m + 1:])
        return _rebuild(query, patterns, "-q")
    del patterns[j]
    return _rebuild(query, patterns, "-e")


def augment_remove(query: Query, rng: np.random.Generator, count: int = 2) -> list[Query]:
    """Up to ``count`` distinct relaxed variants, one edit each."""
    if count <= 0:
        return []
    edits = removable_edits(query)
    order = rng.permutation(len(edits)) if edits else []
    out: list[Query] = []
    seen = set()
    for i in order:
        v = apply_removal(query, edits[int(i)])
        if v is None or v.patterns in seen:
            continue
        seen.add(v.patterns)
        out.append(replace(v, id=f"{query.id}-rm{len(out)}"))
        if len(out) == count:
            break
    return out


@dataclass(frozen=True)
class AugmentedExample:
    query: Query
    target: float
    adds: tuple[Query, ...]
    removes: tuple[Query, ...]


def augment_queryset(queries, hkg: Hkg, rng: np.random.Generator,
                     n_add: int = 2, n_remove: int = 2) -> list[AugmentedExample]:
    out = []
    for q in queries:
        if q.card is None or q.card < 1:
            raise ValueError(f"query {q.id!r} needs a cardinality >= 1")
        out.append(AugmentedExample(
            q, float(np.log(q.card)),
            tuple(augment_add(q, hkg, rng, n_add)),
            tuple(augment_remove(q, rng, n_remove)),
        ))
    return out
