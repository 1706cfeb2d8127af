"""Labeled query workloads generated from templates by witness walks.

A template is an undirected skeleton with a root.  Generation samples a
witness entity for the root and walks the skeleton in pre-order, sampling one
incident fact per template edge.  The sampled facts are turned into fact
patterns whose slots are either kept as the witness constants (bound) or
replaced by fresh variables, so each query has at least one match.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exact import UnsupportedQuery, brute_force_cardinality, exact_cardinality
from .query import FactPattern, PatternClass, Query, canonical_key
from .store import Hkg

RANGE_BUCKETS = ("<1e3", "<1e4", "<1e5", ">=1e5")


class GenerationExhausted(RuntimeError):
    pass


def cardinality_range(card: int) -> str:
    if card < 10**3:
        return "<1e3"
    if card < 10**4:
        return "<1e4"
    if card < 10**5:
        return "<1e5"
    return ">=1e5"


@dataclass(frozen=True)
class Template:
    name: str
    pattern: PatternClass
    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    root: int = 0
    # per node slot: "auto" follows the bounded-node policy, else "bound"/"var"
    node_slots: Optional[tuple[str, ...]] = None

    @property
    def fact_size(self) -> int:
        return len(self.edges)

    def traversal(self) -> tuple[list[tuple[int, int, int]], list[int]]:
        """Pre-order tree edges as (edge, parent, child) plus the closing edges."""
        adj: dict[int, list[int]] = {n: [] for n in range(self.n_nodes)}
        for i, (a, b) in enumerate(self.edges):
            adj[a].append(i)
            if b != a:
                adj[b].append(i)
        seen = {self.root}
        used = set()
        tree = []
        stack = [self.root]
        while stack:
            u = stack.pop()
            children = []
            for ei in adj[u]:
                if ei in used:
                    continue
                a, b = self.edges[ei]
                v = b if a == u else a
                if v in seen:
                    continue
                used.add(ei)
                seen.add(v)
                tree.append((ei, u, v))
                children.append(v)
            stack.extend(reversed(children))
        closing = [i for i in range(len(self.edges)) if i not in used]
        return tree, closing


def _path(n):
    return tuple((i, i + 1) for i in range(n))


def _star(n):
    return tuple((0, i + 1) for i in range(n))


def _cycle(n):
    if n == 2:
        return ((0, 1), (0, 1))
    return tuple((i, (i + 1) % n) for i in range(n))


def _attach_chains(base, n_nodes, lengths, anchors):
    edges = list(base)
    nxt = n_nodes
    for length, anchor in zip(lengths, anchors):
        prev = anchor
        for _ in range(length):
            edges.append((prev, nxt))
            prev = nxt
            nxt += 1
    return tuple(edges), nxt


def builtin_templates() -> list[Template]:
    out = []
    for n in (1, 2, 3, 6, 9, 12):
        out.append(Template(f"chain{n}", PatternClass.CHAIN, n + 1, _path(n)))
    for n in (3, 6, 9, 12):
        out.append(Template(f"star{n}", PatternClass.STAR, n + 1, _star(n)))
    # trees: a hub with legs of different lengths, or two hubs joined
    tree_shapes = {
        4: ((0, 1), (1, 2), (1, 3), (0, 4)),
        6: ((0, 1), (1, 2), (1, 3), (0, 4), (4, 5), (4, 6)),
        9: ((0, 1), (1, 2), (1, 3), (0, 4), (4, 5), (4, 6), (0, 7), (7, 8), (8, 9)),
        12: ((0, 1), (1, 2), (1, 3), (0, 4), (4, 5), (4, 6), (0, 7), (7, 8), (8, 9),
             (2, 10), (10, 11), (5, 12)),
    }
    for n, edges in tree_shapes.items():
        out.append(Template(f"tree{n}", PatternClass.TREE, n + 1, edges))
    for n in (2, 3, 4, 6):
        out.append(Template(f"petal{n}", PatternClass.PETAL, n, _cycle(n)))
    flower_shapes = {
        3: (2, (1,), (0,)),
        6: (3, (3,), (0,)),
        9: (3, (3, 3), (0, 1)),
        12: (3, (3, 3, 3), (0, 1, 2)),
    }
    for n, (cyc, lengths, anchors) in flower_shapes.items():
        edges, n_nodes = _attach_chains(_cycle(cyc), cyc, lengths, anchors)
        out.append(Template(f"flower{n}", PatternClass.FLOWER, n_nodes, edges))
    return out


@dataclass
class WorkloadSpec:
    targets: dict[str, int] = field(default_factory=dict)  # "chain:3" -> count
    qualifier_prob: float = 0.5
    var_qualifier_prob: float = 0.2
    var_predicate_prob: float = 0.05
    bound_prob: float = 0.5
    range_targets: dict[str, int] = field(default_factory=dict)
    max_retries: int = 50
    attempts_per_query: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("qualifier_prob", "var_qualifier_prob", "var_predicate_prob", "bound_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for key, count in {**self.targets, **self.range_targets}.items():
            if count < 0:
                raise ValueError(f"negative target count for {key}")
        for key in self.targets:
            _parse_target(key)
        bad = set(self.range_targets) - set(RANGE_BUCKETS)
        if bad:
            raise ValueError(f"unknown cardinality ranges {sorted(bad)}")

    @classmethod
    def from_json(cls, path) -> "WorkloadSpec":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**doc)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")


def _parse_target(key: str) -> tuple[PatternClass, int]:
    try:
        name, size = key.split(":")
        return PatternClass(name), int(size)
    except ValueError as exc:
        raise ValueError(f"bad target key {key!r}; expected '<pattern>:<size>'") from exc


# -- single query -------------------------------------------------------------------

def _incident(hkg: Hkg, ent: int) -> list[int]:
    return list(hkg.out_facts(ent)) + [f for f in hkg.in_facts(ent)
                                       if hkg.facts[f].subject != ent]


def _other(fact, ent):
    return fact.object if fact.subject == ent else fact.subject


def _connected(hkg: Hkg, a: int, b: int, exclude: set) -> list[int]:
    facts = list(hkg.so_facts(a, b))
    if a != b:
        facts += list(hkg.so_facts(b, a))
    return [f for f in facts if f not in exclude]


def _walk(hkg: Hkg, template: Template, rng: np.random.Generator):
    """One witness walk; returns (node -> entity, edge -> fact id) or None."""
    tree, closing = template.traversal()
    # the later-assigned endpoint of each closing edge must be able to close it
    order = [template.root] + [child for _, _, child in tree]
    rank = {n: i for i, n in enumerate(order)}
    close_at: dict[int, list[int]] = {}
    for ei in closing:
        a, b = template.edges[ei]
        close_at.setdefault(max(a, b, key=rank.get), []).append(ei)

    active = [e for e in range(hkg.num_entities) if hkg.out_facts(e) or hkg.in_facts(e)]
    if not active:
        return None
    witness = {template.root: active[int(rng.integers(len(active)))]}
    chosen: dict[int, int] = {}
    if template.root in close_at:
        return None  # self-loop closing edges at the root are not generated

    for ei, parent, child in tree:
        cands = _incident(hkg, witness[parent])
        if child in close_at:
            ok = []
            for fid in cands:
                x = _other(hkg.facts[fid], witness[parent])
                used = set(chosen.values()) | {fid}
                if all(_connected(hkg, x, witness[_partner(template, c, child)], used)
                       for c in close_at[child]):
                    ok.append(fid)
            cands = ok
        if not cands:
            return None
        fid = cands[int(rng.integers(len(cands)))]
        chosen[ei] = fid
        witness[child] = _other(hkg.facts[fid], witness[parent])

    for ei in closing:
        a, b = template.edges[ei]
        cands = _connected(hkg, witness[a], witness[b], set(chosen.values()))
        if not cands:
            return None
        chosen[ei] = cands[int(rng.integers(len(cands)))]
    return witness, chosen


def _partner(template: Template, edge: int, node: int) -> int:
    a, b = template.edges[edge]
    return b if a == node else a


def generate_query(
    hkg: Hkg,
    template: Template,
    rng: np.random.Generator,
    spec: Optional[WorkloadSpec] = None,
    query_id: str = "",
) -> Query:
    spec = spec or WorkloadSpec()
    if len(hkg) == 0:
        raise GenerationExhausted("store is empty")
    for _ in range(spec.max_retries):
        walked = _walk(hkg, template, rng)
        if walked is not None:
            return _instantiate(hkg, template, rng, spec, *walked, query_id=query_id)
    raise GenerationExhausted(f"template {template.name}: no witness after {spec.max_retries} tries")


def _instantiate(hkg, template, rng, spec, witness, chosen, query_id) -> Query:
    terms: dict[int, str] = {}
    bound_entities = set()
    for node in range(template.n_nodes):
        slot = template.node_slots[node] if template.node_slots else "auto"
        bound = slot == "bound" or (slot == "auto" and rng.random() < spec.bound_prob)
        ent = witness[node]
        # two template nodes bound to one entity would merge in the skeleton
        if bound and ent not in bound_entities:
            bound_entities.add(ent)
            terms[node] = hkg.entity_label(ent)
        else:
            terms[node] = f"?v{node}"

    patterns = []
    for ei, (a, b) in enumerate(template.edges):
        f = hkg.facts[chosen[ei]]
        wa = witness[a]
        # orientation follows the sampled fact
        if f.subject == wa and f.object == witness[b]:
            s_node, o_node = a, b
        else:
            s_node, o_node = b, a
        p = f"?p{ei}" if rng.random() < spec.var_predicate_prob else hkg.relation_label(f.predicate)
        quals = []
        for k, (qr, qe) in enumerate(f.qualifiers):
            if rng.random() < spec.qualifier_prob:
                qe_term = (f"?q{ei}_{k}" if rng.random() < spec.var_qualifier_prob
                           else hkg.entity_label(qe))
                quals.append((hkg.relation_label(qr), qe_term))
        patterns.append(FactPattern(terms[s_node], p, terms[o_node], tuple(quals)))
    return Query(query_id, tuple(patterns), template.pattern)


# -- query sets --------------------------------------------------------------------

@dataclass
class StratificationReport:
    targets: dict[str, int]
    achieved: dict[str, int]
    ranges: dict[str, int]
    sizes: dict[str, int]
    patterns: dict[str, int]
    bounded: dict[str, int]
    exhausted: list[str]

    def rows(self):
        for key, n in sorted(self.targets.items()):
            yield ("target", key, n, self.achieved.get(key, 0))
        for dim, table in (("pattern", self.patterns), ("size", self.sizes),
                           ("range", self.ranges), ("bounded", self.bounded)):
            for key, n in sorted(table.items()):
                yield (dim, key, "", n)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dimension", "group", "target", "achieved"])
            w.writerows(self.rows())


def label_cardinality(hkg: Hkg, query: Query) -> int:
    try:
        return exact_cardinality(hkg, query)
    except UnsupportedQuery:
        return brute_force_cardinality(hkg, query)


def generate_queryset(
    hkg: Hkg, spec: WorkloadSpec, rng: Optional[np.random.Generator] = None,
    templates: Optional[list[Template]] = None,
) -> tuple[list[Query], StratificationReport]:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    templates = templates if templates is not None else builtin_templates()
    by_shape: dict[tuple, list[Template]] = {}
    for t in templates:
        by_shape.setdefault((t.pattern, t.fact_size), []).append(t)

    range_left = dict(spec.range_targets)
    seen_keys = set()
    queries: list[Query] = []
    achieved: Counter = Counter()
    exhausted = []

    for key in sorted(spec.targets):
        want = spec.targets[key]
        if want == 0:
            continue
        shape = _parse_target(key)
        pool = by_shape.get(shape)
        if not pool:
            exhausted.append(key)
            continue
        attempts = 0
        while achieved[key] < want and attempts < want * spec.attempts_per_query:
            attempts += 1
            template = pool[int(rng.integers(len(pool)))]
            qid = f"{shape[0].value}-{shape[1]}-{achieved[key]}"
            try:
                q = generate_query(hkg, template, rng, spec, query_id=qid)
            except GenerationExhausted:
                continue
            ck = canonical_key(q)
            if ck in seen_keys:
                continue
            card = label_cardinality(hkg, q)
            bucket = cardinality_range(card)
            if range_left:
                if range_left.get(bucket, 0) <= 0:
                    continue
                range_left[bucket] -= 1
            seen_keys.add(ck)
            queries.append(q.with_card(card))
            achieved[key] += 1
        if achieved[key] < want:
            exhausted.append(key)

    report = StratificationReport(
        targets=dict(spec.targets),
        achieved=dict(achieved),
        ranges=dict(Counter(cardinality_range(q.card) for q in queries)),
        sizes=dict(Counter(str(q.size) for q in queries)),
        patterns=dict(Counter(q.pattern.value for q in queries)),
        bounded=dict(Counter("0" if not q.bound_nodes() else ">0" for q in queries)),
        exhausted=exhausted,
    )
    return queries, report
