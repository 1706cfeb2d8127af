"""Conjunctive hyper-relational queries.

Terms are plain strings: a term starting with ``?`` is a variable, anything
else is a bound label resolved against a store at evaluation time.
"""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional


class QueryFormatError(ValueError):
    pass


class InvalidQuery(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class PatternClass(str, enum.Enum):
    CHAIN = "chain"
    TREE = "tree"
    STAR = "star"
    PETAL = "petal"
    FLOWER = "flower"


def is_var(term: str) -> bool:
    return term.startswith("?")


@dataclass(frozen=True)
class FactPattern:
    s: str
    p: str
    o: str
    quals: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "quals", tuple(tuple(q) for q in self.quals))

    def local_variables(self) -> list[str]:
        out = [self.p] if is_var(self.p) else []
        for qr, qe in self.quals:
            out.extend(t for t in (qr, qe) if is_var(t))
        return out


@dataclass(frozen=True)
class Query:
    id: str
    patterns: tuple[FactPattern, ...]
    pattern: Optional[PatternClass] = None
    card: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if self.pattern is not None and not isinstance(self.pattern, PatternClass):
            object.__setattr__(self, "pattern", PatternClass(self.pattern))

    @property
    def size(self) -> int:
        return len(self.patterns)

    def nodes(self) -> list[str]:
        """Distinct skeleton nodes in first-appearance order."""
        seen = {}
        for fp in self.patterns:
            seen.setdefault(fp.s, None)
            seen.setdefault(fp.o, None)
        return list(seen)

    def node_variables(self) -> list[str]:
        return [n for n in self.nodes() if is_var(n)]

    def bound_nodes(self) -> list[str]:
        return [n for n in self.nodes() if not is_var(n)]

    def with_card(self, card: Optional[int]) -> "Query":
        return replace(self, card=card)


# -- skeleton analysis --------------------------------------------------------

@dataclass
class Skeleton:
    nodes: list[str]
    edges: list[tuple[str, str]]  # one per pattern, (subject, object)
    adj: dict[str, list[int]] = field(default_factory=dict)

    @classmethod
    def of(cls, query: Query) -> "Skeleton":
        sk = cls(query.nodes(), [(fp.s, fp.o) for fp in query.patterns])
        sk.adj = {n: [] for n in sk.nodes}
        for i, (a, b) in enumerate(sk.edges):
            sk.adj[a].append(i)
            if b != a:
                sk.adj[b].append(i)
        return sk

    def other(self, edge: int, node: str) -> str:
        a, b = self.edges[edge]
        return b if a == node else a

    def components(self) -> int:
        seen = set()
        count = 0
        for start in self.nodes:
            if start in seen:
                continue
            count += 1
            stack = [start]
            seen.add(start)
            while stack:
                u = stack.pop()
                for e in self.adj[u]:
                    v = self.other(e, u)
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
        return count

    def cycle_rank(self) -> int:
        return len(self.edges) - len(self.nodes) + self.components()

    def degree(self, node: str) -> int:
        return sum(2 if self.edges[e][0] == self.edges[e][1] else 1 for e in self.adj[node])

    def cycle_nodes(self) -> set[str]:
        """Nodes lying on a cycle (2-core after peeling leaves)."""
        deg = {n: self.degree(n) for n in self.nodes}
        alive = set(self.nodes)
        stack = [n for n in self.nodes if deg[n] <= 1]
        while stack:
            u = stack.pop()
            if u not in alive:
                continue
            alive.discard(u)
            for e in self.adj[u]:
                v = self.other(e, u)
                if v in alive:
                    deg[v] -= 1
                    if deg[v] <= 1:
                        stack.append(v)
        return alive


def validate(query: Query) -> list[str]:
    """Return a list of invariant violations; empty means valid."""
    errors = []
    if not query.patterns:
        return ["query has no fact patterns"]
    sk = Skeleton.of(query)
    if sk.components() > 1:
        errors.append("disconnected")
    elif sk.cycle_rank() > 1:
        errors.append(f"more than one cycle ({sk.cycle_rank()})")

    node_vars = set(query.node_variables())
    seen_local = set()
    for i, fp in enumerate(query.patterns):
        for v in fp.local_variables():
            if v in node_vars:
                errors.append(f"variable {v} used both as node and as relation/qualifier")
            elif v in seen_local:
                errors.append(f"relation/qualifier variable {v} is shared (pattern {i})")
            seen_local.add(v)
    for fp in query.patterns:
        for term in (fp.s, fp.p, fp.o, *(t for q in fp.quals for t in q)):
            if not term or term == "?":
                errors.append("empty term")
    return errors


def check(query: Query) -> None:
    errors = validate(query)
    if errors:
        raise InvalidQuery(errors)


def classify_pattern(query: Query) -> PatternClass:
    errors = [e for e in validate(query) if e == "disconnected" or "cycle" in e
              or "no fact patterns" in e]
    if errors:
        raise InvalidQuery(errors)
    sk = Skeleton.of(query)
    if sk.cycle_rank() == 1:
        on_cycle = sk.cycle_nodes()
        return PatternClass.PETAL if len(on_cycle) == len(sk.nodes) else PatternClass.FLOWER
    degrees = {n: sk.degree(n) for n in sk.nodes}
    hubs = [n for n, d in degrees.items() if d >= 3]
    if not hubs:
        return PatternClass.CHAIN
    if len(hubs) == 1 and all(hubs[0] in sk.edges[e] for e in range(len(sk.edges))):
        return PatternClass.STAR
    return PatternClass.TREE


# -- canonical ordering ---------------------------------------------------------

def _term_sig(term: str) -> tuple:
    return ("v",) if is_var(term) else ("c", term)


def _edge_sig(fp: FactPattern) -> tuple:
    return (_term_sig(fp.p), tuple(sorted((_term_sig(a), _term_sig(b)) for a, b in fp.quals)))


def _refine_colors(query: Query, sk: Skeleton) -> dict[str, int]:
    colors = {n: _term_sig(n) for n in sk.nodes}
    ranks = _rank(colors)
    for _ in range(len(sk.nodes)):
        sigs = {}
        for n in sk.nodes:
            nb = []
            for e in sk.adj[n]:
                fp = query.patterns[e]
                if fp.s == fp.o:
                    nb.append((2, _edge_sig(fp), ranks[n]))
                    continue
                direction = 0 if fp.s == n else 1
                nb.append((direction, _edge_sig(fp), ranks[sk.other(e, n)]))
            sigs[n] = (ranks[n], tuple(sorted(nb)))
        new = _rank(sigs)
        if len(set(new.values())) == len(set(ranks.values())):
            ranks = new
            break
        ranks = new
    return ranks


def _rank(sigs: dict) -> dict:
    order = {s: i for i, s in enumerate(sorted(set(sigs.values())))}
    return {n: order[s] for n, s in sigs.items()}


def canonical_traversal(query: Query) -> tuple[list[str], list[int]]:
    """Canonical pre-order of skeleton nodes and of patterns.

    The order depends only on structure and bound labels, so it is stable
    under variable renaming and pattern reordering (up to automorphism).
    """
    sk = Skeleton.of(query)
    colors = _refine_colors(query, sk)

    def edge_key(e, n):
        fp = query.patterns[e]
        direction = 2 if fp.s == fp.o else (0 if fp.s == n else 1)
        return (direction, _edge_sig(fp), colors[sk.other(e, n)])

    node_order: list[str] = []
    edge_order: list[int] = []
    seen_nodes, seen_edges = set(), set()
    roots = sorted(sk.nodes, key=lambda n: (colors[n], ))
    for root in roots:
        if root in seen_nodes:
            continue
        stack = [root]
        while stack:
            u = stack.pop()
            if u in seen_nodes:
                continue
            seen_nodes.add(u)
            node_order.append(u)
            children = []
            for e in sorted(sk.adj[u], key=lambda e: edge_key(e, u)):
                if e in seen_edges:
                    continue
                seen_edges.add(e)
                edge_order.append(e)
                v = sk.other(e, u)
                if v not in seen_nodes:
                    children.append(v)
            stack.extend(reversed(children))
    return node_order, edge_order


def variable_order(query: Query) -> list[str]:
    """All variables (node, relation, qualifier) in canonical pre-order."""
    node_order, edge_order = canonical_traversal(query)
    out: list[str] = []
    seen = set()

    def emit(t):
        if is_var(t) and t not in seen:
            seen.add(t)
            out.append(t)

    # interleave: a node's variable, then the variables of its newly traversed edges
    edges_by_first = defaultdict(list)
    placed = set()
    pos = {n: i for i, n in enumerate(node_order)}
    for e in edge_order:
        fp = query.patterns[e]
        first = min((fp.s, fp.o), key=lambda n: pos[n])
        edges_by_first[first].append(e)
    for n in node_order:
        emit(n)
        for e in edges_by_first[n]:
            if e in placed:
                continue
            placed.add(e)
            fp = query.patterns[e]
            emit(fp.p)
            for qr, qe in sorted(fp.quals, key=lambda q: (_term_sig(q[0]), _term_sig(q[1]))):
                emit(qr)
                emit(qe)
    return out


def canonical_key(query: Query) -> str:
    """String key identical for queries equal up to renaming/reordering."""
    names = {v: f"?{i}" for i, v in enumerate(variable_order(query))}
    ren = lambda t: names.get(t, t)  # noqa: E731
    rows = []
    for fp in query.patterns:
        quals = sorted((ren(a), ren(b)) for a, b in fp.quals)
        rows.append((ren(fp.s), ren(fp.p), ren(fp.o), tuple(quals)))
    return json.dumps(sorted(rows))


# -- (de)serialization ------------------------------------------------------------

_FIELDS = {"id", "pattern", "facts", "card"}
_FACT_FIELDS = {"s", "p", "o", "quals"}


def to_dict(query: Query) -> dict:
    return {
        "id": query.id,
        "pattern": query.pattern.value if query.pattern else None,
        "facts": [{"s": fp.s, "p": fp.p, "o": fp.o, "quals": [list(q) for q in fp.quals]}
                  for fp in query.patterns],
        "card": query.card,
    }


def from_dict(doc: dict) -> Query:
    if not isinstance(doc, dict):
        raise QueryFormatError("query must be a JSON object")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise QueryFormatError(f"unknown field(s): {sorted(unknown)}")
    if "facts" not in doc:
        raise QueryFormatError("missing field 'facts'")
    patterns = []
    for f in doc["facts"]:
        if not isinstance(f, dict):
            raise QueryFormatError("fact pattern must be an object")
        bad = set(f) - _FACT_FIELDS
        if bad:
            raise QueryFormatError(f"unknown fact field(s): {sorted(bad)}")
        try:
            quals = tuple((str(a), str(b)) for a, b in f.get("quals", []))
            patterns.append(FactPattern(str(f["s"]), str(f["p"]), str(f["o"]), quals))
        except (KeyError, ValueError, TypeError) as exc:
            raise QueryFormatError(f"bad fact pattern {f!r}: {exc}") from exc
    pattern = doc.get("pattern")
    card = doc.get("card")
    try:
        pattern = PatternClass(pattern) if pattern is not None else None
    except ValueError as exc:
        raise QueryFormatError(str(exc)) from exc
    if card is not None and (not isinstance(card, int) or isinstance(card, bool) or card < 0):
        raise QueryFormatError(f"card must be a non-negative integer, got {card!r}")
    return Query(str(doc.get("id", "")), tuple(patterns), pattern, card)


def serialize(query: Query) -> str:
    return json.dumps(to_dict(query), separators=(",", ":"))


def deserialize(line: str) -> Query:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise QueryFormatError(f"malformed JSON: {exc}") from exc
    return from_dict(doc)


def read_queryset(path) -> list[Query]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(deserialize(line))
            except QueryFormatError as exc:
                raise QueryFormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_queryset(path, queries: Iterable[Query]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(serialize(q) + "\n")
