"""Exact cardinality of conjunctive hyper-relational queries.

Cardinality is the number of distinct assignments of *all* query variables
(node, predicate and qualifier variables) such that every fact pattern is
satisfied by at least one fact.  Parallel facts that induce the same
assignment are counted once.

Two independent engines are provided:

* :func:`exact_cardinality` -- post-order dynamic program over the query
  skeleton.  Leaf tables are seeded with 1, child tables are pushed to the
  parent through the per-edge match weights, and branches meeting at a join
  node are merged by key intersection and product.  A single cycle is broken
  by replicating one cycle node into a pinned copy and summing over the
  candidates for that node.
* :func:`brute_force_cardinality` -- backtracking over fact choices with an
  explicit set of complete assignments.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Optional

from .query import FactPattern, Query, is_var, validate
from .store import Hkg, embed_qualifiers


class UnsupportedQuery(ValueError):
    """Query outside the DP contract (several cycles, shared local variables)."""


class EnumerationBudgetExceeded(RuntimeError):
    pass


# -- per-pattern matching ---------------------------------------------------------

class _Resolved:
    """A fact pattern with bound labels resolved to store ids."""

    __slots__ = ("s", "p", "o", "quals", "unknown", "has_local")

    def __init__(self, hkg: Hkg, fp: FactPattern):
        self.unknown = False
        self.s = self._ent(hkg, fp.s)
        self.o = self._ent(hkg, fp.o)
        self.p = self._rel(hkg, fp.p)
        self.quals = tuple((self._rel(hkg, qr), self._ent(hkg, qe)) for qr, qe in fp.quals)
        self.has_local = is_var(fp.p) or any(is_var(a) or is_var(b) for a, b in fp.quals)

    def _ent(self, hkg, term):
        if is_var(term):
            return None
        idx = hkg.entity_id(term)
        if idx is None:
            self.unknown = True
        return idx

    def _rel(self, hkg, term):
        if is_var(term):
            return None
        idx = hkg.relation_id(term)
        if idx is None:
            self.unknown = True
        return idx


def _local_assignments(fact, rp: _Resolved) -> set[tuple]:
    """Distinct (predicate var, qualifier vars...) bindings a fact admits."""
    if rp.p is not None and fact.predicate != rp.p:
        return set()
    pred = (fact.predicate,) if rp.p is None else ()
    if not rp.quals:
        return {pred}
    out = set()
    for emb in embed_qualifiers(rp.quals, fact.qualifiers):
        vals = list(pred)
        for (qr, qe), j in zip(rp.quals, emb):
            ar, ae = fact.qualifiers[j]
            if qr is None:
                vals.append(ar)
            if qe is None:
                vals.append(ae)
        out.add(tuple(vals))
    return out


def per_edge_match_weight(hkg: Hkg, pattern: FactPattern, s: int, o: int) -> int:
    """Number of distinct local-variable assignments satisfiable by a fact s -> o."""
    rp = _Resolved(hkg, pattern)
    if rp.unknown:
        return 0
    return _weight(hkg, rp, s, o)


def _weight(hkg: Hkg, rp: _Resolved, s: int, o: int) -> int:
    facts = hkg.facts
    if not rp.has_local:
        for fid in hkg.so_facts(s, o):
            if _local_assignments(facts[fid], rp):
                return 1
        return 0
    seen = set()
    for fid in hkg.so_facts(s, o):
        seen |= _local_assignments(facts[fid], rp)
    return len(seen)


def _edge_relation(hkg: Hkg, rp: _Resolved) -> dict[tuple[int, int], int]:
    """All endpoint pairs (s, o) with nonzero weight for a pattern."""
    facts = hkg.facts
    pairs = {}
    for fid in hkg.candidate_facts(rp.s, rp.p, rp.o):
        f = facts[fid]
        key = (f.subject, f.object)
        if key in pairs:
            continue
        if _local_assignments(f, rp):
            pairs[key] = _weight(hkg, rp, f.subject, f.object)
    return pairs


# -- dynamic program -----------------------------------------------------------------

class _Edge:
    __slots__ = ("u", "v", "by_u", "by_v")

    def __init__(self, u, v, rel: dict):
        self.u, self.v = u, v
        self.by_u: dict[int, dict[int, int]] = defaultdict(dict)
        self.by_v: dict[int, dict[int, int]] = defaultdict(dict)
        for (a, b), w in rel.items():
            self.by_u[a][b] = w
            self.by_v[b][a] = w

    def side(self, node):
        """Index keyed by ``node``'s entity -> {other entity: weight}."""
        return self.by_u if node == self.u else self.by_v


def _merge(tables: list[dict]) -> dict:
    tables = sorted(tables, key=len)
    acc = dict(tables[0])
    for t in tables[1:]:
        acc = {k: c * t[k] for k, c in acc.items() if k in t}
        if not acc:
            break
    return acc


def _count_tree(nodes, edges: list[_Edge], adj, root, domain: dict) -> int:
    """Post-order DP over a tree-shaped component; ``domain`` pins nodes."""
    parent_edge = {root: None}
    order = []
    stack = [root]
    while stack:
        u = stack.pop()
        order.append(u)
        for ei in adj[u]:
            if ei == parent_edge[u]:
                continue
            e = edges[ei]
            w = e.v if e.u == u else e.u
            parent_edge[w] = ei
            stack.append(w)

    tables: dict = {}
    for u in reversed(order):
        incoming = []
        for ei in adj[u]:
            if ei == parent_edge[u]:
                continue
            e = edges[ei]
            child = e.v if e.u == u else e.u
            incoming.append(_push(e, child, tables.pop(child)))
        if u in domain:
            pinned = {domain[u]: 1}
            incoming.append(pinned)
        tables[u] = _merge(incoming) if incoming else None
    root_table = tables[root]
    if root_table is None:
        raise AssertionError("isolated node in query skeleton")
    return sum(root_table.values())


def _push(edge: _Edge, child, table: Optional[dict]) -> dict:
    """Transition a child table across ``edge`` to the parent's entities."""
    out: dict[int, int] = defaultdict(int)
    index = edge.side(child)
    if table is None:
        for _, row in index.items():
            for parent_ent, w in row.items():
                out[parent_ent] += w
    else:
        for ent, count in table.items():
            row = index.get(ent)
            if not row:
                continue
            for parent_ent, w in row.items():
                out[parent_ent] += w * count
    return out


def exact_cardinality(hkg: Hkg, query: Query) -> int:
    errors = validate(query)
    if errors:
        raise UnsupportedQuery("; ".join(errors))
    resolved = [_Resolved(hkg, fp) for fp in query.patterns]
    if any(rp.unknown for rp in resolved):
        return 0

    # Every occurrence of a bound node becomes its own pinned node; it is
    # fixed anyway, and splitting it removes spurious joins through constants.
    node_ids: dict = {}
    domain: dict = {}
    ends = []
    for i, fp in enumerate(query.patterns):
        pair = []
        for pos, term in (("s", fp.s), ("o", fp.o)):
            if is_var(term):
                key = term
            else:
                key = (i, pos)
                domain[key] = hkg.entity_id(term)
            node_ids.setdefault(key, len(node_ids))
            pair.append(key)
        ends.append(tuple(pair))

    rels = [_edge_relation(hkg, rp) for rp in resolved]
    if any(not r for r in rels):
        return 0

    adj = defaultdict(list)
    for i, (a, b) in enumerate(ends):
        adj[a].append(i)
        if b != a:
            adj[b].append(i)

    total = 1
    for comp_nodes, comp_edges in _components(node_ids, ends, adj):
        total *= _count_component(comp_nodes, comp_edges, ends, rels, adj, domain)
        if total == 0:
            return 0
    return total


def _components(node_ids, ends, adj):
    seen = set()
    for start in node_ids:
        if start in seen:
            continue
        nodes, edges = [], set()
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            nodes.append(u)
            for ei in adj[u]:
                edges.add(ei)
                for w in ends[ei]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
        yield nodes, sorted(edges)


def _count_component(nodes, edge_ids, ends, rels, adj, domain) -> int:
    n_cycles = len(edge_ids) - len(nodes) + 1
    if n_cycles > 1:
        raise UnsupportedQuery(f"component has {n_cycles} cycles")

    if n_cycles == 0:
        local = {ei: k for k, ei in enumerate(edge_ids)}
        edges = [_Edge(*ends[ei], rels[ei]) for ei in edge_ids]
        ladj = {u: [local[ei] for ei in adj[u]] for u in nodes}
        root = next((u for u in nodes if u in domain), nodes[0])
        return _count_tree(nodes, edges, ladj, root, domain)

    # Break the cycle: cut one cycle edge at cycle node c, re-attach it to a
    # replica c' and pin c = c' = v for each candidate v.
    cut, c = _cycle_edge(nodes, edge_ids, ends, adj)
    replica = ("replica", c)
    a, b = ends[cut]
    new_end = (a, replica) if b == c else (replica, b)
    local_ends = {ei: ends[ei] for ei in edge_ids}
    local_ends[cut] = new_end
    local = {ei: k for k, ei in enumerate(edge_ids)}
    edges = [_Edge(*local_ends[ei], rels[ei]) for ei in edge_ids]
    ladj = defaultdict(list)
    for ei in edge_ids:
        u, v = local_ends[ei]
        ladj[u].append(local[ei])
        if v != u:
            ladj[v].append(local[ei])
    all_nodes = list(nodes) + [replica]

    if c in domain:
        candidates = [domain[c]]
    else:
        cut_edge = edges[local[cut]]
        candidates = sorted(cut_edge.side(replica))
    total = 0
    for v in candidates:
        pinned = dict(domain)
        pinned[c] = v
        pinned[replica] = v
        total += _count_tree(all_nodes, edges, ladj, c, pinned)
    return total


def _cycle_edge(nodes, edge_ids, ends, adj):
    """Return (edge on the cycle, one of its endpoints that lies on the cycle)."""
    # peel leaves; remaining edges form the cycle
    deg = {u: 0 for u in nodes}
    for ei in edge_ids:
        a, b = ends[ei]
        deg[a] += 1
        deg[b] += 1
    alive_edges = set(edge_ids)
    stack = [u for u in nodes if deg[u] == 1]
    while stack:
        u = stack.pop()
        for ei in adj[u]:
            if ei in alive_edges:
                alive_edges.discard(ei)
                for w in ends[ei]:
                    deg[w] -= 1
                    if w != u and deg[w] == 1:
                        stack.append(w)
    # bound nodes are split per occurrence, so every cycle node is a variable
    cut = min(alive_edges)
    return cut, ends[cut][0]


# -- brute force oracle -------------------------------------------------------------

def brute_force_cardinality(
    hkg: Hkg, query: Query, budget: int = 5_000_000, semantics: str = "assignment"
) -> int:
    """Enumerate matches fact by fact and count distinct full assignments.

    Supports shared predicate/qualifier variables and any number of cycles.
    ``semantics="fact"`` counts tuples of (fact, qualifier embedding) choices
    instead, for comparison only.
    """
    if not query.patterns:
        return 0
    facts = hkg.facts
    patterns = query.patterns
    steps = [0]
    results: set = set()
    fact_level = [0]

    variables: list[str] = []
    for fp in patterns:
        for t in (fp.s, fp.p, fp.o, *(x for q in fp.quals for x in q)):
            if is_var(t) and t not in variables:
                variables.append(t)

    def fixed(term, binding, kind):
        """Id a position is fixed to, or None when still free."""
        if is_var(term):
            cur = binding.get(term)
            return cur[1] if cur is not None and cur[0] == kind else None
        idx = hkg.entity_id(term) if kind == "e" else hkg.relation_id(term)
        return -1 if idx is None else idx

    def unify(term, value, binding, kind, trail) -> bool:
        if is_var(term):
            cur = binding.get(term)
            if cur is None:
                binding[term] = (kind, value)
                trail.append(term)
                return True
            return cur == (kind, value)
        idx = hkg.entity_id(term) if kind == "e" else hkg.relation_id(term)
        return idx == value

    def rec(i, binding):
        steps[0] += 1
        if steps[0] > budget:
            raise EnumerationBudgetExceeded(f"more than {budget} search steps")
        if i == len(patterns):
            results.add(tuple(binding[v] for v in variables))
            fact_level[0] += 1
            return
        fp = patterns[i]
        s_id, p_id, o_id = fixed(fp.s, binding, "e"), fixed(fp.p, binding, "r"), fixed(fp.o, binding, "e")
        for fid in hkg.candidate_facts(s_id, p_id, o_id):
            f = facts[fid]
            trail: list[str] = []
            ok = (unify(fp.s, f.subject, binding, "e", trail)
                  and unify(fp.p, f.predicate, binding, "r", trail)
                  and unify(fp.o, f.object, binding, "e", trail))
            if ok:
                _embed_all(fp, f, 0, [False] * len(f.qualifiers), binding, unify,
                           lambda b: rec(i + 1, b))
            for t in trail:
                del binding[t]

    rec(0, {})
    return fact_level[0] if semantics == "fact" else len(results)


def _embed_all(fp, fact, j, used, binding, unify, cont):
    if j == len(fp.quals):
        cont(binding)
        return
    qr, qe = fp.quals[j]
    for k, (ar, ae) in enumerate(fact.qualifiers):
        if used[k]:
            continue
        trail: list[str] = []
        if unify(qr, ar, binding, "r", trail) and unify(qe, ae, binding, "e", trail):
            used[k] = True
            _embed_all(fp, fact, j + 1, used, binding, unify, cont)
            used[k] = False
        for t in trail:
            del binding[t]
