"""Hyper-relational fact store.

Facts are ``(subject, predicate, object, qualifiers)`` where every atom is a
dense integer id interned from a string label.  The store is built once and
never mutated afterwards; all lookups go through the prebuilt indices.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

Qualifier = tuple[int, int]


class HkgFormatError(ValueError):
    """Raised when a fact file or snapshot cannot be parsed."""


class Fact(NamedTuple):
    subject: int
    predicate: int
    object: int
    qualifiers: tuple[Qualifier, ...] = ()


@dataclass(frozen=True)
class HkgStats:
    fact_count: int
    qualified_fraction: float
    entity_count: int
    relation_count: int


class Interner:
    """Bijection between labels and contiguous ids starting at 0."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.intern(label)

    def intern(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._ids[label] = idx
        return idx

    def get(self, label: str) -> Optional[int]:
        return self._ids.get(label)

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._ids


def _freeze(index: dict) -> dict:
    return {k: tuple(v) for k, v in index.items()}


class Hkg:
    """Immutable, fully indexed hyper-relational knowledge graph."""

    def __init__(self, entities: Interner, relations: Interner, facts: Sequence[Fact]):
        self._entities = entities
        self._relations = relations
        self._facts = tuple(facts)

        out_idx, in_idx = defaultdict(list), defaultdict(list)
        sp_idx, op_idx = defaultdict(list), defaultdict(list)
        so_idx, p_idx = defaultdict(list), defaultdict(list)
        cooc = defaultdict(set)
        vocab = set()
        for fid, f in enumerate(self._facts):
            out_idx[f.subject].append(fid)
            in_idx[f.object].append(fid)
            sp_idx[f.subject, f.predicate].append(fid)
            op_idx[f.object, f.predicate].append(fid)
            so_idx[f.subject, f.object].append(fid)
            p_idx[f.predicate].append(fid)
            for pair in f.qualifiers:
                vocab.add(pair)
                cooc[f.predicate].add(pair)

        self._out = _freeze(out_idx)
        self._in = _freeze(in_idx)
        self._sp = _freeze(sp_idx)
        self._op = _freeze(op_idx)
        self._so = _freeze(so_idx)
        self._p = _freeze(p_idx)
        self._qual_vocab = frozenset(vocab)
        self._cooc = {p: frozenset(v) for p, v in cooc.items()}

    # -- construction -----------------------------------------------------

    @classmethod
    def from_labeled(cls, rows: Iterable[Sequence[str]]) -> "Hkg":
        """Build from label rows ``(s, p, o, qr1, qe1, ...)``."""
        entities, relations = Interner(), Interner()
        facts = []
        for lineno, row in enumerate(rows, 1):
            facts.append(_intern_row(row, entities, relations, lineno))
        return cls(entities, relations, facts)

    # -- accessors --------------------------------------------------------

    @property
    def facts(self) -> tuple[Fact, ...]:
        return self._facts

    @property
    def entities(self) -> Interner:
        return self._entities

    @property
    def relations(self) -> Interner:
        return self._relations

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_relations(self) -> int:
        return len(self._relations)

    @property
    def qualifier_vocab(self) -> frozenset[Qualifier]:
        return self._qual_vocab

    def entity_id(self, label: str) -> Optional[int]:
        return self._entities.get(label)

    def relation_id(self, label: str) -> Optional[int]:
        return self._relations.get(label)

    def entity_label(self, idx: int) -> str:
        return self._entities.label(idx)

    def relation_label(self, idx: int) -> str:
        return self._relations.label(idx)

    def out_facts(self, s: int) -> tuple[int, ...]:
        return self._out.get(s, ())

    def in_facts(self, o: int) -> tuple[int, ...]:
        return self._in.get(o, ())

    def sp_facts(self, s: int, p: int) -> tuple[int, ...]:
        return self._sp.get((s, p), ())

    def op_facts(self, o: int, p: int) -> tuple[int, ...]:
        return self._op.get((o, p), ())

    def so_facts(self, s: int, o: int) -> tuple[int, ...]:
        return self._so.get((s, o), ())

    def predicate_facts(self, p: int) -> tuple[int, ...]:
        return self._p.get(p, ())

    def cooccurring_qualifiers(self, p: int) -> frozenset[Qualifier]:
        return self._cooc.get(p, frozenset())

    def candidate_facts(
        self, s: Optional[int] = None, p: Optional[int] = None, o: Optional[int] = None
    ) -> Sequence[int]:
        """Fact ids matching the fixed main-triple positions (most selective index)."""
        if s is not None and o is not None:
            ids = self.so_facts(s, o)
            if p is not None:
                ids = tuple(i for i in ids if self._facts[i].predicate == p)
            return ids
        if s is not None:
            return self.sp_facts(s, p) if p is not None else self.out_facts(s)
        if o is not None:
            return self.op_facts(o, p) if p is not None else self.in_facts(o)
        if p is not None:
            return self.predicate_facts(p)
        return range(len(self._facts))

    def index_snapshot(self) -> dict:
        """Logical view of every index, for round-trip comparisons."""
        return {
            "out": self._out, "in": self._in, "sp": self._sp, "op": self._op,
            "so": self._so, "p": self._p, "vocab": self._qual_vocab, "cooc": self._cooc,
        }

    def __len__(self) -> int:
        return len(self._facts)

    def __repr__(self) -> str:
        return (f"Hkg(facts={len(self._facts)}, entities={self.num_entities}, "
                f"relations={self.num_relations})")


def _intern_row(row: Sequence[str], entities: Interner, relations: Interner, lineno: int) -> Fact:
    if len(row) < 3:
        raise HkgFormatError(f"line {lineno}: expected at least 3 fields, got {len(row)}")
    if (len(row) - 3) % 2:
        raise HkgFormatError(f"line {lineno}: odd qualifier tail")
    if any(not tok for tok in row):
        raise HkgFormatError(f"line {lineno}: empty field")
    s = entities.intern(row[0])
    p = relations.intern(row[1])
    o = entities.intern(row[2])
    quals = []
    for i in range(3, len(row), 2):
        pair = (relations.intern(row[i]), entities.intern(row[i + 1]))
        if pair in quals:
            raise HkgFormatError(
                f"line {lineno}: duplicate qualifier pair ({row[i]}, {row[i + 1]})")
        quals.append(pair)
    return Fact(s, p, o, tuple(quals))


def parse_fact_lines(lines: Iterable[str]) -> Hkg:
    entities, relations = Interner(), Interner()
    facts = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        row = [tok.strip() for tok in line.split(",")]
        facts.append(_intern_row(row, entities, relations, lineno))
    return Hkg(entities, relations, facts)


def load_hkg(path: str | Path, format: str = "csv") -> Hkg:
    """Load a fact file (``s,p,o[,qr,qe]*`` per line) or a JSON snapshot."""
    path = Path(path)
    if format == "snapshot" or (format == "auto" and path.suffix == ".json"):
        return load_snapshot(path)
    if format not in ("csv", "auto"):
        raise ValueError(f"unknown fact file format {format!r}")
    with open(path, encoding="utf-8") as fh:
        return parse_fact_lines(fh)


def write_fact_lines(hkg: Hkg, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in hkg.facts:
            row = [hkg.entity_label(f.subject), hkg.relation_label(f.predicate),
                   hkg.entity_label(f.object)]
            for qr, qe in f.qualifiers:
                row += [hkg.relation_label(qr), hkg.entity_label(qe)]
            if any("," in tok for tok in row):
                raise HkgFormatError(f"label with a comma cannot be written: {row}")
            fh.write(",".join(row) + "\n")


def save_snapshot(hkg: Hkg, path: str | Path) -> None:
    doc = {
        "entities": list(hkg.entities.labels),
        "relations": list(hkg.relations.labels),
        "facts": [[f.subject, f.predicate, f.object, [list(q) for q in f.qualifiers]]
                  for f in hkg.facts],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_snapshot(path: str | Path) -> Hkg:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entities = Interner(doc["entities"])
        relations = Interner(doc["relations"])
        facts = [Fact(s, p, o, tuple((qr, qe) for qr, qe in quals))
                 for s, p, o, quals in doc["facts"]]
    except (KeyError, ValueError, TypeError) as exc:
        raise HkgFormatError(f"bad snapshot {path}: {exc}") from exc
    if len(entities) != len(doc["entities"]) or len(relations) != len(doc["relations"]):
        raise HkgFormatError(f"bad snapshot {path}: duplicate labels")
    return Hkg(entities, relations, facts)


def embed_qualifiers(
    required: Sequence[tuple[Optional[int], Optional[int]]],
    available: Sequence[Qualifier],
) -> Iterable[tuple[int, ...]]:
    """Yield every injective embedding of ``required`` into ``available``.

    ``None`` in a required pair is a wildcard.  Each embedding is the tuple of
    indices into ``available`` used by the required pairs, in order.
    """
    n = len(required)
    used = [False] * len(available)
    chosen: list[int] = []

    def rec(i):
        if i == n:
            yield tuple(chosen)
            return
        qr, qe = required[i]
        for j, (ar, ae) in enumerate(available):
            if used[j] or (qr is not None and qr != ar) or (qe is not None and qe != ae):
                continue
            used[j] = True
            chosen.append(j)
            yield from rec(i + 1)
            chosen.pop()
            used[j] = False

    return rec(0)


def qualifiers_admit(required, available) -> bool:
    if not required:
        return True
    if len(required) > len(available):
        return False
    return next(iter(embed_qualifiers(required, available)), None) is not None


def match_facts(
    hkg: Hkg,
    s: Optional[int] = None,
    p: Optional[int] = None,
    o: Optional[int] = None,
    required_quals: Sequence[tuple[int, Optional[int]]] = (),
) -> list[int]:
    """Fact ids whose fixed positions match and whose qualifiers embed ``required_quals``."""
    facts = hkg.facts
    return [fid for fid in hkg.candidate_facts(s, p, o)
            if qualifiers_admit(required_quals, facts[fid].qualifiers)]


def stats(hkg: Hkg) -> HkgStats:
    n = len(hkg)
    qualified = sum(1 for f in hkg.facts if f.qualifiers)
    return HkgStats(
        fact_count=n,
        qualified_fraction=qualified / n if n else 0.0,
        entity_count=hkg.num_entities,
        relation_count=hkg.num_relations,
    )
