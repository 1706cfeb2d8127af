"""Qualifier-aware GNN query encoder with a log-cardinality decoder.

A query becomes a small graph: one row per skeleton node, one per fact pattern
(its relation) and one per qualifier pair.  Each layer

* composes every qualifier pair by rotation, sums them per pattern and
  projects with ``W_qual``,
* optionally blends that with the CVAE completion (weight ``lam``),
* adds the result to the pattern's relation embedding,
* sends ``relu(W_e [h_o ; gamma ; h_s])`` to both endpoints of the pattern,
* updates nodes with a GIN-style MLP and relation/qualifier rows with
  ``relu(W h)``.

Node states of layers 1..L are merged with a per-dimension gate, summed over
the query's nodes and decoded to ``ln(card)``.  Many queries are batched as
one disjoint graph, so a training step costs a fixed number of array ops.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .cvae import Cvae, CvaeConfig
from .embeddings import EmbeddingTable, variable_vector
from .query import Query, check, is_var, variable_order

GATES = ("sigmoid", "relu")
MAX_LOG = 700.0


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    layers: int = 2
    lam: float = 0.5
    mlp_hidden: int = 32
    decoder_hidden: int = 32
    gate: str = "sigmoid"
    embedding_seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2:
            raise ValueError("dim must be positive and even")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.gate not in GATES:
            raise ValueError(f"gate must be one of {GATES}")


# -- query graphs ---------------------------------------------------------------------

@dataclass
class QueryGraph:
    """Layer-0 arrays for one query."""
    nodes: np.ndarray        # (N, d)
    relations: np.ndarray    # (P, d)
    subj: np.ndarray         # (P,) node index
    obj: np.ndarray          # (P,)
    qual_rel: np.ndarray     # (Q, d)
    qual_ent: np.ndarray     # (Q, d)
    qual_pattern: np.ndarray  # (Q,) pattern index


@dataclass
class GraphBatch:
    nodes: np.ndarray
    relations: np.ndarray
    subj: np.ndarray
    obj: np.ndarray
    qual_rel: np.ndarray
    qual_ent: np.ndarray
    qual_pattern: np.ndarray
    node_graph: np.ndarray
    n_graphs: int

    @classmethod
    def of(cls, graphs: Sequence[QueryGraph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty batch")
        n_off = np.cumsum([0] + [g.nodes.shape[0] for g in graphs])
        p_off = np.cumsum([0] + [g.relations.shape[0] for g in graphs])
        cat = np.concatenate
        return cls(
            nodes=cat([g.nodes for g in graphs]),
            relations=cat([g.relations for g in graphs]),
            subj=cat([g.subj + n_off[i] for i, g in enumerate(graphs)]),
            obj=cat([g.obj + n_off[i] for i, g in enumerate(graphs)]),
            qual_rel=cat([g.qual_rel for g in graphs]),
            qual_ent=cat([g.qual_ent for g in graphs]),
            qual_pattern=cat([g.qual_pattern + p_off[i] for i, g in enumerate(graphs)]),
            node_graph=cat([np.full(g.nodes.shape[0], i) for i, g in enumerate(graphs)]),
            n_graphs=len(graphs),
        )


def init_query_embeddings(query: Query, table: EmbeddingTable) -> QueryGraph:
    """Bound atoms copy table rows; variables get canonical-ID vectors."""
    d = table.dim
    var_index = {v: i for i, v in enumerate(variable_order(query))}

    def atom(term: str, qualifier: bool = False) -> np.ndarray:
        if is_var(term):
            return variable_vector(var_index[term], d, qualifier)
        return table.lookup(term)

    nodes = query.nodes()
    pos = {n: i for i, n in enumerate(nodes)}
    qr, qe, qp = [], [], []
    for j, fp in enumerate(query.patterns):
        for r, e in fp.quals:
            qr.append(atom(r, True))
            qe.append(atom(e, True))
            qp.append(j)
    empty = np.zeros((0, d))
    return QueryGraph(
        nodes=np.stack([atom(n) for n in nodes]),
        relations=np.stack([atom(fp.p) for fp in query.patterns]),
        subj=np.array([pos[fp.s] for fp in query.patterns], dtype=np.int64),
        obj=np.array([pos[fp.o] for fp in query.patterns], dtype=np.int64),
        qual_rel=np.stack(qr) if qr else empty,
        qual_ent=np.stack(qe) if qe else empty,
        qual_pattern=np.array(qp, dtype=np.int64),
    )


# -- model pieces ----------------------------------------------------------------------

def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    d = config.dim
    p = ParamStore()
    for k in range(config.layers):
        p.add(f"L{k}.W_qual", ad.glorot(rng, d, d))
        p.add(f"L{k}.W_e", ad.glorot(rng, d, 3 * d))
        p.add(f"L{k}.W_r", ad.glorot(rng, d, d))
        p.add(f"L{k}.W_qr", ad.glorot(rng, d, d))
        p.add(f"L{k}.W_qe", ad.glorot(rng, d, d))
        ad.init_mlp(p, f"L{k}.m", [d, config.mlp_hidden, d], rng)
    p.add("gate.w", rng.normal(0.0, 0.1, size=d))
    ad.init_mlp(p, "dec", [d, config.decoder_hidden, 1], rng)
    return p


def rotate_compose(h_qr, h_qe) -> Tensor:
    return ad.rotate(h_qr, h_qe)


def aggregate_qualifiers(qual_rel, qual_ent, qual_pattern: np.ndarray, n_patterns: int,
                         w_qual) -> Tensor:
    """``W_qual · Σ rotate(h_qr, h_qe)`` per pattern; zero rows where none."""
    zeta = rotate_compose(qual_rel, qual_ent)
    summed = ad.segment_sum(zeta, qual_pattern, n_patterns)
    return ad.linear(summed, w_qual)


def blend_qualifier(h_tilde: Tensor, x: Optional[Tensor], cvae: Optional[Cvae], lam: float,
                    cvae_params: Optional[ParamStore] = None) -> Tensor:
    """``(1-lam)·h_tilde + lam·ĥ``; with ``lam == 0`` the completer is not touched."""
    if lam == 0.0:
        return h_tilde
    if cvae is None:
        raise ValueError("lam > 0 needs a CVAE")
    h_hat = cvae.complete(x, params=cvae_params)
    if lam == 1.0:
        return h_hat
    return ad.add(ad.mul(h_tilde, 1.0 - lam), ad.mul(h_hat, lam))


def message_passing_layer(state: dict, params: ParamStore, k: int, batch: GraphBatch,
                          config: ModelConfig, cvae: Optional[Cvae] = None,
                          cvae_params: Optional[ParamStore] = None) -> dict:
    """Advance node, relation and qualifier rows from layer ``k`` to ``k+1``."""
    H, R, QR, QE = state["nodes"], state["relations"], state["qual_rel"], state["qual_ent"]
    n_nodes, n_pat = batch.nodes.shape[0], batch.relations.shape[0]
    pre = f"L{k}."
    h_tilde = aggregate_qualifiers(QR, QE, batch.qual_pattern, n_pat, params[pre + "W_qual"])
    hs = ad.take_rows(H, batch.subj)
    ho = ad.take_rows(H, batch.obj)
    x = None
    if config.lam > 0.0:
        parts = [hs, R, ho, h_tilde]
        if cvae is not None and cvae.config.layer_feature:
            parts.append(np.full((n_pat, 1), float(k)))
        x = ad.concat(parts, axis=-1)
    h_qf = blend_qualifier(h_tilde, x, cvae, config.lam, cvae_params)
    gamma = ad.add(R, h_qf)
    msg = ad.relu(ad.linear(ad.concat([ho, gamma, hs], axis=-1), params[pre + "W_e"]))
    incoming = ad.add(ad.segment_sum(msg, batch.obj, n_nodes), ad.segment_sum(msg, batch.subj, n_nodes))
    return {
        "nodes": ad.mlp_forward(params, pre + "m", ad.add(H, incoming)),
        "relations": ad.relu(ad.linear(R, params[pre + "W_r"])),
        "qual_rel": ad.relu(ad.linear(QR, params[pre + "W_qr"])),
        "qual_ent": ad.relu(ad.linear(QE, params[pre + "W_qe"])),
    }


def combine_layers(layer_nodes: Sequence[Tensor], w, gate: str = "sigmoid") -> Tensor:
    """``Σ_k gate(w ⊙ h^(k)) ⊙ h^(k)`` over the given layers (1..L)."""
    act = ad.sigmoid if gate == "sigmoid" else ad.relu
    out = None
    for h in layer_nodes:
        term = ad.mul(act(ad.mul(h, w)), h)
        out = term if out is None else ad.add(out, term)
    return out


def forward(batch: GraphBatch, params: ParamStore, config: ModelConfig,
            cvae: Optional[Cvae] = None, cvae_params: Optional[ParamStore] = None) -> Tensor:
    """Predicted ln(card) for every graph in the batch, shape (G,)."""
    state = {"nodes": ad.Tensor(batch.nodes), "relations": ad.Tensor(batch.relations),
             "qual_rel": ad.Tensor(batch.qual_rel), "qual_ent": ad.Tensor(batch.qual_ent)}
    layers = []
    for k in range(config.layers):
        state = message_passing_layer(state, params, k, batch, config, cvae, cvae_params)
        layers.append(state["nodes"])
    final = combine_layers(layers, params["gate.w"], config.gate)
    pooled = ad.segment_sum(final, batch.node_graph, batch.n_graphs)
    return ad.sum(ad.mlp_forward(params, "dec", pooled), axis=1)


def estimate_from_log(value: float) -> int:
    return max(1, int(round(float(np.exp(min(value, MAX_LOG))))))


# -- model wrapper -----------------------------------------------------------------------

class Hrqe:
    def __init__(self, config: ModelConfig, params: ParamStore,
                 table: Optional[EmbeddingTable] = None, cvae: Optional[Cvae] = None):
        self.config = config
        self.params = params
        self.table = table if table is not None else EmbeddingTable(config.dim, seed=config.embedding_seed)
        if self.table.dim != config.dim:
            raise ValueError(f"embedding dim {self.table.dim} != model dim {config.dim}")
        if cvae is not None and cvae.config.dim != config.dim:
            raise ValueError("CVAE dim does not match model dim")
        self.cvae = cvae
        # completer is pretrained and frozen here
        self._cvae_params = cvae.params.frozen() if cvae is not None else None
        self._graphs: dict[Query, QueryGraph] = {}

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator,
             table: Optional[EmbeddingTable] = None, cvae: Optional[Cvae] = None) -> "Hrqe":
        return cls(config, init_params(config, rng), table, cvae)

    def graph(self, query: Query) -> QueryGraph:
        key = query.with_card(None)
        g = self._graphs.get(key)
        if g is None:
            check(query)
            g = init_query_embeddings(query, self.table)
            self._graphs[key] = g
        return g

    def batch(self, queries: Sequence[Query]) -> GraphBatch:
        return GraphBatch.of([self.graph(q) for q in queries])

    def forward(self, queries: Sequence[Query], params: Optional[ParamStore] = None) -> Tensor:
        return forward(self.batch(queries), self.params if params is None else params, self.config,
                       self.cvae, self._cvae_params)

    def predict_log_cardinality(self, query: Query) -> float:
        return self.forward([query]).data[0].item()

    def predict_log_many(self, queries: Sequence[Query], chunk: int = 256) -> np.ndarray:
        out = [self.forward(queries[i:i + chunk]).data for i in range(0, len(queries), chunk)]
        return np.concatenate(out) if out else np.zeros(0)

    def estimate(self, query: Query) -> int:
        return estimate_from_log(self.predict_log_cardinality(query))

    def save(self, path, embeddings_path: Optional[str] = None) -> None:
        """``embeddings_path`` records where a loaded table came from, for ``load``."""
        tensors = dict(self.params.state_dict())
        meta = {"kind": "hrqe", "config": asdict(self.config), "embeddings": embeddings_path}
        if self.cvae is not None:
            tensors.update({f"cvae/{n}": a for n, a in self.cvae.params.state_dict().items()})
            meta["cvae_config"] = asdict(self.cvae.config)
        ad.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path, table: Optional[EmbeddingTable] = None) -> "Hrqe":
        tensors, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "hrqe":
            raise ValueError(f"{path} is not an HRQE checkpoint")
        params, cvae_params = ParamStore(), ParamStore()
        params.load_state_dict({n: a for n, a in tensors.items() if not n.startswith("cvae/")})
        cvae = None
        if "cvae_config" in meta:
            cvae_params.load_state_dict({n[5:]: a for n, a in tensors.items() if n.startswith("cvae/")})
            cvae = Cvae(CvaeConfig(**meta["cvae_config"]), cvae_params)
        config = ModelConfig(**meta["config"])
        if table is None and meta.get("embeddings"):
            table = EmbeddingTable.from_word2vec(meta["embeddings"], seed=config.embedding_seed,
                                                 fallback=True)
        return cls(config, params, table, cvae)
