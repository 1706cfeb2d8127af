import numpy as np
import pytest

from hkgce import autodiff as ad
from hkgce.autodiff import ParamStore, Tensor, grad_check
from hkgce.cvae import Cvae, CvaeConfig
from hkgce.embeddings import EmbeddingTable, MissingEmbedding, variable_vector
from hkgce.hrqe import (GraphBatch, Hrqe, ModelConfig, aggregate_qualifiers, blend_qualifier,
                        combine_layers, estimate_from_log, forward, init_query_embeddings,
                        message_passing_layer, rotate_compose)
from hkgce.query import FactPattern, InvalidQuery, Query

from reference import reference_forward

FP = FactPattern
CHAIN2 = Query("c2", (FP("?a", "p", "?b", (("t", "x"),)), FP("?b", "q", "c")))
THREE = Query("t3", (FP("?a", "p", "?b", (("t", "x"), ("u", "?v"))),
                     FP("?b", "q", "?c"), FP("?d", "r", "?b", (("t", "y"),))))


def model(rng, d=4, layers=2, lam=0.5, gate="sigmoid", cvae=True):
    config = ModelConfig(dim=d, layers=layers, lam=lam, mlp_hidden=6, decoder_hidden=5, gate=gate)
    c = Cvae.init(CvaeConfig(dim=d, latent=2, hidden=6), rng) if cvae else None
    return Hrqe.init(config, rng, EmbeddingTable(d, seed=3), c)


def arrays(store):
    return {n: t.data for n, t in store.items()}


def test_variable_vectors():
    assert list(variable_vector(0, 4)) == [1, 0, 0, 0]
    assert list(variable_vector(1, 4, qualifier=True)) == [2, 1, 1, 1]


def test_init_embeddings():
    table = EmbeddingTable(4, rows={"c": np.arange(4.0)})
    g = init_query_embeddings(Query("q", (FP("?x", "p", "?y"), FP("?y", "p", "c"))), table)
    var_rows = [row for row in g.nodes if not np.array_equal(row, np.arange(4.0))]
    assert sorted(row[0] for row in var_rows) == [1.0, 2.0]
    assert all(np.all(row[1:] == 0) for row in var_rows)
    assert len(var_rows) == 2  # the remaining row is the exact copy of c
    g = init_query_embeddings(Query("q", (FP("?x", "p", "?y", (("t", "?v"),)),)), table)
    assert g.qual_ent[0][0] >= 1 and np.all(g.qual_ent[0][1:] == 1)


def test_rotate_examples():
    assert np.allclose(rotate_compose(np.array([0.0, 1.0]), np.array([1.0, 0.0])).data, [0, 1])
    assert np.allclose(rotate_compose(np.array([0.0, 1.0]), np.array([0.0, 1.0])).data, [-1, 0])
    e = np.array([0.3, -2.0, 1.5, 0.1])
    assert np.allclose(rotate_compose(np.array([1.0, 0.0, 1.0, 0.0]), e).data, e)


def test_aggregate_examples(rng):
    d = 4
    qr, qe = rng.standard_normal((2, d)), rng.standard_normal((2, d))
    eye = np.eye(d)
    out = aggregate_qualifiers(qr[:1], qe[:1], np.array([1]), 2, eye).data
    assert np.all(out[0] == 0)
    assert np.allclose(out[1], rotate_compose(qr[0], qe[0]).data)
    w = rng.standard_normal((d, d))
    both = aggregate_qualifiers(qr, qe, np.array([0, 0]), 1, w).data[0]
    c = lambda v: v[0::2] + 1j * v[1::2]  # noqa: E731
    z = c(qr[0]) * c(qe[0]) + c(qr[1]) * c(qe[1])
    flat = np.empty(d)
    flat[0::2], flat[1::2] = z.real, z.imag
    assert np.allclose(both, w @ flat)


def test_blend_examples(rng):
    cvae = Cvae.init(CvaeConfig(dim=4, latent=2, hidden=6), rng)
    h = Tensor(rng.standard_normal((3, 4)))
    x = Tensor(rng.standard_normal((3, 16)))
    h_hat = cvae.complete(x).data
    assert blend_qualifier(h, x, cvae, 0.0) is h
    assert np.array_equal(blend_qualifier(h, x, cvae, 1.0).data, h_hat)
    assert np.allclose(blend_qualifier(h, x, cvae, 0.5).data, (h.data + h_hat) / 2)
    with pytest.raises(ValueError):
        blend_qualifier(h, x, None, 0.5)


def test_combine_examples(rng):
    hs = [Tensor(rng.standard_normal((3, 4))) for _ in range(3)]
    w = rng.standard_normal(4)
    one = combine_layers(hs[:1], w).data
    assert np.allclose(one, hs[0].data / (1 + np.exp(-w * hs[0].data)))
    half = combine_layers(hs, np.zeros(4)).data
    assert np.allclose(half, 0.5 * sum(h.data for h in hs))
    rel = combine_layers(hs, w, gate="relu").data
    assert np.allclose(rel, sum(np.maximum(w * h.data, 0) * h.data for h in hs))


def test_isolated_node_gets_mlp_only(rng):
    m = model(rng, lam=0.0, cvae=False)
    g = m.graph(CHAIN2)
    # append a node no pattern touches
    extra = np.full((1, 4), 0.7)
    g2 = type(g)(np.vstack([g.nodes, extra]), g.relations, g.subj, g.obj, g.qual_rel,
                 g.qual_ent, g.qual_pattern)
    batch = GraphBatch.of([g2])
    state = {"nodes": Tensor(batch.nodes), "relations": Tensor(batch.relations),
             "qual_rel": Tensor(batch.qual_rel), "qual_ent": Tensor(batch.qual_ent)}
    out = message_passing_layer(state, m.params, 0, batch, m.config)
    direct = ad.mlp_forward(m.params, "L0.m", Tensor(extra)).data
    assert np.allclose(out["nodes"].data[-1], direct[0])


def test_zero_params_propagate_bias(rng):
    m = model(rng, lam=0.0, cvae=False)
    for name in m.params:
        m.params[name].data[...] = 0.0
    m.params["dec.b1"].data[...] = 2.5
    assert m.predict_log_cardinality(THREE) == 2.5
    assert m.estimate(THREE) == round(np.exp(2.5))


def test_zero_decoder_estimate(rng):
    m = model(rng)
    for name in m.params.names("dec."):
        m.params[name].data[...] = 0.0
    m.params["dec.b1"].data[...] = -3.0
    assert m.predict_log_cardinality(CHAIN2) == -3.0
    assert m.estimate(CHAIN2) == 1


def test_estimate_from_log():
    assert estimate_from_log(0.0) == 1
    assert estimate_from_log(np.log(1234.0)) == 1234
    assert estimate_from_log(-50.0) == 1
    assert estimate_from_log(1e6) > 1e300  # clamped, no overflow


@pytest.mark.parametrize("query", [CHAIN2, THREE], ids=["chain2", "three"])
@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("gate", ["sigmoid", "relu"])
def test_matches_reference(query, lam, gate):
    rng = np.random.default_rng(11)
    m = model(rng, d=6, layers=3, lam=lam, gate=gate)
    got = m.predict_log_cardinality(query)
    want = reference_forward(m.graph(query), arrays(m.params), m.config, arrays(m.cvae.params))
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_batched_equals_single(rng):
    m = model(rng)
    qs = [CHAIN2, THREE, Query("s", (FP("?a", "p", "?a"),))]
    together = m.predict_log_many(qs)
    alone = [m.predict_log_cardinality(q) for q in qs]
    assert np.allclose(together, alone, rtol=0, atol=1e-12)


def test_order_and_renaming_invariance(rng):
    m = model(rng)
    base = m.predict_log_cardinality(THREE)
    pats = THREE.patterns
    reordered = Query("x", (pats[2], pats[0], pats[1]))
    ren = {"?a": "?k", "?b": "?m", "?c": "?z", "?d": "?e", "?v": "?w"}
    renamed = Query("y", tuple(
        FP(ren.get(fp.s, fp.s), fp.p, ren.get(fp.o, fp.o),
           tuple((r, ren.get(e, e)) for r, e in reversed(fp.quals))) for fp in pats))
    assert m.predict_log_cardinality(reordered) == pytest.approx(base, abs=1e-12)
    assert m.predict_log_cardinality(renamed) == pytest.approx(base, abs=1e-12)


def test_lambda_zero_ignores_cvae():
    rng = np.random.default_rng(5)
    with_c = model(rng, lam=0.0)
    without = Hrqe(with_c.config, with_c.params, with_c.table, None)
    assert with_c.predict_log_cardinality(THREE) == without.predict_log_cardinality(THREE)


def test_grad_check_forward(rng):
    m = model(rng, d=4, layers=2, lam=0.5)
    batch = m.batch([CHAIN2, THREE])
    probe = np.array([0.7, -1.3])
    f = lambda p: ad.sum(ad.mul(forward(batch, p, m.config, m.cvae, m._cvae_params), probe))  # noqa: E731
    rep = grad_check(f, m.params)
    assert rep.passed, rep


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(dim=5)
    with pytest.raises(ValueError):
        ModelConfig(layers=0)
    with pytest.raises(ValueError):
        ModelConfig(lam=1.5)
    with pytest.raises(ValueError):
        ModelConfig(gate="tanh")


def test_mismatched_dims(rng):
    with pytest.raises(ValueError):
        Hrqe.init(ModelConfig(dim=4), rng, EmbeddingTable(6))
    with pytest.raises(ValueError):
        Hrqe.init(ModelConfig(dim=4), rng, None, Cvae.init(CvaeConfig(dim=6), rng))


def test_invalid_query(rng):
    with pytest.raises(InvalidQuery):
        model(rng).predict_log_cardinality(Query("d", (FP("?a", "p", "?b"), FP("?c", "p", "?d"))))


def test_missing_embedding(rng):
    table = EmbeddingTable(4, rows={"p": np.ones(4)}, fallback=False)
    m = Hrqe.init(ModelConfig(dim=4, lam=0.0), rng, table)
    with pytest.raises(MissingEmbedding):
        m.predict_log_cardinality(Query("q", (FP("?a", "zz", "?b"),)))


def test_fallback_embeddings_are_stable():
    a = EmbeddingTable(8, seed=1).lookup("Berlin")
    assert np.array_equal(a, EmbeddingTable(8, seed=1).lookup("Berlin"))
    assert not np.array_equal(a, EmbeddingTable(8, seed=2).lookup("Berlin"))


def test_word2vec_round_trip(tmp_path):
    table = EmbeddingTable(3, rows={"a": [1.0, 2.0, 3.5], "p": [-1e-3, 0.0, 7.0]})
    path = tmp_path / "e.txt"
    table.to_word2vec(path)
    back = EmbeddingTable.from_word2vec(path)
    assert back.labels() == ["a", "p"] and np.array_equal(back.lookup("a"), [1.0, 2.0, 3.5])
    path.write_text("3\na 1 2 3\n")
    assert EmbeddingTable.from_word2vec(path).dim == 3
    path.write_text("2 3\na 1 2 3\n")
    with pytest.raises(ValueError):
        EmbeddingTable.from_word2vec(path)
    path.write_text("3\na 1 2\n")
    with pytest.raises(ValueError):
        EmbeddingTable.from_word2vec(path)


def test_checkpoint_round_trip(tmp_path, rng):
    m = model(rng)
    path = tmp_path / "m.npz"
    m.save(path)
    back = Hrqe.load(path)
    assert back.config == m.config and back.cvae.config == m.cvae.config
    back.table = m.table
    back._graphs.clear()
    assert back.predict_log_cardinality(THREE) == m.predict_log_cardinality(THREE)
    ad.save_checkpoint(tmp_path / "o.npz", {}, {"kind": "cvae"})
    with pytest.raises(ValueError):
        Hrqe.load(tmp_path / "o.npz")


def test_checkpoint_reloads_embedding_file(tmp_path, rng):
    table = EmbeddingTable(4, rows={"p": np.arange(4.0), "c": np.ones(4)})
    emb = tmp_path / "e.txt"
    table.to_word2vec(emb)
    m = Hrqe.init(ModelConfig(dim=4, lam=0.0), rng, EmbeddingTable.from_word2vec(emb, fallback=True))
    m.save(tmp_path / "m.npz", embeddings_path=str(emb))
    back = Hrqe.load(tmp_path / "m.npz")
    q = Query("q", (FP("?a", "p", "c"),))
    assert back.predict_log_cardinality(q) == m.predict_log_cardinality(q)


def test_param_names(rng):
    m = model(rng, layers=2)
    names = set(m.params)
    for k in range(2):
        assert {f"L{k}.W_qual", f"L{k}.W_e", f"L{k}.W_r", f"L{k}.W_qr", f"L{k}.W_qe"} <= names
    assert "gate.w" in names and m.params["L0.W_e"].shape == (4, 12)
    assert isinstance(m.params, ParamStore)
