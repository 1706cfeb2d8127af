import numpy as np
import pytest

from hkgce import autodiff as ad
from hkgce.autodiff import ParamStore, Tensor, grad_check, init_mlp, mlp_forward


def store(**arrays):
    ps = ParamStore()
    for name, value in arrays.items():
        ps.add(name, value)
    return ps


def test_zero_mlp_gives_zero(rng):
    ps = ParamStore()
    init_mlp(ps, "m", [3, 4, 2], rng)
    for name in ps:
        ps[name].data[...] = 0.0
    out = mlp_forward(ps, "m", Tensor(rng.standard_normal((5, 3))))
    assert np.array_equal(out.data, np.zeros((5, 2)))


def test_identity_layer(rng):
    ps = store(**{"m.W0": np.eye(4), "m.b0": np.zeros(4)})
    x = rng.standard_normal((3, 4))
    assert np.array_equal(mlp_forward(ps, "m", Tensor(x)).data, x)


def test_mlp_input_gradient(rng):
    ps = ParamStore()
    init_mlp(ps, "m", [3, 5, 2], rng)
    ps.add("x", rng.standard_normal((4, 3)))
    rep = grad_check(lambda p: ad.sum(mlp_forward(p, "m", p["x"], activation="sigmoid")), ps,
                     tolerance=1e-6, names=["x"])
    assert rep.passed, rep


def test_shape_mismatch(rng):
    ps = ParamStore()
    init_mlp(ps, "m", [3, 2], rng)
    with pytest.raises(ValueError, match="shape"):
        mlp_forward(ps, "m", Tensor(np.ones((2, 4))))
    with pytest.raises(KeyError):
        mlp_forward(ps, "nothing", Tensor(np.ones(3)))


def test_square_norm_gradient(rng):
    w = rng.standard_normal((3, 2))
    ps = store(W=w)
    ad.backward(ad.sum(ad.square(ps["W"])))
    assert np.allclose(ps["W"].grad, 2 * w)


def test_two_backwards_double(rng):
    ps = store(W=rng.standard_normal(4))
    loss = lambda: ad.sum(ad.square(ps["W"]))  # noqa: E731
    ad.backward(loss())
    once = ps["W"].grad.copy()
    ad.backward(loss())
    assert np.allclose(ps["W"].grad, 2 * once)


def test_shared_subexpression_accumulates(rng):
    ps = store(x=rng.standard_normal(3))
    y = ps["x"] * 2.0
    ad.backward(ad.sum(y * y + y))
    assert np.allclose(ps["x"].grad, 8 * ps["x"].data + 2)


def test_adam_zero_gradient_is_noop(rng):
    w = rng.standard_normal((2, 2))
    ps = store(W=w.copy(), b=np.ones(2))
    ps["W"].grad = np.zeros_like(w)
    ps.adam_step()
    assert np.array_equal(ps["W"].data, w)
    assert np.array_equal(ps["b"].data, np.ones(2))  # no grad at all


def test_adam_first_step_moves_by_lr():
    ps = store(w=np.array([1.0, -1.0]))
    ps["w"].grad = np.array([0.3, -5.0])
    ps.adam_step(lr=0.01)
    # bias-corrected first step is lr * sign(g) up to eps
    assert np.allclose(ps["w"].data, [0.99, -0.99], atol=1e-9)


def test_linear_function_exact():
    a = np.array([[1.0, -2.0], [0.5, 3.0]])
    ps = store(x=np.array([[0.1, 0.2], [0.3, 0.4]]))
    rep = grad_check(lambda p: ad.sum(p["x"] * a), ps)
    assert rep.max_rel_error < 1e-9


def test_corrupted_gradient_is_caught(rng):
    ps = store(x=rng.standard_normal(5))
    f = lambda p: ad.sum(ad.square(p["x"]))  # noqa: E731
    wrong = {"x": 2 * ps["x"].data + 1e-2}
    rep = grad_check(f, ps, analytic=wrong)
    assert not rep.passed and rep.worst == "x"


UNARY = {
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "square": ad.square,
    "log": lambda t: ad.log(ad.exp(t) + 1.0),
    "sum0": lambda t: ad.sum(t, axis=0),
    "mean1": lambda t: ad.mean(t, axis=1),
    "columns": lambda t: ad.columns(t, 1, 3),
    "take_rows": lambda t: ad.take_rows(t, np.array([0, 2, 2, 1])),
    "segment_sum": lambda t: ad.segment_sum(t, np.array([1, 0, 1]), 3),
    "concat": lambda t: ad.concat([t, ad.square(t)], axis=1),
    "neg_sub": lambda t: 1.0 - (-t),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_op_gradients(name, rng):
    x = rng.standard_normal((3, 4))
    if name == "relu":
        x[np.abs(x) < 0.05] = 0.5  # keep away from the kink
    ps = store(x=x)
    op = UNARY[name]
    probe = rng.standard_normal(op(Tensor(x)).shape)
    rep = grad_check(lambda p: ad.sum(op(p["x"]) * probe), ps, tolerance=1e-5)
    assert rep.passed, rep


@pytest.mark.parametrize("name", ["matmul", "linear", "rotate", "mul_broadcast", "add_broadcast"])
def test_binary_op_gradients(name, rng):
    ops = {
        "matmul": (lambda a, b: a @ b, (3, 4), (4, 2)),
        "linear": (lambda a, b: ad.linear(a, b), (3, 4), (2, 4)),
        "rotate": (ad.rotate, (3, 4), (3, 4)),
        "mul_broadcast": (lambda a, b: a * b, (3, 4), (4,)),
        "add_broadcast": (lambda a, b: a + b, (3, 4), (1, 4)),
    }
    op, sa, sb = ops[name]
    ps = store(a=rng.standard_normal(sa), b=rng.standard_normal(sb))
    probe = rng.standard_normal(op(ps["a"], ps["b"]).shape)
    rep = grad_check(lambda p: ad.sum(op(p["a"], p["b"]) * probe), ps, tolerance=1e-5)
    assert rep.passed, rep


def test_vector_matmul_gradients(rng):
    ps = store(v=rng.standard_normal(3), M=rng.standard_normal((3, 2)), u=rng.standard_normal(2))
    rep = grad_check(lambda p: ad.sum((p["v"] @ p["M"]) * p["u"]) + p["u"] @ p["u"], ps,
                     tolerance=1e-5)
    assert rep.passed, rep


def test_non_finite_rejected():
    with pytest.raises(FloatingPointError):
        ad.log(Tensor(np.array([0.0])))
    with pytest.raises(FloatingPointError):
        ad.exp(Tensor(np.array([1e4])))


def test_backward_on_untracked_raises():
    with pytest.raises(RuntimeError, match="require grad"):
        ad.backward(ad.sum(Tensor(np.ones(3))))
    ps = store(x=np.ones(3))
    with pytest.raises(RuntimeError, match="scalar"):
        ad.backward(ps["x"] * 2.0)


def test_rotate_odd_dim():
    with pytest.raises(ValueError, match="even"):
        ad.rotate(Tensor(np.ones(3)), Tensor(np.ones(3)))


def test_checkpoint_round_trip(tmp_path, rng):
    ps = ParamStore()
    init_mlp(ps, "m", [3, 4, 1], rng)
    path = tmp_path / "c.npz"
    ad.save_checkpoint(path, ps.state_dict(), {"kind": "test", "n": 3})
    tensors, meta = ad.load_checkpoint(path)
    assert meta == {"kind": "test", "n": 3}
    back = ParamStore()
    back.load_state_dict(tensors)
    assert list(back) == list(ps)
    for name in ps:
        assert np.array_equal(back[name].data, ps[name].data)


def test_load_state_dict_shape_mismatch():
    ps = store(W=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="shape"):
        ps.load_state_dict({"W": np.zeros(3)})


def test_duplicate_name():
    ps = store(W=np.zeros(2))
    with pytest.raises(KeyError):
        ps.add("W", np.zeros(2))


def test_frozen_view_is_untracked(rng):
    ps = store(W=rng.standard_normal(2))
    fr = ps.frozen()
    assert not fr["W"].requires_grad and fr["W"].data is ps["W"].data


def test_same_seed_same_trajectory():
    def run():
        r = np.random.default_rng(3)
        ps = ParamStore()
        init_mlp(ps, "m", [2, 8, 1], r)
        x = Tensor(r.standard_normal((16, 2)))
        y = r.standard_normal((16, 1))
        out = []
        for _ in range(20):
            ps.zero_grad()
            loss = ad.mean(ad.square(mlp_forward(ps, "m", x) - y))
            ad.backward(loss)
            ps.adam_step()
            out.append(loss.item())
        return out

    assert run() == run()
