"""Small reverse-mode autodiff over float64 numpy arrays.

Only what the estimators need: elementwise arithmetic with broadcasting,
affine maps, a handful of activations, row gather/scatter for message
passing, and a complex-pair product used for qualifier composition.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced")
    tracked = any(p.requires_grad for p in parents)
    return Tensor(data, tracked, parents if tracked else (), backward_fn if tracked else None)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _result(a.data ** 2, (a,), lambda g: (2.0 * g * a.data,))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "linear": lambda t: t,
}


# -- reductions and shape ------------------------------------------------------------

def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(out, (a,), bw)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _result(a.data[..., start:stop], (a,), bw)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), bw)


def segment_sum(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)
    return _result(out, (a,), lambda g: (g[segments],))


# -- linear algebra ---------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.data.ndim == 1 and b.data.ndim == 1:
            return g * b.data, g * a.data
        if a.data.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for row-batched (or 1-D) ``x``; weight is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents: tuple = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

    def bw(g):
        gx = g @ weight.data
        if x.data.ndim == 1:
            gw = np.outer(g, x.data)
        else:
            gw = g.T @ x.data
        if bias is None:
            return gx, gw
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gw, gb

    return _result(out, parents, bw)


def rotate(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise complex product with consecutive dims as (re, im) pairs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] % 2 or b.shape[-1] % 2:
        raise ValueError(f"rotate needs an even dimension, got {a.shape[-1]}")
    ar, ai = a.data[..., 0::2], a.data[..., 1::2]
    br, bi = b.data[..., 0::2], b.data[..., 1::2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0::2] = ar * br - ai * bi
    out[..., 1::2] = ar * bi + ai * br

    def bw(g):
        gr, gi = g[..., 0::2], g[..., 1::2]
        ga = np.empty_like(g)
        gb = np.empty_like(g)
        ga[..., 0::2] = gr * br + gi * bi
        ga[..., 1::2] = -gr * bi + gi * br
        gb[..., 0::2] = gr * ar + gi * ai
        gb[..., 1::2] = -gr * ai + gi * ar
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), bw)


# -- backward ------------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if not loss.requires_grad:
        raise RuntimeError("backward() on a value that does not require grad")
    if loss.data.size != 1:
        raise RuntimeError("backward() needs a scalar loss")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


# -- parameters ------------------------------------------------------------------------------

class ParamStore:
    """Named trainable tensors with Adam moment buffers."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def size(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for n, t in self._params.items()}

    def adam_step(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self._params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name] = beta1 * self._m[name] + (1 - beta1) * g
            v = self._v[name] = beta2 * self._v[name] + (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)

    def frozen(self) -> "ParamStore":
        """View sharing the arrays but excluded from gradient tracking."""
        out = ParamStore()
        for name, t in self._params.items():
            out._params[name] = Tensor(t.data, requires_grad=False)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, arr in state.items():
            if n in self._params:
                if self._params[n].shape != arr.shape:
                    raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {self._params[n].shape}")
                self._params[n].data = np.array(arr, dtype=np.float64)
            else:
                self.add(n, arr)


# -- checkpoints ------------------------------------------------------------------------------

_META_KEY = "__meta__"


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    arrays = {n: np.asarray(a, dtype=np.float64) for n, a in tensors.items()}
    arrays[_META_KEY] = np.array(json.dumps(meta or {}))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z[_META_KEY])) if _META_KEY in z.files else {}
        tensors = {n: z[n] for n in z.files if n != _META_KEY}
    return tensors, meta


# -- MLP ------------------------------------------------------------------------------------------

def glorot(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def init_mlp(params: ParamStore, prefix: str, sizes: Sequence[int], rng: np.random.Generator) -> None:
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params.add(f"{prefix}.W{i}", glorot(rng, n_out, n_in))
        params.add(f"{prefix}.b{i}", np.zeros(n_out))


def mlp_layers(params: ParamStore, prefix: str) -> int:
    n = 0
    while f"{prefix}.W{n}" in params:
        n += 1
    return n


def mlp_forward(
    params: ParamStore,
    prefix: str,
    x: Tensor,
    activation: str = "relu",
    final_activation: str = "linear",
) -> Tensor:
    """Affine layers with ``activation`` between them and ``final_activation`` last."""
    n = mlp_layers(params, prefix)
    if n == 0:
        raise KeyError(f"no MLP parameters under prefix {prefix!r}")
    act, last = ACTIVATIONS[activation], ACTIVATIONS[final_activation]
    h = as_tensor(x)
    for i in range(n):
        h = linear(h, params[f"{prefix}.W{i}"], params[f"{prefix}.b{i}"])
        h = act(h) if i < n - 1 else last(h)
    return h


# -- gradient checking ------------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    per_param: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    names: Optional[Iterable[str]] = None,
    analytic: Optional[dict[str, np.ndarray]] = None,
) -> GradCheckReport:
    """Compare backprop gradients against centered finite differences.

    ``analytic`` may be supplied to check externally computed gradients.
    """
    names = list(names) if names is not None else list(params)
    if analytic is None:
        params.zero_grad()
        backward(f(params))
        analytic = params.grads()
        params.zero_grad()

    worst_err, worst_name, per = 0.0, "", {}
    count = 0
    for name in names:
        p = params[name]
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(params).item()
            flat[i] = orig - h
            down = f(params).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        err = float(relative_error(analytic[name], numeric).max()) if numeric.size else 0.0
        per[name] = err
        count += numeric.size
        if err > worst_err or not worst_name:
            worst_err, worst_name = err, name
    return GradCheckReport(worst_err, worst_name, per, tolerance, count)
