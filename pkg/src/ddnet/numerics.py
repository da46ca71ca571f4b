"""Small reverse-mode autodiff engine on top of numpy.

Everything is float64. A :class:`Tensor` built by an op whose inputs require
gradients remembers its parents and a closure that pushes the output gradient
back into them; :func:`backward` orders the graph topologically and runs the
closures once each, in reverse.
"""

from __future__ import annotations

import contextlib
import json
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputeGraph",
    "no_grad",
    "tensor",
    "parameter",
    "matmul",
    "linear",
    "rowwise_matvec",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "square",
    "exp",
    "log",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "elu",
    "absolute",
    "apply_activation",
    "sum",
    "mean",
    "amax",
    "reshape",
    "concat",
    "stack",
    "getitem",
    "gather",
    "mse",
    "backward",
    "RMSprop",
    "Adam",
    "OptimizerState",
    "optimizer_step",
    "clip_grad_norm",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_owns_grad")
    # make numpy defer to our reflected operators (ndarray - Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._owns_grad = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None
        self._owns_grad = False

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._owns_grad = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray, index=None) -> None:
    """Add ``g`` (optionally into ``t.grad[index]``) without aliasing buffers."""
    if not t.requires_grad:
        return
    if index is None:
        if t.grad is None:
            t.grad = g
            t._owns_grad = False
        else:
            t.grad = t.grad + g
            t._owns_grad = True
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
        t._owns_grad = True
    elif not t._owns_grad:
        t.grad = t.grad.copy()
        t._owns_grad = True
    parts = index if isinstance(index, tuple) else (index,)
    if any(isinstance(i, (np.ndarray, list)) for i in parts):
        np.add.at(t.grad, index, g)  # repeated indices must sum
    else:
        t.grad[index] += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), _bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear dimension mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def _bw(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            _accumulate(weight, g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))

    return _result(out, parents, _bw)


def rowwise_matvec(x, w) -> Tensor:
    """Per-row vector-matrix product: ``out[b] = x[b] @ w[b]``.

    ``x`` is (batch, k) and ``w`` is (batch, k, m).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or w.shape[:2] != x.shape:
        raise ValueError(f"rowwise_matvec dimension mismatch: {x.shape} x {w.shape}")
    out = np.matmul(x.data[:, None, :], w.data)[:, 0, :]

    def _bw(g):
        if x.requires_grad:
            _accumulate(x, np.matmul(w.data, g[:, :, None])[:, :, 0])
        if w.requires_grad:
            _accumulate(w, x.data[:, :, None] * g[:, None, :])

    return _result(out, (x, w), _bw)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), _bw)


def neg(x) -> Tensor:
    x = _as_tensor(x)
    return _result(-x.data, (x,), lambda g: _accumulate(x, -g))


def square(x) -> Tensor:
    x = _as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: _accumulate(x, 2.0 * x.data * g))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: _accumulate(x, g * out))


def log(x) -> Tensor:
    x = _as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: _accumulate(x, g / x.data))


# ---------------------------------------------------------------------------
# activations


def relu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), (x,), lambda g: _accumulate(x, g * pos))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: _accumulate(x, g * (1.0 - out * out)))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # split by sign so large |x| never overflows exp
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (x,), lambda g: _accumulate(x, g * out * (1.0 - out)))


def softmax(x) -> Tensor:
    """Softmax over the last dimension."""
    x = _as_tensor(x)
    if x.ndim < 1:
        raise ValueError("softmax needs rank >= 1")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        _accumulate(x, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _result(out, (x,), _bw)


def log_softmax(x) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def _bw(g):
        p = np.exp(out)
        _accumulate(x, g - p * g.sum(axis=-1, keepdims=True))

    return _result(out, (x,), _bw)


def elu(x, alpha: float = 1.0) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    neg_part = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg_part)
    return _result(out, (x,), lambda g: _accumulate(x, g * np.where(pos, 1.0, neg_part + alpha)))


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: _accumulate(x, g * np.sign(x.data)))


_ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax_lastdim": softmax,
    "abs": absolute,
    "elu": elu,
    "linear": lambda x: _as_tensor(x),
    None: lambda x: _as_tensor(x),
}


def apply_activation(x, kind: str | None) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(k for k in _ACTIVATIONS if k)}")
    return fn(x)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(out, (x,), _bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g / count, x.shape))

    return _result(out, (x,), _bw)


def amax(x, axis: int = -1) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    x = _as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def _bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full)

    return _result(out, (x,), _bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(x.shape)))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def _bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accumulate(x, g[tuple(sl)])

    return _result(out, xs, _bw)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)
    ax = axis % out.ndim

    def _bw(g):
        for k, x in enumerate(xs):
            if x.requires_grad:
                _accumulate(x, np.take(g, k, axis=ax))

    return _result(out, xs, _bw)


def getitem(x, index) -> Tensor:
    x = _as_tensor(x)
    out = x.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    elif out.base is not None:
        out = out.copy()
    return _result(out, (x,), lambda g: _accumulate(x, g, index=index))


def gather(x, index: np.ndarray) -> Tensor:
    """Pick ``x[..., index[...]]`` along the last axis (index has x.shape[:-1])."""
    x = _as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)[..., None]
    if idx.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"gather index shape {idx.shape[:-1]} does not match {x.shape[:-1]}")
    out = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def _bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        _accumulate(x, full)

    return _result(out, (x,), _bw)


def mse(a, b) -> Tensor:
    """Mean of squared differences over every element."""
    return mean(square(sub(a, b)))


# ---------------------------------------------------------------------------
# backward pass


class ComputeGraph:
    """Topologically ordered nodes reachable from a root tensor."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack_.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]


def backward(loss: Tensor, graph: ComputeGraph | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Intermediate nodes are released afterwards, so a graph is good for one pass.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or ComputeGraph(loss)
    # leaves keep accumulating across calls; snapshot their prior grads
    prior = {}
    for node in graph.nodes:
        if node.is_leaf:
            prior[id(node)] = node.grad
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in graph.nodes:
        if node.is_leaf:
            old, new = prior[id(node)], node.grad
            if new is None:
                node.grad = old
            else:
                node.grad = np.array(new, dtype=np.float64) if old is None else old + new
            node._owns_grad = True
        else:
            node.grad = None
            node._backward = None
            node._parents = ()


# ---------------------------------------------------------------------------
# optimizers


class OptimizerState:
    """Shared bookkeeping for RMSprop and Adam."""

    kind = "base"

    def __init__(self, params: Iterable[Tensor], lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def _check_grads(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i!r} has no gradient")

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self._check_grads()
        self.step_count += 1
        self._update()
        self.zero_grad()

    def _update(self):  # pragma: no cover - abstract
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}


class RMSprop(OptimizerState):
    kind = "rmsprop"

    def __init__(self, params, lr: float = 5e-4, decay: float = 0.99, eps: float = 1e-5):
        super().__init__(params, lr)
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {decay}")
        self.decay = float(decay)
        self.eps = float(eps)
        self.square_avg = [np.zeros_like(p.data) for p in self.params]

    def _update(self):
        for p, acc in zip(self.params, self.square_avg):
            g = p.grad
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            p.data -= self.lr * g / (np.sqrt(acc) + self.eps)


class Adam(OptimizerState):
    kind = "adam"

    def __init__(self, params, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.exp_avg = [np.zeros_like(p.data) for p in self.params]
        self.exp_avg_sq = [np.zeros_like(p.data) for p in self.params]

    def _update(self):
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.exp_avg, self.exp_avg_sq):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(state: OptimizerState, params: Sequence[Tensor] | None = None) -> list[Tensor]:
    if params is not None and [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("params do not match the optimizer's parameter list")
    state.step()
    return state.params


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale grads in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(p.grad * p.grad) for p in params if p.grad is not None])))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write parameters as an ``.npz`` archive.

    Layout: one array per parameter keyed by its dotted name (shape and
    row-major float64 values preserved by numpy), plus ``__header__``, a JSON
    string holding ``{"format": "ddnet-checkpoint", "version": 1, "meta": ...}``.
    """
    header = json.dumps({"format": "ddnet-checkpoint", "version": CHECKPOINT_VERSION, "meta": meta or {}})
    arrays = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in named_params.items()}
    if "__header__" in arrays:
        raise ValueError("'__header__' is reserved")
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != "ddnet-checkpoint":
            raise ValueError(f"{path}: not a ddnet checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header.get('version')} unsupported")
        params = {k: z[k].copy() for k in z.files if k != "__header__"}
    return params, header.get("meta", {})
