"""Reverse-mode differentiation on float64 numpy arrays, plus Adam.

A :class:`Tensor` records its parents and a vector-Jacobian closure as
operations build up; ``backward()`` on a scalar output topologically
sorts the tape and accumulates exact gradients into every reachable
tensor's ``grad``. Non-Tensor operands are treated as constants. The op
set is deliberately small: elementwise arithmetic, exp/log/tanh-family
nonlinearities, matmul, gathers, reductions and log-sum-exp, which is
everything the models and objectives here need.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents: tuple = (), vjp: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={self._vjp is None})"

    # arithmetic sugar; all routed through the module-level ops
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def backward(self):
        """Accumulate d(self)/d(ancestor) into every ancestor's ``grad``."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p is not None and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if parent is None or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad = parent.grad + g


def parameter(data) -> Tensor:
    """Leaf tensor intended to receive gradients."""
    return Tensor(np.array(data, dtype=np.float64))


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _maybe(x) -> Tensor | None:
    return x if isinstance(x, Tensor) else None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape))

    return Tensor(ad + bd, (_maybe(a), _maybe(b)), vjp)


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape))

    return Tensor(ad - bd, (_maybe(a), _maybe(b)), vjp)


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return Tensor(ad * bd, (_maybe(a), _maybe(b)), vjp)


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return Tensor(ad / bd, (_maybe(a), _maybe(b)), vjp)


def pow_const(a, exponent: float) -> Tensor:
    ad = _data(a)
    e = float(exponent)
    out = ad**e
    return Tensor(out, (_maybe(a),), lambda g: (g * e * ad ** (e - 1.0),))


def square(a) -> Tensor:
    return mul(a, a)


def texp(a) -> Tensor:
    out = np.exp(_data(a))
    return Tensor(out, (_maybe(a),), lambda g: (g * out,))


def tlog(a) -> Tensor:
    ad = _data(a)
    return Tensor(np.log(ad), (_maybe(a),), lambda g: (g / ad,))


def ttanh(a) -> Tensor:
    out = np.tanh(_data(a))
    return Tensor(out, (_maybe(a),), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    ad = _data(a)
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor(out, (_maybe(a),), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    ad = _data(a)
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    s = 1.0 / (1.0 + np.exp(-np.clip(ad, -500, 500)))
    return Tensor(out, (_maybe(a),), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (g @ bd.T, ad.T @ g)

    return Tensor(ad @ bd, (_maybe(a), _maybe(b)), vjp)


def gather(a, indices) -> Tensor:
    """Rows (or scalars, for 1-D inputs) of ``a`` at ``indices``."""
    ad = _data(a)
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(ad)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(ad[idx], (_maybe(a),), vjp)


def take_pairs(a, rows, cols) -> Tensor:
    """Elements a[rows[j], cols[j]] of a 2-D tensor."""
    ad = _data(a)
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(ad)
        np.add.at(out, (r, c), g)
        return (out,)

    return Tensor(ad[r, c], (_maybe(a),), vjp)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ad = _data(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, ad.shape).copy(),)

    return Tensor(ad.sum(axis=axis, keepdims=keepdims), (_maybe(a),), vjp)


def tmean(a, axis: int | None = None) -> Tensor:
    ad = _data(a)
    n = ad.size if axis is None else ad.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    return Tensor(ad.reshape(shape), (_maybe(a),), lambda g: (g.reshape(ad.shape),))


def logsumexp(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ad = _data(a)
    peak = ad.max(axis=axis, keepdims=True)
    expd = np.exp(ad - peak)
    total = expd.sum(axis=axis, keepdims=True)
    out = np.log(total) + peak
    if not keepdims and axis is not None:
        out = np.squeeze(out, axis=axis)
    elif axis is None and not keepdims:
        out = out.reshape(())
    soft = expd / total

    def vjp(g):
        if axis is None:
            return (soft * g,)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (soft * ge,)

    return Tensor(out, (_maybe(a),), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def clip_min(a, floor: float) -> Tensor:
    """Clamp from below; gradient flows only through unclamped entries."""
    ad = _data(a)
    mask = ad > floor
    return Tensor(np.maximum(ad, floor), (_maybe(a),), lambda g: (g * mask,))


class Adam:
    """Standard Adam with bias correction over a named parameter dict.

    Deterministic given the gradient sequence; raises on non-finite
    gradients, naming the offending parameter.
    """

    def __init__(self, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray] | None = None):
        """Update every parameter in place from ``grads`` (default: ``.grad``)."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name] if grads is not None else p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                bad = int(np.flatnonzero(~np.isfinite(g))[0])
                raise FloatingPointError(f"non-finite gradient for {name!r} at flat index {bad}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def zero_grads(params: dict[str, Tensor]):
    for p in params.values():
        p.grad = None


def gradient_check(
    params: dict[str, Tensor],
    loss_fn: Callable[[], "object"],
    step: float = 1e-5,
    max_checks: int = 200,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare engine gradients to central finite differences.

    ``loss_fn`` must return an object with ``value`` (float) and
    ``grads`` (name -> array); it is re-evaluated with perturbed
    parameters, so any internal randomness must be seeded per call. At
    most ``max_checks`` coordinates are probed, chosen uniformly.
    Relative error uses max(|analytic|, |numeric|, 1e-6) to keep the
    finite-difference noise floor out of near-zero entries.
    """
    rng = rng or np.random.default_rng(0)
    coords = [
        (name, i) for name, p in params.items() for i in range(p.data.size)
    ]
    if len(coords) > max_checks:
        picks = rng.choice(len(coords), size=max_checks, replace=False)
        coords = [coords[int(k)] for k in picks]
    analytic = loss_fn().grads
    worst = 0.0
    worst_at = None
    for name, i in coords:
        flat = params[name].data.reshape(-1)
        saved = flat[i]
        flat[i] = saved + step
        up = loss_fn().value
        flat[i] = saved - step
        down = loss_fn().value
        flat[i] = saved
        numeric = (up - down) / (2.0 * step)
        a = float(analytic[name].reshape(-1)[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        if err > worst:
            worst, worst_at = err, (name, i)
    return {"max_rel_error": worst, "worst_at": worst_at, "n_checked": len(coords)}
