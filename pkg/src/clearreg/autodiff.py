"""Reverse-mode differentiation over a small, closed set of array primitives.

Only the operations a layered convex network needs are provided: 2-D
convolution, dense layers, (leaky) ReLU, average pooling, residual sums,
flattening, elementwise square, sums/means and arithmetic with constants.
Anything else raises :class:`UnsupportedOperationError`.

Networks are described by a list of :class:`LayerSpec` records and a
parameter set (one dict of arrays per layer).  All evaluation is batched:
the leading axis of every activation is the sample axis, and a network maps
a batch of inputs to one scalar per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SUPPORTED_OPS = frozenset({
    "leaf", "conv2d", "linear", "leaky_relu", "relu", "avg_pool",
    "add", "sub", "neg", "scale", "square", "sum", "mean", "reshape",
})

LAYER_KINDS = ("conv2d", "linear", "leaky-relu", "relu", "avg-pool",
               "skip-sum", "flatten", "square")


class AutodiffError(Exception):
    pass


class UnsupportedOperationError(AutodiffError):
    pass


class ShapeError(AutodiffError, ValueError):
    """Input or parameter shape inconsistent with a layer.

    ``layer`` is the index of the offending layer, or None when the
    mismatch concerns the network input itself.
    """

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(),
                 backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return _binary(self, other, "add", 1.0)
        return _with_constant(self, self.data + other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return _binary(self, other, "sub", -1.0)
        return _with_constant(self, self.data - other, "sub")

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return _scale(self, -1.0, op="neg")

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise UnsupportedOperationError(
                "tensor-by-tensor products are outside the supported op set")
        if np.ndim(other) != 0:
            raise UnsupportedOperationError("only scalar multiplication is supported")
        return _scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor) or np.ndim(other) != 0:
            raise UnsupportedOperationError("only division by a scalar constant is supported")
        return _scale(self, 1.0 / float(other))

    def __pow__(self, exponent):
        if exponent != 2:
            raise UnsupportedOperationError("only squaring is supported")
        return self.square()

    def square(self):
        x = self.data

        def backward(g):
            return (2.0 * x * g,)

        return _node(x * x, "square", (self,), backward)

    def sum(self, axis=None):
        shape = self.shape

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return _node(self.data.sum(axis=axis), "sum", (self,), backward)

    def mean(self, axis=None):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)])
        shape = self.shape

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, shape),)

        return _node(self.data.mean(axis=axis), "mean", (self,), backward)

    def reshape(self, *shape):
        old = self.shape

        def backward(g):
            return (g.reshape(old),)

        return _node(self.data.reshape(*shape), "reshape", (self,), backward)

    # reverse pass -------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that
        requires a gradient.  ``self`` must be a scalar unless ``grad`` is
        given."""
        if grad is None:
            if self.data.size != 1:
                raise AutodiffError("backward() on a non-scalar needs an explicit seed")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.op not in SUPPORTED_OPS:
                raise UnsupportedOperationError(f"no gradient rule for op {node.op!r}")
            if node._backward is None:
                node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if parent is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p is not None and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def _node(data, op, parents, backward):
    rg = any(p is not None and p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, op=op, parents=parents,
                  backward=backward if rg else None)


def _binary(a, b, op, sign):
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(sign * g, sb)

    data = a.data + b.data if sign > 0 else a.data - b.data
    return _node(data, op, (a, b), backward)


def _with_constant(a, data, op):
    sa = a.shape

    def backward(g):
        return (_unbroadcast(g, sa),)

    return _node(data, op, (a,), backward)


def _scale(a, c, op="scale"):
    def backward(g):
        return (c * g,)

    return _node(a.data * c, op, (a,), backward)


def as_tensor(x, requires_grad=False):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=float), requires_grad=requires_grad)


# layer primitives ---------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    xd, wd = x.data, weight.data
    n, c, h, w = xd.shape
    o, _, kh, kw = wd.shape
    p, s = padding, stride
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = wd.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(wd.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    return _node(np.ascontiguousarray(out), "conv2d", (x, weight, bias), backward)


def linear(x, weight, bias=None):
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _node(out, "linear", (x, weight, bias), backward)


def leaky_relu(x, slope=0.2):
    pos = x.data > 0

    def backward(g):
        return (np.where(pos, g, slope * g),)

    return _node(np.where(pos, x.data, slope * x.data), "leaky_relu", (x,), backward)


def relu(x):
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return _node(x.data * pos, "relu", (x,), backward)


def avg_pool2d(x, size=2):
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"avg-pool size {size} does not divide spatial shape {(h, w)}")
    out = x.data.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, size, axis=2), size, axis=3)
        return (up / (size * size),)

    return _node(out, "avg_pool", (x,), backward)


def flatten(x):
    return x.reshape(x.shape[0], -1)


# network description --------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network graph.

    Node 0 is the network input; layer ``i`` reads node ``src`` (default
    ``i``, the previous node) and writes node ``i + 1``.  A ``skip-sum``
    adds node ``other`` to its source.  ``nonneg`` marks layers whose
    weights are constrained non-negative.
    """

    kind: str
    in_size: int = 0
    out_size: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: int | None = None
    slope: float = 0.2
    pool: int = 2
    scale: float = 1.0
    bias: bool = True
    nonneg: bool = False
    src: int | None = None
    other: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UnsupportedOperationError(f"unknown layer kind {self.kind!r}")
        if self.kind == "leaky-relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky-relu slope must lie in (0, 1)")
        if self.kind == "skip-sum" and self.other is None:
            raise ValueError("skip-sum needs the index of the node it adds")

    def param_shapes(self):
        if self.kind == "conv2d":
            k = self.kernel_size
            shapes = {"weight": (self.out_size, self.in_size, k, k)}
        elif self.kind == "linear":
            shapes = {"weight": (self.out_size, self.in_size)}
        else:
            return {}
        if self.bias:
            shapes["bias"] = (self.out_size,)
        return shapes

    def to_dict(self):
        return {k: v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_count(spec):
    return sum(int(np.prod(s)) for layer in spec for s in layer.param_shapes().values())


def zero_params(spec, dtype=np.float64):
    return [{k: np.zeros(s, dtype=dtype) for k, s in layer.param_shapes().items()}
            for layer in spec]


def _check_params(params, spec):
    if len(params) != len(spec):
        raise ShapeError(f"{len(params)} parameter groups for {len(spec)} layers")
    for i, (p, layer) in enumerate(zip(params, spec)):
        shapes = layer.param_shapes()
        if set(p) != set(shapes):
            raise ShapeError(f"expected parameters {sorted(shapes)}, got {sorted(p)}", i)
        for k, s in shapes.items():
            if tuple(np.shape(p[k])) != s:
                raise ShapeError(f"{k} has shape {np.shape(p[k])}, expected {s}", i)


def _apply_layer(i, layer, x, nodes, p):
    kind = layer.kind
    if kind == "conv2d":
        if x.ndim != 4 or x.shape[1] != layer.in_size:
            raise ShapeError(f"conv2d expects (N, {layer.in_size}, H, W), got {x.shape}", i)
        pad = layer.kernel_size // 2 if layer.padding is None else layer.padding
        return conv2d(x, p["weight"], p.get("bias"), layer.stride, pad)
    if kind == "linear":
        if x.ndim != 2 or x.shape[1] != layer.in_size:
            raise ShapeError(f"linear expects (N, {layer.in_size}), got {x.shape}", i)
        return linear(x, p["weight"], p.get("bias"))
    if kind == "leaky-relu":
        return leaky_relu(x, layer.slope)
    if kind == "relu":
        return relu(x)
    if kind == "avg-pool":
        if x.ndim != 4:
            raise ShapeError(f"avg-pool expects a 4-D activation, got {x.shape}", i)
        try:
            return avg_pool2d(x, layer.pool)
        except ShapeError as exc:
            raise ShapeError(str(exc), i) from None
    if kind == "skip-sum":
        if not 0 <= layer.other < len(nodes):
            raise ShapeError(f"skip-sum refers to unknown node {layer.other}", i)
        y = nodes[layer.other]
        if y.shape != x.shape:
            raise ShapeError(f"skip-sum operands differ: {x.shape} vs {y.shape}", i)
        return x + y
    if kind == "flatten":
        return flatten(x)
    if kind == "square":
        return x.square() * layer.scale
    raise UnsupportedOperationError(kind)


def network(params, spec, x):
    """Build the graph of a network on a batch; returns a (N,) tensor.

    ``params`` entries may be arrays or Tensors.  The scalar output of a
    sample is the sum of the final node's entries (a width-one dense head
    makes this the head's value).
    """
    nodes = [x]
    for i, (layer, p) in enumerate(zip(spec, params)):
        src = i if layer.src is None else layer.src
        if not 0 <= src < len(nodes):
            raise ShapeError(f"source node {src} does not exist", i)
        tp = {k: as_tensor(v) for k, v in p.items()}
        nodes.append(_apply_layer(i, layer, nodes[src], nodes, tp))
    out = nodes[-1]
    if out.ndim > 1:
        out = out.reshape(out.shape[0], -1).sum(axis=1)
    return out


def _batched(input_shape, x):
    x = np.asarray(x, dtype=float)
    if input_shape is not None and tuple(x.shape) == tuple(input_shape):
        return x[None], True
    return x, False


def eval_forward(params, spec, x):
    """Network value on a single input (returned as float)."""
    _check_params(params, spec)
    x = np.asarray(x, dtype=float)
    if spec and spec[0].kind == "conv2d" and x.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) input, got {x.shape}", 0)
    if spec and spec[0].kind == "linear" and x.shape != (spec[0].in_size,):
        raise ShapeError(f"expected input of shape ({spec[0].in_size},), got {x.shape}", 0)
    out = network(params, spec, Tensor(x[None]))
    return float(out.data[0])


def grad_params(params, spec, loss_fn):
    """Gradients of a scalar loss with respect to every network parameter.

    ``loss_fn`` receives ``phi``, a function mapping an input batch to a
    (N,) Tensor of network values, and must return a scalar Tensor built
    only from supported operations.  Returns ``(loss_value, grads)`` with
    ``grads`` shaped like ``params``.
    """
    _check_params(params, spec)
    tparams = [{k: Tensor(np.asarray(v), requires_grad=True) for k, v in p.items()}
               for p in params]

    def phi(batch):
        return network(tparams, spec, as_tensor(batch))

    loss = loss_fn(phi)
    if not isinstance(loss, Tensor):
        raise UnsupportedOperationError(
            f"loss must be a Tensor built from supported ops, got {type(loss).__name__}")
    if loss.data.size != 1:
        raise AutodiffError("loss must be a scalar")
    loss.backward()
    grads = [{k: (t.grad if t.grad is not None else np.zeros_like(t.data))
              for k, t in p.items()} for p in tparams]
    return float(loss.data), grads


def grad_input_batch(params, spec, x):
    """Values and input gradients for a batch of inputs."""
    xt = Tensor(np.asarray(x, dtype=float), requires_grad=True)
    out = network(params, spec, xt)
    out.backward(np.ones_like(out.data))
    g = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    return out.data.copy(), g


def grad_input(params, spec, x):
    """Gradient of the network output with respect to a single input."""
    _check_params(params, spec)
    x = np.asarray(x, dtype=float)
    _, g = grad_input_batch(params, spec, x[None])
    return g[0]


def _central_difference(f, x, step):
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x)
        flat[k] = orig - step
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * step)
    return g


def max_relative_error(analytic, numeric, floor=1e-8):
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_difference_check(params, spec, x, step=1e-4, wrt="input", floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``wrt`` selects the input gradient (``"input"``) or all parameter
    gradients (``"params"``).  Relative errors use ``max(|a|, |n|, floor)``
    as the denominator so exactly-zero entries do not divide by zero.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    if wrt == "input":
        analytic = grad_input(params, spec, x)
        numeric = _central_difference(lambda z: eval_forward(params, spec, z), x, step)
        return max_relative_error(analytic, numeric, floor)
    if wrt != "params":
        raise ValueError("wrt must be 'input' or 'params'")
    _, grads = grad_params(params, spec, lambda phi: phi(x[None]).sum())
    worst = 0.0
    for i, p in enumerate(params):
        for k in p:
            def f(v, i=i, k=k):
                trial = [dict(q) for q in params]
                trial[i][k] = v
                return eval_forward(trial, spec, x)
            numeric = _central_difference(f, p[k], step)
            worst = max(worst, max_relative_error(grads[i][k], numeric, floor))
    return worst


class TensorFunction:
    """A scalar function of one input written with the supported ops.

    ``fn`` maps a batch Tensor (N, *input_shape) to a (N,) Tensor.  It
    exposes the same ``forward`` / ``input_gradient`` interface as a
    network so it can stand in for one as a regularizer.
    """

    def __init__(self, fn: Callable[[Tensor], Tensor], input_shape: Sequence[int]):
        self.fn = fn
        self.input_shape = tuple(input_shape)

    def forward(self, x):
        xb, single = _batched(self.input_shape, x)
        out = self.fn(Tensor(xb)).data
        return float(out[0]) if single else out.copy()

    def input_gradient(self, x):
        xb, single = _batched(self.input_shape, x)
        xt = Tensor(xb, requires_grad=True)
        out = self.fn(xt)
        out.backward(np.ones_like(out.data))
        g = xt.grad if xt.grad is not None else np.zeros_like(xb)
        return g[0] if single else g


def sum_of_squares(x, scale=1.0, center=None):
    """Per-sample ``scale * ||x - center||^2`` for a batch Tensor."""
    d = x if center is None else x - np.asarray(center, dtype=x.data.dtype)
    axes = tuple(range(1, x.ndim))
    return d.square().sum(axis=axes) * scale
