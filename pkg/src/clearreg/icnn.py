"""Input-convex networks used as learned regularizers.

Convexity in the input follows from two facts: a non-negative combination
of convex functions is convex, and a convex non-decreasing function of a
convex function is convex.  The first convolution (or dense layer) acts on
the input directly and is left unconstrained; every later weight is kept
non-negative, every later activation is a leaky ReLU with positive slope,
pooling is averaging and skip connections are plain sums.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import LayerSpec

MODES = ("CLEAR", "UNCLEAR")


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    """Conv block, six residual blocks, flatten, dense scalar head.

    ``three_conv[i]`` gives residual block ``i`` a convolution on its skip
    path; it is required wherever the channel width changes and defaults
    to exactly those blocks.  Every block except the last ends with an
    average pool.
    """

    input_shape: tuple = (2, 32, 32)
    stem_channels: int = 8
    widths: tuple = (8, 16, 16, 32, 32, 64)
    three_conv: tuple | None = None
    slope: float = 0.2
    kernel_size: int = 3
    skip_kernel_size: int = 1
    pool: int = 2

    kind = "resnet"

    def blocks_with_skip_conv(self):
        if self.three_conv is not None:
            return tuple(bool(b) for b in self.three_conv)
        prev, out = self.stem_channels, []
        for w in self.widths:
            out.append(w != prev)
            prev = w
        return tuple(out)

    def validate(self):
        c, h, w = self.input_shape
        if min(c, h, w) < 1 or self.stem_channels < 1 or min(self.widths, default=0) < 1:
            raise ArchError("shapes and widths must be positive")
        if len(self.widths) != 6:
            raise ArchError(f"expected 6 residual blocks, got {len(self.widths)}")
        three = self.blocks_with_skip_conv()
        if len(three) != len(self.widths):
            raise ArchError("three_conv must have one flag per residual block")
        if not 0.0 < self.slope < 1.0:
            raise ArchError("leaky-relu slope must lie in (0, 1)")
        prev = self.stem_channels
        for i, (width, has_conv) in enumerate(zip(self.widths, three)):
            if width != prev and not has_conv:
                raise ArchError(f"residual block {i} changes width {prev}->{width} "
                                "and needs a skip-path convolution")
            prev = width
        n_pool = len(self.widths) - 1
        if h % self.pool ** n_pool or w % self.pool ** n_pool:
            raise ArchError(f"input {h}x{w} cannot be pooled {n_pool} times by {self.pool}")

    def layers(self):
        self.validate()
        c = self.input_shape[0]
        k = self.kernel_size
        spec = [LayerSpec("conv2d", c, self.stem_channels, kernel_size=k),
                LayerSpec("relu")]
        prev = self.stem_channels
        three = self.blocks_with_skip_conv()
        h, w = self.input_shape[1:]
        for i, width in enumerate(self.widths):
            block_in = len(spec)
            spec.append(LayerSpec("conv2d", prev, width, kernel_size=k, nonneg=True))
            spec.append(LayerSpec("leaky-relu", slope=self.slope))
            spec.append(LayerSpec("conv2d", width, width, kernel_size=k, nonneg=True))
            branch = len(spec)
            if three[i]:
                spec.append(LayerSpec("conv2d", prev, width, kernel_size=self.skip_kernel_size,
                                      nonneg=True, src=block_in))
                spec.append(LayerSpec("skip-sum", other=branch))
            else:
                spec.append(LayerSpec("skip-sum", other=block_in))
            spec.append(LayerSpec("leaky-relu", slope=self.slope))
            if i < len(self.widths) - 1:
                spec.append(LayerSpec("avg-pool", pool=self.pool))
                h, w = h // self.pool, w // self.pool
            prev = width
        spec.append(LayerSpec("flatten"))
        spec.append(LayerSpec("linear", prev * h * w, 1, nonneg=True))
        return spec

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind
        return d


@dataclass(frozen=True)
class DenseArchSpec:
    """Fully connected input-convex net for low-dimensional points."""

    input_dim: int = 2
    hidden: tuple = (64, 64)
    slope: float = 0.2

    kind = "dense"

    @property
    def input_shape(self):
        return (self.input_dim,)

    def validate(self):
        if self.input_dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ArchError("dimensions must be positive and at least one hidden layer given")
        if not 0.0 < self.slope < 1.0:
            raise ArchError("leaky-relu slope must lie in (0, 1)")

    def layers(self):
        self.validate()
        spec = [LayerSpec("linear", self.input_dim, self.hidden[0]), LayerSpec("relu")]
        for a, b in zip(self.hidden[:-1], self.hidden[1:]):
            spec.append(LayerSpec("linear", a, b, nonneg=True))
            spec.append(LayerSpec("leaky-relu", slope=self.slope))
        spec.append(LayerSpec("linear", self.hidden[-1], 1, nonneg=True))
        return spec

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind
        return d


def arch_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("kind")
    for key in ("input_shape", "widths", "three_conv", "hidden"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    if kind == "resnet":
        return ArchSpec(**d)
    if kind == "dense":
        return DenseArchSpec(**d)
    raise ArchError(f"unknown architecture kind {kind!r}")


class ConvexNet:
    """Layered network Phi(x; theta) with per-parameter clip flags.

    Parameters are held as float64 arrays.  ``mode`` is ``"CLEAR"``
    (clipping enforced) or ``"UNCLEAR"`` (identical topology, clipping
    disabled).
    """

    def __init__(self, spec, params, mode="CLEAR", arch=None, input_shape=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.spec = list(spec)
        self.params = [{k: np.array(v, dtype=np.float64) for k, v in p.items()}
                       for p in params]
        ad._check_params(self.params, self.spec)
        self.mode = mode
        self.arch = arch
        if input_shape is None:
            input_shape = arch.input_shape if arch is not None else None
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.clip_mask = [{k: (k == "weight" and layer.nonneg) for k in p}
                          for layer, p in zip(self.spec, self.params)]

    def __repr__(self):
        return (f"ConvexNet(mode={self.mode!r}, layers={len(self.spec)}, "
                f"params={self.param_count})")

    @property
    def param_count(self):
        return ad.param_count(self.spec)

    def copy(self):
        return ConvexNet(self.spec, copy.deepcopy(self.params), self.mode,
                         self.arch, self.input_shape)

    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.input_shape is not None:
            if x.shape == self.input_shape:
                return x[None], True
            if x.shape[1:] != self.input_shape:
                raise ad.ShapeError(f"input shape {x.shape} does not match "
                                    f"network input {self.input_shape}")
        return x, False

    def forward(self, x):
        """Phi at a single input (float) or at a batch (array of shape (N,))."""
        xb, single = self._batch(x)
        out = ad.network(self.params, self.spec, ad.Tensor(xb)).data
        return float(out[0]) if single else out.copy()

    __call__ = forward

    def input_gradient(self, x):
        """(Sub)gradient of Phi with respect to its input."""
        xb, single = self._batch(x)
        _, g = ad.grad_input_batch(self.params, self.spec, xb)
        return g[0] if single else g

    def value_and_gradient(self, x):
        xb, single = self._batch(x)
        v, g = ad.grad_input_batch(self.params, self.spec, xb)
        return (float(v[0]), g[0]) if single else (v, g)

    def clip_(self):
        """Project clip-masked weights onto the non-negative orthant in place.

        Returns False (and warns) in UNCLEAR mode, where nothing is done.
        """
        if self.mode != "CLEAR":
            warnings.warn("clip_weights called on an UNCLEAR net; nothing done",
                          RuntimeWarning, stacklevel=2)
            return False
        for p, m in zip(self.params, self.clip_mask):
            for k, masked in m.items():
                if masked:
                    np.maximum(p[k], 0.0, out=p[k])
        return True

    def min_clipped_weight(self):
        vals = [p[k].min() for p, m in zip(self.params, self.clip_mask)
                for k, masked in m.items() if masked and p[k].size]
        return float(min(vals)) if vals else float("inf")


class ClipResult(NamedTuple):
    net: ConvexNet
    applied: bool


def _init_params(spec, rng):
    params = []
    for layer in spec:
        shapes = layer.param_shapes()
        p = {}
        if "weight" in shapes:
            shape = shapes["weight"]
            fan_in = int(np.prod(shape[1:]))
            draw = rng.standard_normal(shape)
            if layer.nonneg:
                # mean weight 1/fan_in keeps activations from growing with width
                p["weight"] = np.abs(draw) * np.sqrt(np.pi / 2.0) / fan_in
            else:
                p["weight"] = draw * np.sqrt(2.0 / fan_in)
        if "bias" in shapes:
            p["bias"] = np.zeros(shapes["bias"])
        params.append(p)
    return params


def build(arch, seed=0, mode="CLEAR"):
    """Initialized network for an architecture; deterministic in ``seed``."""
    spec = arch.layers()
    if spec[0].nonneg:
        raise ArchError("the first layer acts on the input and must stay unconstrained")
    if not spec[-1].nonneg or spec[-1].kind != "linear":
        raise ArchError("the scalar head must be a constrained dense layer")
    rng = np.random.default_rng(seed)
    return ConvexNet(spec, _init_params(spec, rng), mode=mode, arch=arch)


def from_spec(spec, params=None, mode="CLEAR", input_shape=None, seed=0):
    """Network from an explicit layer list (zero or random parameters)."""
    spec = list(spec)
    if params is None:
        params = _init_params(spec, np.random.default_rng(seed))
    return ConvexNet(spec, params, mode=mode, input_shape=input_shape)


def forward(net, x):
    return net.forward(x)


def input_gradient(net, x):
    return net.input_gradient(x)


def clip_weights(net):
    """Copy of ``net`` with every clip-masked weight replaced by max(w, 0).

    In UNCLEAR mode the copy is unchanged and ``applied`` is False.
    """
    out = net.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        applied = out.clip_()
    return ClipResult(out, applied)


@dataclass
class ConvexityReport:
    n_pairs: int
    tol: float
    violations: int
    max_violation: float
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violations == 0


def check_midpoint_convexity(net, n_pairs=1000, tol=1e-6, seed=0, scale=1.0,
                             center=0.0, batch=256):
    """Sample pairs (x, y) and test Phi((x+y)/2) <= (Phi(x)+Phi(y))/2 + tol.

    Inputs are drawn as ``center + scale * N(0, 1)`` in the network's input
    shape.  The reported ``max_violation`` is the largest excess of the
    midpoint value over the chord average (0 when none is positive).
    """
    if n_pairs < 1 or tol < 0:
        raise ValueError("need n_pairs >= 1 and tol >= 0")
    if net.input_shape is None:
        raise ValueError("network has no declared input shape")
    rng = np.random.default_rng(seed)
    violations, worst = 0, 0.0
    done = 0
    while done < n_pairs:
        m = min(batch, n_pairs - done)
        x = center + scale * rng.standard_normal((m,) + net.input_shape)
        y = center + scale * rng.standard_normal((m,) + net.input_shape)
        excess = net.forward(0.5 * (x + y)) - 0.5 * (net.forward(x) + net.forward(y))
        violations += int(np.sum(excess > tol))
        worst = max(worst, float(excess.max()))
        done += m
    return ConvexityReport(n_pairs, tol, violations, worst,
                           {"seed": seed, "scale": scale, "center": center})
