"""Adversarial training of the convex regularizer with latent optimization.

Each step draws real samples x+, generates x* by noisy (sub)gradient
descent on the current network started from a heavily perturbed x+, and
takes an optimizer step on

    mean Phi(x+) - mean Phi(x*) + lam * mean (D(x) - 1)^2

where D is a central-difference estimate of the directional derivative of
Phi along its own (frozen) input-gradient direction.  In CLEAR mode the
constrained weights are clipped after every step.  Mode AR skips the
descent (x* = x+ + noise) and mode UNCLEAR skips the clipping; the loss
path is shared by all three.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, asdict, fields

import numpy as np

from . import autodiff as ad
from .icnn import ConvexNet, ArchSpec, DenseArchSpec, build, arch_from_dict

log = logging.getLogger(__name__)

TRAIN_MODES = ("CLEAR", "UNCLEAR", "AR")
FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    latent_steps: int = 10
    latent_step_size: float = 0.05
    init_noise_std: float = 0.3
    walk_noise_std: float = 0.01
    gp_weight: float = 10.0
    gp_direction_eps: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    step_size: float = 1e-4
    optimizer: str = "sgd"
    adam_betas: tuple = (0.9, 0.999)
    mode: str = "CLEAR"
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    def validate(self):
        if self.latent_steps < 0:
            raise ValueError("latent_steps must be >= 0")
        if self.latent_step_size <= 0:
            raise ValueError("latent_step_size must be > 0")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be >= 0")
        if self.gp_direction_eps <= 0:
            raise ValueError("gp_direction_eps must be > 0")
        if self.init_noise_std < 0 or self.walk_noise_std < 0:
            raise ValueError("noise levels must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}")

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(a)) for a in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in kinds:
                raise KeyError(f"unknown training key {key!r}")
            values[key] = _coerce(cls.__dataclass_fields__[key].default, raw)
        return cls(**values)


def _coerce(default, raw):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(a) for a in raw.split(","))
    return raw


@dataclass
class Checkpoint:
    """Serializable training result.

    Parameters are stored as float32 arrays so that a checkpoint survives
    the on-disk format bit-exactly.
    """

    arch: object
    spec: list
    params: list
    mode: str
    config: TrainConfig
    epoch: int = 0
    seed: int = 0
    version: int = FORMAT_VERSION
    history: list = field(default_factory=list, compare=False)

    @classmethod
    def from_net(cls, net, mode, config, epoch=0, history=None):
        params = [{k: np.asarray(v, dtype=np.float32).copy() for k, v in p.items()}
                  for p in net.params]
        return cls(net.arch, list(net.spec), params, mode, config, epoch,
                   config.seed, FORMAT_VERSION, list(history or []))

    def to_net(self):
        net_mode = "CLEAR" if self.mode == "CLEAR" else "UNCLEAR"
        shape = self.arch.input_shape if self.arch is not None else None
        return ConvexNet(self.spec, self.params, mode=net_mode, arch=self.arch,
                         input_shape=shape)

    def same_as(self, other):
        """Bit-level equality of everything the file format stores."""
        if (self.mode, self.epoch, self.seed, self.version) != \
                (other.mode, other.epoch, other.seed, other.version):
            return False
        if [s.to_dict() for s in self.spec] != [s.to_dict() for s in other.spec]:
            return False
        if (self.arch.to_dict() if self.arch else None) != \
                (other.arch.to_dict() if other.arch else None):
            return False
        if self.config.to_text() != other.config.to_text():
            return False
        for p, q in zip(self.params, other.params):
            if p.keys() != q.keys():
                return False
            for k in p:
                if p[k].dtype != q[k].dtype or p[k].tobytes() != q[k].tobytes():
                    return False
        return len(self.params) == len(other.params)


# sample generation --------------------------------------------------------

def latent_optimize(net, x_plus, cfg, seed=0):
    """Generate x* from x+ by t noisy (sub)gradient steps on Phi.

    x_0 = x+ + N(0, init_noise_std^2);
    x_k = x_{k-1} - eta * grad Phi(x_{k-1}) + N(0, walk_noise_std^2).

    Works on a single sample or on a batch; the network is not modified.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x_plus, dtype=np.float64)
    x = x + cfg.init_noise_std * rng.standard_normal(x.shape)
    for _ in range(cfg.latent_steps):
        x = x - cfg.latent_step_size * net.input_gradient(x)
        if cfg.walk_noise_std:
            x = x + cfg.walk_noise_std * rng.standard_normal(x.shape)
    return x


def _unit_directions(g, rng):
    flat = g.reshape(g.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    v = np.empty_like(flat)
    small = norms < 1e-12
    v[~small] = flat[~small] / norms[~small, None]
    if small.any():
        r = rng.standard_normal((int(small.sum()), flat.shape[1]))
        v[small] = r / np.linalg.norm(r, axis=1, keepdims=True)
    return v.reshape(g.shape)


def _penalty_tensor(phi, net, points, eps, rng):
    points = np.asarray(points, dtype=np.float64)
    g = net.input_gradient(points)
    v = _unit_directions(g, rng)
    d = (phi(points + eps * v) - phi(points - eps * v)) / (2.0 * eps)
    return (d - 1.0).square().mean()


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    if net.input_shape is not None and x.shape == net.input_shape:
        return x[None]
    return x


def gradient_penalty(net, points, eps=1e-3, seed=0):
    """mean over points of (D(x) - 1)^2, D the directional finite difference
    of Phi along the normalized input gradient."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    pts = _as_batch(net, points)
    phi = lambda z: ad.network(net.params, net.spec, ad.Tensor(z))
    return float(_penalty_tensor(phi, net, pts, eps, rng).data)


def _loss_tensor(phi, net, reals, generateds, gp_points, lam, eps, rng):
    loss = phi(reals).mean() - phi(generateds).mean()
    penalty = None
    if lam > 0 and gp_points is not None and len(gp_points):
        penalty = _penalty_tensor(phi, net, gp_points, eps, rng)
        loss = loss + penalty * lam
    return loss, penalty


def clear_loss(net, reals, generateds, gp_points, lam, eps=1e-3, seed=0):
    """mean Phi(reals) - mean Phi(generateds) + lam * gradient_penalty."""
    reals, generateds = _as_batch(net, reals), _as_batch(net, generateds)
    if len(reals) == 0 or len(reals) != len(generateds):
        raise ValueError(f"batch sizes differ or are empty: {len(reals)} vs {len(generateds)}")
    gp = None if gp_points is None else _as_batch(net, gp_points)
    rng = np.random.default_rng(seed)
    phi = lambda z: ad.network(net.params, net.spec, ad.Tensor(z))
    loss, _ = _loss_tensor(phi, net, reals, generateds, gp, lam, eps, rng)
    return float(loss.data)


def loss_and_grads(net, reals, generateds, gp_points, lam, eps, rng):
    """Loss value, penalty value and parameter gradients of the training loss."""
    state = {}

    def fn(phi):
        loss, penalty = _loss_tensor(phi, net, reals, generateds, gp_points, lam, eps, rng)
        state["penalty"] = 0.0 if penalty is None else float(penalty.data)
        return loss

    value, grads = ad.grad_params(net.params, net.spec, fn)
    return value, state["penalty"], grads


class _Adam:
    def __init__(self, params, lr, betas):
        self.lr, (self.b1, self.b2) = lr, betas
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                m[k] = self.b1 * m[k] + (1 - self.b1) * g[k]
                v[k] = self.b2 * v[k] + (1 - self.b2) * g[k] ** 2
                p[k] -= self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + 1e-8)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            for k in p:
                p[k] -= self.lr * g[k]


def generate_samples(net, x_plus, cfg, seed):
    """x* for a batch: latent descent (CLEAR/UNCLEAR) or noise only (AR)."""
    if cfg.mode == "AR":
        rng = np.random.default_rng(seed)
        return x_plus + cfg.init_noise_std * rng.standard_normal(x_plus.shape)
    return latent_optimize(net, x_plus, cfg, seed)


def default_arch(sample_shape):
    if len(sample_shape) == 1:
        return DenseArchSpec(input_dim=sample_shape[0])
    return ArchSpec(input_shape=tuple(sample_shape))


def train(dataset, cfg, arch=None, net=None, log_path=None, callback=None):
    """Train a regularizer; returns a :class:`Checkpoint`.

    ``dataset`` is a sequence (or array) of samples of identical shape.  An
    initial ``net`` may be given instead of ``arch``.  Per-epoch statistics
    are kept in ``Checkpoint.history`` and, if ``log_path`` is set, written
    as CSV.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim < 2 or len(data) == 0:
        raise ValueError("dataset must be a non-empty collection of samples")
    net_mode = "CLEAR" if cfg.mode == "CLEAR" else "UNCLEAR"
    if net is None:
        arch = arch or default_arch(data.shape[1:])
        net = build(arch, seed=cfg.seed, mode=net_mode)
    else:
        net = net.copy()
        net.mode = net_mode
    if net.input_shape is not None and tuple(data.shape[1:]) != net.input_shape:
        raise ValueError(f"samples of shape {data.shape[1:]} do not fit network "
                         f"input {net.input_shape}")

    seq = np.random.SeedSequence(cfg.seed)
    order_rng, noise_seq, gp_rng = (np.random.default_rng(seq.spawn(1)[0]),
                                    seq.spawn(1)[0],
                                    np.random.default_rng(seq.spawn(1)[0]))
    opt = (_Adam(net.params, cfg.step_size, cfg.adam_betas) if cfg.optimizer == "adam"
           else _SGD(cfg.step_size))
    history = []
    step = 0
    n = len(data)
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        stats = {"loss": [], "penalty": [], "phi_real": [], "phi_gen": []}
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x_plus = data[idx]
            batch_seed = int(noise_seq.generate_state(1)[0]) + step
            x_star = generate_samples(net, x_plus, cfg, batch_seed)
            alpha = gp_rng.random((len(idx),) + (1,) * (data.ndim - 1))
            gp_points = alpha * x_plus + (1 - alpha) * x_star
            loss, penalty, grads = loss_and_grads(net, x_plus, x_star, gp_points,
                                                  cfg.gp_weight, cfg.gp_direction_eps, gp_rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, step {step}")
            opt.step(net.params, grads)
            if net.mode == "CLEAR":
                net.clip_()
            stats["loss"].append(loss)
            stats["penalty"].append(penalty)
            stats["phi_real"].append(float(np.mean(net.forward(x_plus))))
            stats["phi_gen"].append(float(np.mean(net.forward(x_star))))
            step += 1
        row = {"epoch": epoch + 1, **{k: float(np.mean(v)) for k, v in stats.items()}}
        history.append(row)
        log.info("epoch %d loss %.5g penalty %.4g phi_real %.4g phi_gen %.4g",
                 row["epoch"], row["loss"], row["penalty"], row["phi_real"], row["phi_gen"])
        if callback is not None:
            callback(row, net)
    if log_path is not None:
        write_history_csv(log_path, history)
    return Checkpoint.from_net(net, cfg.mode, cfg, epoch=cfg.epochs, history=history)


def write_history_csv(path, history):
    cols = ["epoch", "loss", "penalty", "phi_real", "phi_gen"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in cols})
