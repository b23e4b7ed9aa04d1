"""Numerical checks of the distance-function and convergence results on toy manifolds.

Everything here lives in low dimension (2 <= d <= 16) where the data
manifold is a known convex compact set and exact distances are cheap:

* the distance to the manifold is convex and 1-Lipschitz;
* a trained regularizer has its minima on the manifold;
* projected subgradient descent converges to the unique feasible
  manifold point, with a Fejer-type inequality per step;
* the reconstruction degrades continuously with measurement noise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .forward_model import CoordinateSelector
from .icnn import DenseArchSpec
from .solver import PGDConfig, pgd_reconstruct
from .training import TrainConfig, train

MANIFOLD_KINDS = ("ball", "segment", "polytope", "point-cloud")


@dataclass(frozen=True)
class ToyManifold:
    """Convex compact set in R^d: a ball, a segment or the hull of points.

    ``points`` holds the segment end points, the polytope vertices or the
    point cloud; for a ball it holds the center.
    """

    kind: str
    points: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in MANIFOLD_KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        p = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "points", p)
        if not 2 <= p.shape[1] <= 16:
            raise ValueError(f"ambient dimension must lie in [2, 16], got {p.shape[1]}")
        if self.kind == "ball" and (p.shape[0] != 1 or self.radius <= 0):
            raise ValueError("a ball needs one center and a positive radius")
        if self.kind == "segment" and p.shape[0] != 2:
            raise ValueError("a segment needs two end points")

    @property
    def dim(self):
        return self.points.shape[1]

    def describe(self):
        if self.kind == "ball":
            return f"ball(d={self.dim}, r={self.radius:g})"
        return f"{self.kind}(d={self.dim}, n={len(self.points)})"

    def bounding_box(self, margin=0.0):
        if self.kind == "ball":
            c = self.points[0]
            return c - self.radius - margin, c + self.radius + margin
        return self.points.min(axis=0) - margin, self.points.max(axis=0) + margin


def ball(dim=2, radius=1.0, center=None):
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return ToyManifold("ball", c[None], float(radius))


def segment(a, b):
    return ToyManifold("segment", np.stack([np.asarray(a, float), np.asarray(b, float)]))


def polytope(vertices):
    return ToyManifold("polytope", np.asarray(vertices, dtype=float))


def point_cloud(points):
    return ToyManifold("point-cloud", np.asarray(points, dtype=float))


# projection and distance --------------------------------------------------

def _affine_minimizer(Q):
    # min ||Q^T mu|| subject to sum(mu) = 1, via the KKT system
    k = len(Q)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = Q @ Q.T
    kkt[:k, k] = kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:k]


def min_norm_point(P, tol=1e-14, max_iter=500):
    """Point of minimal norm in the convex hull of the rows of ``P``.

    Wolfe's algorithm: grow a corral of vertices whose affine hull
    contains the current point, and step back toward the hull whenever the
    affine minimizer leaves the simplex.
    """
    P = np.asarray(P, dtype=np.float64)
    scale = max(1.0, float(np.max(np.sum(P * P, axis=1))))
    S = [int(np.argmin(np.sum(P * P, axis=1)))]
    lam = np.ones(1)
    x = P[S[0]].copy()
    for _ in range(max_iter):
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            mu = _affine_minimizer(P[S])
            if np.all(mu > 1e-15):
                lam = mu
                break
            neg = mu <= 1e-15
            ratio = lam[neg] / (lam[neg] - mu[neg])
            theta = float(np.min(ratio[np.isfinite(ratio)], initial=1.0))
            lam = lam + theta * (mu - lam)
            keep = lam > 1e-15
            if keep.all():
                keep[np.argmin(lam)] = False
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep] / lam[keep].sum()
        x = lam @ P[S]
    return x


def hull_projection_enumerated(V, x):
    """Projection onto conv(V) by enumerating every subset of at most d+1 vertices.

    Slow but independent of :func:`min_norm_point`; meant for small vertex sets.
    """
    V = np.asarray(V, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    best, best_d = None, np.inf
    for k in range(1, min(len(V), V.shape[1] + 1) + 1):
        for idx in combinations(range(len(V)), k):
            Q = V[list(idx)] - x
            mu = _affine_minimizer(Q)
            if np.all(mu >= -1e-12):
                p = mu @ V[list(idx)]
                d = float(np.linalg.norm(p - x))
                if d < best_d:
                    best, best_d = p, d
    return best


def project(m, x):
    """Euclidean projection of ``x`` (shape (d,) or (n, d)) onto the manifold."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return np.stack([project(m, xi) for xi in x])
    if x.shape != (m.dim,):
        raise ValueError(f"point of shape {x.shape} does not live in R^{m.dim}")
    if m.kind == "ball":
        c = m.points[0]
        r = np.linalg.norm(x - c)
        return x.copy() if r <= m.radius else c + (x - c) * (m.radius / r)
    if m.kind == "segment":
        a, b = m.points
        ab = b - a
        t = np.clip((x - a) @ ab / (ab @ ab), 0.0, 1.0)
        return a + t * ab
    return x + min_norm_point(m.points - x)


def manifold_distance(m, x):
    """Euclidean distance from ``x`` to the manifold (scalar or (n,) array)."""
    x = np.asarray(x, dtype=np.float64)
    if m.kind == "ball":
        r = np.linalg.norm(x - m.points[0], axis=-1)
        out = np.maximum(0.0, r - m.radius)
    else:
        out = np.linalg.norm(x - project(m, x), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# sampling -----------------------------------------------------------------

def sample_manifold(m, n, rng):
    """``n`` points of the manifold (uniform for balls and segments)."""
    d = m.dim
    if m.kind == "ball":
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = m.radius * rng.random(n) ** (1.0 / d)
        return m.points[0] + u * r[:, None]
    if m.kind == "segment":
        t = rng.random(n)[:, None]
        return m.points[0] + t * (m.points[1] - m.points[0])
    if m.kind == "point-cloud":
        return m.points[rng.integers(0, len(m.points), n)].copy()
    w = rng.dirichlet(np.ones(len(m.points)), n)
    return w @ m.points


def sample_off_manifold(m, n, distance, rng, width=0.1):
    """``n`` points whose distance to the manifold lies in [distance, distance + width]."""
    if distance <= 0 or width < 0:
        raise ValueError("need distance > 0 and width >= 0")
    out = []
    while len(out) < n:
        base = sample_manifold(m, 4 * n, rng)
        u = rng.standard_normal(base.shape)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        cand = base + u * rng.uniform(distance, 2 * distance + width, len(base))[:, None]
        dist = manifold_distance(m, cand)
        out.extend(cand[(dist >= distance) & (dist <= distance + width)])
    return np.asarray(out[:n])


def sample_box(m, n, rng, margin=1.0):
    lo, hi = m.bounding_box(margin)
    return lo + (hi - lo) * rng.random((n, m.dim))


# analytic regularizers ----------------------------------------------------

class DistanceRegularizer:
    """f(x) = distance to the manifold, with subgradient (x - P(x)) / f(x) (0 on it)."""

    def __init__(self, m):
        self.m = m
        self.input_shape = (m.dim,)

    def forward(self, x):
        return manifold_distance(self.m, x)

    def input_gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        diff = x - project(self.m, x)
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        return np.where(norm > 0, diff / np.where(norm > 0, norm, 1.0), 0.0)


class PointDistance:
    """f(x) = ||x - p||, subgradient 0 at p."""

    def __init__(self, p):
        self.p = np.asarray(p, dtype=np.float64)
        self.input_shape = self.p.shape

    def forward(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.p))

    def input_gradient(self, x):
        diff = np.asarray(x, dtype=np.float64) - self.p
        n = np.linalg.norm(diff)
        return diff / n if n > 0 else np.zeros_like(diff)


def squared_distance_regularizer(point):
    """f(x) = ||x - point||^2 written with the autodiff primitives."""
    point = np.asarray(point, dtype=np.float64)
    return ad.TensorFunction(lambda t: ad.sum_of_squares(t, 1.0, point), point.shape)


@dataclass
class AnalyticInstance:
    """Convex f, a coordinate-selection constraint Ax = b, and its unique solution."""

    name: str
    regularizer: object
    operator: CoordinateSelector
    b: np.ndarray
    solution: np.ndarray


def selector_instance():
    """Keep coordinate 0 with b = 5 and minimize ||x - (0, 2)||^2: solution (5, 2)."""
    op = CoordinateSelector(np.array([True, False]))
    return AnalyticInstance("selector-quadratic", squared_distance_regularizer([0.0, 2.0]),
                            op, np.array([5.0, 0.0]), np.array([5.0, 2.0]))


def point_distance_instance():
    """Keep coordinate 0 with b = 5 and minimize ||x - (5, 2)||: solution (5, 2)."""
    op = CoordinateSelector(np.array([True, False]))
    return AnalyticInstance("selector-point-distance", PointDistance([5.0, 2.0]),
                            op, np.array([5.0, 0.0]), np.array([5.0, 2.0]))


# harmonic steps c / (i + 1) with c = 0.9 contract the free coordinate of the
# selector instance by (1 - 1.8 / (i + 1)), so the error decays like i^-1.8
SELECTOR_PGD = PGDConfig(max_iters=500, schedule="harmonic", step_constant=0.9,
                         record_trace=False)
STABILITY_LEVELS = (0.0, 1e-3, 1e-2, 1e-1)

TOY_TRAIN = TrainConfig(latent_steps=10, latent_step_size=0.05, init_noise_std=0.5,
                        walk_noise_std=0.01, gp_weight=10.0, batch_size=64, epochs=40,
                        step_size=1e-3, optimizer="adam", mode="CLEAR")


def train_toy(m, n_samples=2000, cfg=None, seed=0, hidden=(64, 64)):
    """Train a dense input-convex regularizer on samples of a toy manifold."""
    cfg = cfg or TOY_TRAIN
    cfg = TrainConfig(**{**cfg.__dict__, "seed": seed})
    data = sample_manifold(m, n_samples, np.random.default_rng([seed, 1]))
    return train(data, cfg, arch=DenseArchSpec(input_dim=m.dim, hidden=hidden))


# reports ------------------------------------------------------------------

@dataclass
class VerificationReport:
    check: str
    passed: bool
    stats: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"check: {self.check}", f"result: {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  {k} = {_fmt(v)}" for k, v in self.stats.items()]
        lines += [f"  config.{k} = {_fmt(v)}" for k, v in self.config.items()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(float(a)) for a in np.ravel(v)) + "]"
    return str(v)


def reports_to_csv(reports):
    """One row per (check, statistic) pair: check, passed, key, value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "passed", "key", "value"])
    for r in reports:
        for k, v in list(r.stats.items()) + [(f"config.{k}", v) for k, v in r.config.items()]:
            w.writerow([r.check, int(r.passed), k, _fmt(v)])
    return buf.getvalue()


def write_reports(reports, csv_path=None, text_path=None):
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(reports_to_csv(reports))
    if text_path is not None:
        with open(text_path, "w") as fh:
            fh.write("\n".join(r.to_text() for r in reports))


# checks -------------------------------------------------------------------

def verify_distance_properties(m, n_samples=10_000, seed=0, tol=1e-9, margin=1.0):
    """Lipschitz and midpoint-convexity checks of the manifold distance on random pairs.

    Half the pairs are drawn from the bounding box grown by ``margin`` and
    half are manifold points paired with box points, so both the interior
    and the exterior of the set are exercised.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    n1 = n_samples // 2
    x = np.concatenate([sample_box(m, n1, rng, margin),
                        sample_manifold(m, n_samples - n1, rng)])
    y = sample_box(m, n_samples, rng, margin)
    dx, dy = manifold_distance(m, x), manifold_distance(m, y)
    dmid = manifold_distance(m, 0.5 * (x + y))
    lip = np.abs(dx - dy) - np.linalg.norm(x - y, axis=1)
    cvx = dmid - 0.5 * (dx + dy)
    stats = {
        "pairs": n_samples,
        "lipschitz_violations": int(np.sum(lip > tol)),
        "lipschitz_max_excess": float(max(lip.max(), 0.0)),
        "convexity_violations": int(np.sum(cvx > tol)),
        "convexity_max_excess": float(max(cvx.max(), 0.0)),
    }
    passed = stats["lipschitz_violations"] == 0 and stats["convexity_violations"] == 0
    return VerificationReport("distance-properties", passed, stats,
                              {"manifold": m.describe(), "seed": seed, "tol": tol,
                               "margin": margin})


def descend(regularizer, starts, step, budget):
    """Noise-free subgradient descent x <- x - step * g(x) from each start."""
    x = np.array(starts, dtype=np.float64)
    for _ in range(budget):
        x = x - step * regularizer.input_gradient(x)
    return x


def verify_minima_on_manifold(net, m, n_starts=100, eps=0.1, budget=500, seed=0,
                              step=0.01, margin=1.0, eps_value=0.05, off_distance=0.5,
                              n_fresh=200, fraction=0.9, percentile=10.0):
    """Do the minima of ``net`` sit on the manifold, and does the manifold sit low?

    Forward direction: from random starts in the bounding box (grown by
    ``margin``) run ``budget`` descent steps and count endpoints within
    ``eps`` of the manifold.  Converse direction: count fresh manifold
    samples whose value is at most the ``percentile``-th percentile of
    values at distance ``off_distance`` from the manifold, and (reported
    only) at most the lowest descent value plus ``eps_value``.
    """
    rng = np.random.default_rng(seed)
    starts = sample_box(m, n_starts, rng, margin)
    ends = descend(net, starts, step, budget)
    end_dist = manifold_distance(m, ends)
    frac_near = float(np.mean(end_dist <= eps))
    fresh = sample_manifold(m, n_fresh, rng)
    off = sample_off_manifold(m, n_fresh, off_distance, rng)
    phi_fresh = np.asarray(net.forward(fresh), dtype=float)
    phi_off = np.asarray(net.forward(off), dtype=float)
    phi_min = float(np.min(np.asarray(net.forward(ends), dtype=float)))
    threshold = float(np.percentile(phi_off, percentile))
    frac_low = float(np.mean(phi_fresh <= threshold))
    stats = {
        "fraction_endpoints_near": frac_near,
        "max_endpoint_distance": float(end_dist.max()),
        "median_endpoint_distance": float(np.median(end_dist)),
        "fraction_manifold_below_off_percentile": frac_low,
        "fraction_manifold_near_min": float(np.mean(phi_fresh <= phi_min + eps_value)),
        "mean_phi_manifold": float(phi_fresh.mean()),
        "mean_phi_off": float(phi_off.mean()),
    }
    passed = frac_near >= fraction and frac_low >= fraction
    return VerificationReport("minima-on-manifold", passed, stats,
                              {"manifold": m.describe(), "n_starts": n_starts, "eps": eps,
                               "budget": budget, "step": step, "seed": seed,
                               "off_distance": off_distance, "fraction": fraction,
                               "percentile": percentile})


def _pgd(instance, cfg, b=None):
    cfg = PGDConfig(cfg.max_iters, cfg.schedule, cfg.step_constant, record_trace=False,
                    record_iterates=True)
    return pgd_reconstruct(instance.regularizer, instance.operator,
                           instance.b if b is None else b, cfg)


def verify_pgd_convergence(instance, cfg, tol=1e-3, fejer_tol=1e-10):
    """Final error below ``tol`` and ||x_{k+1}-x+||^2 <= ||x_k-x+||^2 + t_k^2 every step."""
    res = _pgd(instance, cfg)
    errs = np.array([np.sum((x - instance.solution) ** 2) for x in res.iterates])
    t = np.asarray(res.steps)
    excess = errs[1:] - errs[:-1] - t ** 2
    final = float(np.sqrt(errs[-1]))
    stats = {
        "iterations": res.iterations,
        "initial_error": float(np.sqrt(errs[0])),
        "final_error": final,
        "fejer_violations": int(np.sum(excess > fejer_tol)),
        "fejer_max_excess": float(max(excess.max(), 0.0)),
    }
    passed = final < tol and stats["fejer_violations"] == 0
    return VerificationReport("pgd-convergence", passed, stats,
                              {"instance": instance.name, "schedule": cfg.schedule,
                               "step_constant": cfg.step_constant,
                               "max_iters": cfg.max_iters, "tol": tol})


def verify_stability(instance, noise_levels, trials, cfg, seed=0, tol=1e-3):
    """Error of the reconstruction from b + delta * xi as delta grows.

    ``xi`` is standard Gaussian on the measured coordinates and is shared by
    all noise levels within a trial, so the sweep isolates the effect of
    delta.  Passes when e(0) <= tol and e is non-decreasing in delta.
    """
    levels = [float(d) for d in noise_levels]
    if levels != sorted(levels) or 0.0 not in levels:
        raise ValueError("noise levels must be sorted ascending and include 0")
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    mask = instance.operator.mask
    xis = [np.where(mask, rng.standard_normal(mask.shape), 0.0) for _ in range(trials)]
    errors = []
    for d in levels:
        e = [np.linalg.norm(_pgd(instance, cfg, instance.b + d * xi).image - instance.solution)
             for xi in xis]
        errors.append(float(np.mean(e)))
    errors = np.array(errors)
    pos = np.array(levels) > 0
    slope = float(np.max((errors[pos] - errors[0]) / np.array(levels)[pos])) if pos.any() else 0.0
    monotone = bool(np.all(np.diff(errors) >= 0))
    stats = {
        "errors": errors.tolist(),
        "e0": float(errors[0]),
        "fitted_C": slope,
        "non_decreasing": monotone,
    }
    if pos.sum() >= 2:
        stats["ratio_first_to_last"] = float(errors[pos][0] / errors[-1])
    passed = errors[0] <= tol and monotone
    return VerificationReport("stability", passed, stats,
                              {"instance": instance.name, "noise_levels": levels,
                               "trials": trials, "seed": seed, "tol": tol,
                               "schedule": cfg.schedule, "step_constant": cfg.step_constant,
                               "max_iters": cfg.max_iters})
