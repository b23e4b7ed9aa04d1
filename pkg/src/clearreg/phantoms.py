"""Synthetic test images standing in for MR slices."""

from __future__ import annotations

import numpy as np

from .forward_model import real_image

PHANTOM_KINDS = ("ellipses", "piecewise-constant", "shepp-logan-like")

# (intensity, a, b, x0, y0, angle in degrees) in the [-1, 1]^2 frame
_SHEPP_LOGAN = [
    (1.00, 0.69, 0.92, 0.00, 0.0000, 0),
    (-0.80, 0.6624, 0.874, 0.00, -0.0184, 0),
    (-0.20, 0.11, 0.31, 0.22, 0.0000, -18),
    (-0.20, 0.16, 0.41, -0.22, 0.0000, 18),
    (0.10, 0.21, 0.25, 0.00, 0.3500, 0),
    (0.10, 0.046, 0.046, 0.00, 0.1000, 0),
    (0.10, 0.046, 0.046, 0.00, -0.1000, 0),
    (0.10, 0.046, 0.023, -0.08, -0.6050, 0),
    (0.10, 0.023, 0.023, 0.00, -0.6060, 0),
    (0.10, 0.023, 0.046, 0.06, -0.6050, 0),
]


def _grid(size):
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    return np.meshgrid(c, -c, indexing="xy")


def ellipse_mask(size, a, b, x0, y0, angle_deg):
    xx, yy = _grid(size)
    th = np.deg2rad(angle_deg)
    xr = (xx - x0) * np.cos(th) + (yy - y0) * np.sin(th)
    yr = -(xx - x0) * np.sin(th) + (yy - y0) * np.cos(th)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _ellipses(size, rng):
    img = np.zeros((size, size))
    outer = (rng.uniform(0.6, 0.85), rng.uniform(0.7, 0.9))
    body = ellipse_mask(size, *outer, 0.0, 0.0, rng.uniform(-20, 20))
    img[body] = rng.uniform(0.4, 0.6)
    for _ in range(rng.integers(3, 7)):
        a, b = rng.uniform(0.08, 0.3, size=2)
        x0, y0 = rng.uniform(-0.45, 0.45, size=2)
        e = ellipse_mask(size, a, b, x0, y0, rng.uniform(0, 180)) & body
        img[e] = rng.uniform(0.0, 1.0)
    return img


def _piecewise_constant(size, rng):
    img = np.full((size, size), rng.uniform(0.0, 0.2))
    for _ in range(rng.integers(3, 7)):
        h, w = rng.integers(size // 8, size // 2 + 1, size=2)
        i, j = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        img[i:i + h, j:j + w] = rng.uniform(0.2, 1.0)
    return img


def _shepp_logan_like(size, rng):
    img = np.zeros((size, size))
    for k, (val, a, b, x0, y0, ang) in enumerate(_SHEPP_LOGAN):
        jitter = 1.0 if k < 2 else rng.uniform(0.8, 1.2)
        shift = 0.0 if k < 2 else rng.uniform(-0.05, 0.05)
        img[ellipse_mask(size, a * jitter, b * jitter, x0 + shift, y0 + shift,
                         ang + rng.uniform(-10, 10))] += val * (1.0 if k < 2 else
                                                              rng.uniform(0.5, 1.5))
    img -= img.min()
    return img / img.max()


def make_phantom(kind, size=32, seed=0):
    """Real image in [0, 1] as a 2-channel array (imaginary channel zero)."""
    if size < 16:
        raise ValueError("phantom size must be at least 16")
    rng = np.random.default_rng(seed)
    if kind == "ellipses":
        img = _ellipses(size, rng)
    elif kind == "piecewise-constant":
        img = _piecewise_constant(size, rng)
    elif kind == "shepp-logan-like":
        img = _shepp_logan_like(size, rng)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")
    return real_image(np.clip(img, 0.0, 1.0))


def phantom_set(n, size=32, seed=0, kinds=PHANTOM_KINDS):
    """``n`` phantoms cycling through ``kinds``; phantom i uses seed (seed, i)."""
    out = []
    for i in range(n):
        s = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        out.append(make_phantom(kinds[i % len(kinds)], size, s))
    return np.stack(out)
