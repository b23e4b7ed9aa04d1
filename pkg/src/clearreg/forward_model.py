"""Masked Fourier sampling, its adjoint and exact data-consistency projection.

Images are real arrays of shape (2, H, W) holding the real and imaginary
channels.  k-space is stored centered (zero frequency at index (H//2, W//2))
and the DFT is unitary, so the sampling operator A = M F satisfies
A A^H = I on the sampled set and the projection onto {x : Ax = b} is
closed-form: replace the sampled k-space entries by b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK_KINDS = ("uniform-1d", "random-1d", "poisson-2d", "gaussian-2d")


class MaskError(ValueError):
    pass


def to_complex(x):
    x = np.asarray(x)
    if x.ndim < 1 or x.shape[0] != 2:
        raise ValueError(f"expected a 2-channel (real, imag) image, got shape {x.shape}")
    return x[0] + 1j * x[1]


def from_complex(z):
    z = np.asarray(z)
    return np.stack([z.real, z.imag]).astype(np.float64)


def real_image(a):
    """2-channel image with ``a`` as real part and zero imaginary part."""
    a = np.asarray(a, dtype=np.float64)
    return np.stack([a, np.zeros_like(a)])


def magnitude(x):
    x = np.asarray(x)
    return np.hypot(x[0], x[1])


def fft2c(z):
    return np.fft.fftshift(np.fft.fft2(z, norm="ortho"), axes=(-2, -1))


def ifft2c(k):
    return np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), norm="ortho")


@dataclass
class SamplingMask:
    """Binary k-space mask in centered layout."""

    data: np.ndarray
    kind: str = "custom"
    requested_acceleration: float | None = None

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise MaskError("mask must be 2-D")
        if not np.all((d == 0) | (d == 1)):
            raise MaskError("mask entries must be 0 or 1")
        if not d.any():
            raise MaskError("mask keeps no k-space samples")
        self.data = d.astype(bool)

    @property
    def shape(self):
        return self.data.shape

    @property
    def acceleration(self):
        return self.data.size / float(self.data.sum())

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def _mask_array(mask):
    m = mask.data if isinstance(mask, SamplingMask) else np.asarray(mask)
    return m.astype(bool)


def _center_band(n, width):
    if width <= 0:
        return np.zeros(n, dtype=bool)
    lo = n // 2 - width // 2
    band = np.zeros(n, dtype=bool)
    band[lo:lo + width] = True
    return band


def make_mask(kind, shape, acceleration, acs_fraction=0.08, seed=0):
    """Cartesian or 2-D random sampling mask.

    1-D kinds keep whole columns (phase-encode lines along the width axis)
    plus a fully sampled center band of ``round(acs_fraction * W)``
    columns; 2-D kinds keep a fully sampled center square of side
    ``round(acs_fraction * min(H, W))``.  The number of kept samples is
    matched to ``total / acceleration``.
    """
    if kind not in MASK_KINDS:
        raise MaskError(f"unknown mask kind {kind!r}; choose from {MASK_KINDS}")
    if acceleration <= 1:
        raise MaskError("acceleration must exceed 1")
    if not 0 <= acs_fraction < 1:
        raise MaskError("acs_fraction must lie in [0, 1)")
    h, w = shape
    rng = np.random.default_rng(seed)
    if kind.endswith("1d"):
        n_acs = int(round(acs_fraction * w))
        target = max(1, int(round(w / acceleration)))
        _check_feasible(w, n_acs, acceleration)
        acs = _center_band(w, n_acs)
        if kind == "uniform-1d":
            cols = _uniform_columns(w, acs, target)
        else:
            cols = acs.copy()
            free = np.flatnonzero(~acs)
            extra = max(0, target - int(acs.sum()))
            cols[rng.choice(free, size=extra, replace=False)] = True
        data = np.broadcast_to(cols, (h, w)).copy()
    else:
        side = int(round(acs_fraction * min(h, w)))
        acs = np.outer(_center_band(h, side), _center_band(w, side))
        target = max(1, int(round(h * w / acceleration)))
        _check_feasible(h * w, int(acs.sum()), acceleration)
        if kind == "gaussian-2d":
            data = _gaussian_2d(shape, acs, target, rng)
        else:
            data = _poisson_2d(shape, acs, target, rng)
    return SamplingMask(data, kind, float(acceleration))


def _check_feasible(total, n_acs, acceleration):
    if n_acs and total / n_acs < 0.9 * acceleration:
        raise MaskError(f"center region of {n_acs} samples already exceeds the budget "
                        f"for acceleration {acceleration}")


def _uniform_columns(w, acs, target):
    # equispaced lines over all spacings and offsets; the union with the center
    # band closest to the target wins, then the count is trimmed to the target
    # from the outermost lines (or topped up next to the center band)
    best, best_gap = None, None
    for n in range(1, w + 1):
        step = w / n
        for off in range(int(np.ceil(step))):
            cols = acs.copy()
            cols[(np.round(np.arange(n) * step).astype(int) + off) % w] = True
            gap = abs(int(cols.sum()) - target)
            if best is None or gap < best_gap:
                best, best_gap = cols, gap
    cols = best
    dist = np.abs(np.arange(w) - w // 2)
    while cols.sum() > target:
        cand = np.flatnonzero(cols & ~acs)
        cols[cand[np.argmax(dist[cand])]] = False
    while cols.sum() < target:
        cand = np.flatnonzero(~cols)
        cols[cand[np.argmin(dist[cand])]] = True
    return cols


def _radius(shape):
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij")
    return np.hypot(yy / (h / 2.0), xx / (w / 2.0))


def _gaussian_2d(shape, acs, target, rng, sigma=0.35):
    r = _radius(shape)
    weight = np.exp(-0.5 * (r / sigma) ** 2).ravel()
    weight[acs.ravel()] = 0.0
    data = acs.ravel().copy()
    extra = max(0, target - int(acs.sum()))
    idx = rng.choice(data.size, size=extra, replace=False, p=weight / weight.sum())
    data[idx] = True
    return data.reshape(shape)


def _poisson_once(shape, acs, r0, slope, order):
    h, w = shape
    rad = _radius(shape)
    taken = acs.copy()
    darts = np.zeros(shape, dtype=bool)
    for flat in order:
        i, j = divmod(int(flat), w)
        if taken[i, j]:
            continue
        rmin = r0 * (1.0 + slope * rad[i, j])
        k = int(np.ceil(rmin))
        i0, i1, j0, j1 = max(0, i - k), min(h, i + k + 1), max(0, j - k), min(w, j + k + 1)
        pi, pj = np.nonzero(darts[i0:i1, j0:j1])
        if pi.size and np.min((pi + i0 - i) ** 2 + (pj + j0 - j) ** 2) < rmin * rmin:
            continue
        darts[i, j] = True
        taken[i, j] = True
    return taken


def _poisson_2d(shape, acs, target, rng, slope=2.0):
    """Variable-density dart throwing; the base radius is bisected to the target."""
    order = rng.permutation(shape[0] * shape[1])
    lo, hi = 0.0, float(max(shape))
    best = None
    for _ in range(30):
        r0 = 0.5 * (lo + hi)
        m = _poisson_once(shape, acs, r0, slope, order)
        n = int(m.sum())
        if best is None or abs(n - target) < abs(int(best.sum()) - target):
            best = m
        if n == target:
            break
        if n > target:
            lo = r0
        else:
            hi = r0
    m = best.copy()
    n = int(m.sum())
    if n > target:
        drop = rng.choice(np.flatnonzero((m & ~acs).ravel()), size=n - target, replace=False)
        m.ravel()[drop] = False
    elif n < target:
        add = rng.choice(np.flatnonzero(~m.ravel()), size=target - n, replace=False)
        m.ravel()[add] = True
    return m


def _check_shapes(mask, shape):
    if tuple(mask.shape) != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match data shape {tuple(shape)}")


def apply_A(mask, x):
    """Measurement b = M F x (complex, zero off the mask)."""
    m = _mask_array(mask)
    z = to_complex(x)
    _check_shapes(m, z.shape)
    return np.where(m, fft2c(z), 0.0)


def apply_A_adjoint(mask, b):
    """A^H b: the zero-filled reconstruction as a 2-channel image."""
    m = _mask_array(mask)
    b = np.asarray(b)
    _check_shapes(m, b.shape)
    return from_complex(ifft2c(np.where(m, b, 0.0)))


def project_data_consistency(mask, b, x):
    """Euclidean projection of ``x`` onto {x : Ax = b}."""
    m = _mask_array(mask)
    z = to_complex(x)
    _check_shapes(m, z.shape)
    k = fft2c(z)
    k = np.where(m, b, k)
    return from_complex(ifft2c(k))


def add_noise(b, level, seed=0, mask=None):
    """Complex Gaussian noise on the sampled entries of ``b``.

    The noise has E|n|^2 = (level * rms)^2, where rms is the root mean
    square of ``b`` over the support (``mask`` if given, else b != 0).
    Entries off the support stay exactly zero.
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    b = np.asarray(b, dtype=complex)
    support = _mask_array(mask) if mask is not None else (b != 0)
    if level == 0 or not support.any():
        return b.copy()
    rms = np.sqrt(np.mean(np.abs(b[support]) ** 2))
    std = level * rms
    rng = np.random.default_rng(seed)
    n = support.sum()
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (std / np.sqrt(2.0))
    out = b.copy()
    out[support] += noise
    return out


class MaskedOperator:
    """Unitary transform followed by a binary mask.

    Subclasses give the transform; the adjoint, the projection onto
    {x : Ax = b} and the data residual follow from unitarity.
    """

    def __init__(self, mask):
        self.mask = _mask_array(mask)

    def transform(self, x):
        raise NotImplementedError

    def inverse(self, k):
        raise NotImplementedError

    def forward(self, x):
        return np.where(self.mask, self.transform(x), 0)

    def adjoint(self, b):
        return self.inverse(np.where(self.mask, b, 0))

    def project(self, x, b):
        return self.inverse(np.where(self.mask, b, self.transform(x)))

    def residual(self, x, b):
        return float(np.linalg.norm(self.forward(x) - np.where(self.mask, b, 0)))


class MaskedFourier(MaskedOperator):
    """A = M F acting on 2-channel images."""

    def transform(self, x):
        return fft2c(to_complex(x))

    def inverse(self, k):
        return from_complex(ifft2c(k))


class CoordinateSelector(MaskedOperator):
    """A selects the masked coordinates of a real vector (identity transform)."""

    def transform(self, x):
        return np.asarray(x, dtype=np.float64)

    def inverse(self, k):
        return np.asarray(k, dtype=np.float64).copy()


def as_operator(mask_or_operator):
    if isinstance(mask_or_operator, MaskedOperator):
        return mask_or_operator
    return MaskedFourier(mask_or_operator)
