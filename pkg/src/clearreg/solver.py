"""Projected subgradient descent under a learned convex regularizer.

Solves min Phi(x) subject to Ax = b by alternating

    x_{i-1/2} = x_{i-1} - t_{i-1} * g(x_{i-1}),   g a subgradient of Phi
    x_i       = P_A(x_{i-1/2})

from the zero-filled start x_0 = A^H b.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .forward_model import as_operator, magnitude
from .metrics import psnr

SCHEDULES = ("constant", "harmonic", "sqrt")


class SolverDivergedError(RuntimeError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class PGDConfig:
    max_iters: int = 100
    schedule: str = "harmonic"
    step_constant: float = 0.1
    record_trace: bool = True
    record_iterates: bool = False
    ground_truth: np.ndarray | None = None
    early_stop_tol: float | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.step_constant < 0:
            raise ValueError("step_constant must be >= 0")


@dataclass
class ReconResult:
    image: np.ndarray
    iterations: int
    phi: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "phi", "residual", "psnr"])
            for i in range(len(self.phi)):
                p = self.psnr[i] if self.psnr else ""
                w.writerow([i + 1, repr(self.phi[i]), repr(self.residual[i]),
                            repr(p) if p != "" else ""])


def step_size(cfg, i):
    """Step t_i for iteration index i >= 0.

    ``harmonic`` gives c/(i+1) (sum diverges, sum of squares converges),
    ``sqrt`` gives c/sqrt(i+1), ``constant`` gives c.
    """
    if i < 0:
        raise ValueError("iteration index must be >= 0")
    c = cfg.step_constant
    if cfg.schedule == "harmonic":
        return c / (i + 1)
    if cfg.schedule == "sqrt":
        return c / math.sqrt(i + 1)
    return c


def _psnr_of(x, truth):
    if x.ndim == 3 and x.shape[0] == 2:
        ref, test = magnitude(truth), magnitude(x)
    else:
        ref, test = np.asarray(truth), np.asarray(x)
    return psnr(ref, test)


def pgd_reconstruct(regularizer, operator, b, cfg, x0=None):
    """Run projected subgradient descent and return a :class:`ReconResult`.

    ``regularizer`` needs ``forward(x)`` and ``input_gradient(x)``;
    ``operator`` is a :class:`~clearreg.forward_model.MaskedOperator` or a
    k-space mask (wrapped as masked Fourier sampling).
    """
    op = as_operator(operator)
    x = op.adjoint(b) if x0 is None else op.project(np.asarray(x0, dtype=float), b)
    result = ReconResult(image=x, iterations=0)
    if cfg.record_iterates:
        result.iterates.append(x.copy())
    truth = cfg.ground_truth
    for i in range(1, cfg.max_iters + 1):
        t = step_size(cfg, i - 1)
        d = t * regularizer.input_gradient(x) if t != 0 else None
        # every iterate is feasible, so a vanishing step leaves x fixed exactly
        x_new = op.project(x - d, b) if d is not None and np.any(d) else x
        if not np.all(np.isfinite(x_new)):
            raise SolverDivergedError(f"non-finite iterate at step {i}", result)
        moved = float(np.linalg.norm(x_new - x))
        x = x_new
        result.iterations = i
        result.image = x
        result.steps.append(t)
        if cfg.record_iterates:
            result.iterates.append(x.copy())
        if cfg.record_trace:
            result.phi.append(float(regularizer.forward(x)))
            result.residual.append(op.residual(x, b))
            if truth is not None:
                result.psnr.append(_psnr_of(x, truth))
        if cfg.early_stop_tol is not None and moved < cfg.early_stop_tol:
            break
    return result


def objective_value(regularizer, operator, b, x, lam):
    """||Ax - b||^2 + lam * Phi(x) (diagnostic; PGD solves the constrained form)."""
    op = as_operator(operator)
    return op.residual(x, b) ** 2 + lam * float(regularizer.forward(x))
