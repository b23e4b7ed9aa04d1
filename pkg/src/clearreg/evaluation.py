"""Comparative reconstruction experiments: zero-filled, TV and learned regularizers."""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .forward_model import MaskedFourier, SamplingMask, add_noise, magnitude
from .metrics import nmse, psnr, ssim
from .solver import PGDConfig, pgd_reconstruct
from .tv import tv_reconstruct

METHODS = ("zero-filled", "TV", "AR", "UNCLEAR", "CLEAR")
LEARNED = ("AR", "UNCLEAR", "CLEAR")
CSV_COLUMNS = ("method", "mask", "image_id", "nmse", "psnr_db", "ssim")
TV_WEIGHTS = (0.001, 0.003, 0.01, 0.03, 0.1)
# harmonic constant tuned on held-out phantoms for trained imaging nets,
# whose subgradients have norm well below one
IMAGE_STEP = 30.0


@dataclass
class EvalConfig:
    pgd: PGDConfig = field(default_factory=lambda: PGDConfig(step_constant=IMAGE_STEP,
                                                             record_trace=False))
    tv_weights: tuple = TV_WEIGHTS
    tv_iters: int = 100
    tv_inner_iters: int = 30
    seed: int = 0
    threads: int = 1


@dataclass
class MetricsRecord:
    """Per-image metrics of one method on one mask.

    ``extra`` carries method details such as the TV weight that was picked.
    Standard deviations are population (ddof = 0) values.
    """

    method: str
    mask: str
    image_ids: list
    nmse: np.ndarray
    psnr: np.ndarray
    ssim: np.ndarray
    extra: dict = field(default_factory=dict)

    def mean(self):
        return {"nmse": float(np.mean(self.nmse)), "psnr_db": float(np.mean(self.psnr)),
                "ssim": float(np.mean(self.ssim))}

    def std(self):
        return {"nmse": float(np.std(self.nmse)), "psnr_db": float(np.std(self.psnr)),
                "ssim": float(np.std(self.ssim))}

    def rows(self):
        out = []
        for i, a, b, c in zip(self.image_ids, self.nmse, self.psnr, self.ssim):
            out.append({"method": self.method, "mask": self.mask, "image_id": str(i),
                        "nmse": float(a), "psnr_db": float(b), "ssim": float(c)})
        for tag, agg in (("mean", self.mean()), ("std", self.std())):
            out.append({"method": self.method, "mask": self.mask, "image_id": tag, **agg})
        return out


def image_metrics(ref, test):
    """(nmse, psnr, ssim) on magnitude images, peak = max of the reference."""
    a, b = magnitude(ref), magnitude(test)
    return nmse(a, b), psnr(a, b), ssim(a, b)


def _record(method, mask_name, truths, recons, extra=None):
    vals = np.array([image_metrics(x, y) for x, y in zip(truths, recons)])
    return MetricsRecord(method, mask_name, list(range(len(truths))),
                         vals[:, 0], vals[:, 1], vals[:, 2], dict(extra or {}))


def _named_masks(masks):
    out = []
    for i, m in enumerate(masks):
        if isinstance(m, tuple):
            out.append(m)
        elif isinstance(m, SamplingMask):
            out.append((f"{m.kind}-R{m.acceleration:.2f}", m))
        else:
            out.append((f"mask{i}", SamplingMask(np.asarray(m))))
    return out


def _learned_nets(checkpoints):
    from .io import read_checkpoint  # io depends on training; keep the import local

    nets = {}
    for ck in checkpoints or []:
        if ck is None:
            continue
        if isinstance(ck, (str, os.PathLike)):
            if not os.path.exists(ck):
                warnings.warn(f"checkpoint {ck} not found; skipped", RuntimeWarning, stacklevel=3)
                continue
            ck = read_checkpoint(ck)
        nets[ck.mode] = ck.to_net()
    for method in LEARNED:
        if method not in nets:
            warnings.warn(f"no checkpoint for method {method}; skipped", RuntimeWarning,
                          stacklevel=3)
    return nets


def measurements(mask, images, noise_level=0.0, seed=0):
    """k-space data for each image, with complex noise on the sampled entries."""
    op = MaskedFourier(mask)
    out = []
    for i, x in enumerate(images):
        b = op.forward(x)
        if noise_level > 0:
            s = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
            b = add_noise(b, noise_level, seed=s, mask=op.mask)
        out.append(b)
    return out


def _map(fn, items, threads):
    # results come back in input order whatever the thread count
    if threads <= 1:
        return [fn(a) for a in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def evaluate_suite(checkpoints, dataset, masks, noise_level=0.0, cfg=None):
    """Reconstruct every image under every mask with every available method.

    ``checkpoints`` holds :class:`~clearreg.training.Checkpoint` objects or
    paths; each supplies the method named by its training mode.  Learned
    methods without a checkpoint are skipped with a warning.  TV is run on
    the whole weight grid and reported at the weight with the lowest mean
    NMSE for that mask.
    """
    cfg = cfg or EvalConfig()
    images = np.asarray(dataset, dtype=np.float64)
    nets = _learned_nets(checkpoints)
    records = []
    for mi, (name, mask) in enumerate(_named_masks(masks)):
        op = MaskedFourier(mask)
        bs = measurements(mask, images, noise_level, seed=int(
            np.random.SeedSequence([cfg.seed, mi]).generate_state(1)[0]))
        records.append(_record("zero-filled", name, images, [op.adjoint(b) for b in bs]))
        best = None
        for w in cfg.tv_weights:
            recon = _map(lambda b: tv_reconstruct(mask, b, w, cfg.tv_iters, cfg.tv_inner_iters),
                         bs, cfg.threads)
            rec = _record("TV", name, images, recon, {"tv_weight": w})
            if best is None or rec.mean()["nmse"] < best.mean()["nmse"]:
                best = rec
        records.append(best)
        for method in LEARNED:
            if method in nets:
                net = nets[method]
                recon = _map(lambda b: pgd_reconstruct(net, op, b, cfg.pgd).image, bs, cfg.threads)
                records.append(_record(method, name, images, recon))
    return records


def write_metrics_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in records:
            for row in r.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("nmse", "psnr_db", "ssim"):
            row[k] = float(row[k])
    return rows


def summary_table(records):
    """Text table of mean +- std per method and mask."""
    lines = [f"{'method':<12} {'mask':<22} {'PSNR (dB)':>16} {'NMSE':>20} {'SSIM':>16}"]
    for r in records:
        m, s = r.mean(), r.std()
        lines.append(f"{r.method:<12} {r.mask:<22} {m['psnr_db']:>8.2f} +- {s['psnr_db']:<5.2f} "
                     f"{m['nmse']:>10.4f} +- {s['nmse']:<7.4f} {m['ssim']:>7.4f} +- {s['ssim']:<6.4f}")
    return "\n".join(lines)
