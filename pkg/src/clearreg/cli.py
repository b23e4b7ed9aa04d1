"""Command-line entry point: ``clearreg <subcommand> [options]``.

Every option is a configuration key.  Values are merged from a config file
(``--config``, flat ``key = value`` text), then ``CLEAR_*`` environment
variables, then command-line flags, later sources winning.  The effective
configuration is written to ``<out-dir>/config.txt``; passing that file
back with ``--config`` repeats the run.

Exit codes: 0 success, 1 invalid input or configuration, 2 failure while
running.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import evaluation, forward_model as fm, icnn, io as cio, phantoms, solver, theory
from . import training

log = logging.getLogger("clearreg")

SUBCOMMANDS = ("phantom-gen", "mask-gen", "train", "reconstruct", "evaluate", "verify")
ENV_PREFIX = "CLEAR_"


class ValidationError(Exception):
    pass


@dataclass(frozen=True)
class Option:
    key: str
    flag: str
    kind: object
    default: object
    help: str = ""

    @property
    def env(self):
        return ENV_PREFIX + self.flag.upper().replace("-", "_")


def _bool(s):
    s = str(s).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(a) for a in str(s).split(",") if a.strip())


def _floats(s):
    return tuple(float(a) for a in str(s).split(",") if a.strip())


def _choice(*names):
    def parse(s):
        if s not in names:
            raise ValueError(f"{s!r} is not one of {', '.join(names)}")
        return s
    parse.__name__ = "choice"
    return parse


def _show(v):
    if isinstance(v, tuple):
        return ",".join(_show(a) for a in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


COMMON = [
    Option("seed", "seed", int, 0, "random seed"),
    Option("out_dir", "out-dir", str, "out", "output directory"),
    Option("threads", "threads", int, 1, "worker threads for per-image evaluation"),
]

_TRAIN_DEFAULTS = training.TrainConfig()
_ARCH_DEFAULTS = icnn.ArchSpec()

TRAIN_OPTIONS = [
    Option("data", "data", str, "", "directory of CLIMG1 images (or one file); empty: phantoms"),
    Option("phantoms", "phantoms", int, 200, "number of generated phantoms when no data is given"),
    Option("phantom_size", "phantom-size", int, 32, "phantom side length"),
    Option("train.mode", "mode", _choice(*training.TRAIN_MODES), _TRAIN_DEFAULTS.mode, ""),
    Option("train.epochs", "epochs", int, _TRAIN_DEFAULTS.epochs, ""),
    Option("train.batch_size", "batch-size", int, _TRAIN_DEFAULTS.batch_size, ""),
    Option("train.step_size", "step-size", float, _TRAIN_DEFAULTS.step_size, "optimizer step"),
    Option("train.optimizer", "optimizer", _choice("sgd", "adam"), _TRAIN_DEFAULTS.optimizer, ""),
    Option("train.adam_betas", "adam-betas", _floats, _TRAIN_DEFAULTS.adam_betas, ""),
    Option("train.latent_steps", "latent-steps", int, _TRAIN_DEFAULTS.latent_steps, ""),
    Option("train.eta", "eta", float, _TRAIN_DEFAULTS.latent_step_size, "latent step size"),
    Option("train.init_noise", "init-noise", float, _TRAIN_DEFAULTS.init_noise_std, ""),
    Option("train.walk_noise", "walk-noise", float, _TRAIN_DEFAULTS.walk_noise_std, ""),
    Option("train.gp_weight", "gp-weight", float, _TRAIN_DEFAULTS.gp_weight, ""),
    Option("train.gp_eps", "gp-eps", float, _TRAIN_DEFAULTS.gp_direction_eps, ""),
    Option("arch.stem", "arch-stem", int, _ARCH_DEFAULTS.stem_channels, ""),
    Option("arch.widths", "arch-widths", _ints, _ARCH_DEFAULTS.widths, ""),
]

PGD_OPTIONS = [
    Option("pgd.max_iters", "iters", int, 100, "PGD iterations"),
    Option("pgd.schedule", "schedule", _choice(*solver.SCHEDULES), "harmonic", ""),
    Option("pgd.step", "step", float, evaluation.IMAGE_STEP, "step-size constant c"),
]

SCHEMAS = {
    "phantom-gen": [
        Option("kind", "kind", _choice("mixed", *phantoms.PHANTOM_KINDS), "mixed", ""),
        Option("size", "size", int, 32, ""),
        Option("count", "count", int, 1, ""),
    ],
    "mask-gen": [
        Option("kind", "kind", _choice(*fm.MASK_KINDS), "uniform-1d", ""),
        Option("height", "height", int, 32, ""),
        Option("width", "width", int, 32, ""),
        Option("acceleration", "acceleration", float, 3.0, ""),
        Option("acs", "acs", float, 0.08, "fully sampled center fraction"),
    ],
    "train": TRAIN_OPTIONS,
    "reconstruct": [
        Option("net", "net", str, "", "checkpoint file"),
        Option("mask", "mask", str, "", "mask file"),
        Option("image", "image", str, "", "ground-truth image to undersample"),
        Option("kspace", "kspace", str, "", "2-channel (real, imag) centered k-space file"),
        Option("noise", "noise", float, 0.0, "relative k-space noise level"),
    ] + PGD_OPTIONS,
    "evaluate": [
        Option("ckpt", "ckpt", str, "", "comma-separated checkpoint files"),
        Option("data", "data", str, "", "directory of CLIMG1 images; empty: phantoms"),
        Option("phantoms", "phantoms", int, 20, ""),
        Option("phantom_size", "phantom-size", int, 32, ""),
        Option("data_seed", "data-seed", int, 2, "seed of generated test phantoms"),
        Option("mask", "mask", str, "", "comma-separated mask files; empty: generated"),
        Option("mask_kind", "mask-kind", _choice(*fm.MASK_KINDS), "uniform-1d", ""),
        Option("acceleration", "acceleration", float, 3.0, ""),
        Option("acs", "acs", float, 0.08, ""),
        Option("noise", "noise", float, 0.0, ""),
        Option("tv_weights", "tv-weights", _floats, evaluation.TV_WEIGHTS, ""),
    ] + PGD_OPTIONS,
    "verify": [
        Option("check", "check", _choice("prop1", "thm2", "thm4", "thm5", "convexity"),
               "prop1", ""),
        Option("manifold", "manifold", _choice("ball", "segment", "triangle"), "ball", ""),
        Option("dim", "dim", int, 2, ""),
        Option("samples", "samples", int, 10_000, ""),
        Option("net", "net", str, "", "checkpoint (thm2, convexity); empty: train one"),
    ],
}

ALL_FLAGS = {o.flag for opts in SCHEMAS.values() for o in opts} | {o.flag for o in COMMON}


def _options(cmd):
    return COMMON + SCHEMAS[cmd]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="clearreg", description="Convex learned regularizers for undersampled MRI.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}",
                           parser_class=_Parser)
    for cmd in SUBCOMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="config file with key = value lines")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="set any configuration key")
        for o in _options(cmd):
            sp.add_argument("--" + o.flag, dest="opt:" + o.key, default=None,
                            metavar=o.key.split(".")[-1].upper(),
                            help=f"{o.help} [key {o.key}, default {_show(o.default)}]")
    return p


def resolve_config(cmd, args, environ=None):
    """Effective configuration: defaults < config file < environment < flags."""
    environ = os.environ if environ is None else environ
    opts = {o.key: o for o in _options(cmd)}
    known = {o.key for c in SCHEMAS for o in _options(c)}
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as e:
            raise ValidationError(f"cannot read config file: {e}") from None
        try:
            entries = cio.parse_config_text(text)
        except ValueError as e:
            raise ValidationError(str(e)) from None
        for k, v in entries.items():
            if k == "command":
                continue
            if k not in known:
                raise ValidationError(f"unknown configuration key {k!r} in {args.config}")
            if k in opts:
                raw[k] = v
    by_env = {o.env: o for c in SCHEMAS for o in _options(c)}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            if name not in by_env:
                raise ValidationError(f"unknown environment variable {name}")
            if by_env[name].key in opts:
                raw[by_env[name].key] = value
    for item in args.set:
        k, sep, v = item.partition("=")
        k = k.strip()
        if not sep or k not in known:
            raise ValidationError(f"unknown configuration key in --set {item!r}")
        if k in opts:
            raw[k] = v.strip()
    for k in opts:
        v = getattr(args, "opt:" + k)
        if v is not None:
            raw[k] = v
    cfg = {}
    for k, o in opts.items():
        if k in raw:
            try:
                cfg[k] = o.kind(raw[k])
            except ValueError as e:
                raise ValidationError(f"bad value for {k}: {e}") from None
        else:
            cfg[k] = o.default
    return cfg


def echo_config(cmd, cfg):
    lines = [f"# effective configuration of 'clearreg {cmd}'"]
    lines += [f"{k} = {_show(v)}" for k, v in cfg.items()]
    path = os.path.join(cfg["out_dir"], "config.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# data helpers -------------------------------------------------------------

def _load_images(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.climg")))
    else:
        files = [path]
    if not files:
        raise ValidationError(f"no .climg images found in {path}")
    try:
        return np.stack([cio.read_image(f).astype(np.float64) for f in files])
    except cio.FormatError as e:
        raise ValidationError(str(e)) from None
    except ValueError as e:
        raise ValidationError(f"images in {path} do not share one shape: {e}") from None


def _dataset(cfg, seed):
    if cfg["data"]:
        return _load_images(cfg["data"])
    if cfg["phantoms"] < 1:
        raise ValidationError("need data or a positive phantom count")
    return phantoms.phantom_set(cfg["phantoms"], cfg["phantom_size"], seed)


def _read(reader, path, what):
    if not path:
        raise ValidationError(f"missing {what} path")
    if not os.path.exists(path):
        raise ValidationError(f"{what} file {path} not found")
    try:
        return reader(path)
    except cio.FormatError as e:
        raise ValidationError(f"{what} file {path}: {e}") from None


def _pgd_config(cfg, truth=None):
    return solver.PGDConfig(max_iters=cfg["pgd.max_iters"], schedule=cfg["pgd.schedule"],
                            step_constant=cfg["pgd.step"], record_trace=True,
                            ground_truth=truth)


# subcommands --------------------------------------------------------------

def cmd_phantom_gen(cfg):
    kinds = phantoms.PHANTOM_KINDS if cfg["kind"] == "mixed" else (cfg["kind"],)
    if cfg["count"] < 1:
        raise ValidationError("count must be positive")
    try:
        images = phantoms.phantom_set(cfg["count"], cfg["size"], cfg["seed"], kinds)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    for i, x in enumerate(images):
        cio.write_image(os.path.join(cfg["out_dir"], f"phantom_{i:03d}.climg"), x)
    print(f"wrote {len(images)} phantoms to {cfg['out_dir']}")


def cmd_mask_gen(cfg):
    try:
        m = fm.make_mask(cfg["kind"], (cfg["height"], cfg["width"]), cfg["acceleration"],
                         cfg["acs"], seed=cfg["seed"])
    except ValueError as e:
        raise ValidationError(str(e)) from None
    path = os.path.join(cfg["out_dir"], "mask.msk")
    cio.write_mask(path, m)
    print(f"wrote {path} (achieved acceleration {m.acceleration:.4f})")


def _train_config(cfg):
    try:
        return training.TrainConfig(
            latent_steps=cfg["train.latent_steps"], latent_step_size=cfg["train.eta"],
            init_noise_std=cfg["train.init_noise"], walk_noise_std=cfg["train.walk_noise"],
            gp_weight=cfg["train.gp_weight"], gp_direction_eps=cfg["train.gp_eps"],
            batch_size=cfg["train.batch_size"], epochs=cfg["train.epochs"],
            step_size=cfg["train.step_size"], optimizer=cfg["train.optimizer"],
            adam_betas=cfg["train.adam_betas"], mode=cfg["train.mode"], seed=cfg["seed"])
    except ValueError as e:
        raise ValidationError(str(e)) from None


def cmd_train(cfg):
    tcfg = _train_config(cfg)
    data = _dataset(cfg, cfg["seed"])
    if data.ndim == 4:
        arch = icnn.ArchSpec(input_shape=tuple(data.shape[1:]), stem_channels=cfg["arch.stem"],
                             widths=cfg["arch.widths"])
    else:
        arch = icnn.DenseArchSpec(input_dim=data.shape[1])
    try:
        arch.validate()
    except icnn.ArchError as e:
        raise ValidationError(str(e)) from None
    ckpt = training.train(data, tcfg, arch=arch,
                          log_path=os.path.join(cfg["out_dir"], "train_log.csv"))
    path = os.path.join(cfg["out_dir"], "model.ckpt")
    cio.write_checkpoint(path, ckpt)
    print(f"wrote {path}")


def cmd_reconstruct(cfg):
    ckpt = _read(cio.read_checkpoint, cfg["net"], "checkpoint")
    mask = _read(cio.read_mask, cfg["mask"], "mask")
    truth = None
    if cfg["image"]:
        truth = _read(cio.read_image, cfg["image"], "image").astype(np.float64)
        if truth.shape != (2,) + mask.shape:
            raise ValidationError(f"image shape {truth.shape} does not match mask {mask.shape}")
        b = fm.apply_A(mask, truth)
    elif cfg["kspace"]:
        k = _read(cio.read_image, cfg["kspace"], "k-space").astype(np.float64)
        if k.shape != (2,) + mask.shape:
            raise ValidationError(f"k-space shape {k.shape} does not match mask {mask.shape}")
        b = np.where(mask.data, fm.to_complex(k), 0.0)
    else:
        raise ValidationError("reconstruct needs --image or --kspace")
    if cfg["noise"] > 0:
        b = fm.add_noise(b, cfg["noise"], seed=cfg["seed"], mask=mask)
    net = ckpt.to_net()
    res = solver.pgd_reconstruct(net, mask, b, _pgd_config(cfg, truth))
    cio.write_image(os.path.join(cfg["out_dir"], "recon.climg"), res.image)
    res.write_trace_csv(os.path.join(cfg["out_dir"], "trace.csv"))
    msg = f"reconstructed in {res.iterations} iterations"
    if truth is not None:
        nm, ps, ss = evaluation.image_metrics(truth, res.image)
        msg += f"; PSNR {ps:.2f} dB, NMSE {nm:.5f}, SSIM {ss:.4f}"
    print(msg)


def cmd_evaluate(cfg):
    data = _dataset(cfg, cfg["data_seed"])
    if data.ndim != 4 or data.shape[1] != 2:
        raise ValidationError("evaluation images must be 2-channel (real, imag)")
    if cfg["mask"]:
        masks = [(os.path.basename(p), _read(cio.read_mask, p, "mask"))
                 for p in cfg["mask"].split(",")]
    else:
        try:
            masks = [fm.make_mask(cfg["mask_kind"], data.shape[2:], cfg["acceleration"],
                                  cfg["acs"], seed=cfg["seed"])]
        except ValueError as e:
            raise ValidationError(str(e)) from None
    ckpts = [p for p in cfg["ckpt"].split(",") if p]
    ecfg = evaluation.EvalConfig(pgd=solver.PGDConfig(cfg["pgd.max_iters"], cfg["pgd.schedule"],
                                                      cfg["pgd.step"], record_trace=False),
                                 tv_weights=cfg["tv_weights"], seed=cfg["seed"],
                                 threads=cfg["threads"])
    records = evaluation.evaluate_suite(ckpts, data, masks, cfg["noise"], ecfg)
    evaluation.write_metrics_csv(records, os.path.join(cfg["out_dir"], "metrics.csv"))
    table = evaluation.summary_table(records)
    with open(os.path.join(cfg["out_dir"], "summary.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)


def _manifold(cfg):
    d = cfg["dim"]
    if not 2 <= d <= 16:
        raise ValidationError("dim must lie in [2, 16]")
    if cfg["manifold"] == "ball":
        return theory.ball(d)
    if cfg["manifold"] == "segment":
        return theory.segment(np.zeros(d), np.ones(d))
    return theory.polytope(np.vstack([np.zeros(d), np.eye(d)[:2]]))


def cmd_verify(cfg):
    check = cfg["check"]
    if check == "prop1":
        reports = [theory.verify_distance_properties(_manifold(cfg), cfg["samples"], cfg["seed"])]
    elif check == "thm4":
        reports = [theory.verify_pgd_convergence(theory.selector_instance(),
                                                 theory.SELECTOR_PGD)]
    elif check == "thm5":
        reports = [theory.verify_stability(theory.selector_instance(), theory.STABILITY_LEVELS,
                                           10, theory.SELECTOR_PGD, cfg["seed"])]
    else:
        m = _manifold(cfg)
        if cfg["net"]:
            net = _read(cio.read_checkpoint, cfg["net"], "checkpoint").to_net()
        else:
            net = theory.train_toy(m, seed=cfg["seed"]).to_net()
        if check == "thm2":
            reports = [theory.verify_minima_on_manifold(net, m, seed=cfg["seed"])]
        else:
            rep = icnn.check_midpoint_convexity(net, n_pairs=min(cfg["samples"], 1000),
                                                seed=cfg["seed"])
            reports = [theory.VerificationReport(
                "midpoint-convexity", rep.passed,
                {"pairs": rep.n_pairs, "violations": rep.violations,
                 "max_violation": rep.max_violation},
                {"tol": rep.tol, **rep.config})]
    theory.write_reports(reports, os.path.join(cfg["out_dir"], "report.csv"),
                         os.path.join(cfg["out_dir"], "report.txt"))
    for r in reports:
        print(r.to_text(), end="")


HANDLERS = {
    "phantom-gen": cmd_phantom_gen,
    "mask-gen": cmd_mask_gen,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
}


def dispatch(argv, environ=None):
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        if not argv:
            raise ValidationError("missing subcommand")
        if argv[0] not in SUBCOMMANDS and not argv[0].startswith("-"):
            raise ValidationError(f"unknown subcommand {argv[0]!r}")
        args = parser.parse_args(argv)
        if args.command is None:
            raise ValidationError("missing subcommand")
        cfg = resolve_config(args.command, args, environ)
        if cfg["threads"] < 1:
            raise ValidationError("threads must be >= 1")
        os.makedirs(cfg["out_dir"], exist_ok=True)
        echo_config(args.command, cfg)
        HANDLERS[args.command](cfg)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return 1
    except (training.TrainingDivergedError, solver.SolverDivergedError, OSError,
            RuntimeError, FloatingPointError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return dispatch(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
