"""Binary image and checkpoint formats plus the flat ``key = value`` config text.

Image file (CLIMG1)::

    b"CLIMG1" | u32 H | u32 W | u32 C | C*H*W float32, channel-major, row-major

All integers and floats are little-endian.  Masks are stored as one-channel
images with values 0 and 1.

Checkpoint file (CLCKPT1)::

    b"CLCKPT1" | u32 version | u8 mode
    | u32 n | n bytes of JSON (architecture, layer list, epoch, seed, input shape)
    | per layer: u32 k, then k blobs of (u32 count | count float32)
    | u32 n | n bytes of config text
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import LayerSpec
from .forward_model import SamplingMask
from .icnn import arch_from_dict
from .training import Checkpoint, TrainConfig, FORMAT_VERSION

IMAGE_MAGIC = b"CLIMG1"
CKPT_MAGIC = b"CLCKPT1"
_MODES = ("CLEAR", "UNCLEAR", "AR")


class FormatError(ValueError):
    """Malformed, truncated or foreign file."""


class VersionMismatchError(FormatError):
    def __init__(self, found, expected):
        super().__init__(f"checkpoint format version {found} is not supported "
                         f"(this build reads version {expected})")
        self.found, self.expected = found, expected


class _Reader:
    def __init__(self, data, what):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what} truncated at byte {len(self.data)} "
                              f"(needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def floats(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()

    def text(self):
        return self.take(self.u32()).decode("utf-8")

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.what} has {len(self.data) - self.pos} trailing bytes")


def _text_block(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


# images -------------------------------------------------------------------

def encode_image(image):
    x = np.asarray(image)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"image must be (C, H, W) or (H, W), got shape {x.shape}")
    c, h, w = x.shape
    return IMAGE_MAGIC + struct.pack("<III", h, w, c) + x.astype("<f4").tobytes()


def decode_image(data):
    r = _Reader(bytes(data), "image file")
    if r.take(len(IMAGE_MAGIC)) != IMAGE_MAGIC:
        raise FormatError("not a CLIMG1 image file (bad magic)")
    h, w, c = r.u32(), r.u32(), r.u32()
    values = r.floats(c * h * w)
    r.finish()
    return values.astype(np.float32).reshape(c, h, w)


def write_image(path, image):
    with open(path, "wb") as fh:
        fh.write(encode_image(image))


def read_image(path):
    """Image as a float32 array of shape (C, H, W)."""
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_mask(path, mask):
    m = mask.data if isinstance(mask, SamplingMask) else np.asarray(mask)
    write_image(path, m.astype(np.float32)[None])


def read_mask(path):
    x = read_image(path)
    if x.shape[0] != 1:
        raise FormatError(f"mask file must have one channel, found {x.shape[0]}")
    try:
        return SamplingMask(x[0])
    except ValueError as e:
        raise FormatError(f"invalid mask file: {e}") from None


# checkpoints --------------------------------------------------------------

def encode_checkpoint(ckpt):
    header = {
        "arch": ckpt.arch.to_dict() if ckpt.arch is not None else None,
        "layers": [s.to_dict() for s in ckpt.spec],
        "epoch": int(ckpt.epoch),
        "seed": int(ckpt.seed),
    }
    out = [CKPT_MAGIC, struct.pack("<IB", ckpt.version, _MODES.index(ckpt.mode)),
           _text_block(json.dumps(header, sort_keys=True))]
    for layer, p in zip(ckpt.spec, ckpt.params):
        keys = list(layer.param_shapes())
        out.append(struct.pack("<I", len(keys)))
        for k in keys:
            a = np.asarray(p[k], dtype="<f4")
            out.append(struct.pack("<I", a.size) + a.tobytes())
    out.append(_text_block(ckpt.config.to_text()))
    return b"".join(out)


def decode_checkpoint(data):
    r = _Reader(bytes(data), "checkpoint file")
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise FormatError("not a CLCKPT1 checkpoint file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(version, FORMAT_VERSION)
    mode_byte = r.take(1)[0]
    if mode_byte >= len(_MODES):
        raise FormatError(f"unknown training mode byte {mode_byte}")
    try:
        header = json.loads(r.text())
        spec = [LayerSpec.from_dict(d) for d in header["layers"]]
        arch = arch_from_dict(header["arch"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"bad checkpoint header: {e}") from None
    params = []
    for layer in spec:
        shapes = layer.param_shapes()
        k = r.u32()
        if k != len(shapes):
            raise FormatError(f"layer {layer.kind} stores {k} arrays, expected {len(shapes)}")
        p = {}
        for name, shape in shapes.items():
            count = r.u32()
            if count != int(np.prod(shape)):
                raise FormatError(f"{layer.kind} {name}: {count} values for shape {shape}")
            p[name] = r.floats(count).astype(np.float32).reshape(shape)
        params.append(p)
    config = TrainConfig.from_text(r.text())
    r.finish()
    return Checkpoint(arch, spec, params, _MODES[mode_byte], config,
                      header["epoch"], header["seed"], version)


def write_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# config text --------------------------------------------------------------

def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment.  Values stay strings."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValueError(f"config line {n}: expected 'key = value', got {line!r}")
        out[key] = value.strip()
    return out


def format_config_text(values):
    return "".join(f"{k} = {v}\n" for k, v in sorted(values.items()))
