"""Deterministic pooling codec between pixel frames and latent frames.

Pixel frames are ``(H_x, W_x, 3)`` arrays in ``[0, 1]``; latent frames are
``(H_x/f, W_x/f, 3)`` arrays in ``[-1, 1]``.  Leading axes (frames, batch)
pass through untouched.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

__all__ = [
    "DEFAULT_FACTOR",
    "encode",
    "decode",
    "write_ppm",
    "read_ppm",
    "write_latent",
    "read_latent",
    "LATENT_MAGIC",
]

DEFAULT_FACTOR = 4
LATENT_MAGIC = b"FSLZ"


def encode(x, factor: int = DEFAULT_FACTOR) -> np.ndarray:
    """Block-mean pool by ``factor`` then map ``[0, 1] -> [-1, 1]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 3 or x.shape[-1] != 3:
        raise ShapeError(f"expected (..., H, W, 3) pixels, got {x.shape}")
    if factor < 1:
        raise ShapeError(f"factor must be >= 1, got {factor}")
    h, w = x.shape[-3:-1]
    if h % factor or w % factor:
        raise ShapeError(f"frame {h}x{w} is not divisible by factor {factor}")
    lead = x.shape[:-3]
    pooled = x.reshape(*lead, h // factor, factor, w // factor, factor, 3).mean(axis=(-4, -2))
    return 2.0 * pooled - 1.0


def decode(z, factor: int = DEFAULT_FACTOR) -> np.ndarray:
    """Inverse affine map with clamping, then nearest-neighbour upsampling."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim < 3:
        raise ShapeError(f"expected (..., H, W, C) latents, got {z.shape}")
    if factor < 1:
        raise ShapeError(f"factor must be >= 1, got {factor}")
    x = np.clip((z + 1.0) / 2.0, 0.0, 1.0)
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=-3), factor, axis=-2)


# -- file formats ------------------------------------------------------------

def write_ppm(path, frame) -> None:
    """Write one ``(H, W, 3)`` frame in ``[0, 1]`` as binary P6, maxval 255."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[-1] != 3:
        raise ShapeError(f"expected (H, W, 3) frame, got {frame.shape}")
    h, w = frame.shape[:2]
    data = np.clip(np.rint(np.clip(frame, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def _ppm_tokens(buf: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a float ``(H, W, 3)`` array in ``[0, 1]``."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    (w, h, maxval), start = _ppm_tokens(buf, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    data = np.frombuffer(buf, dtype=np.uint8, count=h * w * 3, offset=start)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_latent(path, z) -> None:
    """Raw little-endian float32 with a 16-byte header: magic, H, W, C."""
    z = np.asarray(z)
    if z.ndim != 3:
        raise ShapeError(f"expected (H, W, C) latent, got {z.shape}")
    with open(path, "wb") as f:
        f.write(LATENT_MAGIC + struct.pack("<III", *z.shape))
        f.write(np.ascontiguousarray(z, dtype="<f4").tobytes())


def read_latent(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != LATENT_MAGIC:
        raise ValueError(f"{path}: bad latent magic {buf[:4]!r}")
    h, w, c = struct.unpack("<III", buf[4:16])
    return np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=16).reshape(h, w, c).astype(np.float64)
