"""A desk-scale spatio-temporal noise predictor and its training loop.

The network is a single spatio-temporal block, in order: spatial 3x3
convolution, temporal convolution (kernel 3) across frames, spatial
self-attention over the ``H x W`` grid, temporal self-attention over the
frame axis.  Each sub-layer is pre-normed and residual.  The diffusion step
enters through a sinusoidal embedding; the class label through an additive
learned embedding (the extra last row is the null label).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .denoiser import NULL_LABEL, as_labels
from .errors import ConfigError, ShapeError
from .schedule import NoiseSchedule

__all__ = [
    "MicroConfig",
    "MicroDenoiser",
    "micro_forward",
    "MicroPredictor",
    "train_micro",
    "clip_windows",
    "diffusion_loss",
    "save_params",
    "load_params",
    "file_checksum",
]


@dataclass(frozen=True)
class MicroConfig:
    frames: int = 5
    latent_shape: tuple = (8, 8, 3)
    width: int = 32
    num_classes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "latent_shape", tuple(int(s) for s in self.latent_shape))


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class Attention(nn.Module):
    """Single-head full self-attention over the second-to-last axis."""

    def __init__(self, dim: int):
        super().__init__()
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.scale = dim ** -0.5

    def forward(self, x):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        w = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        return self.proj(w @ v)


class MicroDenoiser(nn.Module):
    def __init__(self, config: MicroConfig = MicroConfig()):
        super().__init__()
        self.config = config
        d, c = config.width, config.latent_shape[-1]
        self.inp = nn.Linear(c, d)
        self.step_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.label_emb = nn.Embedding(config.num_classes + 1, d)
        self.norm_sconv = nn.LayerNorm(d)
        self.sconv = nn.Conv2d(d, d, 3, padding=1)
        self.norm_tconv = nn.LayerNorm(d)
        self.tconv = nn.Conv1d(d, d, 3, padding=1)
        self.norm_sattn = nn.LayerNorm(d)
        self.sattn = Attention(d)
        self.norm_tattn = nn.LayerNorm(d)
        self.tattn = Attention(d)
        self.norm_out = nn.LayerNorm(d)
        self.out = nn.Linear(d, c)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, z: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        # z: (B, F, H, W, C); t: (B,) float; y: (B,) long with num_classes as null
        b, f, h, w, _ = z.shape
        d = self.config.width
        emb = self.step_mlp(timestep_embedding(t, d)) + self.label_emb(y)
        x = self.inp(z) + emb[:, None, None, None, :]

        u = torch.nn.functional.silu(self.norm_sconv(x)).reshape(b * f, h, w, d).permute(0, 3, 1, 2)
        x = x + self.sconv(u).permute(0, 2, 3, 1).reshape(b, f, h, w, d)

        u = torch.nn.functional.silu(self.norm_tconv(x)).permute(0, 2, 3, 4, 1).reshape(b * h * w, d, f)
        x = x + self.tconv(u).reshape(b, h, w, d, f).permute(0, 4, 1, 2, 3)

        u = self.norm_sattn(x).reshape(b * f, h * w, d)
        x = x + self.sattn(u).reshape(b, f, h, w, d)

        u = self.norm_tattn(x).permute(0, 2, 3, 1, 4).reshape(b * h * w, f, d)
        x = x + self.tattn(u).reshape(b, h, w, f, d).permute(0, 3, 1, 2, 4)

        return self.out(torch.nn.functional.silu(self.norm_out(x)))

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @classmethod
    def initialize(cls, config: MicroConfig = MicroConfig(), seed: int = 0) -> "MicroDenoiser":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return cls(config)


def _label_tensor(model: MicroDenoiser, y, batch: int) -> torch.Tensor:
    y = as_labels(y, batch)
    if np.any((y != NULL_LABEL) & ((y < 0) | (y >= model.config.num_classes))):
        raise ConfigError(f"label outside 0..{model.config.num_classes - 1}")
    return torch.from_numpy(np.where(y == NULL_LABEL, model.config.num_classes, y))


def micro_forward(model: MicroDenoiser, z_t, t, y) -> np.ndarray:
    """Evaluate the network on a numpy clip batch ``(B, F, H, W, C)``."""
    z_t = np.asarray(z_t)
    cfg = model.config
    if z_t.ndim != 5 or z_t.shape[1] != cfg.frames or z_t.shape[2:] != cfg.latent_shape:
        raise ShapeError(f"clip shape {z_t.shape} does not match model (B, {cfg.frames}, *{cfg.latent_shape})")
    dtype = next(model.parameters()).dtype
    batch = z_t.shape[0]
    tt = torch.as_tensor(np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,)).copy(), dtype=dtype)
    with torch.no_grad():
        out = model(torch.as_tensor(z_t, dtype=dtype), tt, _label_tensor(model, y, batch))
    return out.numpy().astype(np.float64)


class MicroPredictor:
    """Adapter giving a :class:`MicroDenoiser` the package denoiser signature."""

    unconditional = False

    def __init__(self, model: MicroDenoiser):
        self.model = model.eval()

    @property
    def frames(self) -> int:
        return self.model.config.frames

    @property
    def latent_shape(self) -> tuple:
        return self.model.config.latent_shape

    def __call__(self, z_t, t: int, y=None) -> np.ndarray:
        return micro_forward(self.model, z_t, t, y)


def clip_windows(latents, labels, frames: int):
    """All length-``frames`` windows of each clip, with repeated labels."""
    latents = np.asarray(latents)
    n, length = latents.shape[:2]
    if length < frames:
        raise ConfigError(f"clips of {length} frames are shorter than the model window {frames}")
    starts = range(length - frames + 1)
    windows = np.stack([latents[:, s:s + frames] for s in starts], axis=1)
    return windows.reshape(n * len(starts), frames, *latents.shape[2:]), np.repeat(np.asarray(labels), len(starts))


def diffusion_loss(model: MicroDenoiser, eps: torch.Tensor, z_t: torch.Tensor,
                   t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-element mean squared error between injected and predicted noise."""
    return ((eps - model(z_t, t, y)) ** 2).mean()


def train_micro(model: MicroDenoiser, clips, labels, sched: NoiseSchedule, null_prob: float = 0.1,
                steps: int = 2000, seed: int = 0, lr: float = 1e-3, batch_size: int = 16) -> list[float]:
    """Plain SGD on the noise-prediction objective; mutates ``model``.

    ``clips`` are clean latent clips ``(N, L, H, W, C)`` with ``L >= frames``;
    each step draws random windows, steps ``t ~ U{1..T}``, unit noise and
    label drop-out, all from a numpy generator seeded with ``seed``.
    Returns the per-step loss trace.
    """
    clips = np.asarray(clips, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if clips.size == 0 or len(clips) == 0:
        raise ConfigError("training set is empty")
    if len(labels) != len(clips):
        raise ConfigError(f"{len(labels)} labels for {len(clips)} clips")
    if not 0.0 <= null_prob < 1.0:
        raise ConfigError(f"null_prob must lie in [0, 1), got {null_prob}")
    windows, wlabels = clip_windows(clips, labels, model.config.frames)
    rng = np.random.default_rng(seed)
    opt = torch.optim.SGD(model.parameters(), lr=lr)
    dtype = next(model.parameters()).dtype
    model.train()
    trace = []
    for _ in range(int(steps)):
        idx = rng.integers(0, len(windows), size=batch_size)
        z0 = windows[idx]
        t = rng.integers(1, sched.T + 1, size=batch_size)
        eps = rng.standard_normal(z0.shape)
        ab = sched.alpha_bars[t - 1].reshape(-1, 1, 1, 1, 1)
        z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
        y = np.where(rng.random(batch_size) < null_prob, NULL_LABEL, wlabels[idx])
        loss = diffusion_loss(
            model,
            torch.as_tensor(eps, dtype=dtype),
            torch.as_tensor(z_t, dtype=dtype),
            torch.as_tensor(t, dtype=dtype),
            _label_tensor(model, y, batch_size),
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.append(float(loss.detach()))
    model.eval()
    return trace


# -- persistence ------------------------------------------------------------------

_HEADER = "frameslide-micro 1"


def save_params(model: MicroDenoiser, path) -> None:
    """Text header (config + one line per tensor) then raw float32 LE data."""
    lines = [_HEADER, "config " + json.dumps(asdict(model.config), sort_keys=True)]
    blobs = []
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy()
        lines.append(f"tensor {name} {'x'.join(str(s) for s in arr.shape) or '1'}")
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    lines.append("end")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in blobs:
            f.write(blob)


def load_params(path) -> MicroDenoiser:
    buf = Path(path).read_bytes()
    end = buf.find(b"\nend\n")
    if not buf.startswith(_HEADER.encode()) or end < 0:
        raise ValueError(f"{path}: not a frameslide parameter file")
    header = buf[:end].decode("ascii").split("\n")
    offset = end + len(b"\nend\n")
    config = MicroConfig(**json.loads(header[1].split(" ", 1)[1]))
    model = MicroDenoiser(config)
    state = {}
    for line in header[2:]:
        _, name, shape_s = line.split(" ")
        shape = tuple(int(s) for s in shape_s.split("x"))
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        state[name] = torch.from_numpy(arr.astype(np.float32))
    model.load_state_dict(state)
    return model.eval()


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
