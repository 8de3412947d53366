"""Synthetic data sources.

Two worlds are provided:

* an AR(1) Gaussian latent world, whose clip prior and conditionals are
  available in closed form and serve as test oracles;
* a moving-shapes pixel world: one filled square per clip, moving with a
  fixed per-class velocity and bouncing off the walls.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .codec import read_ppm, write_ppm
from .errors import ConfigError, ShapeError

__all__ = [
    "GaussianWorldSpec",
    "MotionClass",
    "sample_ar1_clip",
    "ar1_conditional",
    "joint_conditional",
    "gen_shape_video",
    "shape_centroids",
    "CorpusEntry",
    "write_corpus_manifest",
    "read_corpus_manifest",
    "write_clip",
    "load_clip",
    "clip_seed",
    "PALETTE",
]


@dataclass(frozen=True)
class GaussianWorldSpec:
    """Stationary AR(1) prior over latent clips.

    Every latent coordinate follows an independent AR(1) process across the
    frame axis with correlation ``rho``, marginal mean ``mu`` and marginal
    variance ``sigma2``.
    """

    frame_shape: tuple = (8, 8, 3)
    rho: float = 0.9
    sigma2: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "frame_shape", tuple(int(s) for s in self.frame_shape))
        if not -1.0 < self.rho < 1.0:
            raise ConfigError(f"rho must satisfy |rho| < 1, got {self.rho}")
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        if len(self.frame_shape) != 3 or min(self.frame_shape) < 1:
            raise ConfigError(f"frame_shape must be (H, W, C) with positive sizes, got {self.frame_shape}")

    @property
    def frame_dim(self) -> int:
        return int(np.prod(self.frame_shape))

    def frame_covariance(self, n: int) -> np.ndarray:
        """``n x n`` covariance along the frame axis for one latent coordinate."""
        k = np.arange(n)
        return self.sigma2 * self.rho ** np.abs(k[:, None] - k[None, :])

    @classmethod
    def parse(cls, text: str, frame_shape=None) -> "GaussianWorldSpec":
        """Parse ``"rho=0.9,sigma2=1,mu=0"``; unknown keys are rejected."""
        kwargs = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            if "=" not in part:
                raise ConfigError(f"world spec entry {part!r} is not key=value")
            key, val = (s.strip() for s in part.split("=", 1))
            if key not in ("rho", "sigma2", "mu"):
                raise ConfigError(f"unknown world parameter {key!r}")
            try:
                kwargs[key] = float(val)
            except ValueError:
                raise ConfigError(f"world parameter {key}={val!r} is not a number") from None
        if frame_shape is not None:
            kwargs["frame_shape"] = tuple(frame_shape)
        return cls(**kwargs)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_ar1_clip(world: GaussianWorldSpec, length: int, seed=None, batch: tuple = ()) -> np.ndarray:
    """Draw a stationary clip of ``length`` frames, shape ``(*batch, length, *frame_shape)``."""
    if length < 1:
        raise ConfigError(f"clip length must be >= 1, got {length}")
    rng = _rng(seed)
    shape = (*batch, length, *world.frame_shape)
    eps = rng.standard_normal(shape)
    sd = np.sqrt(world.sigma2)
    innov = np.sqrt(1.0 - world.rho ** 2) * sd
    out = np.empty(shape)
    idx = (slice(None),) * len(batch)
    out[idx + (0,)] = world.mu + sd * eps[idx + (0,)]
    for k in range(1, length):
        out[idx + (k,)] = world.mu + world.rho * (out[idx + (k - 1,)] - world.mu) + innov * eps[idx + (k,)]
    return out


def ar1_conditional(world: GaussianWorldSpec, observed) -> tuple[np.ndarray, np.ndarray]:
    """Mean and per-coordinate variance of the frame following ``observed``.

    By the Markov property only the last observed frame matters.  Variance is
    returned elementwise (the covariance is diagonal).
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim < 4 or observed.shape[-4] < 1:
        raise ConfigError("need at least one observed frame with shape (..., m, H, W, C)")
    last = observed[..., -1, :, :, :]
    mean = world.mu + world.rho * (last - world.mu)
    var = np.full_like(mean, (1.0 - world.rho ** 2) * world.sigma2)
    return mean, var


def joint_conditional(world: GaussianWorldSpec, observed) -> tuple[np.ndarray, np.ndarray]:
    """Same quantity as :func:`ar1_conditional` via a dense Gaussian solve.

    Conditions the full ``(m+1)``-frame joint prior on the ``m`` observed
    frames without using the Markov shortcut.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim < 4 or observed.shape[-4] < 1:
        raise ConfigError("need at least one observed frame with shape (..., m, H, W, C)")
    m = observed.shape[-4]
    cov = world.frame_covariance(m + 1)
    s_oo = cov[:m, :m]
    s_no = cov[m, :m]
    w = np.linalg.solve(s_oo, s_no)
    mean = world.mu + np.einsum("k,...khwc->...hwc", w, observed - world.mu)
    var = cov[m, m] - s_no @ w
    return mean, np.full_like(mean, var)


# -- moving shapes ------------------------------------------------------------

class MotionClass(enum.IntEnum):
    RIGHT = 0
    LEFT = 1
    UP = 2
    DOWN = 3

    @property
    def display_name(self) -> str:
        return self.name.lower()

    @property
    def velocity(self) -> tuple[int, int]:
        """(dy, dx) in pixels per frame."""
        return {0: (0, 1), 1: (0, -1), 2: (-1, 0), 3: (1, 0)}[int(self)]


# subject id -> RGB of the square; background is a fixed dark grey
PALETTE = np.array([
    [0.95, 0.35, 0.25],
    [0.30, 0.85, 0.40],
    [0.35, 0.50, 0.95],
    [0.95, 0.85, 0.30],
])
BACKGROUND = 0.08


def _bounce(p: int, v: int, hi: int) -> tuple[int, int]:
    p += v
    if p < 0:
        p, v = -p, -v
    elif p > hi:
        p, v = 2 * hi - p, -v
    return p, v


def gen_shape_video(cls, seed=None, frames: int = 16, size: int = 32,
                    subject: int | None = None) -> tuple[np.ndarray, int, int]:
    """Render one moving-square clip.

    Returns ``(video, class_id, subject)`` with ``video`` of shape
    ``(frames, size, size, 3)``.  The square starts in the half of the canvas
    it moves away from, so most clips travel a long way before bouncing.
    """
    cls = MotionClass(int(cls))
    if size < 16:
        raise ConfigError(f"size must be >= 16, got {size}")
    if frames < 2:
        raise ConfigError(f"frames must be >= 2, got {frames}")
    rng = _rng(seed)
    side = size // 4
    hi = size - side
    dy, dx = cls.velocity
    trailing = rng.integers(0, hi // 2 + 1)
    across = int(rng.integers(0, hi + 1))
    along = int(trailing) if (dy + dx) > 0 else hi - int(trailing)
    y, x = (along, across) if dy else (across, along)
    if subject is None:
        subject = int(rng.integers(0, len(PALETTE)))
    color = PALETTE[subject]
    video = np.full((frames, size, size, 3), BACKGROUND)
    for k in range(frames):
        video[k, y:y + side, x:x + side] = color
        y, dy = _bounce(y, dy, hi)
        x, dx = _bounce(x, dx, hi)
    return video, int(cls), int(subject)


def shape_centroids(video) -> np.ndarray:
    """Brightness-weighted (row, col) centroid per frame, shape ``(F, 2)``."""
    video = np.asarray(video, dtype=np.float64)
    lum = video.mean(axis=-1)
    w = lum - lum.min(axis=(-2, -1), keepdims=True)
    h, wd = lum.shape[-2:]
    tot = w.sum(axis=(-2, -1))
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(wd, dtype=np.float64)
    safe = np.where(tot > 0, tot, 1.0)
    cy = np.where(tot > 0, (w.sum(axis=-1) * rows).sum(axis=-1) / safe, (h - 1) / 2)
    cx = np.where(tot > 0, (w.sum(axis=-2) * cols).sum(axis=-1) / safe, (wd - 1) / 2)
    return np.stack([cy, cx], axis=-1)


# -- corpus on disk -------------------------------------------------------------

@dataclass
class CorpusEntry:
    clip: str
    label: int
    seed: int
    subject: int = 0


def clip_seed(seed: int, index: int) -> int:
    """Derived per-clip seed; independent streams for every (seed, index)."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint32)[0])


def write_corpus_manifest(root, entries) -> Path:
    path = Path(root) / "manifest.jsonl"
    with open(path, "w") as f:
        for e in entries:
            f.write(json.dumps(asdict(e), sort_keys=True) + "\n")
    return path


def read_corpus_manifest(root) -> list[CorpusEntry]:
    path = Path(root) / "manifest.jsonl"
    entries = []
    with open(path) as f:
        for line in f:
            if line.strip():
                entries.append(CorpusEntry(**json.loads(line)))
    return entries


def write_clip(clip_dir, video) -> None:
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(np.asarray(video)):
        write_ppm(clip_dir / f"frame_{k:04d}.ppm", frame)


def load_clip(clip_dir) -> np.ndarray:
    files = sorted(Path(clip_dir).glob("frame_*.ppm"))
    if not files:
        raise ShapeError(f"{clip_dir}: no frame_*.ppm files")
    return np.stack([read_ppm(p) for p in files])
