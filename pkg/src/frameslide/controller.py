"""Clip samplers and the autoregressive image-to-video generator.

All samplers work on batches: latent clips are ``(B, F, H, W, C)``, queue
slots and single latent frames are ``(B, H, W, C)``, pixel videos are
``(B, F, H_x, W_x, 3)``.  Public entry points also accept unbatched inputs
and strip the batch axis again on return.

Randomness comes exclusively from the ``numpy.random.Generator`` passed in
(or one seeded from ``GenerationConfig.seed``), drawn in a fixed order, so a
run is reproducible bit for bit.
"""

from __future__ import annotations

import zlib
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .codec import DEFAULT_FACTOR, decode, encode
from .denoiser import guided_eps
from .errors import ConfigError, ShapeError, StepRangeError
from .schedule import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    NoiseSchedule,
    ddim_step,
    ddim_timesteps,
    forward_jump,
    make_linear_schedule,
    renoise_between,
    reverse_step,
)

__all__ = [
    "GenerationConfig",
    "FrameQueue",
    "TraceEvent",
    "RunStats",
    "step_pairs",
    "sample_t2v",
    "sample_replacing",
    "generate_next_frame",
    "iter_ti2v",
    "ti2v_generate",
    "infill_generate",
    "predict_generate",
]


@dataclass(frozen=True)
class GenerationConfig:
    T: int = 50
    K: int = 4
    M: int = 15
    g: float = 9.0
    ddim_steps: int = 0
    resample_U: int = 1
    seed: int = 0
    use_inversion: bool = True
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    factor: int = DEFAULT_FACTOR

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        if self.K < 1:
            raise ConfigError(f"queue length K must be >= 1, got {self.K}")
        if self.M < 1:
            raise ConfigError(f"frame count M must be >= 1, got {self.M}")
        if self.resample_U < 1:
            raise ConfigError(f"resample_U must be >= 1, got {self.resample_U}")
        if self.ddim_steps != 0 and not 2 <= self.ddim_steps <= self.T:
            raise ConfigError(f"ddim_steps must be 0 or in [2, {self.T}], got {self.ddim_steps}")
        if self.g < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.g}")
        if self.factor < 1:
            raise ConfigError(f"codec factor must be >= 1, got {self.factor}")

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def with_(self, **changes) -> "GenerationConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


class FrameQueue:
    """Fixed-length FIFO of clean latent frames, oldest first."""

    def __init__(self, slots):
        self._slots = deque(np.asarray(s, dtype=np.float64) for s in slots)
        if not self._slots:
            raise ConfigError("a frame queue needs at least one slot")
        shape = self._slots[0].shape
        if any(s.shape != shape for s in self._slots):
            raise ShapeError("all queue slots must share one shape")

    @classmethod
    def repeat(cls, z, K: int) -> "FrameQueue":
        return cls([z] * K)

    @classmethod
    def from_frames(cls, frames, K: int) -> "FrameQueue":
        """Last ``K`` of ``frames`` (oldest first), front-padded with the first one."""
        frames = list(frames)
        if not frames:
            raise ConfigError("cannot build a queue from zero frames")
        if len(frames) >= K:
            return cls(frames[-K:])
        return cls([frames[0]] * (K - len(frames)) + frames)

    def __len__(self) -> int:
        return len(self._slots)

    def __getitem__(self, i):
        return self._slots[i]

    @property
    def K(self) -> int:
        return len(self._slots)

    def slide(self, new) -> np.ndarray:
        """Dequeue the oldest slot, enqueue ``new``; returns the dequeued slot."""
        new = np.asarray(new, dtype=np.float64)
        if new.shape != self._slots[0].shape:
            raise ShapeError(f"new slot {new.shape} does not match queue slots {self._slots[0].shape}")
        old = self._slots.popleft()
        self._slots.append(new)
        return old

    def as_clip(self) -> np.ndarray:
        return np.stack(self._slots, axis=1)


@dataclass(frozen=True)
class TraceEvent:
    frame: int
    step: int
    resample: int
    replaced_crc: int
    target_crc: int

    def line(self) -> str:
        return f"frame={self.frame} step={self.step} u={self.resample} replaced={self.replaced_crc:08x} target={self.target_crc:08x}"


@dataclass
class RunStats:
    """Instrumentation filled in by the generators."""

    denoise_calls: list = field(default_factory=list)
    network_evals: list = field(default_factory=list)
    peak_latent_frames: int = 0

    def observe_latents(self, n: int):
        self.peak_latent_frames = max(self.peak_latent_frames, int(n))


class _Counting:
    def __init__(self, denoiser):
        self.denoiser = denoiser
        self.unconditional = getattr(denoiser, "unconditional", False)
        self.calls = 0

    def __call__(self, z, t, y):
        self.calls += 1
        return self.denoiser(z, t, y)


def _crc(a) -> int:
    return zlib.crc32(np.ascontiguousarray(a).tobytes())


def step_pairs(cfg: GenerationConfig) -> list[tuple[int, int]]:
    """Reverse-chain transitions ``(t, t_prev)`` from ``T`` down to 0."""
    if cfg.ddim_steps:
        taus = [0] + ddim_timesteps(cfg.T, cfg.ddim_steps)
    else:
        taus = list(range(cfg.T + 1))
    return [(taus[i], taus[i - 1]) for i in range(len(taus) - 1, 0, -1)]


def _denoise(z, eps, t, t_prev, sched, rng, ddim: bool):
    if ddim:
        return ddim_step(z, eps, t, t_prev, sched)
    if t_prev != t - 1:
        raise StepRangeError(f"DDPM transition must be t -> t-1, got {t} -> {t_prev}")
    noise = rng.standard_normal(z.shape) if t > 1 else None
    return reverse_step(z, eps, t, noise, sched)


def _latent_shape(denoiser):
    shape = getattr(denoiser, "latent_shape", None)
    if shape is None:
        raise ConfigError("denoiser does not declare a latent_shape; pass shape explicitly")
    return tuple(shape)


def _check_frames(denoiser, frames: int):
    expected = getattr(denoiser, "frames", None)
    if expected is not None and expected != frames:
        raise ConfigError(f"denoiser handles {expected}-frame clips, sampler needs {frames} (K+1)")


def sample_t2v(denoiser, y, cfg: GenerationConfig, rng=None, batch: int = 1, shape=None) -> np.ndarray:
    """Plain guided sampling of a ``(B, K+1, H, W, C)`` clip from unit noise."""
    rng = cfg.rng() if rng is None else rng
    sched = cfg.schedule()
    shape = _latent_shape(denoiser) if shape is None else tuple(shape)
    _check_frames(denoiser, cfg.K + 1)
    z = rng.standard_normal((batch, cfg.K + 1, *shape))
    for t, t_prev in step_pairs(cfg):
        eps = guided_eps(denoiser, z, t, y, cfg.g)
        z = _denoise(z, eps, t, t_prev, sched, rng, bool(cfg.ddim_steps))
    return z


def sample_replacing(denoiser, known: dict, y, cfg: GenerationConfig, rng=None) -> np.ndarray:
    """Replacing baseline: overwrite conditioned slots with noised clean latents.

    ``known`` maps frame index in ``0..K`` to a clean latent ``(B, H, W, C)``
    (or ``(H, W, C)``).  After the chain, conditioned slots are set to their
    clean latents, so they match exactly.
    """
    rng = cfg.rng() if rng is None else rng
    sched = cfg.schedule()
    if not known:
        raise ConfigError("the replacing baseline needs at least one conditioned frame")
    bad = [k for k in known if not 0 <= k <= cfg.K]
    if bad:
        raise StepRangeError(f"mask indices {bad} outside 0..{cfg.K}")
    _check_frames(denoiser, cfg.K + 1)
    mask = sorted(known)
    clean = {k: np.asarray(known[k], dtype=np.float64) for k in mask}
    single = clean[mask[0]].ndim == 3
    if single:
        clean = {k: v[None] for k, v in clean.items()}
    batch, *shape = clean[mask[0]].shape
    z = rng.standard_normal((batch, cfg.K + 1, *shape))
    for t, t_prev in step_pairs(cfg):
        z = z.copy()
        for k in mask:
            z[:, k] = forward_jump(clean[k], t, rng.standard_normal(clean[k].shape), sched)
        eps = guided_eps(denoiser, z, t, y, cfg.g)
        z = _denoise(z, eps, t, t_prev, sched, rng, bool(cfg.ddim_steps))
    for k in mask:
        z[:, k] = clean[k]
    return z[0] if single else z


def generate_next_frame(denoiser, queue: FrameQueue, y, cfg: GenerationConfig, rng=None,
                        trace: list | None = None, frame_index: int = 0,
                        stats: RunStats | None = None) -> np.ndarray:
    """One full sampling pass producing the latent that follows ``queue``.

    The first ``K`` slots of the working clip are replaced by freshly noised
    queue latents before every denoise call; with ``resample_U > 1`` each
    step is repeated after re-noising back to the current level.
    """
    rng = cfg.rng() if rng is None else rng
    sched = cfg.schedule()
    K = queue.K
    if K != cfg.K:
        raise ConfigError(f"queue has {K} slots but cfg.K is {cfg.K}")
    _check_frames(denoiser, K + 1)
    ddim = bool(cfg.ddim_steps)
    counter = _Counting(denoiser)
    s0 = queue.as_clip()
    T = cfg.T
    if cfg.use_inversion:
        s_T = forward_jump(s0, T, rng.standard_normal(s0.shape), sched)
        last = s0[:, -1]
        zK_T = forward_jump(last, T, rng.standard_normal(last.shape), sched)
        z = np.concatenate([s_T, zK_T[:, None]], axis=1)
    else:
        z = rng.standard_normal((s0.shape[0], K + 1, *s0.shape[2:]))

    calls = 0
    # the pass starts one transition below T: the level-T initialisation is
    # consumed directly by the first replace/denoise
    for t, t_prev in step_pairs(cfg)[1:]:
        s_t = forward_jump(s0, t, rng.standard_normal(s0.shape), sched)
        for u in range(1, cfg.resample_U + 1):
            z = z.copy()
            z[:, :K] = s_t
            if trace is not None:
                trace.append(TraceEvent(frame_index, t, u, _crc(z[:, :K]), _crc(s_t)))
            eps = guided_eps(counter, z, t, y, cfg.g)
            calls += 1
            z_prev = _denoise(z, eps, t, t_prev, sched, rng, ddim)
            if u < cfg.resample_U and t_prev > 0:
                z = renoise_between(z_prev, t_prev, t, rng.standard_normal(z_prev.shape), sched)
        z = z_prev
    if stats is not None:
        stats.denoise_calls.append(calls)
        stats.network_evals.append(counter.calls)
    return z[:, K]


def _batched_pixels(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (H, W, 3) or (B, H, W, 3) pixels, got {x.shape}")


def _autoregress(denoiser, queue: FrameQueue, n_new: int, y, cfg, rng, trace, stats, first_index: int):
    """Yield ``n_new`` decoded frames, sliding each new latent into ``queue``."""
    for i in range(n_new):
        new = generate_next_frame(denoiser, queue, y, cfg, rng, trace, first_index + i, stats)
        if stats is not None:
            stats.observe_latents(len(queue) + 1)
        queue.slide(new)
        yield new, decode(new, cfg.factor)


def iter_ti2v(denoiser, x0, y, cfg: GenerationConfig, rng=None, trace=None, stats=None, latents: list | None = None):
    """Stream the ``M + 1`` frames of a generated video, starting with ``x0``.

    Only the queue and the frame being generated are kept between frames.
    When ``latents`` is a list, the latent of every emitted frame is appended.
    """
    rng = cfg.rng() if rng is None else rng
    x, _ = _batched_pixels(x0)
    z0 = encode(x, cfg.factor)
    queue = FrameQueue.repeat(z0, cfg.K)
    if stats is not None:
        stats.observe_latents(len(queue))
    if latents is not None:
        latents.append(z0)
    yield x
    for new, frame in _autoregress(denoiser, queue, cfg.M, y, cfg, rng, trace, stats, 1):
        if latents is not None:
            latents.append(new)
        yield frame


def ti2v_generate(denoiser, x0, y, cfg: GenerationConfig, rng=None, trace=None, stats=None) -> np.ndarray:
    """Generate an ``(M+1)``-frame pixel video whose first frame is ``x0``."""
    _, single = _batched_pixels(x0)
    video = np.stack(list(iter_ti2v(denoiser, x0, y, cfg, rng, trace, stats)), axis=1)
    return video[0] if single else video


def predict_generate(denoiser, prefix, y, cfg: GenerationConfig, rng=None, trace=None, stats=None,
                     latents: list | None = None) -> np.ndarray:
    """Continue ``n`` given frames to a video of ``M + 1`` frames.

    ``prefix`` is ``(n, H, W, 3)`` or ``(B, n, H, W, 3)``.  With ``n == 1``
    this is exactly :func:`ti2v_generate`.  ``latents`` collects the latent
    of every output frame, as in :func:`iter_ti2v`.
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    single = prefix.ndim == 4
    if single:
        prefix = prefix[None]
    if prefix.ndim != 5:
        raise ShapeError(f"expected (n, H, W, 3) or (B, n, H, W, 3) prefix, got {prefix.shape}")
    n = prefix.shape[1]
    if n < 1:
        raise ConfigError("prediction needs at least one given frame")
    if n > cfg.M + 1:
        raise ConfigError(f"{n} given frames exceed the video length M+1={cfg.M + 1}")
    rng = cfg.rng() if rng is None else rng
    given = [encode(prefix[:, k], cfg.factor) for k in range(n)]
    queue = FrameQueue.from_frames(given, cfg.K)
    if stats is not None:
        stats.observe_latents(len(queue))
    if latents is not None:
        latents.extend(given)
    frames = [prefix[:, k] for k in range(n)]
    for new, frame in _autoregress(denoiser, queue, cfg.M + 1 - n, y, cfg, rng, trace, stats, n):
        if latents is not None:
            latents.append(new)
        frames.append(frame)
    video = np.stack(frames, axis=1)
    return video[0] if single else video


def infill_generate(denoiser, given, y, cfg: GenerationConfig, rng=None, trace=None, stats=None,
                    latents: list | None = None) -> np.ndarray:
    """Synthesise one frame between each pair of consecutive given frames.

    ``given`` holds the frames at even positions of the output, shape
    ``(n, H, W, 3)`` or ``(B, n, H, W, 3)``; the output has ``2n - 1`` frames.
    The queue starts as ``K`` copies of the first given frame; after every
    synthesised frame the next given frame is slid in.
    """
    given = np.asarray(given, dtype=np.float64)
    single = given.ndim == 4
    if single:
        given = given[None]
    if given.ndim != 5:
        raise ShapeError(f"expected (n, H, W, 3) or (B, n, H, W, 3) frames, got {given.shape}")
    n = given.shape[1]
    if n < 1:
        raise ConfigError("infilling needs at least one given frame")
    rng = cfg.rng() if rng is None else rng
    first = encode(given[:, 0], cfg.factor)
    queue = FrameQueue.repeat(first, cfg.K)
    frames, zs = [given[:, 0]], [first]
    for j in range(1, n):
        new = generate_next_frame(denoiser, queue, y, cfg, rng, trace, len(frames), stats)
        if stats is not None:
            stats.observe_latents(len(queue) + 1)
        queue.slide(new)
        frames.append(decode(new, cfg.factor))
        z_next = encode(given[:, j], cfg.factor)
        queue.slide(z_next)
        frames.append(given[:, j])
        zs += [new, z_next]
    if latents is not None:
        latents.extend(zs)
    video = np.stack(frames, axis=1)
    return video[0] if single else video
