"""Closed-form diffusion math.

Latent clips are plain ``numpy`` arrays whose trailing axes are
``(frames, H_z, W_z, C_z)``; any number of leading batch axes is allowed.
Step indices follow the usual DDPM convention: ``t = 0`` is clean data and
``t = T`` is the most heavily noised level.  ``alpha_bar(0)`` is defined as 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StepRangeError

__all__ = [
    "NoiseSchedule",
    "make_linear_schedule",
    "forward_step",
    "forward_jump",
    "reverse_step",
    "ddim_step",
    "renoise_between",
    "cfg_combine",
    "ddim_timesteps",
    "DEFAULT_T",
    "DEFAULT_BETA_START",
    "DEFAULT_BETA_END",
]

DEFAULT_T = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative products for ``T`` steps.

    Arrays are stored 0-based (``betas[0]`` is beta_1); use the accessor
    methods to index by diffusion step.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)
    sigmas: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = _frozen(self.betas)
        if betas.ndim != 1 or betas.size == 0:
            raise ConfigError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0) & (betas < 1)):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        alpha_bars = np.empty_like(betas)
        acc = 1.0
        for i, b in enumerate(betas):
            acc = acc * (1.0 - b)
            alpha_bars[i] = acc
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", _frozen(alpha_bars))
        object.__setattr__(self, "sigmas", _frozen(np.sqrt(betas)))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        if not (lo <= int(t) <= self.T):
            raise StepRangeError(f"step {t} outside [{lo}, {self.T}]")
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        t = self._check(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[self._check(t) - 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "beta", "alpha_bar", "sigma"])
        for i in range(self.T):
            w.writerow([i + 1, repr(float(self.betas[i])), repr(float(self.alpha_bars[i])),
                        repr(float(self.sigmas[i]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "NoiseSchedule":
        rows = list(csv.DictReader(io.StringIO(text)))
        steps = [int(r["t"]) for r in rows]
        if steps != list(range(1, len(rows) + 1)):
            raise ConfigError("schedule CSV rows must be numbered 1..T in order")
        return cls(np.array([float(r["beta"]) for r in rows]))


def make_linear_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not 0 < beta_start < 1:
        raise ConfigError(f"beta_start must lie in (0, 1), got {beta_start!r}")
    if not 0 < beta_end < 1:
        raise ConfigError(f"beta_end must lie in (0, 1), got {beta_end!r}")
    if beta_start > beta_end:
        raise ConfigError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, int(T)))


def _same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shape {np.shape(b)} does not match {np.shape(a)}")


def forward_step(z_prev, t: int, noise, sched: NoiseSchedule) -> np.ndarray:
    """One forward noising step ``t-1 -> t``."""
    _same_shape(z_prev, noise, "noise")
    b = sched.beta(t)
    return np.sqrt(1.0 - b) * np.asarray(z_prev) + np.sqrt(b) * np.asarray(noise)


def forward_jump(z0, t: int, noise, sched: NoiseSchedule) -> np.ndarray:
    """Noise clean latents straight to level ``t``."""
    _same_shape(z0, noise, "noise")
    if int(t) < 1:
        raise StepRangeError(f"step {t} outside [1, {sched.T}]")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(z0) + np.sqrt(1.0 - ab) * np.asarray(noise)


def reverse_step(z_t, eps_hat, t: int, noise, sched: NoiseSchedule) -> np.ndarray:
    """Ancestral DDPM step ``t -> t-1`` from a noise prediction.

    The injected noise is dropped at ``t == 1`` so the last step is
    deterministic.
    """
    _same_shape(z_t, eps_hat, "eps_hat")
    b = sched.beta(t)
    ab = sched.alpha_bar(t)
    z_t = np.asarray(z_t)
    mean = (z_t - (b / np.sqrt(1.0 - ab)) * np.asarray(eps_hat)) / np.sqrt(1.0 - b)
    if t == 1 or noise is None:
        return mean
    _same_shape(z_t, noise, "noise")
    return mean + sched.sigma(t) * np.asarray(noise)


def ddim_step(z, eps_hat, tau_i: int, tau_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update ``tau_i -> tau_prev``."""
    _same_shape(z, eps_hat, "eps_hat")
    if not 0 <= tau_prev < tau_i <= sched.T:
        raise StepRangeError(f"DDIM step pair ({tau_i} -> {tau_prev}) is not decreasing within [0, {sched.T}]")
    ab_i = sched.alpha_bar(tau_i)
    ab_p = sched.alpha_bar(tau_prev)
    eps_hat = np.asarray(eps_hat)
    x0 = (np.asarray(z) - np.sqrt(1.0 - ab_i) * eps_hat) / np.sqrt(ab_i)
    return np.sqrt(ab_p) * x0 + np.sqrt(1.0 - ab_p) * eps_hat


def renoise_between(z_prev, tau_prev: int, tau_i: int, noise, sched: NoiseSchedule) -> np.ndarray:
    """Re-noise from level ``tau_prev`` back up to ``tau_i``.

    Uses the marginal-preserving transition with variance
    ``1 - alpha_bar(tau_i) / alpha_bar(tau_prev)``; for adjacent steps this is
    exactly :func:`forward_step`.
    """
    _same_shape(z_prev, noise, "noise")
    if tau_i == tau_prev + 1 and tau_prev >= 0 and tau_i >= 1:
        return forward_step(z_prev, tau_i, noise, sched)
    if not 0 <= tau_prev < tau_i <= sched.T:
        raise StepRangeError(f"re-noise pair ({tau_prev} -> {tau_i}) is not increasing within [0, {sched.T}]")
    ratio = sched.alpha_bar(tau_i) / sched.alpha_bar(tau_prev)
    return np.sqrt(ratio) * np.asarray(z_prev) + np.sqrt(1.0 - ratio) * np.asarray(noise)


def cfg_combine(eps_uncond, eps_cond, g: float) -> np.ndarray:
    """Classifier-free guidance: ``eps_uncond + g * (eps_cond - eps_uncond)``."""
    _same_shape(eps_uncond, eps_cond, "eps_cond")
    if g < 0:
        raise ConfigError(f"guidance scale must be >= 0, got {g}")
    # u + (c - u) can round away from c; the endpoints must be exact
    if g == 1:
        return np.array(eps_cond, dtype=np.result_type(eps_cond, eps_uncond))
    if g == 0:
        return np.array(eps_uncond, dtype=np.result_type(eps_cond, eps_uncond))
    eps_uncond = np.asarray(eps_uncond)
    return eps_uncond + g * (np.asarray(eps_cond) - eps_uncond)


def ddim_timesteps(T: int, n: int) -> list[int]:
    """Ascending subsequence of ``n`` steps with uniform stride ending at ``T``."""
    if not 1 <= n <= T:
        raise ConfigError(f"DDIM step count must be in [1, {T}], got {n}")
    taus = [int(round(i * T / n)) for i in range(1, n + 1)]
    if len(set(taus)) != n:
        raise ConfigError(f"cannot pick {n} distinct DDIM steps from T={T}")
    return taus
