"""Noise predictors and the calling convention shared by every sampler.

A denoiser is any callable ``eps = denoiser(z_t, t, y)`` where

* ``z_t`` has shape ``(B, F, H, W, C)``;
* ``t`` is the integer diffusion step of the whole batch;
* ``y`` is an integer array of shape ``(B,)`` holding class ids, with
  :data:`NULL_LABEL` standing for the unconditional label.

It returns a float64 array shaped like ``z_t``.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError
from .schedule import NoiseSchedule, cfg_combine
from .toyworld import GaussianWorldSpec

__all__ = ["NULL_LABEL", "as_labels", "AnalyticDenoiser", "analytic_denoise", "guided_eps"]

NULL_LABEL = -1


def as_labels(y, batch: int) -> np.ndarray:
    """Broadcast ``None``, a scalar or a sequence to a ``(batch,)`` label array."""
    if y is None:
        return np.full(batch, NULL_LABEL, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if y.ndim == 0:
        return np.full(batch, int(y), dtype=np.int64)
    if y.shape != (batch,):
        raise ShapeError(f"labels of shape {y.shape} do not match batch {batch}")
    return y


class AnalyticDenoiser:
    """Bayes-optimal noise predictor for a :class:`GaussianWorldSpec` prior.

    Labels are ignored: the Gaussian world is unconditional.
    """

    unconditional = True

    def __init__(self, world: GaussianWorldSpec, sched: NoiseSchedule, max_cond: float = 1e12):
        self.world = world
        self.sched = sched
        self.max_cond = max_cond
        self._gain = {}

    @property
    def latent_shape(self) -> tuple:
        return self.world.frame_shape

    def posterior_gain(self, t: int, frames: int) -> np.ndarray:
        """``sqrt(ab) * S (ab S + (1 - ab) I)^-1`` over the frame axis."""
        key = (int(t), int(frames))
        if key not in self._gain:
            ab = self.sched.alpha_bar(t)
            cov = self.world.frame_covariance(frames)
            system = ab * cov + (1.0 - ab) * np.eye(frames)
            cond = np.linalg.cond(system)
            if not np.isfinite(cond) or cond > self.max_cond:
                raise NumericalError(f"posterior system at t={t} is ill-conditioned (cond={cond:.3g})")
            # system and cov are symmetric, so cov @ inv(system) == solve(system, cov).T
            self._gain[key] = np.sqrt(ab) * np.linalg.solve(system, cov).T
        return self._gain[key]

    def posterior_mean(self, z_t, t: int) -> np.ndarray:
        z_t = np.asarray(z_t, dtype=np.float64)
        frames = z_t.shape[-4]
        gain = self.posterior_gain(t, frames)
        mu = self.world.mu
        ab = self.sched.alpha_bar(t)
        return mu + np.einsum("ij,...jhwc->...ihwc", gain, z_t - np.sqrt(ab) * mu)

    def __call__(self, z_t, t: int, y=None) -> np.ndarray:
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.shape[-3:] != self.world.frame_shape:
            raise ShapeError(f"clip frames {z_t.shape[-3:]} do not match world {self.world.frame_shape}")
        ab = self.sched.alpha_bar(t)
        m_post = self.posterior_mean(z_t, t)
        return (z_t - np.sqrt(ab) * m_post) / np.sqrt(1.0 - ab)


def analytic_denoise(z_t, t: int, world: GaussianWorldSpec, sched: NoiseSchedule) -> np.ndarray:
    """Functional form of :class:`AnalyticDenoiser` for one-off calls."""
    return AnalyticDenoiser(world, sched)(z_t, t)


def guided_eps(denoiser, z_t, t: int, y, g: float) -> np.ndarray:
    """Noise prediction with classifier-free guidance.

    One evaluation when ``g == 1`` or the denoiser is unconditional, two
    otherwise.
    """
    y = as_labels(y, z_t.shape[0])
    if g == 1 or getattr(denoiser, "unconditional", False):
        return denoiser(z_t, t, y)
    eps_u = denoiser(z_t, t, np.full_like(y, NULL_LABEL))
    eps_c = denoiser(z_t, t, y)
    return cfg_combine(eps_u, eps_c, g)
