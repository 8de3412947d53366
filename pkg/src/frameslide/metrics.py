"""Video metrics: a Frechet feature distance with a hand-crafted descriptor.

The descriptor stands in for I3D features, so absolute distances are only
meaningful relative to each other within this package.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .toyworld import shape_centroids

__all__ = [
    "FEATURE_NAMES",
    "extract_features",
    "FeatureMoments",
    "frechet_distance",
    "frechet_distance_diagonal",
    "fvd",
    "GroupedResult",
    "grouped_fvd",
    "temporal_roughness",
    "latent_discontinuity",
    "report_csv",
]

FEATURE_NAMES = (
    "mean_r", "mean_g", "mean_b",
    "var_r", "var_g", "var_b",
    "drift_r", "drift_g", "drift_b",
    "diff_energy_mean", "diff_energy_max",
    "vel_y", "vel_x", "vel_std_y", "vel_std_x",
    "disp_y", "disp_x",
)


def extract_features(video) -> np.ndarray:
    """Fixed-length descriptor of a ``(F, H, W, 3)`` pixel video.

    Appearance (channel means, variances and their drift over time), motion
    energy (mean and max squared frame difference) and the trajectory of the
    brightness centroid (mean velocity, its spread, net displacement, in
    units of frame size).
    """
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4 or v.shape[0] < 1 or v.shape[-1] != 3:
        raise ShapeError(f"expected a non-empty (F, H, W, 3) video, got {v.shape}")
    means = v.mean(axis=(1, 2))
    variances = v.var(axis=(1, 2))
    drift = means[-1] - means[0]
    if v.shape[0] > 1:
        energy = ((v[1:] - v[:-1]) ** 2).mean(axis=(1, 2, 3))
        energy_stats = [energy.mean(), energy.max()]
    else:
        energy_stats = [0.0, 0.0]
    size = np.array(v.shape[1:3], dtype=np.float64)
    cent = shape_centroids(v) / size
    if v.shape[0] > 1:
        vel = np.diff(cent, axis=0)
        traj = [*vel.mean(axis=0), *vel.std(axis=0), *(cent[-1] - cent[0])]
    else:
        traj = [0.0] * 6
    return np.concatenate([means.mean(axis=0), variances.mean(axis=0), drift, energy_stats, traj])


@dataclass(frozen=True)
class FeatureMoments:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, feats) -> "FeatureMoments":
        """Sample mean and unbiased (n - 1) covariance of row vectors."""
        f = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        n = f.shape[0]
        if n < 2:
            raise ConfigError(f"need at least 2 samples for a covariance, got {n}")
        cov = np.atleast_2d(np.cov(f, rowvar=False, ddof=1))
        return cls(f.mean(axis=0), 0.5 * (cov + cov.T), n)

    @classmethod
    def from_videos(cls, videos) -> "FeatureMoments":
        return cls.from_features(np.stack([extract_features(v) for v in videos]))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureMoments, b: FeatureMoments) -> float:
    """Frechet distance between Gaussian fits; symmetric square-root form."""
    mu_a, mu_b = np.atleast_1d(a.mean), np.atleast_1d(b.mean)
    s_a, s_b = np.atleast_2d(a.cov), np.atleast_2d(b.cov)
    if mu_a.shape != mu_b.shape or s_a.shape != s_b.shape or s_a.shape != (mu_a.size, mu_a.size):
        raise ShapeError(f"moment dimensions differ: {mu_a.shape} vs {mu_b.shape}")
    root_a = _psd_sqrt(s_a)
    cross = _psd_sqrt(root_a @ s_b @ root_a)
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(s_a) + np.trace(s_b) - 2.0 * np.trace(cross))
    return max(d, 0.0)


def frechet_distance_diagonal(mu_a, var_a, mu_b, var_b) -> float:
    """Closed form for diagonal covariances (used to cross-check the matrix path)."""
    mu_a, var_a, mu_b, var_b = (np.asarray(x, dtype=np.float64) for x in (mu_a, var_a, mu_b, var_b))
    return float(np.sum((mu_a - mu_b) ** 2) + np.sum((np.sqrt(var_a) - np.sqrt(var_b)) ** 2))


def fvd(real_videos, fake_videos) -> float:
    """Frechet distance between descriptor distributions of two video sets."""
    return frechet_distance(FeatureMoments.from_videos(real_videos), FeatureMoments.from_videos(fake_videos))


@dataclass(frozen=True)
class GroupedResult:
    distances: dict
    mean: float
    std: float


def grouped_fvd(groups: dict) -> GroupedResult:
    """Per-group distances plus their mean and population std.

    ``groups`` maps a group name to ``(real_videos, fake_videos)`` or to a
    pair of precomputed :class:`FeatureMoments`.
    """
    if not groups:
        raise ConfigError("no groups to evaluate")
    distances = {}
    for name, (real, fake) in groups.items():
        if not isinstance(real, FeatureMoments):
            if len(real) < 2 or len(fake) < 2:
                raise ConfigError(f"group {name!r} needs >= 2 videos per side (got {len(real)} real, {len(fake)} fake)")
            real, fake = FeatureMoments.from_videos(real), FeatureMoments.from_videos(fake)
        distances[name] = frechet_distance(real, fake)
    vals = np.array(list(distances.values()))
    return GroupedResult(distances, float(vals.mean()), float(vals.std(ddof=0)))


def report_csv(result) -> str:
    """One ``group,distance`` row per group, then ``mean`` and ``std`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "distance"])
    if isinstance(result, GroupedResult):
        for name, d in result.distances.items():
            w.writerow([name, f"{d:.10g}"])
        w.writerow(["mean", f"{result.mean:.10g}"])
        w.writerow(["std", f"{result.std:.10g}"])
    else:
        w.writerow(["all", f"{float(result):.10g}"])
    return buf.getvalue()


def temporal_roughness(video) -> float:
    """Mean squared per-pixel difference over consecutive frame pairs."""
    v = np.asarray(video, dtype=np.float64)
    if v.ndim < 2 or v.shape[0] < 2:
        raise ConfigError("temporal roughness needs at least 2 frames")
    return float(((v[1:] - v[:-1]) ** 2).mean())


def latent_discontinuity(z_first, z_second) -> float:
    """Mean squared difference between two latent frames."""
    return float(np.mean((np.asarray(z_second) - np.asarray(z_first)) ** 2))
