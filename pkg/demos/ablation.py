"""Sampling-strategy sweep on the Gaussian world: inversion and resampling.

For each setting, generate 100 videos from the same start frames and
compare their temporal roughness and FVD-lite against real AR(1) videos.
Without inversion the terminal noise ignores the queue and consecutive
frames jump.

    python demos/ablation.py
"""

import numpy as np

from frameslide import AnalyticDenoiser, GenerationConfig, decode, ti2v_generate
from frameslide.metrics import fvd, temporal_roughness
from frameslide.toyworld import GaussianWorldSpec, sample_ar1_clip

world = GaussianWorldSpec((8, 8, 3), rho=0.95, sigma2=0.2)
real = decode(sample_ar1_clip(world, 16, seed=0, batch=(100,)))
base = GenerationConfig(M=15, ddim_steps=10)
den = AnalyticDenoiser(world, base.schedule())

settings = {
    "no inversion": base.with_(use_inversion=False),
    "inversion": base,
    "inversion + U=2": base.with_(resample_U=2),
    "inversion + U=4": base.with_(resample_U=4),
}
print(f"{'setting':<18} {'roughness':>10} {'FVD-lite':>10}")
print(f"{'real':<18} {np.mean([temporal_roughness(v) for v in real]):>10.4f}")
for name, cfg in settings.items():
    fake = ti2v_generate(den, real[:, 0], None, cfg, np.random.default_rng(1))
    rough = np.mean([temporal_roughness(v) for v in fake])
    print(f"{name:<18} {rough:>10.4f} {fvd(list(real), list(fake)):>10.4f}")
