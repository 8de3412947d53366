"""Repeat-and-slide on a world where everything is known exactly.

Latent frames follow a stationary AR(1) process, so the Bayes-optimal noise
predictor is available in closed form and the true conditional of the next
frame given the queue is simply ``rho * last``.  This script generates the
next frame many times and compares the empirical mean with that target, with
and without resampling.

    python demos/gaussian_oracle.py
"""

import numpy as np

from frameslide import AnalyticDenoiser, FrameQueue, GenerationConfig, generate_next_frame
from frameslide.toyworld import GaussianWorldSpec

RHO = 0.9
N = 20000

# a schedule that ends near pure noise makes the comparison sharper
base = GenerationConfig(K=4, beta_end=0.2)
world = GaussianWorldSpec((1, 1, 1), rho=RHO)
den = AnalyticDenoiser(world, base.schedule())

queue = FrameQueue.repeat(np.ones((N, 1, 1, 1)), base.K)
print(f"target E[next | queue] = {RHO:.3f}")
for U in (1, 2, 4, 8):
    cfg = base.with_(resample_U=U)
    out = generate_next_frame(den, queue, None, cfg, np.random.default_rng(U)).ravel()
    se = out.std() / np.sqrt(N)
    print(f"U={U}: mean {out.mean():.3f} +- {se:.3f}, variance {out.var():.3f} (target {1 - RHO ** 2:.3f})")

# The gap at U=1 is not noise: replacing the queue slots with freshly noised
# copies only conditions the new slot through the denoiser's joint estimate,
# which pulls it toward the prior mean.  Resampling iterates that estimate
# and closes most of the gap.
