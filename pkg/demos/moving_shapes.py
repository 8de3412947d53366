"""Train the micro denoiser on moving squares, then animate a still image.

The network only ever sees 5-frame clips.  Repeat-and-slide turns it into a
16-frame image-to-video generator: the still frame fills the queue, each
sampling pass appends one frame, and the queue slides forward.

    python demos/moving_shapes.py [OUT_DIR]

Training takes a couple of minutes on one CPU core.
"""

import sys
from pathlib import Path

import numpy as np

from frameslide import GenerationConfig, encode, ti2v_generate
from frameslide.metrics import shape_centroids
from frameslide.micro import MicroDenoiser, MicroPredictor, train_micro
from frameslide.schedule import make_linear_schedule
from frameslide.toyworld import MotionClass, gen_shape_video, write_clip

out = Path(sys.argv[1] if len(sys.argv) > 1 else "moving_shapes_out")

videos = [gen_shape_video(i % 4, seed=i) for i in range(200)]
clips = encode(np.stack([v[0] for v in videos]))
labels = [v[1] for v in videos]

model = MicroDenoiser.initialize(seed=0)
print(f"training {model.num_parameters()} parameters")
trace = train_micro(model, clips, labels, make_linear_schedule(), steps=4000, lr=0.2)
print(f"loss {np.mean(trace[:200]):.3f} -> {np.mean(trace[-200:]):.3f}")
den = MicroPredictor(model)

cfg = GenerationConfig(M=15, ddim_steps=10, g=9.0)
for cls in MotionClass:
    still, _, _ = gen_shape_video(cls, seed=9000 + cls)
    video = ti2v_generate(den, still[0], int(cls), cfg, np.random.default_rng(int(cls)))
    write_clip(out / cls.display_name, video)
    c = shape_centroids(video)
    print(f"{cls.display_name:>5}: centroid moved by (dy, dx) = {np.round(c[-1] - c[0], 2)} px")
print(f"frames written under {out}/")
