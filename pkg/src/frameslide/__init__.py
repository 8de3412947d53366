"""Zero-shot image-conditioned video generation by repeat-and-slide sampling.

A frozen clip denoiser for ``K + 1`` frames is turned into an image-to-video
generator: a queue of ``K`` clean latents (initially the given image
repeated) conditions every sampling pass, each pass emits one new frame,
and the queue slides forward.  Noise initialisation by forward inversion of
the queue and per-step resampling keep consecutive frames coherent.
"""

from .codec import decode, encode
from .controller import (
    FrameQueue,
    GenerationConfig,
    RunStats,
    generate_next_frame,
    infill_generate,
    iter_ti2v,
    predict_generate,
    sample_replacing,
    sample_t2v,
    ti2v_generate,
)
from .denoiser import NULL_LABEL, AnalyticDenoiser, analytic_denoise, guided_eps
from .errors import ConfigError, FrameslideError, NumericalError, ShapeError, StepRangeError
from .metrics import (
    FeatureMoments,
    extract_features,
    frechet_distance,
    fvd,
    grouped_fvd,
    temporal_roughness,
)
from .schedule import (
    NoiseSchedule,
    cfg_combine,
    ddim_step,
    forward_jump,
    forward_step,
    make_linear_schedule,
    reverse_step,
)
from .toyworld import GaussianWorldSpec, MotionClass, gen_shape_video, sample_ar1_clip

__version__ = "0.1.0"
