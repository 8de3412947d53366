"""Command-line interface: ``frameslide {generate,train,eval,worldgen,replay}``.

Every command writes a JSON manifest next to its outputs.  The manifest
holds the fully resolved arguments, so ``frameslide replay MANIFEST --out X``
re-executes the run and checks that every output file hashes the same.

Exit codes: 0 success, 1 replay mismatch, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .codec import DEFAULT_FACTOR, decode, encode, read_ppm, write_latent, write_ppm
from .controller import (
    GenerationConfig,
    RunStats,
    infill_generate,
    iter_ti2v,
    predict_generate,
    sample_t2v,
)
from .denoiser import AnalyticDenoiser
from .errors import ConfigError, FrameslideError, NumericalError, ShapeError, StepRangeError
from .metrics import fvd, grouped_fvd, report_csv
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, make_linear_schedule
from .toyworld import (
    CorpusEntry,
    GaussianWorldSpec,
    MotionClass,
    clip_seed,
    gen_shape_video,
    load_clip,
    read_corpus_manifest,
    sample_ar1_clip,
    write_clip,
    write_corpus_manifest,
)

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
RNG_ALGORITHM = "numpy PCG64, one stream per video seeded by SeedSequence([seed, index])"
DEFAULT_WORLD = "rho=0.9,sigma2=1.0,mu=0.0"
MANIFEST = "manifest.json"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _abspath(text: str) -> str:
    return str(Path(text).expanduser().resolve())


def _video_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _threads() -> int:
    text = os.environ.get("FRAMESLIDE_THREADS")
    if text is None:
        return max(1, min(os.cpu_count() or 1, 4))
    try:
        n = int(text)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"FRAMESLIDE_THREADS must be a positive integer, got {text!r}")
    return n


def _set_threads(n: int) -> None:
    import torch

    torch.set_num_threads(n)


def _write_manifest(path, command: str, args: argparse.Namespace, outputs: dict, started: float, **extra) -> None:
    """``outputs`` maps a stable key to a file path; stored relative to the manifest."""
    root = Path(path).parent
    record = {
        "frameslide_version": __version__,
        "command": command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "rng": RNG_ALGORITHM,
        "outputs": {k: {"path": os.path.relpath(p, root), "sha256": _sha256(p)} for k, p in outputs.items()},
        "duration_s": round(time.perf_counter() - started, 3),
    }
    record.update(extra)
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


# -- generate ---------------------------------------------------------------------------

def _config(args) -> GenerationConfig:
    return GenerationConfig(
        T=args.steps, K=args.queue, M=args.frames, g=args.guidance, ddim_steps=args.ddim,
        resample_U=args.resample, seed=args.seed, use_inversion=not args.no_inversion,
        beta_start=args.beta_start, beta_end=args.beta_end, factor=args.factor,
    )


def _load_denoiser(args, cfg: GenerationConfig):
    if args.denoiser == "analytic":
        if args.size % cfg.factor:
            raise ConfigError(f"--size {args.size} is not divisible by --factor {cfg.factor}")
        side = args.size // cfg.factor
        world = GaussianWorldSpec.parse(args.world, frame_shape=(side, side, 3))
        info = {"id": "analytic", "world": asdict(world), "sha256": None}
        return AnalyticDenoiser(world, cfg.schedule()), info, world
    if args.denoiser.startswith("micro:"):
        from .micro import MicroPredictor, file_checksum, load_params

        _set_threads(args.threads)
        path = args.denoiser[len("micro:"):]
        if not Path(path).is_file():
            raise FileNotFoundError(f"parameter file not found: {path}")
        model = load_params(path)
        pred = MicroPredictor(model)
        if pred.frames != cfg.K + 1:
            raise ConfigError(f"model {path} handles {pred.frames}-frame clips; use --queue {pred.frames - 1}")
        info = {"id": "micro", "path": path, "sha256": file_checksum(path), "config": asdict(model.config)}
        return pred, info, None
    raise ConfigError(f"--denoiser must be 'analytic' or 'micro:PATH', got {args.denoiser!r}")


def _source_count(args) -> int:
    if args.task == "t2v":
        return 0
    if args.task == "ti2v":
        return 1
    return args.given


def _synthetic_source(args, world, index: int, label, length: int) -> np.ndarray:
    """A real clip from the matching toy world to take given frames from."""
    seed = clip_seed(args.seed, index)
    if world is not None:
        return decode(sample_ar1_clip(world, length, seed=seed), args.factor)
    cls = MotionClass(0 if label is None else label)
    return gen_shape_video(cls, seed=seed, frames=max(length, 2), size=args.size)[0][:length]


def _given_frames(clip: np.ndarray, task: str, n: int) -> np.ndarray:
    if task == "infill":
        picked = clip[: 2 * n - 1: 2]
    else:
        picked = clip[:n]
    if len(picked) < n:
        raise ConfigError(f"source clip has {len(clip)} frames, {task} needs {n} given frames")
    return picked


def _jobs(args, world):
    """``(label, given_frames, source)`` per video to generate."""
    n = _source_count(args)
    if args.image:
        if args.from_corpus:
            raise ConfigError("--image and --from-corpus are mutually exclusive")
        if args.task == "t2v":
            raise ConfigError("--task t2v takes no --image")
        if args.task == "ti2v" and len(args.image) != 1:
            raise ConfigError(f"--task ti2v takes exactly one --image, got {len(args.image)}")
        frames = np.stack([read_ppm(p) for p in args.image])
        return [(args.label, frames, "image")]
    if args.from_corpus:
        root = Path(args.from_corpus)
        if not (root / "manifest.jsonl").is_file():
            raise ConfigError(f"no corpus manifest in {root}")
        entries = read_corpus_manifest(root)
        if args.count is not None:
            entries = entries[: args.count]
        jobs = []
        for e in entries:
            label = e.label if args.label is None else args.label
            frames = _given_frames(load_clip(root / e.clip), args.task, n) if n else None
            jobs.append((label, frames, e))
        return jobs
    count = 1 if args.count is None else args.count
    length = 2 * n - 1 if args.task == "infill" else n
    return [(args.label, _synthetic_source(args, world, i, args.label, length) if n else None, "synthetic")
            for i in range(count)]


def _run_one(args, den, cfg, label, frames, rng, stats, trace):
    y = None if label is None else int(label)
    latents: list = []
    if args.task == "ti2v":
        video = np.stack(list(iter_ti2v(den, frames[0], y, cfg, rng, trace, stats, latents)), axis=1)[0]
    elif args.task == "predict":
        video = predict_generate(den, frames[None], y, cfg, rng, trace, stats, latents)[0]
    elif args.task == "infill":
        video = infill_generate(den, frames[None], y, cfg, rng, trace, stats, latents)[0]
    else:
        z = sample_t2v(den, y, cfg, rng, batch=1, shape=getattr(den, "latent_shape", None))
        latents = [z[:, k] for k in range(z.shape[1])]
        video = decode(z[0], cfg.factor)
    return video, [np.asarray(l)[0] for l in latents]


def _write_video(root: Path, video, latents) -> list[Path]:
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for k, frame in enumerate(video):
        write_ppm(root / f"frame_{k:04d}.ppm", frame)
        written.append(root / f"frame_{k:04d}.ppm")
    for k, z in enumerate(latents):
        write_latent(root / f"latent_{k:04d}.lat", z)
        written.append(root / f"latent_{k:04d}.lat")
    return written


def cmd_generate(args) -> int:
    started = time.perf_counter()
    cfg = _config(args)
    if args.task in ("predict", "infill") and args.given < 1:
        raise ConfigError(f"--given must be >= 1, got {args.given}")
    if args.image:
        args.given = len(args.image)
    den, den_info, world = _load_denoiser(args, cfg)
    jobs = _jobs(args, world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mode = args.from_corpus is not None or len(jobs) > 1
    outputs, calls, entries, trace_lines = {}, [], [], []
    for index, (label, frames, source) in enumerate(jobs):
        stats = RunStats()
        trace = [] if args.trace else None
        video, latents = _run_one(args, den, cfg, label, frames, _video_rng(cfg.seed, index), stats, trace)
        clip = f"clip_{index:04d}" if corpus_mode else "."
        for path in _write_video(out / clip, video, latents):
            outputs[os.path.relpath(path, out)] = path
        calls.append(stats.denoise_calls)
        if trace is not None:
            trace_lines += [f"video={index} " + e.line() for e in trace]
        if corpus_mode:
            subject = source.subject if isinstance(source, CorpusEntry) else 0
            entries.append(CorpusEntry(clip, -1 if label is None else int(label), clip_seed(cfg.seed, index), subject))
    if corpus_mode:
        outputs["manifest.jsonl"] = write_corpus_manifest(out, entries)
    if args.trace:
        (out / "trace.txt").write_text("\n".join(trace_lines) + "\n")
        outputs["trace.txt"] = out / "trace.txt"
    sched = cfg.schedule()
    _write_manifest(
        out / MANIFEST, "generate", args, outputs, started,
        config=cfg.to_dict(), seed=cfg.seed,
        schedule={"T": sched.T, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
        denoiser=den_info, denoise_calls_per_frame=calls if corpus_mode else calls[0],
    )
    frames_written = sum(1 for k in outputs if k.endswith(".ppm"))
    print(f"generate: {len(jobs)} video(s), {frames_written} frames -> {out}")
    return EXIT_OK


# -- train ------------------------------------------------------------------------------

def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _load_corpus(root) -> tuple[list[CorpusEntry], list[np.ndarray]]:
    root = Path(root)
    if not root.is_dir() or not (root / "manifest.jsonl").is_file():
        raise ConfigError(f"corpus not found: {root}")
    entries = read_corpus_manifest(root)
    return entries, [load_clip(root / e.clip) for e in entries]


def cmd_train(args) -> int:
    from .micro import MicroConfig, MicroDenoiser, save_params, train_micro

    started = time.perf_counter()
    _set_threads(args.threads)
    entries, clips = _load_corpus(args.corpus)
    if not clips:
        raise ConfigError(f"corpus {args.corpus} is empty")
    latents = encode(np.stack(clips), args.factor)
    labels = [e.label for e in entries]
    config = MicroConfig(frames=args.queue + 1, latent_shape=latents.shape[2:], width=args.width,
                         num_classes=max(labels) + 1)
    model = MicroDenoiser.initialize(config, seed=args.seed)
    sched = make_linear_schedule(args.diffusion_steps, args.beta_start, args.beta_end)
    trace = train_micro(model, latents, labels, sched, null_prob=args.null_prob, steps=args.steps,
                        seed=args.seed, lr=args.lr, batch_size=args.batch)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(model, out)
    loss_path = _sibling(out, ".loss.csv")
    loss_path.write_text("step,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(trace)))
    _write_manifest(_sibling(out, ".manifest.json"), "train", args, {"params": out, "loss": loss_path}, started,
                    seed=args.seed, model=asdict(config), parameters=model.num_parameters(),
                    schedule={"T": sched.T, "beta_start": args.beta_start, "beta_end": args.beta_end})
    tail = np.mean(trace[-100:]) if trace else float("nan")
    print(f"train: {args.steps} steps, final smoothed loss {tail:.4f} -> {out}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------------

def _group_key(entry: CorpusEntry, by: str) -> str:
    return f"{by}={getattr(entry, by)}"


def cmd_eval(args) -> int:
    started = time.perf_counter()
    real_entries, real = _load_corpus(args.real)
    fake_entries, fake = _load_corpus(args.fake)
    if args.group_by:
        keys = sorted({_group_key(e, args.group_by) for e in real_entries + fake_entries})
        groups = {}
        for key in keys:
            r = [v for e, v in zip(real_entries, real) if _group_key(e, args.group_by) == key]
            f = [v for e, v in zip(fake_entries, fake) if _group_key(e, args.group_by) == key]
            groups[key] = (r, f)
        result = grouped_fvd(groups)
        summary = f"mean {result.mean:.6g} std {result.std:.6g} over {len(keys)} groups"
    else:
        if len(real) < 2 or len(fake) < 2:
            raise ConfigError(f"need >= 2 videos per side (got {len(real)} real, {len(fake)} fake)")
        result = fvd(real, fake)
        summary = f"{result:.6g}"
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report_csv(result))
    _write_manifest(_sibling(out, ".manifest.json"), "eval", args, {"csv": out}, started,
                    real_count=len(real), fake_count=len(fake))
    print(f"eval: FVD-lite {summary} -> {out}")
    return EXIT_OK


# -- worldgen ---------------------------------------------------------------------------

def cmd_worldgen(args) -> int:
    started = time.perf_counter()
    if args.count < 0:
        raise ConfigError(f"--count must be >= 0, got {args.count}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = None
    if args.kind == "ar1":
        if args.size % args.factor:
            raise ConfigError(f"--size {args.size} is not divisible by --factor {args.factor}")
        side = args.size // args.factor
        world = GaussianWorldSpec.parse(args.world, frame_shape=(side, side, 3))
    entries, outputs = [], {}
    for i in range(args.count):
        seed = clip_seed(args.seed, i)
        name = f"clip_{i:04d}"
        if world is None:
            video, label, subject = gen_shape_video(MotionClass(i % 4), seed=seed, frames=args.frames, size=args.size)
        else:
            video, label, subject = decode(sample_ar1_clip(world, args.frames, seed=seed), args.factor), 0, 0
        write_clip(out / name, video)
        for k in range(len(video)):
            rel = f"{name}/frame_{k:04d}.ppm"
            outputs[rel] = out / rel
        entries.append(CorpusEntry(name, int(label), seed, int(subject)))
    outputs["manifest.jsonl"] = write_corpus_manifest(out, entries)
    _write_manifest(out / MANIFEST, "worldgen", args, outputs, started, seed=args.seed,
                    world=None if world is None else asdict(world))
    print(f"worldgen: {args.count} {args.kind} clips -> {out}")
    return EXIT_OK


# -- replay -----------------------------------------------------------------------------

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "worldgen": cmd_worldgen}


def _new_manifest_path(command: str, out: Path) -> Path:
    return out / MANIFEST if command in ("generate", "worldgen") else _sibling(out, ".manifest.json")


def cmd_replay(args) -> int:
    path = Path(args.manifest)
    record = json.loads(path.read_text())
    command = record.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"{path}: unknown command {command!r}")
    ns = argparse.Namespace(**record["args"])
    ns.out = _abspath(args.out)
    code = COMMANDS[command](ns)
    if code != EXIT_OK:
        return code
    fresh = json.loads(_new_manifest_path(command, Path(ns.out)).read_text())
    old, new = record["outputs"], fresh["outputs"]
    bad = sorted(k for k in set(old) | set(new) if old.get(k, {}).get("sha256") != new.get(k, {}).get("sha256"))
    if bad:
        print(f"replay: {len(bad)} of {len(old)} outputs differ: {', '.join(bad[:5])}")
        return EXIT_MISMATCH
    print(f"replay: all {len(old)} outputs identical")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def _add_schedule(p):
    p.add_argument("--beta-start", type=float, default=DEFAULT_BETA_START)
    p.add_argument("--beta-end", type=float, default=DEFAULT_BETA_END)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frameslide", description="Repeat-and-slide image-to-video sampling on toy worlds.")
    parser.add_argument("--version", action="version", version=f"frameslide {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a video (or one per corpus clip)")
    g.add_argument("--task", choices=["ti2v", "infill", "predict", "t2v"], default="ti2v")
    g.add_argument("--image", action="append", type=_abspath, help="given frame (PPM); repeat for predict/infill")
    g.add_argument("--from-corpus", type=_abspath, help="take given frames and labels from a corpus directory")
    g.add_argument("--count", type=int, help="number of videos (corpus clips or synthetic sources)")
    g.add_argument("--given", type=int, default=1, help="given frames per video for predict/infill")
    g.add_argument("--label", type=int, help="class id; default from corpus, else unconditional")
    g.add_argument("--frames", type=int, default=15, help="M: frames to generate after the first")
    g.add_argument("--queue", type=int, default=4, help="K: conditioning queue length")
    g.add_argument("--steps", type=int, default=DEFAULT_T, help="T: diffusion steps")
    g.add_argument("--ddim", type=int, default=0, help="DDIM steps (0 = full DDPM)")
    g.add_argument("--resample", type=int, default=1, help="U: resampling iterations per step")
    g.add_argument("--guidance", type=float, default=9.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--denoiser", default="analytic", help="'analytic' or 'micro:PATH'")
    g.add_argument("--world", default=DEFAULT_WORLD, help="Gaussian world, e.g. 'rho=0.9,sigma2=1,mu=0'")
    g.add_argument("--size", type=int, default=32, help="pixel side of synthetic sources")
    g.add_argument("--factor", type=int, default=DEFAULT_FACTOR)
    g.add_argument("--no-inversion", action="store_true")
    g.add_argument("--trace", action="store_true", help="write per-step replacement trace")
    g.add_argument("--out", type=_abspath, required=True)
    _add_schedule(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the micro denoiser on a corpus")
    t.add_argument("--corpus", type=_abspath, required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--null-prob", type=float, default=0.1)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--width", type=int, default=32)
    t.add_argument("--queue", type=int, default=4, help="K; the model sees K+1 frames")
    t.add_argument("--diffusion-steps", type=int, default=DEFAULT_T)
    t.add_argument("--factor", type=int, default=DEFAULT_FACTOR)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=_abspath, required=True)
    _add_schedule(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="FVD-lite between two corpora")
    e.add_argument("--real", type=_abspath, required=True)
    e.add_argument("--fake", type=_abspath, required=True)
    e.add_argument("--group-by", choices=["label", "subject"])
    e.add_argument("--out", type=_abspath, required=True)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("worldgen", help="write a toy corpus")
    w.add_argument("--kind", choices=["shapes", "ar1"], default="shapes")
    w.add_argument("--count", type=int, default=200)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--frames", type=int, default=16)
    w.add_argument("--size", type=int, default=32)
    w.add_argument("--factor", type=int, default=DEFAULT_FACTOR)
    w.add_argument("--world", default=DEFAULT_WORLD)
    w.add_argument("--out", type=_abspath, required=True)
    w.set_defaults(func=cmd_worldgen)

    r = sub.add_parser("replay", help="re-run a manifest and compare output checksums")
    r.add_argument("manifest", type=_abspath)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command != "replay":
            args.threads = _threads()
        return args.func(args)
    except (ConfigError, ShapeError, StepRangeError, NumericalError, FrameslideError) as exc:
        print(f"frameslide: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"frameslide: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
