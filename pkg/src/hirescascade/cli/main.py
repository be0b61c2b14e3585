"""Command-line entry point.

Subcommands: ``generate``, ``analyze``, ``lora-train``, ``print-config`` and
``train-base``. Configuration errors exit with status 1 and numerical
failures with status 2; both print a single ``error:`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..analysis import image_metrics
from ..cascade import StageResult, run_cascade
from ..dit_scale import RopeConfig, attention_temperature
from ..errors import InvalidArgumentError, NumericalError
from ..models import checkpoint
from ..models.checkpoint import CheckpointError
from ..models.codec import default_codec
from ..models.dit import TinyDiT
from ..models.lora import adapters_from_tensors, adapters_to_tensors, create_adapters, lora_apply
from ..models.training import TrainSettings, render_scene, train_denoiser, train_lora
from ..models.unet import TinyUNet
from ..schedule import make_schedule
from .config import (
    ConfigError,
    LoraTrainConfig,
    RunConfig,
    load_config,
    load_lora_config,
)
from .imageio import RGB_MAPPING, from_bytes, read_image, to_bytes, write_png, write_ppm
from .report import REPORT_VERSION, dumps_report

LATENT_FILE = "final_latent.cskt"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- model loading ---------------------------------------------------------
def load_model(backbone: str, path: str | None, init_seed: int = 0):
    if path is None:
        return TinyDiT(seed=init_seed) if backbone == "dit" else TinyUNet(seed=init_seed)
    tensors, meta = checkpoint.load(path)
    kind = meta.get("kind")
    if kind != backbone:
        raise ConfigError(f"checkpoint {path} holds a {kind!r} model, config asks for {backbone!r}")
    return TinyDiT.from_tensors(tensors, meta) if kind == "dit" else TinyUNet.from_tensors(tensors, meta)


def merge_adapters(model, path: str):
    if model.kind != "dit":
        raise ConfigError("LoRA adapters apply to the DiT backbone only")
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "lora":
        raise ConfigError(f"{path} is not an adapter checkpoint")
    params = dict(model.params)
    for ad in adapters_from_tensors(tensors, meta):
        if ad.target not in params:
            raise ConfigError(f"adapter target {ad.target!r} not in model")
        params[ad.target] = lora_apply(params[ad.target], ad)
    return TinyDiT(model.config, params=params)


# -- generate ----------------------------------------------------------------
def _frames(rgb: np.ndarray) -> list[np.ndarray]:
    return [rgb] if rgb.ndim == 3 else [rgb[:, f] for f in range(rgb.shape[1])]


def _stage_entry(res: StageResult, rgb: np.ndarray, cfg: RunConfig, out_dir: Path) -> dict:
    frames = []
    for f, img in enumerate(_frames(rgb)):
        pixels = to_bytes(img)
        files = []
        stem = f"stage{res.level}_frame{f}"
        if cfg.output.format in ("ppm", "both"):
            write_ppm(out_dir / f"{stem}.ppm", pixels)
            files.append(f"{stem}.ppm")
        if cfg.output.format in ("png", "both"):
            write_png(out_dir / f"{stem}.png", pixels)
            files.append(f"{stem}.png")
        entry = {"frame": f, "files": files}
        if cfg.metrics.enabled:
            entry.update(image_metrics(img, cfg.metrics.cutoff_sigma, cfg.metrics.min_lag, cfg.metrics.bins))
        frames.append(entry)
    used: dict[str, list[int]] = {}
    for _, block, d in res.hooks_log:
        if d not in used.setdefault(block, []):
            used[block].append(d)
    entry = {
        "level": res.level,
        "latent_shape": list(res.latent.shape),
        "rgb_shape": list(rgb.shape),
        "K": res.K,
        "steps": [int(s) for s in res.steps],
        "temperature": float(res.temperature),
        "rope_lambdas": None if res.rope is None else [float(v) for v in res.rope.lambdas],
        "frames": frames,
    }
    if used:
        entry["dilation_used"] = {k: sorted(v) for k, v in sorted(used.items())}
    return entry


def _cond_image(cfg: RunConfig, cascade_cfg):
    if cfg.task != "i2v":
        return None
    level = cascade_cfg.stages[-1].level if cascade_cfg.stages else 1
    h, w = 2 * cfg.base.height * level, 2 * cfg.base.width * level
    if cfg.base.cond_image is None:
        return render_scene(cfg.seed, h, w)
    try:
        img = from_bytes(read_image(cfg.base.cond_image))
    except OSError as exc:
        raise ConfigError(f"cannot read conditioning image {cfg.base.cond_image}: {exc.strerror or exc}") from exc
    if img.shape != (3, h, w):
        raise ConfigError(f"conditioning image must be {w}x{h}, got {img.shape[2]}x{img.shape[1]}")
    return img


def generate(cfg: RunConfig, out_dir: Path, threads: int = 1, timestamps: bool = True) -> dict:
    cascade_cfg = cfg.to_cascade()
    model = load_model(cfg.backbone, cfg.base.checkpoint, cfg.base.init_seed)
    if cfg.base.adapters is not None:
        model = merge_adapters(model, cfg.base.adapters)
    cond_image = _cond_image(cfg, cascade_cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    codec = default_codec()
    stages: list[dict] = []
    stage_ms: list[float] = []
    clock = [time.perf_counter()]
    start = clock[0]

    def on_stage(res: StageResult) -> None:
        now = time.perf_counter()
        stage_ms.append((now - clock[0]) * 1000)
        stages.append(_stage_entry(res, codec.decode(res.latent.data), cfg, out_dir))
        clock[0] = time.perf_counter()

    with ExitStack() as stack:
        # single-threaded BLAS keeps reductions in a fixed order
        stack.enter_context(threadpool_limits(limits=1))
        executor = stack.enter_context(ThreadPoolExecutor(threads)) if threads > 1 else None
        result = run_cascade(cascade_cfg, model, codec, cond_image, executor, on_stage)

    latent_name = None
    if cfg.output.write_latent:
        latent_name = LATENT_FILE
        checkpoint.save(
            out_dir / LATENT_FILE,
            {"latent": result.latent.data},
            {"kind": "latent", "level": result.latent.level, "backbone": cfg.backbone, "task": cfg.task},
        )
    report = {
        "version": REPORT_VERSION,
        "config_echo": cfg.to_dict(),
        "rgb_mapping": RGB_MAPPING,
        "outputs": {"latent_checkpoint": latent_name},
        "stages": stages,
        "timing_ms": {"total": (time.perf_counter() - start) * 1000, "stages": stage_ms} if timestamps else None,
    }
    (out_dir / "report.json").write_text(dumps_report(report), encoding="utf-8")
    return report


def cmd_generate(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.checkpoint is not None:
        cfg.base.checkpoint = args.checkpoint
    if args.cond_image is not None:
        cfg.base.cond_image = args.cond_image
    if args.out is not None:
        cfg.output.dir = args.out
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    generate(cfg, Path(cfg.output.dir), args.threads, not args.no_timestamp)
    print(os.path.join(cfg.output.dir, "report.json"))
    return 0


# -- analyze -----------------------------------------------------------------
def cmd_analyze(args) -> int:
    results = {}
    for path in args.images:
        try:
            pixels = read_image(path)
        except OSError as exc:
            raise ConfigError(f"cannot read image {path}: {exc.strerror or exc}") from exc
        except InvalidArgumentError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        results[path] = image_metrics(from_bytes(pixels), args.cutoff_sigma, args.min_lag, args.bins)
    text = json.dumps(results, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# -- training ----------------------------------------------------------------
def lora_train(cfg: LoraTrainConfig, out_dir: Path) -> dict:
    model = load_model("dit", cfg.checkpoint, cfg.init_seed)
    mc = model.config
    if cfg.target_height % 2 or cfg.target_width % 2:
        raise ConfigError("target latent size must be even")
    train = mc.train_extent()
    target = (train[0], cfg.target_height // 2, cfg.target_width // 2)
    rope = RopeConfig.ntk(mc.axis_dims, train, target)
    temperature = attention_temperature(train[1] * train[2], target[1] * target[2])
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end, cfg.schedule.kind)
    adapters = create_adapters(model, cfg.rank, cfg.scale, seed=cfg.seed)
    settings = TrainSettings(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed, prompt=cfg.prompt)
    with threadpool_limits(limits=1):
        adapters, losses, (eval_initial, eval_final) = train_lora(
            model, adapters, sched, settings, (cfg.target_height, cfg.target_width), rope, temperature
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors, meta = adapters_to_tensors(adapters)
    meta.update({"rope_lambdas": list(rope.lambdas), "temperature": temperature})
    checkpoint.save(out_dir / "adapters.cskt", tensors, meta)
    curve = {"steps": cfg.steps, "losses": losses, "eval_loss": {"initial": eval_initial, "final": eval_final}}
    (out_dir / "loss_curve.json").write_text(json.dumps(curve, indent=2) + "\n", encoding="utf-8")
    return curve


def cmd_lora_train(args) -> int:
    cfg = load_lora_config(args.config) if args.config else LoraTrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.checkpoint is not None:
        cfg.checkpoint = args.checkpoint
    if args.out is not None:
        cfg.output.dir = args.out
    lora_train(cfg, Path(cfg.output.dir))
    print(os.path.join(cfg.output.dir, "adapters.cskt"))
    return 0


def cmd_train_base(args) -> int:
    sched = make_schedule(1000, 0.00085, 0.012, "scaled_linear")
    model = TinyDiT(seed=args.init_seed)
    settings = TrainSettings(steps=args.steps, seed=args.seed if args.seed is not None else 0)
    with threadpool_limits(limits=1):
        losses = train_denoiser(model, sched, settings, log_every=args.log_every)
    out = Path(args.out or "dit.cskt")
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = model.meta()
    meta["final_loss"] = losses[-1] if losses else None
    checkpoint.save(out, model.params, meta)
    print(out)
    return 0


def cmd_print_config(args) -> int:
    if args.lora:
        cfg = load_lora_config(args.config) if args.config else LoraTrainConfig()
    else:
        cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output.dir = args.out
    sys.stdout.write(cfg.dumps())
    return 0


# -- parser ------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hirescascade", description="Higher-resolution cascade sampling with toy denoisers.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", metavar="DIR", help="output directory (or file)")

    g = sub.add_parser("generate", help="run the cascade and write frames, latent and report")
    common(g)
    g.add_argument("--no-timestamp", action="store_true", help="omit wall-clock timings from report.json")
    g.add_argument("--threads", type=int, default=1, help="worker threads for patch attention")
    g.add_argument("--checkpoint", metavar="PATH", help="model checkpoint (overrides base.checkpoint)")
    g.add_argument("--cond-image", metavar="PATH", help="conditioning frame for i2v")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="compute image metrics")
    a.add_argument("images", nargs="+", metavar="IMAGE")
    a.add_argument("--cutoff-sigma", type=float, default=1.0)
    a.add_argument("--min-lag", type=int, default=8)
    a.add_argument("--bins", type=int, default=32)
    a.add_argument("--out", metavar="FILE", help="write JSON here instead of stdout")
    a.set_defaults(func=cmd_analyze)

    lt = sub.add_parser("lora-train", help="train low-rank adapters at an extended size")
    common(lt)
    lt.add_argument("--checkpoint", metavar="PATH", help="base model checkpoint")
    lt.set_defaults(func=cmd_lora_train)

    pc = sub.add_parser("print-config", help="print the fully defaulted configuration")
    common(pc)
    pc.add_argument("--lora", action="store_true", help="print the adapter-training configuration instead")
    pc.set_defaults(func=cmd_print_config)

    tb = sub.add_parser("train-base", help="train the toy transformer on synthetic scenes")
    common(tb, config=False)
    tb.add_argument("--steps", type=int, default=2000)
    tb.add_argument("--init-seed", type=int, default=0)
    tb.add_argument("--log-every", type=int, default=0)
    tb.set_defaults(func=cmd_train_base)
    return p


def _fail(message: str, code: int) -> int:
    print("error: " + " ".join(str(message).split()), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        return _fail(f"numerical failure: {exc}", 2)
    except (InvalidArgumentError, CheckpointError) as exc:
        return _fail(str(exc), 1)
    except OSError as exc:
        name = f" {exc.filename}" if exc.filename else ""
        return _fail(f"{exc.strerror or exc}{name}", 1)


if __name__ == "__main__":
    sys.exit(main())
