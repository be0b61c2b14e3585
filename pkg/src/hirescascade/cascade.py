"""Self-cascade sampling: generate at training size, then repeatedly
upsample, re-noise to an intermediate step and denoise again at twice the
resolution with the backbone-specific adaptations switched on.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .dit_scale import RopeConfig, attention_temperature
from .errors import InvalidArgumentError, NumericalError
from .models.codec import ToyCodec, default_codec
from .models.conditioning import RegionConditioning
from .schedule import (
    DetailControl,
    NoiseSchedule,
    detail_blend,
    forward_noise,
    make_schedule,
    renoise_to,
    reverse_step_ddim,
    shift_timesteps,
    timestep_sequence,
)
from .tensor_ops import LatentTensor, downsample_area, gaussian_lowpass, upsample_bilinear
from .unet_scale import DilationPolicy, FusionConfig, ScaleHooks

BACKBONES = ("unet", "dit")
TASKS = ("t2i", "t2v", "i2v")
UPSAMPLE_MODES = ("latent", "rgb")

# stream ids for the seeded generator
_BASE_NOISE = 0
_I2V_NOISE = 0x12F


@dataclass
class Region:
    """A binary mask at the stage's latent resolution with optional overrides."""

    mask: np.ndarray
    alpha: float | None = None
    prompt: str | None = None


@dataclass
class StageConfig:
    level: int
    k_fraction: float = 0.6
    upsample_mode: str = "latent"
    alpha: float = 1.0
    regions: list[Region] = field(default_factory=list)
    dilation: DilationPolicy | None = None
    fusion: FusionConfig | None = None
    rope_mode: str = "ntk"  # "ntk" or "plain"
    rope_base: float = 10000.0
    temperature: float | None = None  # None: derived from token counts
    shift: float = 1.0
    rgb_blur_sigma: float = 0.5


@dataclass
class CascadeConfig:
    backbone: str = "dit"
    task: str = "t2i"
    seed: int = 0
    guidance: float = 1.0
    prompt: str = ""
    negative_prompt: str = ""
    height: int = 16
    width: int = 16
    frames: int = 1
    num_steps: int = 20
    timesteps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    schedule_kind: str = "scaled_linear"
    base_shift: float = 1.0
    stages: list[StageConfig] = field(default_factory=list)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.timesteps, self.beta_start, self.beta_end, self.schedule_kind)

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise InvalidArgumentError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.task not in TASKS:
            raise InvalidArgumentError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.backbone == "unet" and self.task != "t2i":
            raise InvalidArgumentError(f"the UNet backbone is image-only; task {self.task!r} needs the DiT")
        if self.task == "t2i" and self.frames != 1:
            raise InvalidArgumentError("t2i generates a single frame")
        if self.guidance < 1:
            raise InvalidArgumentError(f"guidance must be >= 1, got {self.guidance}")
        if self.num_steps < 1:
            raise InvalidArgumentError("num_steps must be >= 1")
        level = 1
        for st in self.stages:
            if st.level != 2 * level:
                raise InvalidArgumentError(f"stage levels must double each time: expected {2 * level}, got {st.level}")
            level = st.level
            if st.upsample_mode not in UPSAMPLE_MODES:
                raise InvalidArgumentError(f"upsample_mode must be one of {UPSAMPLE_MODES}")
            if not 0 < st.k_fraction <= 1:
                raise InvalidArgumentError(f"k_fraction must lie in (0, 1], got {st.k_fraction}")
            if self.backbone == "unet" and st.shift != 1:
                raise InvalidArgumentError("noise shift applies to the DiT backbone only")
            shape = (self.height * st.level, self.width * st.level)
            for r in st.regions:
                if np.asarray(r.mask).shape != shape:
                    raise InvalidArgumentError(f"region mask shape {np.asarray(r.mask).shape} != level-{st.level} latent dims {shape}")
            _check_disjoint([r.mask for r in st.regions])


def _check_disjoint(masks) -> None:
    if not masks:
        return
    total = np.zeros(np.asarray(masks[0]).shape, dtype=int)
    for m in masks:
        m = np.asarray(m)
        if not np.isin(m, (0, 1)).all():
            raise InvalidArgumentError("region masks must be binary")
        total += m.astype(int)
    over = np.argwhere(total > 1)
    if len(over):
        y, x = over[0]
        raise InvalidArgumentError(f"region masks overlap at cell ({y}, {x})")


def build_region_alpha(masks, values, default: float, shape=None) -> DetailControl:
    """Per-cell detail exponent: region values inside masks, default elsewhere."""
    if len(masks) != len(values):
        raise InvalidArgumentError("one value per mask is required")
    if not masks:
        if shape is None:
            return DetailControl(float(default))
        return DetailControl(np.full(shape, float(default)))
    _check_disjoint(masks)
    amap = np.full(np.asarray(masks[0]).shape, float(default))
    for m, v in zip(masks, values):
        amap[np.asarray(m).astype(bool)] = v
    return DetailControl(amap)


def inject_region_conditions(cond: np.ndarray, masks, region_tokens, latent_hw=None) -> RegionConditioning:
    """Route cross-attention queries inside each mask to that region's tokens."""
    masks = [np.asarray(m) for m in masks]
    if latent_hw is not None:
        for m in masks:
            if m.shape != tuple(latent_hw):
                raise InvalidArgumentError(f"mask shape {m.shape} does not match latent dims {tuple(latent_hw)}")
    _check_disjoint(masks)
    return RegionConditioning(np.asarray(cond), [m.astype(bool) for m in masks], [np.asarray(t) for t in region_tokens])


@dataclass
class StageResult:
    level: int
    latent: LatentTensor
    anchor: np.ndarray | None = None  # upsampled previous output
    K: int | None = None
    steps: list[int] = field(default_factory=list)
    hooks_log: list = field(default_factory=list)
    temperature: float = 1.0
    rope: RopeConfig | None = None


@dataclass
class CascadeResult:
    stages: list[StageResult]
    rgb: np.ndarray

    @property
    def latent(self) -> LatentTensor:
        return self.stages[-1].latent


class _Runner:
    """Holds the per-run context (model, codec, executor, conditioning)."""

    def __init__(self, config: CascadeConfig, model, codec: ToyCodec | None = None, cond_image=None, executor: Executor | None = None):
        config.validate()
        if getattr(model, "kind", None) != config.backbone:
            raise InvalidArgumentError(f"model kind {getattr(model, 'kind', None)!r} does not match backbone {config.backbone!r}")
        self.cfg = config
        self.model = model
        self.codec = codec or default_codec()
        self.executor = executor
        self.schedule = config.schedule()
        self.cond = model.prompt_tokens(config.prompt)
        self.uncond = model.prompt_tokens(config.negative_prompt) if config.guidance != 1 else None
        self.i2v_ref_rgb = None
        if config.task == "i2v":
            if cond_image is None:
                raise InvalidArgumentError("i2v needs a conditioning frame")
            final_level = config.stages[-1].level if config.stages else 1
            want = (3, 2 * config.height * final_level, 2 * config.width * final_level)
            cond_image = np.asarray(cond_image, dtype=np.float64)
            if cond_image.shape != want:
                raise InvalidArgumentError(f"conditioning frame must be {want} RGB, got {cond_image.shape}")
            self.i2v_ref_rgb = cond_image
            self.final_level = final_level

    # -- shapes --------------------------------------------------------
    def latent_shape(self, level: int) -> tuple[int, ...]:
        c = self.model.config.in_channels
        h, w = self.cfg.height * level, self.cfg.width * level
        if self.cfg.backbone == "dit" and self.cfg.task != "t2i":
            return (c, self.cfg.frames, h, w)
        return (c, h, w)

    # -- i2v -----------------------------------------------------------
    def _i2v_reference(self, level: int) -> np.ndarray:
        factor = self.final_level // level
        return self.codec.encode(downsample_area(self.i2v_ref_rgb, factor))

    def _clamp(self, z: np.ndarray, ref, eps_ref, t: int, schedule: NoiseSchedule) -> np.ndarray:
        if ref is None:
            return z
        z = z.copy()
        z[:, 0] = forward_noise(ref, t, eps_ref, schedule)
        return z

    # -- denoiser ------------------------------------------------------
    def denoiser(self, stage: StageConfig | None, level: int) -> tuple[Callable, dict]:
        model, cfg = self.model, self.cfg
        cond = self.cond
        if stage is not None and any(r.prompt is not None for r in stage.regions):
            pairs = [(r.mask, model.prompt_tokens(r.prompt)) for r in stage.regions if r.prompt is not None]
            cond = inject_region_conditions(
                self.cond, [m for m, _ in pairs], [t for _, t in pairs], self.latent_shape(level)[-2:]
            )
        info: dict = {}
        if cfg.backbone == "unet":
            hooks = None
            if stage is not None:
                hooks = ScaleHooks(stage.dilation, stage.fusion, executor=self.executor)
                info["hooks"] = hooks

            def call(z, t, i, n):
                if hooks is not None:
                    hooks.set_step(i, n)
                return model.predict(z, t, cond, hooks)

        else:
            mc = model.config
            if stage is None:
                rope, temp = RopeConfig(axis_dims=mc.axis_dims), 1.0
            else:
                shape = self.latent_shape(level)
                frames = shape[1] if len(shape) == 4 else 1
                target = (frames, shape[-2] // 2, shape[-1] // 2)
                train = (frames,) + tuple(mc.train_extent()[1:])
                if stage.rope_mode == "ntk":
                    rope = RopeConfig.ntk(mc.axis_dims, train, target, stage.rope_base)
                else:
                    rope = RopeConfig(axis_dims=mc.axis_dims, base=stage.rope_base)
                temp = stage.temperature
                if temp is None:
                    temp = attention_temperature(train[1] * train[2], target[1] * target[2])
            info["rope"], info["temperature"] = rope, temp

            def call(z, t, i, n):
                return model.predict(z, t, cond, rope, temp)

        if self.uncond is None:
            return call, info

        base_call = call
        uncond = self.uncond

        def guided(z, t, i, n):
            nonlocal cond
            e_c = base_call(z, t, i, n)
            saved, cond = cond, uncond
            try:
                e_u = base_call(z, t, i, n)
            finally:
                cond = saved
            return e_u + cfg.guidance * (e_c - e_u)

        return guided, info

    # -- loops ---------------------------------------------------------
    def _check(self, z, **where):
        if not np.all(np.isfinite(z)):
            raise NumericalError("non-finite latent", **where)

    def base(self) -> StageResult:
        cfg = self.cfg
        schedule = shift_timesteps(self.schedule, cfg.base_shift)
        shape = self.latent_shape(1)
        z = rng.gaussian(cfg.seed, shape, _BASE_NOISE)
        steps = timestep_sequence(schedule.T, cfg.num_steps)
        call, info = self.denoiser(None, 1)
        ref = eps_ref = None
        if self.i2v_ref_rgb is not None:
            ref = self._i2v_reference(1)
            eps_ref = rng.gaussian(cfg.seed, ref.shape, _I2V_NOISE, 1)
            z = self._clamp(z, ref, eps_ref, steps[0], schedule)
        n = len(steps) - 1
        for i in range(n):
            t, tp = steps[i], steps[i + 1]
            eps = call(z, t, i, n)
            z = self._clamp(reverse_step_ddim(z, eps, t, tp, schedule), ref, eps_ref, tp, schedule)
            self._check(z, level=1, step=i, t=t)
        return StageResult(1, LatentTensor(z, 1), steps=steps, temperature=info.get("temperature", 1.0), rope=info.get("rope"))

    def upsample(self, prev: LatentTensor, stage: StageConfig) -> np.ndarray:
        if stage.upsample_mode == "latent":
            return upsample_bilinear(prev.data, 2)
        rgb = upsample_bilinear(self.codec.decode(prev.data), 2)
        if stage.rgb_blur_sigma > 0:
            rgb = gaussian_lowpass(rgb, stage.rgb_blur_sigma)
        return self.codec.encode(rgb)

    def stage_steps(self, K: int) -> int:
        return max(1, int(round(self.cfg.num_steps * K / self.cfg.timesteps)))

    def upscale(self, prev: LatentTensor, stage: StageConfig) -> StageResult:
        cfg = self.cfg
        if stage.level != 2 * prev.level:
            raise InvalidArgumentError(f"stage level {stage.level} must be twice the input level {prev.level}")
        schedule = shift_timesteps(self.schedule, stage.shift)
        anchor = self.upsample(prev, stage)
        K = min(schedule.T, max(1, int(round(stage.k_fraction * schedule.T))))
        eps_anchor = rng.gaussian(cfg.seed, anchor.shape, stage.level)
        z = renoise_to(anchor, K, schedule, cfg.seed, stage.level)
        detail = build_region_alpha(
            [r.mask for r in stage.regions if r.alpha is not None],
            [r.alpha for r in stage.regions if r.alpha is not None],
            stage.alpha,
            anchor.shape[-2:] if any(r.alpha is not None for r in stage.regions) else None,
        )
        steps = timestep_sequence(K, self.stage_steps(K))
        call, info = self.denoiser(stage, stage.level)
        ref = eps_ref = None
        if self.i2v_ref_rgb is not None:
            ref = self._i2v_reference(stage.level)
            eps_ref = rng.gaussian(cfg.seed, ref.shape, _I2V_NOISE, stage.level)
            z = self._clamp(z, ref, eps_ref, K, schedule)
        n = len(steps) - 1
        for i in range(n):
            t, tp = steps[i], steps[i + 1]
            z_tilde = forward_noise(anchor, t, eps_anchor, schedule)
            z_hat = self._clamp(detail_blend(z_tilde, z, t, schedule.T, detail), ref, eps_ref, t, schedule)
            eps = call(z_hat, t, i, n)
            z = self._clamp(reverse_step_ddim(z_hat, eps, t, tp, schedule), ref, eps_ref, tp, schedule)
            self._check(z, level=stage.level, step=i, t=t)
        hooks = info.get("hooks")
        return StageResult(
            stage.level,
            LatentTensor(z, stage.level),
            anchor=anchor,
            K=K,
            steps=steps,
            hooks_log=list(hooks.log) if hooks is not None else [],
            temperature=info.get("temperature", 1.0),
            rope=info.get("rope"),
        )


def generate_base(config: CascadeConfig, model, **kw) -> LatentTensor:
    """Full reverse loop at training resolution; returns the clean level-1 latent."""
    return _Runner(config, model, **kw).base().latent


def upscale_stage(z0_prev: LatentTensor, stage: StageConfig, config: CascadeConfig, model, **kw) -> StageResult:
    """Upsample, re-noise to ``K`` and denoise at the doubled level."""
    return _Runner(config, model, **kw).upscale(z0_prev, stage)


def run_cascade(
    config: CascadeConfig,
    model,
    codec: ToyCodec | None = None,
    cond_image=None,
    executor: Executor | None = None,
    on_stage: Callable[[StageResult], None] | None = None,
) -> CascadeResult:
    """Base generation followed by every configured upscale stage.

    ``on_stage`` is called with each finished stage, base included.
    """
    runner = _Runner(config, model, codec, cond_image, executor)
    results = [runner.base()]
    if on_stage is not None:
        on_stage(results[-1])
    for stage in config.stages:
        results.append(runner.upscale(results[-1].latent, stage))
        if on_stage is not None:
            on_stage(results[-1])
    return CascadeResult(results, runner.codec.decode(results[-1].latent.data))


def direct_sample(config: CascadeConfig, model, level: int, stage: StageConfig | None = None, executor: Executor | None = None) -> LatentTensor:
    """Sample straight from noise at ``level`` (no cascade), optionally with
    a stage's adaptations active; used as the high-resolution baseline."""
    cfg = config
    runner = _Runner(cfg, model, executor=executor)
    schedule = shift_timesteps(runner.schedule, stage.shift if stage is not None else 1.0)
    z = rng.gaussian(cfg.seed, runner.latent_shape(level), _BASE_NOISE, level)
    steps = timestep_sequence(schedule.T, cfg.num_steps)
    if stage is None:
        stage = StageConfig(level=level, rope_mode="plain", temperature=1.0)
    call, _ = runner.denoiser(stage, level)
    n = len(steps) - 1
    for i in range(n):
        t, tp = steps[i], steps[i + 1]
        z = reverse_step_ddim(z, call(z, t, i, n), t, tp, schedule)
        runner._check(z, level=level, step=i, t=t)
    return LatentTensor(z, level)
