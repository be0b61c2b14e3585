"""JSON run configuration: strict parsing, full defaults, lossless round-trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from ..cascade import CascadeConfig, Region, StageConfig
from ..errors import InvalidArgumentError
from ..unet_scale import DEFAULT_DILATED_BLOCKS, DilationPolicy, FusionConfig


class ConfigError(InvalidArgumentError):
    pass


def _strict(cls, data: Any, where: str):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return data


def _number(value, where: str, *, integer: bool = False, minimum=None, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    value = int(value) if integer else float(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _choice(value, options, where: str) -> str:
    if value not in options:
        raise ConfigError(f"{where}: expected one of {list(options)}, got {value!r}")
    return value


@dataclass
class ScheduleSpec:
    T: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    kind: str = "scaled_linear"

    @classmethod
    def from_dict(cls, d, where="base.schedule"):
        d = _strict(cls, d, where)
        out = cls()
        if "T" in d:
            out.T = _number(d["T"], f"{where}.T", integer=True, minimum=1)
        for k in ("beta_start", "beta_end"):
            if k in d:
                setattr(out, k, _number(d[k], f"{where}.{k}"))
        if "kind" in d:
            out.kind = _choice(d["kind"], ("linear", "scaled_linear"), f"{where}.kind")
        return out


@dataclass
class BaseSpec:
    height: int = 16
    width: int = 16
    frames: int = 1
    num_steps: int = 20
    prompt: str = "a photo of soft coloured shapes"
    negative_prompt: str = ""
    shift: float = 1.0
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    checkpoint: str | None = None
    adapters: str | None = None
    init_seed: int = 0
    cond_image: str | None = None

    @classmethod
    def from_dict(cls, d, where="base"):
        d = _strict(cls, d, where)
        out = cls()
        for k in ("height", "width", "frames", "num_steps"):
            if k in d:
                setattr(out, k, _number(d[k], f"{where}.{k}", integer=True, minimum=1))
        if "init_seed" in d:
            out.init_seed = _number(d["init_seed"], f"{where}.init_seed", integer=True, minimum=0)
        for k in ("prompt", "negative_prompt"):
            if k in d:
                if not isinstance(d[k], str):
                    raise ConfigError(f"{where}.{k}: expected a string")
                setattr(out, k, d[k])
        for k in ("checkpoint", "adapters", "cond_image"):
            if k in d:
                if d[k] is not None and not isinstance(d[k], str):
                    raise ConfigError(f"{where}.{k}: expected a path string or null")
                setattr(out, k, d[k])
        if "shift" in d:
            out.shift = _number(d["shift"], f"{where}.shift", minimum=1)
        if "schedule" in d:
            out.schedule = ScheduleSpec.from_dict(d["schedule"], f"{where}.schedule")
        return out


@dataclass
class RegionSpec:
    mask: Any = None  # nested 0/1 list, or {"rect": [y0, x0, y1, x1]}
    alpha: float | None = None
    prompt: str | None = None

    @classmethod
    def from_dict(cls, d, where):
        d = _strict(cls, d, where)
        if "mask" not in d:
            raise ConfigError(f"{where}: region needs a mask")
        mask = d["mask"]
        if isinstance(mask, dict):
            _strict_keys(mask, {"rect"}, f"{where}.mask")
            rect = mask.get("rect")
            if not (isinstance(rect, list) and len(rect) == 4):
                raise ConfigError(f"{where}.mask.rect: expected [y0, x0, y1, x1]")
            mask = {"rect": [_number(v, f"{where}.mask.rect", integer=True, minimum=0) for v in rect]}
        elif isinstance(mask, list):
            arr = np.asarray(mask)
            if arr.ndim != 2 or not np.isin(arr, (0, 1)).all():
                raise ConfigError(f"{where}.mask: expected a 2-D list of 0/1")
            mask = arr.astype(int).tolist()
        else:
            raise ConfigError(f"{where}.mask: expected a 2-D list or a rect object")
        alpha = _number(d.get("alpha"), f"{where}.alpha", allow_none=True)
        if alpha is not None and alpha <= 0:
            raise ConfigError(f"{where}.alpha: must be > 0")
        prompt = d.get("prompt")
        if prompt is not None and not isinstance(prompt, str):
            raise ConfigError(f"{where}.prompt: expected a string or null")
        return cls(mask, alpha, prompt)

    def array(self, shape: tuple[int, int]) -> np.ndarray:
        if isinstance(self.mask, dict):
            y0, x0, y1, x1 = self.mask["rect"]
            if not (y0 < y1 <= shape[0] and x0 < x1 <= shape[1]):
                raise ConfigError(f"region rect {self.mask['rect']} outside latent dims {shape}")
            m = np.zeros(shape, dtype=int)
            m[y0:y1, x0:x1] = 1
            return m
        return np.asarray(self.mask, dtype=int)


def _strict_keys(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


@dataclass
class DilationSpec:
    factor: int | None = None  # null: the stage level
    blocks: list[str] = field(default_factory=lambda: sorted(DEFAULT_DILATED_BLOCKS))
    disable_tail_fraction: float = 0.25

    @classmethod
    def from_dict(cls, d, where):
        d = _strict(cls, d, where)
        out = cls()
        if "factor" in d:
            out.factor = _number(d["factor"], f"{where}.factor", integer=True, minimum=1, allow_none=True)
        if "blocks" in d:
            if not isinstance(d["blocks"], list) or not all(isinstance(b, str) for b in d["blocks"]):
                raise ConfigError(f"{where}.blocks: expected a list of block ids")
            out.blocks = list(d["blocks"])
        if "disable_tail_fraction" in d:
            out.disable_tail_fraction = _number(d["disable_tail_fraction"], f"{where}.disable_tail_fraction", minimum=0)
        return out


@dataclass
class FusionSpec:
    mode: str = "fused"
    sigma: float = 1.0
    stride_ratio: float = 0.5

    @classmethod
    def from_dict(cls, d, where):
        d = _strict(cls, d, where)
        out = cls()
        if "mode" in d:
            out.mode = _choice(d["mode"], ("global", "local", "fused"), f"{where}.mode")
        for k in ("sigma", "stride_ratio"):
            if k in d:
                setattr(out, k, _number(d[k], f"{where}.{k}"))
        return out


@dataclass
class RopeSpec:
    mode: str = "ntk"
    base: float = 10000.0

    @classmethod
    def from_dict(cls, d, where):
        d = _strict(cls, d, where)
        out = cls()
        if "mode" in d:
            out.mode = _choice(d["mode"], ("ntk", "plain"), f"{where}.mode")
        if "base" in d:
            out.base = _number(d["base"], f"{where}.base")
        return out


@dataclass
class StageSpec:
    level: int = 2
    k_fraction: float = 0.6
    upsample_mode: str | None = None  # null: rgb for images, latent for video
    alpha_default: float = 1.0
    regions: list[RegionSpec] = field(default_factory=list)
    dilation: DilationSpec | None = None
    fusion: FusionSpec | None = None
    rope: RopeSpec = field(default_factory=RopeSpec)
    temperature: float | str = "auto"
    shift: float = 1.0
    rgb_blur_sigma: float = 0.5

    @classmethod
    def from_dict(cls, d, where):
        d = _strict(cls, d, where)
        out = cls()
        if "level" not in d:
            raise ConfigError(f"{where}: stage needs a level")
        out.level = _number(d["level"], f"{where}.level", integer=True, minimum=2)
        if "k_fraction" in d:
            out.k_fraction = _number(d["k_fraction"], f"{where}.k_fraction")
        if "upsample_mode" in d and d["upsample_mode"] is not None:
            out.upsample_mode = _choice(d["upsample_mode"], ("latent", "rgb"), f"{where}.upsample_mode")
        if "alpha_default" in d:
            out.alpha_default = _number(d["alpha_default"], f"{where}.alpha_default")
            if out.alpha_default <= 0:
                raise ConfigError(f"{where}.alpha_default: must be > 0")
        if "regions" in d:
            if not isinstance(d["regions"], list):
                raise ConfigError(f"{where}.regions: expected a list")
            out.regions = [RegionSpec.from_dict(r, f"{where}.regions[{i}]") for i, r in enumerate(d["regions"])]
        if d.get("dilation") is not None:
            out.dilation = DilationSpec.from_dict(d["dilation"], f"{where}.dilation")
        if d.get("fusion") is not None:
            out.fusion = FusionSpec.from_dict(d["fusion"], f"{where}.fusion")
        if "rope" in d:
            out.rope = RopeSpec.from_dict(d["rope"], f"{where}.rope")
        if "temperature" in d:
            t = d["temperature"]
            out.temperature = "auto" if t == "auto" else _number(t, f"{where}.temperature")
            if out.temperature != "auto" and out.temperature <= 0:
                raise ConfigError(f"{where}.temperature: must be > 0 or \"auto\"")
        if "shift" in d:
            out.shift = _number(d["shift"], f"{where}.shift", minimum=1)
        if "rgb_blur_sigma" in d:
            out.rgb_blur_sigma = _number(d["rgb_blur_sigma"], f"{where}.rgb_blur_sigma", minimum=0)
        return out


@dataclass
class OutputSpec:
    dir: str = "run"
    format: str = "ppm"
    write_latent: bool = True

    @classmethod
    def from_dict(cls, d, where="output"):
        d = _strict(cls, d, where)
        out = cls()
        if "dir" in d:
            if not isinstance(d["dir"], str):
                raise ConfigError(f"{where}.dir: expected a string")
            out.dir = d["dir"]
        if "format" in d:
            out.format = _choice(d["format"], ("ppm", "png", "both"), f"{where}.format")
        if "write_latent" in d:
            if not isinstance(d["write_latent"], bool):
                raise ConfigError(f"{where}.write_latent: expected true or false")
            out.write_latent = d["write_latent"]
        return out


@dataclass
class MetricsSpec:
    enabled: bool = True
    cutoff_sigma: float = 1.0
    min_lag: int = 8
    bins: int = 32

    @classmethod
    def from_dict(cls, d, where="metrics"):
        d = _strict(cls, d, where)
        out = cls()
        if "enabled" in d:
            if not isinstance(d["enabled"], bool):
                raise ConfigError(f"{where}.enabled: expected true or false")
            out.enabled = d["enabled"]
        if "cutoff_sigma" in d:
            out.cutoff_sigma = _number(d["cutoff_sigma"], f"{where}.cutoff_sigma")
            if out.cutoff_sigma <= 0:
                raise ConfigError(f"{where}.cutoff_sigma: must be > 0")
        if "min_lag" in d:
            out.min_lag = _number(d["min_lag"], f"{where}.min_lag", integer=True, minimum=1)
        if "bins" in d:
            out.bins = _number(d["bins"], f"{where}.bins", integer=True, minimum=2)
        return out


@dataclass
class RunConfig:
    backbone: str = "dit"
    task: str = "t2i"
    seed: int = 0
    guidance: float = 1.0
    base: BaseSpec = field(default_factory=BaseSpec)
    stages: list[StageSpec] = field(default_factory=list)
    output: OutputSpec = field(default_factory=OutputSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        d = _strict(cls, d, "config")
        out = cls()
        if "backbone" in d:
            out.backbone = _choice(d["backbone"], ("unet", "dit"), "backbone")
        if "task" in d:
            out.task = _choice(d["task"], ("t2i", "t2v", "i2v"), "task")
        if "seed" in d:
            out.seed = _number(d["seed"], "seed", integer=True, minimum=0)
        if "guidance" in d:
            out.guidance = _number(d["guidance"], "guidance", minimum=1)
        if "base" in d:
            out.base = BaseSpec.from_dict(d["base"])
        if "stages" in d:
            if not isinstance(d["stages"], list):
                raise ConfigError("stages: expected a list")
            out.stages = [StageSpec.from_dict(s, f"stages[{i}]") for i, s in enumerate(d["stages"])]
        if "output" in d:
            out.output = OutputSpec.from_dict(d["output"])
        if "metrics" in d:
            out.metrics = MetricsSpec.from_dict(d["metrics"])
        for st in out.stages:
            if st.upsample_mode is None:
                st.upsample_mode = "rgb" if out.task == "t2i" else "latent"
        out.to_cascade()  # surface semantic errors at parse time
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_cascade(self) -> CascadeConfig:
        b = self.base
        stages = []
        for st in self.stages:
            shape = (b.height * st.level, b.width * st.level)
            regions = [Region(r.array(shape), r.alpha, r.prompt) for r in st.regions]
            dilation = None
            if st.dilation is not None:
                dilation = DilationPolicy(
                    st.dilation.factor or st.level, frozenset(st.dilation.blocks), st.dilation.disable_tail_fraction
                )
            fusion = None
            if st.fusion is not None:
                fusion = FusionConfig(st.fusion.sigma, st.fusion.mode, st.fusion.stride_ratio)
            stages.append(
                StageConfig(
                    level=st.level,
                    k_fraction=st.k_fraction,
                    upsample_mode=st.upsample_mode or ("rgb" if self.task == "t2i" else "latent"),
                    alpha=st.alpha_default,
                    regions=regions,
                    dilation=dilation,
                    fusion=fusion,
                    rope_mode=st.rope.mode,
                    rope_base=st.rope.base,
                    temperature=None if st.temperature == "auto" else float(st.temperature),
                    shift=st.shift,
                    rgb_blur_sigma=st.rgb_blur_sigma,
                )
            )
        cfg = CascadeConfig(
            backbone=self.backbone,
            task=self.task,
            seed=self.seed,
            guidance=self.guidance,
            prompt=b.prompt,
            negative_prompt=b.negative_prompt,
            height=b.height,
            width=b.width,
            frames=b.frames,
            num_steps=b.num_steps,
            timesteps=b.schedule.T,
            beta_start=b.schedule.beta_start,
            beta_end=b.schedule.beta_end,
            schedule_kind=b.schedule.kind,
            base_shift=b.shift,
            stages=stages,
        )
        cfg.validate()
        return cfg


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text)


@dataclass
class LoraTrainConfig:
    """Adapter training run: extended latent size, NTK rotary scaling active."""

    checkpoint: str | None = None
    init_seed: int = 0
    seed: int = 0
    steps: int = 200
    lr: float = 1e-2
    batch_size: int = 4
    rank: int = 4
    scale: float = 1.0
    target_height: int = 32
    target_width: int = 32
    prompt: str = "a photo of soft coloured shapes"
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    output: OutputSpec = field(default_factory=lambda: OutputSpec(dir="lora"))

    @classmethod
    def from_dict(cls, d) -> "LoraTrainConfig":
        d = _strict(cls, d, "lora config")
        out = cls()
        if "checkpoint" in d:
            if d["checkpoint"] is not None and not isinstance(d["checkpoint"], str):
                raise ConfigError("checkpoint: expected a path string or null")
            out.checkpoint = d["checkpoint"]
        for k in ("init_seed", "seed", "steps"):
            if k in d:
                setattr(out, k, _number(d[k], k, integer=True, minimum=0))
        for k in ("rank", "batch_size", "target_height", "target_width"):
            if k in d:
                setattr(out, k, _number(d[k], k, integer=True, minimum=1))
        for k in ("lr", "scale"):
            if k in d:
                setattr(out, k, _number(d[k], k, minimum=0))
        if "prompt" in d:
            if not isinstance(d["prompt"], str):
                raise ConfigError("prompt: expected a string")
            out.prompt = d["prompt"]
        if "schedule" in d:
            out.schedule = ScheduleSpec.from_dict(d["schedule"], "schedule")
        if "output" in d:
            out.output = OutputSpec.from_dict(d["output"])
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_lora_config(path) -> LoraTrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return LoraTrainConfig.from_dict(data)
