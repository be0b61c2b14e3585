"""Toy denoisers, the invertible codec, LoRA adapters and checkpoints."""

from .codec import ToyCodec, codec_decode, codec_encode
from .conditioning import RegionConditioning, prompt_tokens
from .dit import DiTConfig, TinyDiT, dit_predict
from .lora import LoraAdapter, TrainBatch, create_adapters, lora_apply, lora_train_step
from .oracle import OracleConfig, PeriodicBiasUNet
from .unet import TinyUNet, UNetConfig, unet_predict

__all__ = [
    "ToyCodec",
    "codec_encode",
    "codec_decode",
    "RegionConditioning",
    "prompt_tokens",
    "DiTConfig",
    "TinyDiT",
    "dit_predict",
    "LoraAdapter",
    "TrainBatch",
    "create_adapters",
    "lora_apply",
    "lora_train_step",
    "OracleConfig",
    "PeriodicBiasUNet",
    "TinyUNet",
    "UNetConfig",
    "unet_predict",
]
