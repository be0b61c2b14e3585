"""Low-rank adapters on frozen linear weights and the adapter training step."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .. import autograd as ag
from .. import rng
from ..errors import InvalidArgumentError, NumericalError
from ..schedule import NoiseSchedule, forward_noise

DEFAULT_TARGETS = ("attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w")


@dataclass(frozen=True, eq=False)
class LoraAdapter:
    """``W_eff = W + scale * B @ A`` for the weight called ``target``."""

    target: str
    A: np.ndarray  # [rank, d_in]
    B: np.ndarray  # [d_out, rank]
    scale: float = 1.0

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    def __post_init__(self):
        if self.A.ndim != 2 or self.B.ndim != 2 or self.A.shape[0] != self.B.shape[1]:
            raise InvalidArgumentError(f"incompatible adapter shapes A{self.A.shape} B{self.B.shape}")
        if self.A.shape[0] < 1:
            raise InvalidArgumentError("rank must be >= 1")


def lora_apply(W: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (adapter.B.shape[0], adapter.A.shape[1]):
        raise InvalidArgumentError(
            f"weight {W.shape} incompatible with adapter ({adapter.B.shape[0]}, {adapter.A.shape[1]})"
        )
    return W + adapter.scale * (adapter.B @ adapter.A)


def create_adapters(model, rank: int = 4, scale: float = 1.0, targets=DEFAULT_TARGETS, seed: int = 0) -> list[LoraAdapter]:
    """One adapter per parameter whose name ends in any of ``targets``.

    ``A`` is scaled-uniform, ``B`` is zero, so the adapted model starts out
    identical to the base model.
    """
    if rank < 1:
        raise InvalidArgumentError(f"rank must be >= 1, got {rank}")
    out = []
    for name in sorted(model.params):
        if not any(name.endswith(t) for t in targets):
            continue
        d_out, d_in = model.params[name].shape
        bound = 1.0 / math.sqrt(d_in)
        A = rng.uniform(seed, (rank, d_in), -bound, bound, rng.string_seed("lora:" + name))
        out.append(LoraAdapter(name, A, np.zeros((d_out, rank)), scale))
    if not out:
        raise InvalidArgumentError(f"no parameters match LoRA targets {targets}")
    return out


def merged_weights(model, adapters, factors: dict | None = None) -> dict[str, ag.Tensor]:
    """Effective weights as tensors; ``factors`` maps target -> (A, B) tensors."""
    merged = {}
    for ad in adapters:
        base = model.params[ad.target]
        if factors is None:
            merged[ad.target] = ag.Tensor(lora_apply(base, ad))
        else:
            A, B = factors[ad.target]
            merged[ad.target] = ag.add(ag.Tensor(base), ag.scale(ag.matmul(B, A), ad.scale))
    return merged


@dataclass
class TrainBatch:
    z0: np.ndarray  # [B, C, F, H, W]
    t: np.ndarray  # [B] integer timesteps
    eps: np.ndarray  # like z0
    cond: np.ndarray  # [tokens, cond_dim] or [B, tokens, cond_dim]


def noised_inputs(batch: TrainBatch, schedule: NoiseSchedule) -> np.ndarray:
    return np.stack([forward_noise(z, int(t), e, schedule) for z, t, e in zip(batch.z0, batch.t, batch.eps)])


def lora_loss_and_grads(model, adapters, batch: TrainBatch, schedule: NoiseSchedule, rope=None, temperature: float = 1.0):
    """Mean-squared noise-prediction loss and its gradient per adapter factor."""
    factors = {ad.target: (ag.Tensor(ad.A, True), ag.Tensor(ad.B, True)) for ad in adapters}
    weights = merged_weights(model, adapters, factors)
    z_t = noised_inputs(batch, schedule)
    pred = model.forward(z_t, batch.t, batch.cond, rope, temperature, weights=weights)
    loss = ag.mean_all(ag.square(ag.add(pred, -batch.eps)))
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError("non-finite LoRA loss", loss=value, timesteps=[int(t) for t in batch.t])
    loss.backward()
    grads = {}
    for name, (A, B) in factors.items():
        grads[name] = (
            np.zeros_like(A.data) if A.grad is None else A.grad,
            np.zeros_like(B.data) if B.grad is None else B.grad,
        )
    return value, grads


def lora_train_step(model, adapters, batch: TrainBatch, lr: float, schedule: NoiseSchedule, rope=None, temperature: float = 1.0):
    """One plain gradient-descent step on the adapters; base weights untouched.

    Returns ``(new_adapters, loss)`` where ``loss`` is measured before the step.
    """
    loss, grads = lora_loss_and_grads(model, adapters, batch, schedule, rope, temperature)
    if lr == 0:
        return list(adapters), loss
    updated = [replace(ad, A=ad.A - lr * grads[ad.target][0], B=ad.B - lr * grads[ad.target][1]) for ad in adapters]
    return updated, loss


def adapters_to_tensors(adapters) -> tuple[dict, dict]:
    tensors = {}
    meta = {"kind": "lora", "adapters": []}
    for ad in adapters:
        tensors[ad.target + ".lora_A"] = ad.A
        tensors[ad.target + ".lora_B"] = ad.B
        meta["adapters"].append({"target": ad.target, "rank": ad.rank, "scale": ad.scale})
    return tensors, meta


def adapters_from_tensors(tensors: dict, meta: dict) -> list[LoraAdapter]:
    return [
        LoraAdapter(e["target"], tensors[e["target"] + ".lora_A"], tensors[e["target"] + ".lora_B"], float(e["scale"]))
        for e in meta["adapters"]
    ]
