"""Noise-prediction training with conditioning dropout for classifier-free guidance."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .denoiser import DenoiserConfig, ToyDenoiser
from .scenes import SyntheticScene
from .schedule import NoiseSchedule, forward_noise_batch
from .vocab import DEFAULT_VOCAB, TokenVocabulary

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, last_state: dict | None = None):
        super().__init__(message)
        self.last_state = last_state


@dataclass
class TrainResult:
    model: ToyDenoiser
    schedule: NoiseSchedule
    curve: list[tuple[int, float]] = field(default_factory=list)  # (step, mean loss over interval)


def scenes_to_tensors(scenes: Sequence[SyntheticScene], vocab: TokenVocabulary = DEFAULT_VOCAB):
    images = torch.as_tensor(np.stack([s.image for s in scenes])) * 2 - 1
    tokens = torch.as_tensor([vocab.encode(s.prompt_tokens) for s in scenes], dtype=torch.long)
    return images, tokens


def train(
    scenes: Sequence[SyntheticScene],
    epochs: int = 1,
    lr: float = 2e-3,
    cond_dropout: float = 0.1,
    batch_size: int = 32,
    seed: int = 0,
    log_every: int = 50,
    config: DenoiserConfig | None = None,
    schedule: NoiseSchedule | None = None,
    vocab: TokenVocabulary = DEFAULT_VOCAB,
    dtype: torch.dtype = torch.float32,
    model: ToyDenoiser | None = None,
    ema_decay: float = 0.999,
) -> TrainResult:
    """Fit a denoiser to predict the injected noise; returns the model in float64.

    The returned weights are an exponential moving average of the iterates,
    with the decay ramped up over early steps so short runs are not dominated
    by the initialisation. ``ema_decay=0`` returns the raw iterate.
    """
    if not scenes:
        raise ValueError("empty dataset")
    schedule = schedule or NoiseSchedule.linear()
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    model = model or ToyDenoiser(config)
    model = model.to(dtype).train()
    images, tokens = scenes_to_tensors(scenes, vocab)
    images = images.to(dtype)
    empty = torch.as_tensor(vocab.empty(), dtype=torch.long)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    n = images.shape[0]
    steps_per_epoch = math.ceil(n / batch_size)
    total = epochs * steps_per_epoch
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / 100) * 0.5 * (1 + math.cos(math.pi * s / max(total, 1))))
    curve: list[tuple[int, float]] = []
    running: list[float] = []
    last_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    ema = {k: v.detach().clone() for k, v in model.state_dict().items()}
    step = 0
    for epoch in range(epochs):
        order = torch.randperm(n, generator=gen)
        for i in range(steps_per_epoch):
            idx = order[i * batch_size:(i + 1) * batch_size]
            x0 = images[idx]
            tok = tokens[idx].clone()
            drop = torch.rand(len(idx), generator=gen) < cond_dropout
            tok[drop] = empty
            t = torch.randint(0, len(schedule), (len(idx),), generator=gen)
            noise = torch.randn(x0.shape, generator=gen, dtype=dtype)
            z = forward_noise_batch(x0, t, noise, schedule)
            eps, _ = model(z, tok, t)
            loss = ((eps - noise) ** 2).mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"loss became non-finite at step {step}", last_state)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            sched.step()
            decay = min(ema_decay, (1 + step) / (10 + step))
            with torch.no_grad():
                for k, v in model.state_dict().items():
                    if v.dtype.is_floating_point:
                        ema[k].lerp_(v, 1 - decay)
                    else:
                        ema[k].copy_(v)
            running.append(loss.item())
            step += 1
            if step % log_every == 0 or step == total:
                curve.append((step, float(np.mean(running))))
                log.info("epoch %d step %d/%d loss %.5f", epoch, step, total, curve[-1][1])
                running = []
                last_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    model.load_state_dict(ema)
    return TrainResult(model.double().eval(), schedule, curve)


def write_curve_csv(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for s, v in curve:
            fh.write(f"{s},{v!r}\n")
