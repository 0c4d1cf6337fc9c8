from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..numeric_core import Tensor


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal fractions indexed by step.

    ``model_t[i]`` is the training timestep the denoiser is conditioned on at
    index ``i``. For a sampler schedule index 0 is the clean state.
    """

    alpha_bars: np.ndarray
    model_t: np.ndarray

    def __len__(self) -> int:
        return len(self.alpha_bars)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < len(self.alpha_bars):
            raise ScheduleError(f"t={t} outside schedule of length {len(self.alpha_bars)}")
        return float(self.alpha_bars[t])

    @classmethod
    def linear(cls, num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
        return cls(np.cumprod(1.0 - betas), np.arange(num_steps))

    def ddim(self, steps: int) -> "NoiseSchedule":
        """Sampler sub-schedule with ``steps`` noisy indices plus the clean index 0."""
        n = len(self.alpha_bars)
        if not 1 <= steps <= n:
            raise ScheduleError(f"cannot take {steps} sampler steps from {n}")
        t = np.round(np.arange(1, steps + 1) * n / steps).astype(int) - 1
        return NoiseSchedule(np.concatenate([[1.0], self.alpha_bars[t]]), np.concatenate([[0], t]))


def forward_noise(x0: Tensor, t: int, noise: Tensor, schedule: NoiseSchedule) -> Tensor:
    ab = schedule.alpha_bar(t)
    return x0 * ab ** 0.5 + noise * (1.0 - ab) ** 0.5


def forward_noise_batch(x0: Tensor, t: Tensor, noise: Tensor, schedule: NoiseSchedule) -> Tensor:
    ab = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype)[t].view(-1, *([1] * (x0.dim() - 1)))
    return x0 * ab.sqrt() + noise * (1 - ab).sqrt()
