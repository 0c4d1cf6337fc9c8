"""DDIM sampling with classifier-free guidance and attention-loss latent optimisation."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .attention import dump_attention, phrase_maps
from .layout import Layout, MaskSet, rasterize
from .losses import Ablation, ConfigError, combined_loss
from .numeric_core import Tensor, grad
from .toy_model.denoiser import ToyDenoiser, predict_noise
from .toy_model.schedule import NoiseSchedule
from .toy_model.vocab import TokenVocabulary

log = logging.getLogger(__name__)


class TerminalStateError(RuntimeError):
    pass


@dataclass
class GuidanceConfig:
    eta: float = 70.0
    lam: float = 0.5
    alpha: float = 0.5
    tau: int = 1
    total_steps: int = 50
    optim_steps: int = 10
    max_inner_iters: int = 5
    early_stop_threshold: float = 1e-6
    cfg_weight: float = 7.5
    seed: int = 0
    ablation: Ablation = Ablation.RMREG

    # file/CLI key -> field name
    KEYS = {
        "eta": "eta", "lambda": "lam", "alpha": "alpha", "tau": "tau", "total_steps": "total_steps",
        "optim_steps": "optim_steps", "max_inner_iters": "max_inner_iters",
        "early_stop_threshold": "early_stop_threshold", "cfg_weight": "cfg_weight", "seed": "seed",
        "ablation": "ablation",
    }

    def __post_init__(self):
        self.ablation = Ablation.parse(self.ablation)
        self.tau = int(self.tau)
        for name in ("eta", "lam", "alpha", "tau", "total_steps", "optim_steps", "max_inner_iters",
                     "early_stop_threshold", "cfg_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be at least 1")
        if self.optim_steps > self.total_steps:
            raise ConfigError(f"optim_steps ({self.optim_steps}) exceeds total_steps ({self.total_steps})")

    def replace(self, **changes) -> "GuidanceConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict, base: "GuidanceConfig | None" = None) -> "GuidanceConfig":
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        changes = {}
        for key, raw in values.items():
            name = cls.KEYS.get(key.replace("-", "_"))
            if name is None:
                raise ConfigError(f"unknown config key {key!r}")
            if name == "ablation":
                changes[name] = Ablation.parse(raw)
                continue
            try:
                changes[name] = int(raw) if types[name] == "int" else float(raw)
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
        return base.replace(**changes)

    @classmethod
    def parse(cls, text: str, base: "GuidanceConfig | None" = None) -> "GuidanceConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected key=value")
            values[key.strip()] = val.strip()
        return cls.from_mapping(values, base)

    def to_text(self) -> str:
        out = []
        for key, name in self.KEYS.items():
            val = getattr(self, name)
            out.append(f"{key}={val.value}" if isinstance(val, Ablation) else f"{key}={val!r}")
        return "\n".join(out) + "\n"


@dataclass
class TraceRow:
    step: int
    iteration: int
    region: float
    marginal: float
    regularization: float
    combined: float

    def as_tuple(self):
        return (self.step, self.iteration, self.region, self.marginal, self.regularization, self.combined)


@dataclass
class LatentState:
    z: Tensor  # (C, H, W)
    t: int  # sampler index; 0 is the clean state
    trace: list[TraceRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def ddim_step(state: LatentState, eps_pred: Tensor, schedule: NoiseSchedule, clip: bool = True) -> LatentState:
    """Deterministic DDIM update from sampler index t to t-1.

    The clean-sample estimate is clipped to the data range [-1, 1]; at high
    noise levels it divides by a tiny sqrt(alpha_bar) and otherwise saturates.
    """
    if state.t <= 0:
        raise TerminalStateError("state is already at t=0")
    if eps_pred.shape != state.z.shape:
        raise ValueError(f"noise prediction {tuple(eps_pred.shape)} does not match latent {tuple(state.z.shape)}")
    ab_t = schedule.alpha_bar(state.t)
    ab_prev = schedule.alpha_bar(state.t - 1)
    x0 = (state.z - math.sqrt(1 - ab_t) * eps_pred) / math.sqrt(ab_t)
    if clip:
        x0 = x0.clamp(-1.0, 1.0)
        eps_pred = (state.z - math.sqrt(ab_t) * x0) / math.sqrt(1 - ab_t)
    z_prev = math.sqrt(ab_prev) * x0 + math.sqrt(1 - ab_prev) * eps_pred
    return LatentState(z_prev, state.t - 1, state.trace, state.warnings)


def cfg_combine(eps_uncond: Tensor, eps_cond: Tensor, w: float) -> Tensor:
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError("conditional and unconditional predictions differ in shape")
    return eps_uncond + w * (eps_cond - eps_uncond)


def layout_masks(layout: Layout, grid: tuple[int, int]) -> list[MaskSet]:
    h, w = grid
    return [rasterize(boxes, w, h) for boxes in layout.phrases.values()]


def optimize_latent(
    state: LatentState,
    layout: Layout,
    config: GuidanceConfig,
    model: ToyDenoiser,
    tokens: Tensor,
    schedule: NoiseSchedule,
    step: int | None = None,
) -> LatentState:
    """Descend the latent on the combined attention loss for up to ``max_inner_iters`` iterations.

    The threshold is checked before each update. A non-finite gradient stops
    the loop for this step and keeps the last finite latent.
    """
    if not layout.phrases:
        return state
    step = state.t if step is None else step
    t_model = int(schedule.model_t[state.t])
    z = state.z.detach()
    masks = None
    for it in range(config.max_inner_iters):
        z_var = z.clone().requires_grad_(True)
        _, stack = predict_noise(model, z_var, tokens, t_model)
        maps = [m.map for m in phrase_maps(stack, layout.phrase_indices, config.tau)]
        if masks is None:
            masks = layout_masks(layout, stack.reference_resolution)
        losses = combined_loss(maps, masks, config.lam, config.alpha, config.ablation)
        state.trace.append(TraceRow(step, it, *losses.values()))
        if losses.values()[3] < config.early_stop_threshold:
            break
        if config.eta == 0:
            continue
        g = grad(losses.combined.sum(), z_var, "z_t").value
        if not bool(torch.isfinite(g).all()):
            msg = f"non-finite gradient at step {step} iteration {it}; keeping last finite latent"
            log.warning(msg)
            state.warnings.append(msg)
            break
        z = z - config.eta * g
    return LatentState(z.detach(), state.t, state.trace, state.warnings)


@dataclass
class GenerationResult:
    image: Tensor  # (C, H, W) in [0, 1]
    z0: Tensor
    trace: list[TraceRow]
    warnings: list[str]
    step_maps: list[list[np.ndarray]]  # per sampler step, per phrase, from the conditional pass
    optimized_maps: list[np.ndarray] | None  # maps after the last optimised step


def initial_latent(seed: int, shape=(3, 32, 32)) -> Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def generate(
    prompt_tokens: list[str],
    layout: Layout,
    config: GuidanceConfig,
    model: ToyDenoiser,
    schedule: NoiseSchedule,
    vocab: TokenVocabulary,
    guidance: bool = True,
    dump_dir: str | None = None,
    keep_maps: bool = False,
    on_step: Callable[[int, LatentState], None] | None = None,
) -> GenerationResult:
    """Run the full reverse process; the first ``optim_steps`` steps are guided."""
    sampler = schedule.ddim(config.total_steps)
    cond = torch.as_tensor(vocab.encode(prompt_tokens), dtype=torch.long)
    uncond = torch.as_tensor(vocab.empty(), dtype=torch.long)
    cfg = model.config
    state = LatentState(initial_latent(config.seed, (cfg.channels, cfg.image_size, cfg.image_size)), config.total_steps)
    optim_steps = config.optim_steps if guidance else 0
    track = keep_maps or dump_dir is not None
    step_maps: list[list[np.ndarray]] = []
    optimized_maps = None
    for step in range(config.total_steps):
        if step < optim_steps:
            state = optimize_latent(state, layout, config, model, cond, sampler, step)
        t_model = int(sampler.model_t[state.t])
        with torch.no_grad():
            eps_u, _ = predict_noise(model, state.z, uncond, t_model)
            eps_c, stack = predict_noise(model, state.z, cond, t_model)
            maps = None
            if layout.phrases and (track or step == optim_steps - 1):
                maps = [m.map[0].numpy().copy() for m in phrase_maps(stack, layout.phrase_indices, config.tau)]
            if maps is not None and step == optim_steps - 1:
                optimized_maps = maps
            if maps is not None and track:
                step_maps.append(maps)
                if dump_dir is not None:
                    for idx, grid in zip(layout.phrase_indices, maps):
                        dump_attention(dump_dir, step, idx, grid)
            eps = cfg_combine(eps_u, eps_c, config.cfg_weight)
        state = ddim_step(state, eps, sampler)
        if on_step is not None:
            on_step(step, state)
    image = ((state.z + 1) / 2).clamp(0, 1)
    return GenerationResult(image, state.z, state.trace, state.warnings, step_maps, optimized_maps)


def sample_unguided(prompt_tokens, config, model, schedule, vocab) -> GenerationResult:
    return generate(prompt_tokens, Layout(list(prompt_tokens)), config, model, schedule, vocab, guidance=False)
