"""Region, marginal and regularisation losses over enhanced phrase maps."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .layout import MaskSet
from .numeric_core import DTYPE, Tensor


class ConfigError(ValueError):
    pass


class Ablation(enum.Enum):
    R = "r"
    RM = "rm"
    RMREG = "rmreg"

    @classmethod
    def parse(cls, value: "str | Ablation") -> "Ablation":
        if isinstance(value, Ablation):
            return value
        key = value.lower().replace("+", "").replace(" ", "")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown ablation mode {value!r} (use r, rm or rmreg)") from None

    @property
    def label(self) -> str:
        return {"r": "R", "rm": "R+M", "rmreg": "R+M+Reg"}[self.value]


def _mask(m, like: Tensor) -> Tensor:
    return torch.as_tensor(m, dtype=like.dtype)


def _mass(a: Tensor) -> Tensor:
    return a.sum(dim=(-2, -1))


def _fraction(a: Tensor, mask: Tensor, total: Tensor, ok: Tensor) -> Tensor:
    safe = torch.where(ok, total, torch.ones_like(total))
    return _mass(a * mask) / safe


def _check(maps: Sequence[Tensor], masks: Sequence[MaskSet]):
    if len(maps) != len(masks):
        raise ValueError(f"{len(maps)} maps but {len(masks)} mask sets")
    for a, m in zip(maps, masks):
        if tuple(a.shape[-2:]) != (m.grid_h, m.grid_w):
            raise ValueError(f"map grid {tuple(a.shape[-2:])} != mask grid {(m.grid_h, m.grid_w)}")


def _phrase_mean(terms: list[Tensor]) -> Tensor:
    if not terms:
        return torch.zeros((), dtype=DTYPE)
    return torch.stack(terms).mean(dim=0)


def region_loss(maps: Sequence[Tensor], masks: Sequence[MaskSet]) -> Tensor:
    """Mean over phrases of (1 - in-box mass fraction)^2; zero-mass maps score 1."""
    _check(maps, masks)
    terms = []
    for a, m in zip(maps, masks):
        total = _mass(a)
        ok = total > 0
        frac = _fraction(a, _mask(m.interior, a), total, ok)
        terms.append(torch.where(ok, (1 - frac) ** 2, torch.ones_like(total)))
    return _phrase_mean(terms)


def marginal_loss(maps: Sequence[Tensor], masks: Sequence[MaskSet]) -> Tensor:
    """Mean over phrases of boundary-ring mass divided by the summed box perimeters."""
    _check(maps, masks)
    terms = []
    for a, m in zip(maps, masks):
        if m.perimeter_sum <= 0:
            raise ValueError("perimeter_sum must be positive")
        terms.append(_mass(a * _mask(m.boundary, a)) / m.perimeter_sum)
    return _phrase_mean(terms)


def regularization_loss(maps: Sequence[Tensor], masks: Sequence[MaskSet]) -> Tensor:
    """Mean over phrases of (1 - least-attended box fraction)^2.

    The minimum routes its subgradient to the first minimising box.
    """
    _check(maps, masks)
    terms = []
    for a, m in zip(maps, masks):
        total = _mass(a)
        ok = total > 0
        fracs = torch.stack([_fraction(a, _mask(pm, a), total, ok) for pm in m.per_object], dim=-1)
        k = fracs.detach().argmin(dim=-1, keepdim=True)
        least = fracs.gather(-1, k).squeeze(-1)
        terms.append(torch.where(ok, (1 - least) ** 2, torch.ones_like(total)))
    return _phrase_mean(terms)


def zero_mass_phrases(maps: Sequence[Tensor]) -> list[int]:
    """Positions of phrases whose map has no mass (in any batch element)."""
    return [i for i, a in enumerate(maps) if bool((_mass(a.detach()) <= 0).any())]


@dataclass
class LossBreakdown:
    region: Tensor
    marginal: Tensor
    regularization: Tensor
    combined: Tensor
    lam: float
    alpha: float
    ablation: Ablation = Ablation.RMREG
    zero_mass: list[int] = field(default_factory=list)

    def values(self) -> tuple[float, float, float, float]:
        """Scalar (L_r, L_m, L_reg, L_mac); batched losses are summed."""
        return tuple(float(t.detach().sum()) for t in (self.region, self.marginal, self.regularization, self.combined))


def combine(region, marginal, regularization, lam: float = 0.5, alpha: float = 0.5,
            ablation: "Ablation | str" = Ablation.RMREG) -> LossBreakdown:
    ablation = Ablation.parse(ablation)
    if lam < 0 or alpha < 0:
        raise ConfigError(f"loss weights must be nonnegative (lambda={lam}, alpha={alpha})")
    eff_lam = lam if ablation in (Ablation.RM, Ablation.RMREG) else 0.0
    eff_alpha = alpha if ablation is Ablation.RMREG else 0.0
    region, marginal, regularization = (torch.as_tensor(x, dtype=DTYPE) for x in (region, marginal, regularization))
    total = region + eff_lam * marginal + eff_alpha * regularization
    return LossBreakdown(region, marginal, regularization, total, eff_lam, eff_alpha, ablation)


def combined_loss(maps: Sequence[Tensor], masks: Sequence[MaskSet], lam: float = 0.5, alpha: float = 0.5,
                  ablation: "Ablation | str" = Ablation.RMREG) -> LossBreakdown:
    out = combine(region_loss(maps, masks), marginal_loss(maps, masks), regularization_loss(maps, masks),
                  lam, alpha, ablation)
    out.zero_mass = zero_mass_phrases(maps)
    return out


TRACE_COLUMNS = ("step", "iteration", "L_r", "L_m", "L_reg", "L_mac")


def write_trace_csv(path, rows) -> None:
    """Rows are (step, iteration, L_r, L_m, L_reg, L_mac) tuples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], *(repr(float(x)) for x in r[2:])])


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("step", "iteration") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
