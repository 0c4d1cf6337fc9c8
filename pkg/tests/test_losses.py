import numpy as np
import pytest
import torch
from helpers import as_map, attention_instance, gaussian_blob, loss_of_logits

from boxguide.layout import BoundingBox, rasterize
from boxguide.losses import (
    Ablation,
    ConfigError,
    combine,
    combined_loss,
    marginal_loss,
    read_trace_csv,
    region_loss,
    regularization_loss,
    write_trace_csv,
)
from boxguide.numeric_core import central_difference, grad, relative_error

CENTER = BoundingBox(0.25, 0.25, 0.75, 0.75)


@pytest.fixture
def center_mask():
    return rasterize([CENTER], 16, 16)


def test_region_all_inside(center_mask):
    assert region_loss([as_map(center_mask.interior)], [center_mask]).item() == 0.0


def test_region_all_outside(center_mask):
    assert region_loss([as_map(~center_mask.interior)], [center_mask]).item() == 1.0


def test_region_half_inside(center_mask):
    a = np.zeros((16, 16))
    a[5, 5] = 1.0  # inside
    a[0, 0] = 1.0  # outside
    assert abs(region_loss([as_map(a)], [center_mask]).item() - 0.25) < 1e-12


def test_region_zero_mass_is_worst_case(center_mask):
    out = combined_loss([torch.zeros(16, 16, dtype=torch.float64)], [center_mask])
    assert out.region.item() == 1.0
    assert out.regularization.item() == 1.0
    assert out.zero_mass == [0]


def test_marginal_zero_on_boundary(center_mask):
    a = center_mask.interior & ~center_mask.boundary
    assert marginal_loss([as_map(a)], [center_mask]).item() == 0.0


def test_marginal_full_ring(center_mask):
    value = marginal_loss([as_map(center_mask.boundary)], [center_mask]).item()
    assert abs(value - 28 / 32) < 1e-12


def test_marginal_linear(center_mask, rng):
    a = as_map(rng.random((16, 16)))
    base = marginal_loss([a], [center_mask]).item()
    assert abs(marginal_loss([2 * a], [center_mask]).item() - 2 * base) < 1e-12


def test_regularization_single_box_reduces_to_region(center_mask):
    assert regularization_loss([as_map(center_mask.interior)], [center_mask]).item() == 0.0


def test_regularization_void_box():
    masks = rasterize([BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0.5, 0.5, 1, 1)], 16, 16)
    assert regularization_loss([as_map(masks.per_object[0])], [masks]).item() == 1.0


def test_regularization_even_split():
    masks = rasterize([BoundingBox(0, 0, 0.5, 0.5), BoundingBox(0.5, 0.5, 1, 1)], 16, 16)
    a = np.zeros((16, 16))
    a[2, 2] = a[12, 12] = 1.0
    assert abs(regularization_loss([as_map(a)], [masks]).item() - 0.25) < 1e-12


def test_combine_arithmetic():
    out = combine(0.25, 0.875, 0.25, 0.5, 0.5)
    assert out.combined.item() == 0.8125


def test_ablation_r_ignores_other_terms():
    out = combine(0.3, 0.875, 0.6, 0.5, 0.5, "r")
    assert out.combined.item() == 0.3
    assert combine(0.3, 0.875, 0.6, 0.5, 0.5, Ablation.RM).combined.item() == 0.3 + 0.5 * 0.875


def test_zero_weights():
    assert combine(0.3, 0.875, 0.6, 0.0, 0.0).combined.item() == 0.3


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        combine(0.1, 0.1, 0.1, -0.5, 0.5)


def test_ablation_parse():
    assert Ablation.parse("R+M+Reg") is Ablation.RMREG
    assert Ablation.parse("rm") is Ablation.RM
    with pytest.raises(ConfigError):
        Ablation.parse("x")


def test_breakdown_bounds(rng):
    for _ in range(50):
        self_map, logits, masks = attention_instance(rng)
        maps = [torch.rand(6, 6, dtype=torch.float64, generator=torch.Generator().manual_seed(int(rng.integers(1e9))))
                for _ in masks]
        lb = combined_loss(maps, masks)
        r, m, g, c = lb.values()
        assert 0 <= r <= 1 and m >= 0 and 0 <= g <= 1
        assert c == r + 0.5 * m + 0.5 * g


def test_scale_invariance(rng):
    for _ in range(20):
        _, _, masks = attention_instance(rng)
        maps = [as_map(rng.random((6, 6))) for _ in masks]
        c = float(rng.uniform(0.01, 100))
        for fn in (region_loss, regularization_loss):
            assert abs(fn([c * a for a in maps], masks).item() - fn(maps, masks).item()) < 1e-12


def test_batched_maps_match_single(rng):
    _, _, masks = attention_instance(rng)
    maps = [as_map(rng.random((3, 6, 6))) for _ in masks]
    batched = combined_loss(maps, masks).combined
    for b in range(3):
        single = combined_loss([m[b] for m in maps], masks).combined
        assert abs(batched[b].item() - single.item()) < 1e-15


def test_separation_property():
    grid = 16
    masks = rasterize([BoundingBox(0.0, 0.25, 0.5, 0.75), BoundingBox(0.5, 0.25, 1.0, 0.75)], grid, grid)
    straddle = gaussian_blob(grid, 8.0, 8.0, sigma=1.5)
    split = gaussian_blob(grid, 4.0, 8.0, sigma=1.0) + gaussian_blob(grid, 12.0, 8.0, sigma=1.0)
    split *= straddle.sum() / split.sum()
    assert marginal_loss([as_map(straddle)], [masks]).item() > marginal_loss([as_map(split)], [masks]).item()


@pytest.mark.parametrize("name", ["region", "marginal", "regularization", "combined"])
def test_gradients_match_finite_differences(name, rng):
    worst = 0.0
    for _ in range(100):
        self_map, logits, masks = attention_instance(rng)
        f = loss_of_logits(name, self_map, masks)
        x = logits.clone().requires_grad_(True)
        g = grad(f(x), x).value
        fd = central_difference(f, logits, h=1e-5)
        worst = max(worst, relative_error(g, fd))
    assert worst < 1e-4


def test_trace_csv_roundtrip(tmp_path):
    rows = [(0, 0, 0.5, 0.1, 0.25, 0.675), (0, 1, 0.4, 0.1, 0.2, 0.55)]
    write_trace_csv(tmp_path / "t.csv", rows)
    back = read_trace_csv(tmp_path / "t.csv")
    assert [tuple(r.values()) for r in back] == rows
    assert list(back[0]) == ["step", "iteration", "L_r", "L_m", "L_reg", "L_mac"]
