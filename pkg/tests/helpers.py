"""Shared random instances for loss and gradient tests."""
import numpy as np
import torch

from boxguide.attention import enhance, normalize_reshape
from boxguide.layout import BoundingBox, rasterize
from boxguide.losses import combined_loss, marginal_loss, region_loss, regularization_loss
from boxguide.numeric_core import as_tensor, softmax_rows


def random_box(rng, grid=6, min_cells=1, max_cells=4):
    w, h = rng.integers(min_cells, max_cells + 1, size=2)
    x0, y0 = rng.integers(0, grid - w + 1), rng.integers(0, grid - h + 1)
    return BoundingBox(x0 / grid, y0 / grid, (x0 + w) / grid, (y0 + h) / grid)


def attention_instance(rng, grid=6, n_tokens=3):
    """Random self map, cross logits and masks for phrase tokens 1 (one box) and 2 (two boxes)."""
    hw = grid * grid
    self_map = softmax_rows(as_tensor(rng.normal(size=(hw, hw)) * 2))
    logits = as_tensor(rng.normal(size=(hw, n_tokens)) * 2)
    masks = [rasterize([random_box(rng, grid)], grid, grid),
             rasterize([random_box(rng, grid), random_box(rng, grid)], grid, grid)]
    return self_map, logits, masks


LOSSES = {
    "region": lambda maps, masks: region_loss(maps, masks),
    "marginal": lambda maps, masks: marginal_loss(maps, masks),
    "regularization": lambda maps, masks: regularization_loss(maps, masks),
    "combined": lambda maps, masks: combined_loss(maps, masks, 0.5, 0.5).combined,
}


def loss_of_logits(name, self_map, masks, grid=6, tau=1):
    fn = LOSSES[name]

    def f(logits):
        cross = softmax_rows(logits)
        maps = [normalize_reshape(enhance(self_map, cross[:, tok], tau), grid, grid) for tok in (1, 2)]
        return fn(maps, masks)

    return f


def gaussian_blob(grid, cx, cy, sigma=1.0):
    yy, xx = np.mgrid[0:grid, 0:grid] + 0.5
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))


def as_map(arr):
    return torch.as_tensor(np.asarray(arr, dtype=np.float64))
