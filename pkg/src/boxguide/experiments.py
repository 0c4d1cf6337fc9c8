"""Batch generation over layouts x seeds x guidance modes, scored with the
detector oracle. Shared by the ``ablate`` command and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import Detection, MetricsReport, assign_detections, detect, evaluate, phrase_attributes
from .guidance import GenerationResult, GuidanceConfig, TraceRow, generate
from .layout import Layout
from .losses import Ablation
from .toy_model.checkpoint import load_checkpoint, save_checkpoint
from .toy_model.denoiser import ToyDenoiser
from .toy_model.scenes import make_manifest, scene_from_spec_line
from .toy_model.schedule import NoiseSchedule
from .toy_model.training import train
from .toy_model.vocab import DEFAULT_VOCAB, TokenVocabulary

log = logging.getLogger(__name__)

UNGUIDED = "unguided"


@dataclass
class RunRecord:
    layout_id: str
    seed: int
    mode: str
    image: np.ndarray
    detections: dict[int, list[Detection]]
    trace: list[TraceRow] = field(default_factory=list)
    optimized_maps: list[np.ndarray] | None = None

    @property
    def image_id(self) -> str:
        return f"{self.layout_id}_seed{self.seed}"


@dataclass(frozen=True)
class ReferenceRecipe:
    """Training recipe for the reference toy model used by the acceptance suite.

    ``boxguide scenes`` followed by ``boxguide train`` with default flags
    reproduces it.
    """
    n_scenes: int = 4000
    manifest_seed: int = 0
    epochs: int = 24
    lr: float = 2e-3
    batch_size: int = 32
    seed: int = 0

    def tag(self) -> str:
        return f"ref_n{self.n_scenes}_m{self.manifest_seed}_e{self.epochs}_s{self.seed}"


def reference_model(cache_dir, recipe: ReferenceRecipe = ReferenceRecipe()):
    """Load the reference checkpoint from ``cache_dir``, training it first if absent."""
    cache = Path(cache_dir)
    path = cache / f"{recipe.tag()}.npz"
    if not path.exists():
        scenes = [scene_from_spec_line(line) for line in make_manifest(recipe.n_scenes, recipe.manifest_seed)]
        log.info("training reference model on %d scenes (cached at %s)", len(scenes), path)
        result = train(scenes, epochs=recipe.epochs, lr=recipe.lr, batch_size=recipe.batch_size,
                       seed=recipe.seed, log_every=100)
        cache.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        save_checkpoint(tmp, result.model, result.schedule, DEFAULT_VOCAB)
        tmp.replace(path)
    return load_checkpoint(path)


def mode_name(mode: Ablation | None) -> str:
    return UNGUIDED if mode is None else mode.label


def descent_ratio(trace: Sequence[TraceRow]) -> float | None:
    """Last recorded combined loss of a run over the first, which precedes any update."""
    if not trace:
        return None
    first, last = trace[0].combined, trace[-1].combined
    if first <= 0:
        return 0.0 if last <= 0 else float("inf")
    return last / first


def run_one(layout_id: str, layout: Layout, seed: int, mode: Ablation | None, config: GuidanceConfig,
            model: ToyDenoiser, schedule: NoiseSchedule, vocab: TokenVocabulary) -> RunRecord:
    cfg = config.replace(seed=seed, ablation=mode or config.ablation)
    result: GenerationResult = generate(layout.prompt_tokens, layout, cfg, model, schedule, vocab, guidance=mode is not None)
    image = result.image.numpy()
    per_phrase = assign_detections(detect(image), phrase_attributes(layout))
    return RunRecord(layout_id, seed, mode_name(mode), image, per_phrase, result.trace, result.optimized_maps)


def run_grid(layouts: Sequence[tuple[str, Layout]], seeds: Sequence[int], modes: Sequence[Ablation | None],
             config: GuidanceConfig, model: ToyDenoiser, schedule: NoiseSchedule,
             vocab: TokenVocabulary) -> list[RunRecord]:
    records = []
    for layout_id, layout in layouts:
        for seed in seeds:
            for mode in modes:
                records.append(run_one(layout_id, layout, seed, mode, config, model, schedule, vocab))
        log.info("finished layout %s", layout_id)
    return records


def score(records: Sequence[RunRecord], layouts: dict[str, Layout]) -> dict[str, MetricsReport]:
    by_mode: dict[str, list] = {}
    for r in records:
        by_mode.setdefault(r.mode, []).append((r.image_id, layouts[r.layout_id], r.detections))
    return {mode: evaluate(items) for mode, items in by_mode.items()}


def comparison_table(reports: dict[str, MetricsReport]) -> list[dict]:
    order = [UNGUIDED, *(m.label for m in Ablation)]
    rows = []
    for mode in sorted(reports, key=lambda m: order.index(m) if m in order else len(order)):
        rep = reports[mode]
        rows.append({"mode": mode, "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
                     "spatial": rep.spatial_acc, "size": rep.size_acc, "color": rep.color_acc})
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["mode", "precision", "recall", "f1", "spatial", "size", "color"]
    lines = ["  ".join(f"{c:>9}" for c in cols)]
    for r in rows:
        lines.append("  ".join(f"{r[c]:>9}" if c == "mode" else f"{r[c]:9.2f}" for c in cols))
    return "\n".join(lines)
