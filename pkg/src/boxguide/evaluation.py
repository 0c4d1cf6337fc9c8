"""Colour-threshold detector for toy scenes and the counting / spatial / size /
colour metric suite."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .layout import BoundingBox, Layout, MaskSet
from .toy_model.scenes import BACKGROUND, PALETTE
from .toy_model.vocab import COLORS, RELATIONS

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
SQUARE_SOLIDITY = 0.92


class DiagnosticUndefinedError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    label: str
    box: BoundingBox
    color: str
    confidence: float
    area: int = 0


def detect(
    image,
    palette: dict[str, tuple[float, float, float]] = PALETTE,
    min_confidence: float = 0.25,
    min_area: int = 4,
    max_color_distance: float = 0.35,
    background: tuple[float, float, float] = BACKGROUND,
) -> list[Detection]:
    """One detection per 4-connected same-colour component.

    Pixels take the nearest of palette + background; pixels further than
    ``max_color_distance`` from every palette colour are background.
    Confidence is component solidity (area over bounding-box area); solid
    components are labelled ``square``, the rest ``circle``.
    """
    img = np.asarray(image, dtype=np.float64)
    _, h, w = img.shape
    names = list(palette)
    refs = np.array([palette[n] for n in names] + [background], dtype=np.float64)
    dist = np.linalg.norm(img[None, :, :, :] - refs[:, :, None, None], axis=1)
    nearest = dist.argmin(axis=0)
    nearest[dist.min(axis=0) > max_color_distance] = len(names)
    out = []
    for ci, name in enumerate(names):
        labels, n = ndimage.label(nearest == ci, structure=FOUR_CONNECTED)
        if n == 0:
            continue
        for k, sl in enumerate(ndimage.find_objects(labels), start=1):
            ys, xs = sl
            area = int((labels[sl] == k).sum())
            bbox_area = (ys.stop - ys.start) * (xs.stop - xs.start)
            conf = area / bbox_area
            if area < min_area or conf < min_confidence:
                continue
            box = BoundingBox(xs.start / w, ys.start / h, xs.stop / w, ys.stop / h)
            label = "square" if conf >= SQUARE_SOLIDITY else "circle"
            out.append(Detection(label, box, name, conf, area))
    out.sort(key=lambda d: (d.box.y1, d.box.x1, d.color))
    return out


def phrase_attributes(layout: Layout) -> dict[int, tuple[str | None, str]]:
    """(colour, shape) per phrase, read from the prompt tokens around the phrase index."""
    attrs = {}
    for idx in layout.phrases:
        shape = layout.prompt_tokens[idx]
        prev = layout.prompt_tokens[idx - 1] if idx > 0 else None
        attrs[idx] = (prev if prev in COLORS else None, shape)
    return attrs


def relation_of(layout: Layout) -> tuple[int, int, str] | None:
    """(first phrase, second phrase, relation word) when the prompt states one."""
    idx = list(layout.phrases)
    if len(idx) < 2:
        return None
    for tok in layout.prompt_tokens[idx[0] + 1: idx[1]]:
        if tok in RELATIONS:
            return idx[0], idx[1], tok
    return None


def assign_detections(detections: Sequence[Detection], attrs: dict[int, tuple[str | None, str]]) -> dict[int, list[Detection]]:
    """Map each detection onto the phrase with its colour and shape.

    A phrase without a colour word matches on shape alone. When several
    phrases qualify the lowest index wins. Unmatched detections are dropped.
    """
    out: dict[int, list[Detection]] = {i: [] for i in attrs}
    for det in detections:
        cands = [i for i, (c, s) in attrs.items() if s == det.label and c in (None, det.color)]
        if cands:
            out[min(cands)].append(det)
    return out


def best_detection(dets: Sequence[Detection]) -> Detection | None:
    return max(dets, key=lambda d: d.confidence) if dets else None


@dataclass
class CountingResult:
    precision: float
    recall: float
    f1: float
    n_cor: int
    n_fal: int
    n_neg: int
    flags: list[str] = field(default_factory=list)


def count_terms(n_pred: int, n_gt: int) -> tuple[int, int, int]:
    if n_pred < 0 or n_gt < 0:
        raise ValueError("counts must be nonnegative")
    return min(n_pred, n_gt), max(n_pred - n_gt, 0), max(n_gt - n_pred, 0)


def counting_metrics(counts: Iterable[tuple[int, int]]) -> CountingResult:
    """Micro-averaged precision/recall/F1 (percent) over (n_pred, n_gt) pairs."""
    cor = fal = neg = 0
    for n_pred, n_gt in counts:
        c, f, g = count_terms(n_pred, n_gt)
        cor, fal, neg = cor + c, fal + f, neg + g
    flags = []
    if cor + fal == 0:
        precision = 0.0
        flags.append("precision undefined: no correct or false detections")
    else:
        precision = 100.0 * cor / (cor + fal)
    if cor + neg == 0:
        recall = 0.0
        flags.append("recall undefined: no ground-truth objects")
    else:
        recall = 100.0 * cor / (cor + neg)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    if precision + recall == 0:
        flags.append("f1 undefined: precision and recall are zero")
    return CountingResult(precision, recall, f1, cor, fal, neg, flags)


def _centroid(b: BoundingBox) -> tuple[float, float]:
    return ((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2)


def spatial_correct(a: BoundingBox | None, b: BoundingBox | None, relation: str) -> bool:
    if a is None or b is None:
        return False
    (ax, ay), (bx, by) = _centroid(a), _centroid(b)
    checks = {"left": ax < bx, "right": ax > bx, "above": ay < by, "below": ay > by}
    if relation not in checks:
        raise ValueError(f"not a spatial relation: {relation!r}")
    return checks[relation]


def size_correct(a: BoundingBox | None, b: BoundingBox | None, relation: str) -> bool:
    if a is None or b is None:
        return False
    if relation == "smaller":
        return a.area < b.area
    if relation == "larger":
        return a.area > b.area
    raise ValueError(f"not a size relation: {relation!r}")


def _accuracy(flags: Iterable[bool]) -> float:
    flags = list(flags)
    return 100.0 * sum(flags) / len(flags) if flags else 0.0


def spatial_accuracy(pairs: Iterable[tuple[BoundingBox | None, BoundingBox | None, str]]) -> float:
    return _accuracy(spatial_correct(a, b, r) for a, b, r in pairs)


def size_accuracy(pairs: Iterable[tuple[BoundingBox | None, BoundingBox | None, str]]) -> float:
    return _accuracy(size_correct(a, b, r) for a, b, r in pairs)


def color_accuracy(matched: dict[int, Sequence[Detection]] | Sequence[Sequence[Detection]],
                   ground_truth: dict[int, str] | Sequence[str]) -> float:
    """Share of phrases with at least one matched detection of the expected colour."""
    if isinstance(ground_truth, dict):
        items = [(matched.get(i, []), c) for i, c in ground_truth.items()]
    else:
        items = list(zip(matched, ground_truth))
    return _accuracy(any(d.color == c for d in dets) for dets, c in items)


def boundary_overlap_diagnostic(attn_map, masks: MaskSet) -> float:
    """Share of attention mass on cells covered by two or more one-cell dilations
    of the per-object masks. Zero means the objects' attention is separated."""
    if len(masks.per_object) < 2:
        raise DiagnosticUndefinedError("overlap diagnostic needs at least two objects")
    a = np.asarray(attn_map, dtype=np.float64)
    cover = np.zeros(a.shape, dtype=int)
    full = np.ones((3, 3), dtype=bool)
    for m in masks.per_object:
        cover += ndimage.binary_dilation(m, structure=full)
    total = a.sum()
    if total <= 0:
        return 0.0
    return float(a[cover >= 2].sum() / total)


# ---- reports -------------------------------------------------------------

@dataclass
class PromptRow:
    image_id: str
    phrase_index: int
    label: str
    n_pred: int
    n_gt: int
    n_cor: int
    n_fal: int
    n_neg: int


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    spatial_acc: float
    size_acc: float
    color_acc: float
    rows: list[PromptRow] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, json_path, csv_path) -> None:
        with open(json_path, "w") as fh:
            fh.write(self.to_json() + "\n")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id", "phrase_index", "label", "n_pred", "n_gt", "n_cor", "n_fal", "n_neg"])
            for r in self.rows:
                w.writerow([r.image_id, r.phrase_index, r.label, r.n_pred, r.n_gt, r.n_cor, r.n_fal, r.n_neg])

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        d["rows"] = [PromptRow(**r) for r in d.get("rows", [])]
        return cls(**d)


def evaluate(items: Sequence[tuple[str, Layout, dict[int, list[Detection]]]]) -> MetricsReport:
    """Score (image_id, ground-truth layout, detections per phrase) triples."""
    rows = []
    spatial, size, colors = [], [], []
    for image_id, layout, per_phrase in items:
        attrs = phrase_attributes(layout)
        for idx, boxes in layout.phrases.items():
            dets = per_phrase.get(idx, [])
            c, f, g = count_terms(len(dets), len(boxes))
            rows.append(PromptRow(image_id, idx, layout.prompt_tokens[idx], len(dets), len(boxes), c, f, g))
            color = attrs[idx][0]
            if color is not None:
                colors.append(any(d.color == color for d in dets))
        rel = relation_of(layout)
        if rel is not None:
            a, b, word = rel
            da, db = best_detection(per_phrase.get(a, [])), best_detection(per_phrase.get(b, []))
            pair = (da.box if da else None, db.box if db else None, word)
            if word in ("smaller", "larger"):
                size.append(size_correct(*pair))
            else:
                spatial.append(spatial_correct(*pair))
    counting = counting_metrics((r.n_pred, r.n_gt) for r in rows)
    flags = list(counting.flags)
    for name, vals in (("spatial", spatial), ("size", size), ("color", colors)):
        if not vals:
            flags.append(f"{name} accuracy undefined: no applicable prompts")
    return MetricsReport(counting.precision, counting.recall, counting.f1,
                         _accuracy(spatial), _accuracy(size), _accuracy(colors), rows, flags)


DETECTION_COLUMNS = ("image_id", "phrase_index", "label", "x1", "y1", "x2", "y2", "color", "confidence")


def write_detections_csv(path, records: Iterable[tuple[str, int, Detection]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DETECTION_COLUMNS)
        for image_id, phrase, d in records:
            w.writerow([image_id, phrase, d.label, *(repr(v) for v in d.box.as_tuple()), d.color, repr(d.confidence)])


def read_detections_csv(path) -> dict[str, dict[int, list[Detection]]]:
    out: dict[str, dict[int, list[Detection]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DETECTION_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"detections file lacks columns {sorted(missing)}")
        for row in reader:
            det = Detection(row["label"].strip(),
                            BoundingBox(*(float(row[k]) for k in ("x1", "y1", "x2", "y2"))),
                            row["color"].strip(), float(row["confidence"]))
            out.setdefault(row["image_id"].strip(), {}).setdefault(int(row["phrase_index"]), []).append(det)
    return out
