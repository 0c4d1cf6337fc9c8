"""Layout instructions: boxes per phrase, file parsing, and rasterisation to masks.

A layout file looks like::

    # prompt on the first non-comment line
    <sot> two red square <eot>
    phrase 3 0.10 0.10 0.40 0.40
    phrase 3 0.55 0.20 0.90 0.60

Each ``phrase`` line adds one box to the phrase whose token sits at the given
index. Coordinates are fractions of width/height with a top-left origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LayoutError(ValueError):
    pass


class LayoutParseError(LayoutError):
    def __init__(self, line: int, field_name: str, message: str):
        super().__init__(f"line {line}: {field_name}: {message}")
        self.line = line
        self.field = field_name


class DegenerateBoxError(LayoutError):
    pass


class ResolutionError(LayoutError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 <= 1.0 and 0.0 <= self.x2 <= 1.0 and 0.0 <= self.y1 <= 1.0 and 0.0 <= self.y2 <= 1.0):
            raise LayoutError(f"box coordinates outside [0,1]: {self}")
        if self.x1 >= self.x2:
            raise LayoutError("x1 >= x2")
        if self.y1 >= self.y2:
            raise LayoutError("y1 >= y2")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass
class Layout:
    prompt_tokens: list[str]
    phrases: dict[int, list[BoundingBox]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.prompt_tokens)
        for idx, boxes in self.phrases.items():
            if not 0 <= idx < n:
                raise LayoutError(f"phrase index {idx} outside prompt of length {n}")
            if not boxes:
                raise LayoutError(f"phrase {idx} has no boxes")
        self.phrases = dict(sorted(self.phrases.items()))

    @property
    def phrase_indices(self) -> list[int]:
        return list(self.phrases)

    @property
    def counts(self) -> list[int]:
        return [len(b) for b in self.phrases.values()]

    def to_text(self) -> str:
        lines = [" ".join(self.prompt_tokens)]
        for idx, boxes in self.phrases.items():
            for b in boxes:
                lines.append(f"phrase {idx} {b.x1:.6g} {b.y1:.6g} {b.x2:.6g} {b.y2:.6g}")
        return "\n".join(lines) + "\n"


def parse_layout(text: str) -> Layout:
    tokens: list[str] | None = None
    phrases: dict[int, list[BoundingBox]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if tokens is None:
            tokens = line.split()
            continue
        parts = line.split()
        if parts[0] != "phrase":
            raise LayoutParseError(lineno, "keyword", f"expected 'phrase', got {parts[0]!r}")
        if len(parts) != 6:
            raise LayoutParseError(lineno, "fields", f"expected 6 fields, got {len(parts)}")
        try:
            idx = int(parts[1])
        except ValueError:
            raise LayoutParseError(lineno, "token_index", f"not an integer: {parts[1]!r}") from None
        if not 0 <= idx < len(tokens):
            raise LayoutParseError(lineno, "token_index", f"unknown token index {idx}")
        coords = []
        for name, val in zip(("x1", "y1", "x2", "y2"), parts[2:]):
            try:
                coords.append(float(val))
            except ValueError:
                raise LayoutParseError(lineno, name, f"malformed coordinate {val!r}") from None
        try:
            box = BoundingBox(*coords)
        except LayoutError as exc:
            msg = str(exc)
            fld = "x1" if msg.startswith("x1") else "y1" if msg.startswith("y1") else "coords"
            raise LayoutParseError(lineno, fld, msg) from None
        phrases.setdefault(idx, []).append(box)
    if tokens is None:
        raise LayoutParseError(1, "prompt", "missing prompt line")
    return Layout(tokens, phrases)


def load_layout(path) -> Layout:
    with open(path) as fh:
        return parse_layout(fh.read())


@dataclass
class MaskSet:
    grid_w: int
    grid_h: int
    interior: np.ndarray
    boundary: np.ndarray
    per_object: list[np.ndarray]
    perimeter_sum: int


def _box_cells(box: BoundingBox, grid_w: int, grid_h: int) -> np.ndarray:
    cx = (np.arange(grid_w) + 0.5) / grid_w
    cy = (np.arange(grid_h) + 0.5) / grid_h
    in_x = (cx >= box.x1) & (cx < box.x2)
    in_y = (cy >= box.y1) & (cy < box.y2)
    return in_y[:, None] & in_x[None, :]


def _inner_ring(cells: np.ndarray) -> np.ndarray:
    padded = np.pad(cells, 1, constant_values=False)
    all_in = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return cells & ~all_in


def rasterize(boxes: list[BoundingBox], grid_w: int, grid_h: int) -> MaskSet:
    """Cell-centre rasterisation of one phrase's boxes.

    The boundary is the inner one-cell ring of each box (cells inside the box
    with a 4-neighbour outside that same box), unioned over boxes.
    """
    if grid_w < 4 or grid_h < 4:
        raise ResolutionError(f"grid must be at least 4x4, got {grid_w}x{grid_h}")
    per_object = []
    interior = np.zeros((grid_h, grid_w), dtype=bool)
    boundary = np.zeros_like(interior)
    perimeter = 0
    for k, box in enumerate(boxes):
        cells = _box_cells(box, grid_w, grid_h)
        if not cells.any():
            raise DegenerateBoxError(f"box {k} {box.as_tuple()} covers no cell on a {grid_w}x{grid_h} grid")
        per_object.append(cells)
        interior |= cells
        boundary |= _inner_ring(cells)
        perimeter += 2 * (int(cells.any(axis=0).sum()) + int(cells.any(axis=1).sum()))
    return MaskSet(grid_w, grid_h, interior, boundary, per_object, perimeter)


def grid_for_resolution(image_w: int, image_h: int, attention_resolution: int) -> tuple[int, int]:
    """Attention-grid shape ``(grid_w, grid_h)`` for a layer with ``attention_resolution`` rows."""
    if attention_resolution <= 0 or image_h % attention_resolution:
        raise ResolutionError(f"{attention_resolution} does not divide image height {image_h}")
    factor = image_h // attention_resolution
    if image_w % factor:
        raise ResolutionError(f"downsampling factor {factor} does not divide image width {image_w}")
    return image_w // factor, attention_resolution
