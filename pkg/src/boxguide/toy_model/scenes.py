"""Synthetic scenes: coloured squares and circles on a grey background,
with the matching prompt and ground-truth layout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..layout import BoundingBox, Layout
from .vocab import COLORS, COUNTS, DEFAULT_VOCAB, RELATIONS, SHAPES, TokenVocabulary

IMAGE_SIZE = 32
BACKGROUND = (0.5, 0.5, 0.5)
PALETTE = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.75, 0.1),
    "blue": (0.1, 0.2, 0.9),
    "yellow": (0.95, 0.9, 0.1),
}
MIN_GAP = 2
MAX_TRIES = 400


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhraseSpec:
    count: int
    color: str
    shape: str

    def words(self) -> list[str]:
        return [COUNTS[self.count - 1], self.color, self.shape]


@dataclass(frozen=True)
class SceneSpec:
    phrases: tuple[PhraseSpec, ...]
    relation: str | None = None

    def words(self) -> list[str]:
        out = self.phrases[0].words()
        for p in self.phrases[1:]:
            out += [self.relation or "and", *p.words()]
        return out

    @property
    def text(self) -> str:
        return " ".join(self.words())

    @classmethod
    def parse(cls, text: str) -> "SceneSpec":
        words = text.split()
        phrases = []
        relation = None
        i = 0
        while i < len(words):
            if phrases:
                joiner = words[i]
                if joiner != "and" and joiner not in RELATIONS:
                    raise ValueError(f"expected 'and' or a relation word, got {joiner!r}")
                if joiner != "and":
                    relation = joiner
                i += 1
            if i + 3 > len(words):
                raise ValueError(f"incomplete phrase in {text!r}")
            count, color, shape = words[i:i + 3]
            if count not in COUNTS or color not in COLORS or shape not in SHAPES:
                raise ValueError(f"bad phrase {' '.join(words[i:i + 3])!r}")
            phrases.append(PhraseSpec(COUNTS.index(count) + 1, color, shape))
            i += 3
        if not phrases:
            raise ValueError("empty scene spec")
        return cls(tuple(phrases), relation)


@dataclass
class SyntheticScene:
    image: np.ndarray  # (3, H, W) in [0, 1]
    prompt_tokens: list[str]
    layout: Layout
    seed: int
    spec: SceneSpec
    colors: dict[int, str]  # phrase token index -> colour word


def phrase_token_indices(spec: SceneSpec) -> list[int]:
    """Token position (with the start marker at 0) of each phrase's shape word."""
    return [1 + 4 * k + 2 for k in range(len(spec.phrases))]


def _sizes(spec: SceneSpec, rng: np.random.Generator) -> list[list[int]]:
    sizes = []
    for k, p in enumerate(spec.phrases):
        lo, hi = 5, 9
        if spec.relation in ("smaller", "larger"):
            small = (k == 0) == (spec.relation == "smaller")
            lo, hi = (4, 6) if small else (9, 12)
        sizes.append([int(rng.integers(lo, hi + 1)) for _ in range(p.count)])
    return sizes


def _relation_ok(rel: str | None, a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    if rel in (None, "smaller", "larger"):
        return True
    ax, ay = (a[0] + a[2]) / 2, (a[1] + a[3]) / 2
    bx, by = (b[0] + b[2]) / 2, (b[1] + b[3]) / 2
    return {
        "left": ax + 4 <= bx,
        "right": ax >= bx + 4,
        "above": ay + 4 <= by,
        "below": ay >= by + 4,
    }[rel]


def _separated(a, b, gap: int) -> bool:
    return a[2] + gap <= b[0] or b[2] + gap <= a[0] or a[3] + gap <= b[1] or b[3] + gap <= a[1]


def place_boxes(spec: SceneSpec, rng: np.random.Generator, size: int = IMAGE_SIZE, gap: int = MIN_GAP):
    """Pixel boxes (x0, y0, x1, y1), exclusive upper edge, grouped by phrase."""
    if spec.relation and any(p.count != 1 for p in spec.phrases):
        raise PlacementError("relations are only defined between single-object phrases")
    sizes = _sizes(spec, rng)
    for _ in range(MAX_TRIES):
        placed: list[list[tuple[int, int, int, int]]] = []
        flat: list[tuple[int, int, int, int]] = []
        ok = True
        for group in sizes:
            boxes = []
            for s in group:
                for _ in range(50):
                    x0 = int(rng.integers(1, size - s))
                    y0 = int(rng.integers(1, size - s))
                    box = (x0, y0, x0 + s, y0 + s)
                    if all(_separated(box, other, gap) for other in flat):
                        break
                else:
                    ok = False
                    break
                boxes.append(box)
                flat.append(box)
            if not ok:
                break
            placed.append(boxes)
        if ok and (len(placed) < 2 or _relation_ok(spec.relation, placed[0][0], placed[1][0])):
            return placed
    raise PlacementError(f"could not place {spec.text!r} after {MAX_TRIES} attempts")


def render(spec: SceneSpec, boxes, size: int = IMAGE_SIZE) -> np.ndarray:
    img = np.empty((3, size, size), dtype=np.float64)
    img[:] = np.asarray(BACKGROUND)[:, None, None]
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for p, group in zip(spec.phrases, boxes):
        color = np.asarray(PALETTE[p.color])[:, None]
        for x0, y0, x1, y1 in group:
            if p.shape == "square":
                mask = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
            else:
                cx, cy, r = (x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 2
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            img[:, mask] = color
    return img


def make_scene(spec: SceneSpec | str, seed: int, vocab: TokenVocabulary = DEFAULT_VOCAB,
               size: int = IMAGE_SIZE) -> SyntheticScene:
    if isinstance(spec, str):
        spec = SceneSpec.parse(spec)
    rng = np.random.default_rng(seed)
    boxes = place_boxes(spec, rng, size)
    image = render(spec, boxes, size)
    tokens = vocab.prompt_tokens(spec.words())
    phrases = {}
    colors = {}
    for idx, p, group in zip(phrase_token_indices(spec), spec.phrases, boxes):
        phrases[idx] = [BoundingBox(x0 / size, y0 / size, x1 / size, y1 / size) for x0, y0, x1, y1 in group]
        colors[idx] = p.color
    return SyntheticScene(image, tokens, Layout(tokens, phrases), seed, spec, colors)


def random_spec(rng: np.random.Generator, max_count: int = 4) -> SceneSpec:
    colors = list(rng.permutation(COLORS))
    if rng.random() < 0.5:
        p = PhraseSpec(int(rng.integers(1, max_count + 1)), colors[0], str(rng.choice(SHAPES)))
        return SceneSpec((p,))
    if rng.random() < 0.4:
        a = PhraseSpec(1, colors[0], str(rng.choice(SHAPES)))
        b = PhraseSpec(1, colors[1], str(rng.choice(SHAPES)))
        return SceneSpec((a, b), str(rng.choice(RELATIONS)))
    a = PhraseSpec(int(rng.integers(1, max_count)), colors[0], str(rng.choice(SHAPES)))
    b = PhraseSpec(int(rng.integers(1, max_count)), colors[1], str(rng.choice(SHAPES)))
    return SceneSpec((a, b))


def scene_from_spec_line(line: str, vocab: TokenVocabulary = DEFAULT_VOCAB) -> SyntheticScene:
    seed, _, text = line.strip().partition(" ")
    return make_scene(SceneSpec.parse(text), int(seed), vocab)


def make_manifest(n: int, seed: int = 0, max_count: int = 4) -> list[str]:
    """``n`` dataset manifest lines of the form ``<scene_seed> <scene words>``."""
    rng = np.random.default_rng(seed)
    lines = []
    while len(lines) < n:
        spec = random_spec(rng, max_count)
        scene_seed = int(rng.integers(0, 2**31 - 1))
        try:
            place_boxes(spec, np.random.default_rng(scene_seed))
        except PlacementError:
            continue
        lines.append(f"{scene_seed} {spec.text}")
    return lines


def read_manifest(path) -> list[str]:
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
