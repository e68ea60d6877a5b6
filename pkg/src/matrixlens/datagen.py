"""Synthetic handwritten-matrix image generator with automatic annotation.

Every sample is produced from (config, seed, index) alone: per-sample RNG
substreams make generation order-independent and byte-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from PIL import Image

from .atlas import AlphaSprite, SymbolAtlas, binarize_to_alpha
from .symbols import (
    CLASS_GLYPHS,
    LEFT_BRACKET_CLASS,
    MINUS_CLASS,
    RIGHT_BRACKET_CLASS,
    digit_class,
)


class LayoutOverflowError(ValueError):
    """Elements do not fit the maximum canvas."""


class Box(NamedTuple):
    """One annotated glyph box; coordinates normalized to [0, 1]."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float


def _as_range(value: int | tuple[int, int], name: str) -> tuple[int, int]:
    if isinstance(value, int):
        value = (value, value)
    lo, hi = int(value[0]), int(value[1])
    if lo < 1 or hi < lo:
        raise ValueError(f"{name} range {value} is empty or below 1")
    return lo, hi


@dataclass
class GenConfig:
    rows: int | tuple[int, int] = (1, 4)
    cols: int | tuple[int, int] = (1, 4)
    digits_per_element: tuple[int, int] = (1, 3)
    negative_probability: float = 0.3
    noise_level: float = 0.0
    jitter_px: int = 2
    seed: int = 0
    canvas_range: tuple[int, int] = (64, 2048)
    element_scale: tuple[float, float] = (0.85, 1.15)
    white_cutoff: int = 200

    def __post_init__(self) -> None:
        self.rows = _as_range(self.rows, "rows")
        self.cols = _as_range(self.cols, "cols")
        self.digits_per_element = _as_range(self.digits_per_element, "digits_per_element")
        if not 0.0 <= self.negative_probability <= 1.0:
            raise ValueError("negative_probability outside [0, 1]")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level outside [0, 1]")
        if self.jitter_px < 0:
            raise ValueError("jitter_px must be >= 0")
        if self.canvas_range[0] < 1 or self.canvas_range[1] < self.canvas_range[0]:
            raise ValueError("canvas_range is empty")

    def to_dict(self) -> dict:
        return {
            "rows": list(self.rows),
            "cols": list(self.cols),
            "digits_per_element": list(self.digits_per_element),
            "negative_probability": self.negative_probability,
            "noise_level": self.noise_level,
            "jitter_px": self.jitter_px,
            "seed": self.seed,
            "canvas_range": list(self.canvas_range),
            "element_scale": list(self.element_scale),
            "white_cutoff": self.white_cutoff,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        kwargs = dict(d)
        for key in ("rows", "cols", "digits_per_element", "canvas_range", "element_scale"):
            if key in kwargs and isinstance(kwargs[key], list):
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class GenSample:
    """One generated image with its annotation boxes and ground truth."""

    image: np.ndarray        # uint8 grayscale, white background
    boxes: list[Box]         # normalized glyph boxes
    values: list[list[int]]  # truth matrix
    rows: int
    cols: int

    @property
    def truth_matrix(self) -> list[list[int]]:
        return self.values


class PixBox(NamedTuple):
    """Pixel-frame glyph box used while composing, before normalization."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def shifted(self, dx: float, dy: float) -> "PixBox":
        return self._replace(cx=self.cx + dx, cy=self.cy + dy)


Element = tuple[AlphaSprite, list[PixBox], int]


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, portable RNG substream for one sample."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _paste(canvas: np.ndarray, sprite: AlphaSprite, x: int, y: int) -> None:
    h, w = sprite.alpha.shape
    region = canvas[y:y + h, x:x + w]
    region[:] = sprite.alpha * sprite.ink.astype(np.float64) + (1.0 - sprite.alpha) * region


def compose_element(
    rng: np.random.Generator,
    atlas: SymbolAtlas,
    cfg: GenConfig,
    force_digits: list[int] | None = None,
    force_negative: bool | None = None,
) -> Element:
    """Build one signed multi-digit element sprite.

    Digits sit left to right on a shared midline with randomized gaps; an
    optional minus glyph leads. Returns the composite sprite, one pixel-frame
    box per glyph, and the signed integer the glyphs spell.
    """
    lo, hi = cfg.digits_per_element
    if force_digits is not None:
        digits = list(force_digits)
    else:
        n = int(rng.integers(lo, hi + 1))
        digits = [int(rng.integers(1, 10)) if n > 1 else int(rng.integers(0, 10))]
        digits += [int(rng.integers(0, 10)) for _ in range(n - 1)]
    negative = force_negative if force_negative is not None else bool(rng.random() < cfg.negative_probability)

    base_scale = float(rng.uniform(*cfg.element_scale))
    glyph_ids = ([MINUS_CLASS] if negative else []) + [digit_class(d) for d in digits]

    sprites: list[AlphaSprite] = []
    for gid in glyph_ids:
        raw = atlas.pick(gid, rng)
        sprite = binarize_to_alpha(raw, cfg.white_cutoff).trimmed()
        sprites.append(sprite.scaled(base_scale * float(rng.uniform(0.92, 1.08))))

    # Minus-to-digit and digit-to-digit gaps both draw from [2, 6] px.
    gaps = [int(rng.integers(2, 7)) for _ in range(len(sprites) - 1)]

    height = max(s.height for s in sprites)
    width = sum(s.width for s in sprites) + sum(gaps)
    alpha = np.zeros((height, width), dtype=np.float64)
    ink = np.zeros((height, width), dtype=np.float64)

    boxes: list[PixBox] = []
    x = 0
    for i, sprite in enumerate(sprites):
        top = (height - sprite.height) // 2
        # Straight paste: glyphs never overlap inside an element.
        alpha[top:top + sprite.height, x:x + sprite.width] = sprite.alpha
        ink[top:top + sprite.height, x:x + sprite.width] = sprite.ink
        boxes.append(PixBox(glyph_ids[i], x + sprite.width / 2.0, top + sprite.height / 2.0,
                            float(sprite.width), float(sprite.height)))
        x += sprite.width + (gaps[i] if i < len(gaps) else 0)

    value = int("".join(str(d) for d in digits))
    if negative:
        value = -value
    return AlphaSprite(alpha=alpha, ink=ink.astype(np.uint8)), boxes, value


def layout_matrix(
    rng: np.random.Generator,
    elements: list[list[Element]],
    cfg: GenConfig,
    atlas: SymbolAtlas,
) -> GenSample:
    """Arrange composed elements on an adaptively sized canvas with brackets.

    Cells are 1.3x the largest element extent in their row/column; elements
    are centered per cell with jitter clamped to keep them inside the cell;
    brackets stretch to the full row span plus 10% with small random offsets.
    """
    n_rows = len(elements)
    n_cols = len(elements[0])
    if any(len(row) != n_cols for row in elements):
        raise ValueError("elements grid is not rectangular")

    col_w = [max(elements[r][c][0].width for r in range(n_rows)) for c in range(n_cols)]
    row_h = [max(elements[r][c][0].height for c in range(n_cols)) for r in range(n_rows)]

    # Cells are 1.3x the largest element extent, but never closer than a
    # glyph-relative floor: inter-cell gaps must dominate the in-number digit
    # gaps or downstream clustering cannot tell columns from digit groups.
    glyph_w = max(b.w for row in elements for (_s, bs, _v) in row for b in bs)
    glyph_h = max(b.h for row in elements for (_s, bs, _v) in row for b in bs)
    col_gap = int(math.ceil(1.5 * glyph_w)) + 8
    row_gap = int(math.ceil(0.5 * glyph_h)) + 8
    cell_w = [max(int(math.ceil(1.3 * w)), w + col_gap) for w in col_w]
    cell_h = [max(int(math.ceil(1.3 * h)), h + row_gap) for h in row_h]
    grid_w = sum(cell_w)
    grid_h = sum(cell_h)

    bracket_h = int(math.ceil(1.1 * grid_h))
    brackets = []
    for class_id in (LEFT_BRACKET_CLASS, RIGHT_BRACKET_CLASS):
        raw = atlas.pick(class_id, rng)
        sprite = binarize_to_alpha(raw, cfg.white_cutoff).trimmed()
        sprite = sprite.scaled(float(rng.uniform(*cfg.element_scale)))
        brackets.append(sprite.stretched_to_height(bracket_h))
    left_br, right_br = brackets

    # Randomized per-side margins vary the overall canvas size slightly.
    pad = 6
    m_left, m_right, m_top, m_bottom = (8 + int(v) for v in rng.integers(0, 12, size=4))

    width = m_left + left_br.width + pad + grid_w + pad + right_br.width + m_right
    height = m_top + max(grid_h, bracket_h) + m_bottom

    min_side, max_side = cfg.canvas_range
    if width > max_side or height > max_side:
        raise LayoutOverflowError(f"layout overflow: canvas {width}x{height} exceeds {max_side}")
    if width < min_side:
        grow = min_side - width
        m_left += grow // 2
        width = min_side
    if height < min_side:
        grow = min_side - height
        m_top += grow // 2
        height = min_side

    canvas = np.full((height, width), 255.0, dtype=np.float64)
    boxes: list[PixBox] = []

    grid_x = m_left + left_br.width + pad
    grid_y = m_top + (max(grid_h, bracket_h) - grid_h) // 2

    y = grid_y
    for r in range(n_rows):
        x = grid_x
        for c in range(n_cols):
            sprite, el_boxes, _value = elements[r][c]
            slack_x = cell_w[c] - sprite.width
            slack_y = cell_h[r] - sprite.height
            jx = int(rng.integers(-cfg.jitter_px, cfg.jitter_px + 1)) if cfg.jitter_px else 0
            jy = int(rng.integers(-cfg.jitter_px, cfg.jitter_px + 1)) if cfg.jitter_px else 0
            # Centered placement plus jitter, clamped so the element stays in its cell.
            ex = min(max(x + slack_x // 2 + jx, x), x + slack_x)
            ey = min(max(y + slack_y // 2 + jy, y), y + slack_y)
            _paste(canvas, sprite, ex, ey)
            boxes.extend(b.shifted(ex, ey) for b in el_boxes)
            x += cell_w[c]
        y += cell_h[r]

    # Brackets hug the grid vertically with small handwritten-style offsets.
    for sprite, class_id, bx in (
        (left_br, LEFT_BRACKET_CLASS, m_left),
        (right_br, RIGHT_BRACKET_CLASS, grid_x + grid_w + pad),
    ):
        by = m_top + (max(grid_h, bracket_h) - sprite.height) // 2
        bx_off = bx + int(rng.integers(-2, 3))
        by_off = by + int(rng.integers(-3, 4))
        bx_off = min(max(bx_off, 0), width - sprite.width)
        by_off = min(max(by_off, 0), height - sprite.height)
        _paste(canvas, sprite, bx_off, by_off)
        boxes.append(PixBox(class_id, bx_off + sprite.width / 2.0, by_off + sprite.height / 2.0,
                            float(sprite.width), float(sprite.height)))

    norm = [Box(b.class_id, b.cx / width, b.cy / height, b.w / width, b.h / height) for b in boxes]
    values = [[elements[r][c][2] for c in range(n_cols)] for r in range(n_rows)]
    return GenSample(image=np.round(canvas).astype(np.uint8), boxes=norm,
                     values=values, rows=n_rows, cols=n_cols)


def add_noise(rng: np.random.Generator, sample: GenSample, level: float) -> GenSample:
    """Composite speckle blobs whose alpha decays linearly to 0 at the blob edge.

    Level 0 is the identity on pixels; boxes are never touched.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError("noise level outside [0, 1]")
    if level == 0.0:
        return sample

    h, w = sample.image.shape
    canvas = sample.image.astype(np.float64)
    n_blobs = int(level * (w * h) / 2000)
    for _ in range(n_blobs):
        radius = float(rng.uniform(1.0, 4.0))
        bx = float(rng.uniform(0, w))
        by = float(rng.uniform(0, h))
        peak = level * float(rng.uniform(0.5, 1.0))
        shade = float(rng.integers(0, 120))

        x0 = max(0, int(math.floor(bx - radius)))
        x1 = min(w, int(math.ceil(bx + radius)) + 1)
        y0 = max(0, int(math.floor(by - radius)))
        y1 = min(h, int(math.ceil(by + radius)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dist = np.hypot(xx + 0.5 - bx, yy + 0.5 - by)
        alpha = peak * np.clip(1.0 - dist / radius, 0.0, 1.0)
        region = canvas[y0:y1, x0:x1]
        region[:] = alpha * shade + (1.0 - alpha) * region

    return GenSample(image=np.round(canvas).astype(np.uint8), boxes=list(sample.boxes),
                     values=[row[:] for row in sample.values],
                     rows=sample.rows, cols=sample.cols)


def reading_order(boxes: list[Box]) -> list[Box]:
    """Top-to-bottom then left-to-right by box center."""
    return sorted(boxes, key=lambda b: (b.cy, b.cx))


def emit_annotation(sample: GenSample) -> str:
    """YOLO label lines: `class cx cy w h`, six decimals, reading order."""
    lines = [f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"
             for b in reading_order(sample.boxes)]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_annotation(text: str) -> list[Box]:
    """Inverse of emit_annotation (up to 6-decimal rounding)."""
    boxes = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"malformed label line: {line!r}")
        boxes.append(Box(int(parts[0]), *(float(p) for p in parts[1:])))
    return boxes


def generate_sample(cfg: GenConfig, atlas: SymbolAtlas, index: int) -> GenSample:
    """Generate sample `index` of the dataset defined by (cfg, cfg.seed)."""
    rng = sample_rng(cfg.seed, index)
    n_rows = int(rng.integers(cfg.rows[0], cfg.rows[1] + 1))
    n_cols = int(rng.integers(cfg.cols[0], cfg.cols[1] + 1))
    elements = [[compose_element(rng, atlas, cfg) for _ in range(n_cols)] for _ in range(n_rows)]
    sample = layout_matrix(rng, elements, cfg, atlas)
    return add_noise(rng, sample, cfg.noise_level)


def iter_samples(cfg: GenConfig, atlas: SymbolAtlas, count: int) -> Iterator[tuple[int, GenSample]]:
    for index in range(count):
        yield index, generate_sample(cfg, atlas, index)


def split_counts(count: int) -> tuple[int, int]:
    """Train/test split sizes for the 9:1 rule (train takes the ceiling)."""
    train = math.ceil(0.9 * count)
    return train, count - train


def generate_dataset(cfg: GenConfig, atlas: SymbolAtlas, count: int, out: str | Path) -> dict:
    """Write `count` image/label/truth triples plus a manifest.

    Layout: images/{split}/NNNNNN.png, labels/{split}/NNNNNN.txt,
    truth/{split}/NNNNNN.json, manifest.json.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out_dir = Path(out)
    n_train, n_test = split_counts(count)

    for split in ("train", "test"):
        for sub in ("images", "labels", "truth"):
            (out_dir / sub / split).mkdir(parents=True, exist_ok=True)

    for index, sample in iter_samples(cfg, atlas, count):
        split = "train" if index < n_train else "test"
        stem = f"{index:06d}"
        Image.fromarray(sample.image).save(out_dir / "images" / split / f"{stem}.png")
        (out_dir / "labels" / split / f"{stem}.txt").write_text(emit_annotation(sample))
        truth = {"rows": sample.rows, "cols": sample.cols, "values": sample.values}
        (out_dir / "truth" / split / f"{stem}.json").write_text(json.dumps(truth))

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "counts": {"train": n_train, "test": n_test, "total": count},
        "class_map": {str(k): v for k, v in sorted(CLASS_GLYPHS.items())},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
