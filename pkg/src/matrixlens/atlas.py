"""Glyph sprite atlas: loading per-category sprite folders, alpha extraction,
and a built-in stroke-drawn glyph set for running the generator without an
external symbol collection.

Sprites are grayscale rasters with dark ink on a light background; the raw
collections this mirrors ship 45x45 images, one folder per category.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .symbols import CLASS_GLYPHS, NUM_CLASSES

log = logging.getLogger(__name__)

SPRITE_SIZE = 45
DEFAULT_WHITE_CUTOFF = 200


class AtlasError(ValueError):
    """Raised when an atlas directory cannot satisfy the 16-category contract."""


@dataclass
class AlphaSprite:
    """Glyph raster with per-pixel opacity; background pixels carry alpha 0."""

    alpha: np.ndarray  # float in [0, 1], shape (h, w)
    ink: np.ndarray    # uint8 gray values, shape (h, w)

    def __post_init__(self) -> None:
        if self.alpha.shape != self.ink.shape:
            raise ValueError("alpha and ink shapes differ")
        if self.alpha.size == 0:
            raise ValueError("empty sprite")
        if float(self.alpha.min()) < 0.0 or float(self.alpha.max()) > 1.0:
            raise ValueError("alpha outside [0, 1]")

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]

    def trimmed(self) -> "AlphaSprite":
        """Crop to the bounding box of nonzero alpha (full sprite if blank)."""
        ys, xs = np.nonzero(self.alpha > 0)
        if ys.size == 0:
            return self
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        return AlphaSprite(self.alpha[y0:y1, x0:x1].copy(), self.ink[y0:y1, x0:x1].copy())

    def scaled(self, factor: float) -> "AlphaSprite":
        """Resize by a positive factor (bilinear), keeping at least 1x1."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        if (w, h) == (self.width, self.height):
            return AlphaSprite(self.alpha.copy(), self.ink.copy())
        a = Image.fromarray((self.alpha * 255.0).astype(np.uint8)).resize((w, h), Image.BILINEAR)
        k = Image.fromarray(self.ink).resize((w, h), Image.BILINEAR)
        return AlphaSprite(np.asarray(a, dtype=np.float64) / 255.0, np.asarray(k, dtype=np.uint8))

    def stretched_to_height(self, height: int) -> "AlphaSprite":
        """Resize vertically to an exact pixel height, width unchanged."""
        h = max(1, int(height))
        a = Image.fromarray((self.alpha * 255.0).astype(np.uint8)).resize((self.width, h), Image.BILINEAR)
        k = Image.fromarray(self.ink).resize((self.width, h), Image.BILINEAR)
        return AlphaSprite(np.asarray(a, dtype=np.float64) / 255.0, np.asarray(k, dtype=np.uint8))


@dataclass
class SymbolAtlas:
    """Per-category sprite sets covering all 16 symbol classes."""

    classes: list[tuple[int, str]] = field(default_factory=lambda: sorted(CLASS_GLYPHS.items()))
    sprites: dict[int, list[np.ndarray]] = field(default_factory=dict)

    def validate(self) -> "SymbolAtlas":
        for class_id, _glyph in self.classes:
            pool = self.sprites.get(class_id, [])
            if not pool:
                raise AtlasError(f"incomplete atlas: no sprites for class {class_id}")
            for s in pool:
                if s.ndim != 2 or s.shape[0] == 0 or s.shape[1] == 0:
                    raise AtlasError(f"incomplete atlas: degenerate sprite in class {class_id}")
        return self

    def glyph(self, class_id: int) -> str:
        return CLASS_GLYPHS[class_id]

    def pick(self, class_id: int, rng: np.random.Generator) -> np.ndarray:
        pool = self.sprites[class_id]
        return pool[int(rng.integers(len(pool)))]


def binarize_to_alpha(glyph: np.ndarray, white_cutoff: int = DEFAULT_WHITE_CUTOFF) -> AlphaSprite:
    """Turn a grayscale glyph into an alpha sprite.

    Pixels at or above the cutoff are background (alpha 0); darker pixels get
    alpha proportional to their darkness, reaching 1 at pure black.
    """
    if glyph.size == 0:
        raise ValueError("empty glyph")
    gray = np.asarray(glyph, dtype=np.float64)
    alpha = np.clip((white_cutoff - gray) / float(white_cutoff), 0.0, 1.0)
    alpha[gray >= white_cutoff] = 0.0
    return AlphaSprite(alpha=alpha, ink=np.asarray(glyph, dtype=np.uint8).copy())


def load_symbol_atlas(path: str | Path) -> SymbolAtlas:
    """Load an atlas from a directory with one subdirectory per category id.

    Sprite order within a class is lexicographic by filename. Unreadable
    images are skipped with a warning; a class left empty is an error.
    """
    root = Path(path)
    if not root.is_dir():
        raise AtlasError(f"incomplete atlas: {root} is not a directory")

    sprites: dict[int, list[np.ndarray]] = {}
    for class_id in range(NUM_CLASSES):
        class_dir = root / str(class_id)
        if not class_dir.is_dir():
            raise AtlasError(f"incomplete atlas: missing class {class_id}")
        pool: list[np.ndarray] = []
        for f in sorted(class_dir.iterdir(), key=lambda p: p.name):
            if not f.is_file():
                continue
            try:
                with Image.open(f) as im:
                    pool.append(np.asarray(im.convert("L"), dtype=np.uint8))
            except Exception as exc:  # noqa: BLE001 - any decode failure is a skip
                log.warning("skipping unreadable sprite %s: %s", f, exc)
        if not pool:
            raise AtlasError(f"incomplete atlas: no readable sprites for class {class_id}")
        sprites[class_id] = pool
    return SymbolAtlas(sprites=sprites).validate()


def save_atlas(atlas: SymbolAtlas, path: str | Path) -> None:
    """Write an atlas to disk in the layout load_symbol_atlas expects."""
    root = Path(path)
    for class_id, _glyph in atlas.classes:
        class_dir = root / str(class_id)
        class_dir.mkdir(parents=True, exist_ok=True)
        for i, sprite in enumerate(atlas.sprites[class_id]):
            Image.fromarray(sprite).save(class_dir / f"{i:03d}.png")


# ── Built-in stroke glyphs ──────────────────────────────────────────────
#
# Polyline skeletons in a unit square (x right, y down), rasterized with an
# antialiased round pen. Enough to run the full pipeline without downloading
# a handwriting collection.

def _arc(cx: float, cy: float, rx: float, ry: float,
         a0: float, a1: float, n: int = 14) -> list[tuple[float, float]]:
    ts = np.linspace(a0, a1, n)
    return [(cx + rx * math.cos(t), cy + ry * math.sin(t)) for t in ts]


_DIGIT_STROKES: dict[str, list[list[tuple[float, float]]]] = {
    "0": [_arc(0.5, 0.5, 0.26, 0.40, 0.0, 2 * math.pi, 24)],
    "1": [[(0.36, 0.24), (0.52, 0.10), (0.52, 0.90)], [(0.36, 0.90), (0.68, 0.90)]],
    "2": [_arc(0.5, 0.30, 0.26, 0.20, math.pi, 2 * math.pi)
          + [(0.76, 0.35), (0.26, 0.90), (0.78, 0.90)]],
    "3": [_arc(0.48, 0.30, 0.26, 0.20, math.pi * 0.95, 2.05 * math.pi)
          + _arc(0.48, 0.69, 0.28, 0.22, -0.5 * math.pi, 0.95 * math.pi)],
    "4": [[(0.62, 0.10), (0.24, 0.62), (0.80, 0.62)], [(0.62, 0.34), (0.62, 0.90)]],
    "5": [[(0.74, 0.10), (0.30, 0.10), (0.28, 0.46)]
          + _arc(0.48, 0.66, 0.26, 0.22, -0.45 * math.pi, 0.9 * math.pi)],
    "6": [_arc(0.50, 0.68, 0.25, 0.22, 0.0, 2 * math.pi, 20),
          _arc(0.62, 0.45, 0.40, 0.37, math.pi * 0.9, math.pi * 1.45)],
    "7": [[(0.24, 0.10), (0.78, 0.10), (0.44, 0.90)]],
    "8": [_arc(0.5, 0.30, 0.22, 0.20, 0.0, 2 * math.pi, 20),
          _arc(0.5, 0.70, 0.26, 0.21, 0.0, 2 * math.pi, 20)],
    "9": [_arc(0.50, 0.32, 0.25, 0.22, 0.0, 2 * math.pi, 20),
          _arc(0.38, 0.55, 0.40, 0.37, -math.pi * 0.45, math.pi * 0.1)],
}

_SYMBOL_STROKES: dict[str, list[list[tuple[float, float]]]] = {
    "+": [[(0.50, 0.22), (0.50, 0.78)], [(0.22, 0.50), (0.78, 0.50)]],
    "−": [[(0.18, 0.50), (0.82, 0.50)]],
    "=": [[(0.18, 0.38), (0.82, 0.38)], [(0.18, 0.62), (0.82, 0.62)]],
    "[": [[(0.62, 0.08), (0.40, 0.08), (0.40, 0.92), (0.62, 0.92)]],
    "]": [[(0.38, 0.08), (0.60, 0.08), (0.60, 0.92), (0.38, 0.92)]],
    "×": [[(0.26, 0.26), (0.74, 0.74)], [(0.74, 0.26), (0.26, 0.74)]],
}

GLYPH_STROKES: dict[str, list[list[tuple[float, float]]]] = {**_DIGIT_STROKES, **_SYMBOL_STROKES}


def rasterize_glyph(glyph: str, size: int = SPRITE_SIZE, pen: float = 0.085,
                    jitter: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Rasterize a glyph skeleton to a grayscale sprite (dark ink on white).

    `jitter` perturbs stroke control points (unit-square units) for variety;
    requires an rng when nonzero.
    """
    strokes = GLYPH_STROKES.get(glyph)
    if strokes is None:
        raise KeyError(f"no stroke skeleton for glyph {glyph!r}")
    if jitter > 0 and rng is None:
        raise ValueError("jitter requires an rng")

    pts_per_stroke = []
    for stroke in strokes:
        pts = np.asarray(stroke, dtype=np.float64)
        if jitter > 0:
            assert rng is not None
            pts = pts + rng.uniform(-jitter, jitter, size=pts.shape)
        pts_per_stroke.append(pts)

    width = pen
    if jitter > 0:
        assert rng is not None
        width = pen * float(rng.uniform(0.8, 1.25))

    grid = (np.arange(size, dtype=np.float64) + 0.5) / size
    px, py = np.meshgrid(grid, grid)
    dist = np.full((size, size), np.inf)

    for pts in pts_per_stroke:
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            seg_len_sq = dx * dx + dy * dy
            if seg_len_sq < 1e-12:
                d = np.hypot(px - x0, py - y0)
            else:
                t = np.clip(((px - x0) * dx + (py - y0) * dy) / seg_len_sq, 0.0, 1.0)
                d = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
            np.minimum(dist, d, out=dist)

    aa = 1.5 / size
    coverage = np.clip((width / 2 + aa / 2 - dist) / aa, 0.0, 1.0)
    return np.round(255.0 * (1.0 - coverage)).astype(np.uint8)


def builtin_atlas(variants: int = 3, seed: int = 0) -> SymbolAtlas:
    """Synthesize a complete atlas from the stroke skeletons.

    The first variant of each class is the clean skeleton; later variants get
    jittered control points and pen widths, deterministically from the seed.
    """
    rng = np.random.default_rng(seed)
    sprites: dict[int, list[np.ndarray]] = {}
    for class_id, glyph in sorted(CLASS_GLYPHS.items()):
        pool = [rasterize_glyph(glyph)]
        for _ in range(max(0, variants - 1)):
            pool.append(rasterize_glyph(glyph, jitter=0.02, rng=rng))
        sprites[class_id] = pool
    return SymbolAtlas(sprites=sprites).validate()
