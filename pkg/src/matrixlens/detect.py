"""Detection records, IoU-based dedup, per-detection masks, and pluggable
detectors (a ground-truth-perturbing oracle and a label-file reader) standing
in for a trained network.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .datagen import GenSample, parse_annotation


@dataclass(frozen=True)
class Detection:
    """One recognized box: center/extent plus category and confidence."""

    cx: float
    cy: float
    w: float
    h: float
    class_id: int
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"non-positive extent {self.w}x{self.h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not 0 <= self.class_id <= 15:
            raise ValueError(f"class id {self.class_id} outside 0..15")

    def rect(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) corners."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass
class DetectionSet:
    """Detections plus the frame they live in; unit is normalized or pixels."""

    detections: list[Detection]
    frame_size: tuple[int, int]  # (width, height)
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def to_pixels(self) -> "DetectionSet":
        if not self.normalized:
            return self
        w, h = self.frame_size
        dets = [replace(d, cx=d.cx * w, cy=d.cy * h, w=d.w * w, h=d.h * h)
                for d in self.detections]
        return DetectionSet(dets, self.frame_size, normalized=False)

    def to_normalized(self) -> "DetectionSet":
        if self.normalized:
            return self
        w, h = self.frame_size
        dets = [replace(d, cx=d.cx / w, cy=d.cy / h, w=d.w / w, h=d.h / h)
                for d in self.detections]
        return DetectionSet(dets, self.frame_size, normalized=True)


@dataclass
class MaskSet:
    """Filled-rectangle masks, one per detection, at frame resolution."""

    masks: list[np.ndarray]
    frame_size: tuple[int, int]


def _as_rect(box) -> tuple[float, float, float, float]:
    if isinstance(box, Detection):
        return box.rect()
    class_offset = 1 if len(box) == 5 else 0  # Box tuples carry a leading class id
    cx, cy, w, h = box[class_offset:class_offset + 4]
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def iou(a, b) -> float:
    """Intersection-over-union of two axis-aligned center/extent boxes."""
    ax0, ay0, ax1, ay1 = _as_rect(a)
    bx0, by0, bx1, by1 = _as_rect(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def dedup(dset: DetectionSet, tau: float = 0.5) -> DetectionSet:
    """Greedy keep-highest-confidence suppression of overlapping detections.

    A detection survives iff its IoU with every already-kept detection is
    below tau; confidence ties keep the earlier index. Output preserves the
    input order of the survivors.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    order = sorted(range(len(dset.detections)),
                   key=lambda i: -dset.detections[i].confidence)
    kept_idx: list[int] = []
    for i in order:
        d = dset.detections[i]
        if all(iou(d, dset.detections[j]) < tau for j in kept_idx):
            kept_idx.append(i)
    kept_idx.sort()
    return DetectionSet([dset.detections[i] for i in kept_idx],
                        dset.frame_size, dset.normalized)


def masks(dset: DetectionSet) -> MaskSet:
    """Filled rectangle per detection, clipped to the frame (pixel units)."""
    if dset.normalized:
        raise ValueError("masks need a pixel-unit detection set")
    w, h = dset.frame_size
    out: list[np.ndarray] = []
    for d in dset.detections:
        mask = np.zeros((h, w), dtype=bool)
        x0, y0, x1, y1 = d.rect()
        xi0, yi0 = max(0, int(round(x0))), max(0, int(round(y0)))
        xi1, yi1 = min(w, int(round(x1))), min(h, int(round(y1)))
        if xi0 < xi1 and yi0 < yi1:
            mask[yi0:yi1, xi0:xi1] = True
        out.append(mask)
    return MaskSet(out, dset.frame_size)


def oracle_detect(
    sample: GenSample,
    jitter_px: float = 0.0,
    dropout_p: float = 0.0,
    conf_model=None,
    rng: np.random.Generator | None = None,
) -> DetectionSet:
    """Ground-truth boxes perturbed into plausible detections (pixel units).

    Center and extent each get independent uniform jitter within
    [-jitter_px, jitter_px]; boxes drop independently with dropout_p. Default
    confidence is 1 minus the jitter magnitude over its maximum.
    """
    if jitter_px < 0:
        raise ValueError("jitter_px must be >= 0")
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError("dropout_p must lie in [0, 1)")
    if rng is None:
        rng = np.random.default_rng(0)

    h, w = sample.image.shape[:2]
    dets: list[Detection] = []
    for b in sample.boxes:
        if dropout_p > 0 and rng.random() < dropout_p:
            continue
        cx, cy = b.cx * w, b.cy * h
        bw, bh = b.w * w, b.h * h
        if jitter_px > 0:
            dxy = rng.uniform(-jitter_px, jitter_px, size=4)
        else:
            dxy = np.zeros(4)
        bw = max(1.0, bw + dxy[2])
        bh = max(1.0, bh + dxy[3])
        if conf_model is not None:
            conf = float(conf_model(dxy))
        elif jitter_px > 0:
            conf = 1.0 - float(np.linalg.norm(dxy)) / (2.0 * jitter_px)
        else:
            conf = 1.0
        dets.append(Detection(cx + dxy[0], cy + dxy[1], bw, bh, b.class_id,
                              min(1.0, max(0.0, conf))))
    return DetectionSet(dets, (w, h), normalized=False)


# ── Detector plug-in registry ───────────────────────────────────────────

def format_exchange(dset: DetectionSet) -> str:
    """Detection exchange lines: `class_id confidence cx cy w h`, normalized."""
    norm = dset.to_normalized() if not dset.normalized else dset
    lines = [f"{d.class_id} {d.confidence:.6f} {d.cx:.6f} {d.cy:.6f} {d.w:.6f} {d.h:.6f}"
             for d in norm.detections]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_exchange(text: str) -> list[Detection]:
    """Parse exchange lines; plain 5-field YOLO lines get confidence 1."""
    dets: list[Detection] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 5:
            cls, cx, cy, w, h = parts
            conf = 1.0
        elif len(parts) == 6:
            cls, conf_s, cx, cy, w, h = parts
            conf = float(conf_s)
        else:
            raise ValueError(f"malformed detection line: {line!r}")
        dets.append(Detection(float(cx), float(cy), float(w), float(h), int(cls), conf))
    return dets


class OracleDetector:
    """Built-in detector that perturbs ground truth from generated samples.

    Accepts a GenSample directly, or a dataset image path whose sibling
    labels/<split>/<stem>.txt file exists in the generator layout.
    """

    def __init__(self, jitter_px: float = 0.0, dropout_p: float = 0.0, seed: int = 0):
        self.jitter_px = jitter_px
        self.dropout_p = dropout_p
        self.seed = seed

    def detect(self, source) -> DetectionSet:
        if isinstance(source, GenSample):
            sample = source
        else:
            sample = _sample_from_dataset_image(Path(source))
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        return oracle_detect(sample, self.jitter_px, self.dropout_p, rng=rng)


class FileDetector:
    """Reads sibling label/exchange files as detections.

    Lookup is `<dir>/<image stem>.txt`; frame size comes from the image when
    given an existing image path, otherwise detections stay normalized.
    """

    def __init__(self, label_dir: str | Path):
        self.label_dir = Path(label_dir)
        if not self.label_dir.is_dir():
            raise ValueError(f"unknown detector label directory: {self.label_dir}")

    def detect(self, source) -> DetectionSet:
        src = Path(source)
        label_path = self.label_dir / f"{src.stem}.txt"
        if not label_path.is_file():
            raise FileNotFoundError(f"no label file for {src.stem!r} in {self.label_dir}")
        dets = parse_exchange(label_path.read_text())
        if src.is_file():
            with Image.open(src) as im:
                frame = im.size
            return DetectionSet(dets, frame, normalized=True).to_pixels()
        return DetectionSet(dets, (0, 0), normalized=True)


def _sample_from_dataset_image(img_path: Path) -> GenSample:
    """Rebuild a GenSample view (image + truth boxes) from the dataset layout."""
    label_path = img_path.parent.parent.parent / "labels" / img_path.parent.name / f"{img_path.stem}.txt"
    if not label_path.is_file():
        raise FileNotFoundError(f"oracle detector needs sibling labels for {img_path}")
    with Image.open(img_path) as im:
        image = np.asarray(im.convert("L"), dtype=np.uint8)
    boxes = parse_annotation(label_path.read_text())
    return GenSample(image=image, boxes=boxes, values=[], rows=0, cols=0)


def plug_detector(name: str, **params):
    """Resolve a detector handle by name: "oracle" or "file:<label dir>"."""
    if name == "oracle":
        return OracleDetector(**params)
    if name.startswith("file:"):
        return FileDetector(name[len("file:"):])
    raise ValueError(f"unknown detector {name!r}")
