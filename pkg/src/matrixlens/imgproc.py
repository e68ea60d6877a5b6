"""Photo preprocessing: grayscale, blur, adaptive threshold, opening, corner
detection, and region-of-interest extraction.

Images are numpy uint8 arrays. Border policy is edge replication throughout.
Binarized images store ink as 0 on a 255 background; the morphology helpers
therefore operate on boolean ink masks (True = ink), where erosion shrinks
the ink region.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass
class CornerSet:
    """Detected corners, strongest first; scores are min-eigenvalue responses."""

    points: list[tuple[int, int]]  # (x, y)
    scores: list[float]

    def __len__(self) -> int:
        return len(self.points)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luminance grayscale (0.299 R + 0.587 G + 0.114 B), rounded to uint8."""
    if image.size == 0:
        raise ValueError("zero-size image")
    if image.ndim == 2:
        return image.astype(np.uint8, copy=True)
    if image.ndim != 3:
        raise ValueError(f"unsupported image shape {image.shape}")
    channels = image.shape[2]
    if channels == 1:
        return image[:, :, 0].astype(np.uint8, copy=True)
    if channels == 2:  # luminance + alpha
        return image[:, :, 0].astype(np.uint8, copy=True)
    if channels in (3, 4):
        rgb = image[:, :, :3].astype(np.float64)
        gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
        return np.round(gray).astype(np.uint8)
    raise ValueError(f"unsupported channel count {channels}")


def auto_sigma(size: int) -> float:
    """Default Gaussian sigma for a given odd kernel size."""
    return 0.3 * ((size - 1) * 0.5 - 1.0) + 0.8


def gaussian_kernel(size: int = 5, sigma: float | None = None) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (weights sum to 1)."""
    if size < 3 or size % 2 == 0:
        raise ValueError("kernel size must be odd and >= 3")
    s = auto_sigma(size) if sigma is None else float(sigma)
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * s * s))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def gaussian_blur(img: np.ndarray, size: int = 5, sigma: float | None = None) -> np.ndarray:
    """Convolve with a normalized Gaussian; edge replication at borders."""
    kernel = gaussian_kernel(size, sigma)
    out = ndimage.convolve(img.astype(np.float64), kernel, mode="nearest")
    return np.round(out).astype(np.uint8)


def adaptive_threshold(img: np.ndarray, block_size: int = 11, offset: float = 2.0,
                       weighted: bool = True) -> np.ndarray:
    """Binarize against a local mean: ink (0) where I < T_local - offset, else 255.

    T_local is a Gaussian-weighted neighborhood mean over block_size by
    default; `weighted=False` switches to the plain box mean.
    """
    if block_size < 3 or block_size % 2 == 0:
        raise ValueError("block_size must be odd and >= 3")
    src = img.astype(np.float64)
    if weighted:
        local = ndimage.convolve(src, gaussian_kernel(block_size), mode="nearest")
    else:
        local = ndimage.uniform_filter(src, size=block_size, mode="nearest")
    out = np.where(src < local - offset, 0, 255).astype(np.uint8)
    return out


def ink_mask(binary: np.ndarray) -> np.ndarray:
    """Boolean ink mask (True where ink) from a 0/255 binarized image."""
    return np.asarray(binary) == 0


def erode(mask: np.ndarray, elem: np.ndarray) -> np.ndarray:
    """Shrink the True region by the structuring element (edge replication)."""
    return ndimage.minimum_filter(mask, footprint=np.asarray(elem, bool), mode="nearest")


def dilate(mask: np.ndarray, elem: np.ndarray) -> np.ndarray:
    """Grow the True region by the structuring element (edge replication)."""
    return ndimage.maximum_filter(mask, footprint=np.asarray(elem, bool), mode="nearest")


def open_mask(mask: np.ndarray, elem: np.ndarray) -> np.ndarray:
    """Erosion followed by dilation; removes specks smaller than the element."""
    return dilate(erode(mask, elem), elem)


def morph_open(binary: np.ndarray, elem: np.ndarray | None = None) -> np.ndarray:
    """Morphological opening of a 0/255 binarized image's ink region."""
    if elem is None:
        elem = np.ones((3, 3), dtype=bool)
    opened = open_mask(ink_mask(binary), elem)
    return np.where(opened, 0, 255).astype(np.uint8)


def shi_tomasi(img: np.ndarray, max_corners: int = 100, quality: float = 0.01,
               min_dist: float = 10.0) -> CornerSet:
    """Min-eigenvalue corner detector with greedy distance suppression.

    Sobel 3x3 gradients, 3x3 box-summed structure matrix, local maxima above
    quality * max_score, pairwise distance >= min_dist, at most max_corners.
    """
    src = img.astype(np.float64)
    ix = ndimage.sobel(src, axis=1, mode="nearest")
    iy = ndimage.sobel(src, axis=0, mode="nearest")
    window = np.ones((3, 3), dtype=np.float64)
    sxx = ndimage.convolve(ix * ix, window, mode="nearest")
    syy = ndimage.convolve(iy * iy, window, mode="nearest")
    sxy = ndimage.convolve(ix * iy, window, mode="nearest")

    half_trace = 0.5 * (sxx + syy)
    root = np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy ** 2)
    score = np.maximum(half_trace - root, 0.0)

    max_score = float(score.max())
    if max_score <= 0.0:
        return CornerSet(points=[], scores=[])

    local_max = score >= ndimage.maximum_filter(score, size=3, mode="nearest")
    candidates = np.argwhere(local_max & (score >= quality * max_score))
    # Deterministic order: strongest first, ties broken by position.
    order = sorted(candidates.tolist(), key=lambda p: (-score[p[0], p[1]], p[0], p[1]))

    kept: list[tuple[int, int]] = []
    kept_scores: list[float] = []
    min_dist_sq = float(min_dist) ** 2
    for y, x in order:
        if len(kept) >= max_corners:
            break
        if all((x - kx) ** 2 + (y - ky) ** 2 >= min_dist_sq for kx, ky in kept):
            kept.append((int(x), int(y)))
            kept_scores.append(float(score[y, x]))
    return CornerSet(points=kept, scores=kept_scores)


def roi_from_corners(corners: CornerSet, image: np.ndarray,
                     margin: int = 10) -> tuple[tuple[int, int, int, int], np.ndarray]:
    """Axis-aligned crop spanning all corners plus a margin, clamped to bounds.

    Returns ((x0, y0, x1, y1), crop-of-`image`), half-open coordinates.
    """
    if len(corners) == 0:
        raise ValueError("no content found")
    h, w = image.shape[:2]
    xs = [p[0] for p in corners.points]
    ys = [p[1] for p in corners.points]
    x0 = max(0, min(xs) - margin)
    y0 = max(0, min(ys) - margin)
    x1 = min(w, max(xs) + margin)
    y1 = min(h, max(ys) + margin)
    return (x0, y0, x1, y1), image[y0:y1, x0:x1].copy()


@dataclass
class PreprocessResult:
    gray: np.ndarray
    blurred: np.ndarray
    binary: np.ndarray
    opened: np.ndarray
    corners: CornerSet
    rect: tuple[int, int, int, int]
    roi: np.ndarray


def preprocess(image: np.ndarray, blur_size: int = 5, block_size: int = 11,
               offset: float = 2.0, max_corners: int = 100, quality: float = 0.01,
               min_dist: float = 10.0, margin: int = 10,
               dump_dir: str | Path | None = None) -> PreprocessResult:
    """Full capture-to-ROI pipeline; optionally dumps stage images for debugging."""
    gray = to_gray(image)
    blurred = gaussian_blur(gray, size=blur_size)
    binary = adaptive_threshold(blurred, block_size=block_size, offset=offset)
    opened = morph_open(binary)
    corners = shi_tomasi(opened, max_corners=max_corners, quality=quality, min_dist=min_dist)
    rect, roi = roi_from_corners(corners, image, margin=margin)
    result = PreprocessResult(gray, blurred, binary, opened, corners, rect, roi)
    if dump_dir is not None:
        _dump_stages(result, Path(dump_dir))
    return result


def _dump_stages(result: PreprocessResult, dump_dir: Path) -> None:
    dump_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(result.gray).save(dump_dir / "gray.png")
    Image.fromarray(result.blurred).save(dump_dir / "blur.png")
    Image.fromarray(result.binary).save(dump_dir / "thresh.png")
    Image.fromarray(result.opened).save(dump_dir / "open.png")

    overlay = np.stack([result.gray] * 3, axis=2)
    for x, y in result.corners.points:
        y0, y1 = max(0, y - 2), min(overlay.shape[0], y + 3)
        x0, x1 = max(0, x - 2), min(overlay.shape[1], x + 3)
        overlay[y0:y1, x0:x1] = (255, 0, 0)
    Image.fromarray(overlay).save(dump_dir / "corners-overlay.png")

    Image.fromarray(result.roi).save(dump_dir / "roi.png")
