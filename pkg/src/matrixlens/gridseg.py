"""Matrix structure reconstruction from detections: mask centroids, 1-D
density clustering per axis, split-line inference and validation, cell
assignment, and signed multi-digit assembly.
"""

from __future__ import annotations

import bisect
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .detect import Detection, DetectionSet, MaskSet, dedup, masks
from .matrix import MatrixValue
from .symbols import (
    CLASS_GLYPHS,
    EQUALS_CLASS,
    LEFT_BRACKET_CLASS,
    MINUS_CLASS,
    RIGHT_BRACKET_CLASS,
    TIMES_CLASS,
    is_digit_class,
)

log = logging.getLogger(__name__)

# Categories that never occupy a grid cell.
EXCLUDED_CLASSES = frozenset(
    {EQUALS_CLASS, LEFT_BRACKET_CLASS, RIGHT_BRACKET_CLASS, TIMES_CLASS}
)


class ReconstructionError(ValueError):
    """Grid-level reconstruction failure with the warnings gathered so far."""

    def __init__(self, message: str, warnings: list[str] | None = None):
        super().__init__(message)
        self.warnings = warnings or []


@dataclass(frozen=True)
class Centroid:
    """Image-moment centroid of one detection mask."""

    cx: float
    cy: float
    index: int  # source detection index


@dataclass
class ClusterParams:
    epsilon: float
    min_pts: int = 1

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass
class GridModel:
    """Validated split lines plus per-cell detection indices (sorted by cx)."""

    h_lines: list[float]
    v_lines: list[float]
    cells: list[list[list[int]]]
    warnings: list[str] = field(default_factory=list)

    @property
    def rows(self) -> int:
        return len(self.h_lines) + 1

    @property
    def cols(self) -> int:
        return len(self.v_lines) + 1


def centroids(mask_set: MaskSet) -> list[Centroid]:
    """Raw-moment centroids (M10/M00, M01/M00) of each mask; empty masks skipped."""
    out: list[Centroid] = []
    for i, mask in enumerate(mask_set.masks):
        m00 = int(mask.sum())
        if m00 == 0:
            log.warning("mask %d is empty, skipped", i)
            continue
        ys, xs = np.nonzero(mask)
        out.append(Centroid(float(xs.sum()) / m00, float(ys.sum()) / m00, i))
    return out


def cluster_axis(values: list[float], params: ClusterParams) -> list[float]:
    """1-D density clustering: split sorted values at gaps > epsilon.

    Cluster centers are member means; clusters with fewer than min_pts
    members are discarded. Returns sorted centers.
    """
    if not values:
        return []
    ordered = sorted(values)
    groups: list[list[float]] = [[ordered[0]]]
    for v in ordered[1:]:
        if v - groups[-1][-1] > params.epsilon:
            groups.append([v])
        else:
            groups[-1].append(v)
    return [sum(g) / len(g) for g in groups if len(g) >= params.min_pts]


def infer_axis_lines(centers: list[float], delta: float) -> list[float]:
    """Candidate split lines at midpoints of consecutive distinct centers.

    Candidates closer than delta are merged to their mean, so no two
    returned lines lie within delta of each other.
    """
    distinct = sorted(set(centers))
    lines = [(a + b) / 2.0 for a, b in zip(distinct[:-1], distinct[1:])]
    if not lines:
        return []
    merged: list[list[float]] = [[lines[0]]]
    for line in lines[1:]:
        if line - merged[-1][-1] < delta:
            merged[-1].append(line)
        else:
            merged.append([line])
    return [sum(g) / len(g) for g in merged]


def infer_lines(row_centers: list[float], col_centers: list[float],
                delta_h: float, delta_v: float) -> tuple[list[float], list[float]]:
    """Horizontal lines from row centers, vertical lines from column centers."""
    return infer_axis_lines(row_centers, delta_h), infer_axis_lines(col_centers, delta_v)


def validate_lines(lines: list[float], cents: list[Centroid], axis: str) -> list[float]:
    """Keep a line only if at least one centroid lies strictly on each side.

    Axis "h" checks centroid y against horizontal lines, "v" checks x.
    """
    if axis not in ("h", "v"):
        raise ValueError("axis must be 'h' or 'v'")
    coords = [c.cy if axis == "h" else c.cx for c in cents]
    kept = []
    for line in lines:
        if any(v < line for v in coords) and any(v > line for v in coords):
            kept.append(line)
    return kept


def _cell_index(coord: float, lines: list[float], lo: float, hi: float,
                warnings: list[str], axis: str) -> int:
    """Count of lines strictly below/left of coord; on-line coords go to the
    side whose cell center is nearer (tie: lower index, with a warning)."""
    idx = bisect.bisect_left(lines, coord)
    if idx < len(lines) and lines[idx] == coord:
        below = lines[idx - 1] if idx > 0 else lo
        above = lines[idx + 1] if idx + 1 < len(lines) else hi
        center_lower = (below + coord) / 2.0
        center_upper = (coord + above) / 2.0
        d_lower = abs(coord - center_lower)
        d_upper = abs(coord - center_upper)
        if d_upper < d_lower:
            return idx + 1
        if d_upper == d_lower:
            warnings.append(f"detection on {axis}-line at {coord:.2f}: tie, lower cell kept")
        return idx
    return idx


def assign_cells(dets: list[Detection], h_lines: list[float], v_lines: list[float],
                 det_indices: list[int] | None = None) -> GridModel:
    """Place each detection in the cell its center falls in.

    Row index counts horizontal lines above cy; column index counts vertical
    lines left of cx. Within a cell, tokens sort by cx ascending.
    """
    if det_indices is None:
        det_indices = list(range(len(dets)))
    h_sorted = sorted(h_lines)
    v_sorted = sorted(v_lines)
    n_rows = len(h_sorted) + 1
    n_cols = len(v_sorted) + 1
    warnings: list[str] = []

    ys = [d.cy for d in dets] or [0.0]
    xs = [d.cx for d in dets] or [0.0]
    y_lo, y_hi = min(ys), max(ys)
    x_lo, x_hi = min(xs), max(xs)

    cells: list[list[list[int]]] = [[[] for _ in range(n_cols)] for _ in range(n_rows)]
    for det, idx in zip(dets, det_indices):
        r = _cell_index(det.cy, h_sorted, y_lo, y_hi, warnings, "h")
        c = _cell_index(det.cx, v_sorted, x_lo, x_hi, warnings, "v")
        cells[r][c].append(idx)
    by_index = {idx: det for det, idx in zip(dets, det_indices)}
    for row in cells:
        for cell in row:
            cell.sort(key=lambda i: by_index[i].cx)
    return GridModel(h_lines=h_sorted, v_lines=v_sorted, cells=cells, warnings=warnings)


def assemble_matrix(grid: GridModel, dets_by_index: dict[int, Detection]) -> MatrixValue:
    """Concatenate each cell's glyphs into a signed decimal integer.

    A cell must hold digits with at most one leading minus; anything else is
    a malformed element.
    """
    rows: list[list[int]] = []
    for r, row in enumerate(grid.cells):
        out_row: list[int] = []
        for c, cell in enumerate(row):
            if not cell:
                raise ReconstructionError(f"missing element at ({r},{c})", grid.warnings)
            glyph_classes = [dets_by_index[i].class_id for i in cell]
            text = ""
            for pos, cls in enumerate(glyph_classes):
                if cls == MINUS_CLASS:
                    if pos != 0:
                        raise ReconstructionError(f"malformed element at ({r},{c})", grid.warnings)
                    text += "-"
                elif is_digit_class(cls):
                    text += CLASS_GLYPHS[cls]
                else:
                    raise ReconstructionError(f"malformed element at ({r},{c})", grid.warnings)
            if text in ("", "-"):
                raise ReconstructionError(f"malformed element at ({r},{c})", grid.warnings)
            out_row.append(int(text))
        rows.append(out_row)
    return MatrixValue.from_lists(rows)


@dataclass
class ReconstructionReport:
    """Full reconstruction output: value, structure, provenance, warnings."""

    matrix: MatrixValue
    grid: GridModel
    centroids: list[Centroid]
    epsilon_x: float
    epsilon_y: float
    warnings: list[str]

    def to_dict(self) -> dict:
        return {
            "rows": self.matrix.rows,
            "cols": self.matrix.cols,
            "values": self.matrix.to_lists(),
            "h_lines": self.grid.h_lines,
            "v_lines": self.grid.v_lines,
            "cells": self.grid.cells,
            "epsilon": {"x": self.epsilon_x, "y": self.epsilon_y},
            "warnings": self.warnings,
        }


def axis_epsilons(content: list[Detection]) -> tuple[float, float]:
    """Clustering radii derived from glyph extents.

    Horizontal: just over the widest glyph plus the small in-number gap, so
    digits of one number cluster while columns split. Vertical: half the
    tallest glyph, far above midline scatter and far below row pitch.
    """
    max_w = max(d.w for d in content)
    max_h = max(d.h for d in content)
    return max_w + 12.0, 0.5 * max_h + 6.0


def reconstruct(dset: DetectionSet, tau: float = 0.5) -> ReconstructionReport:
    """Detections to matrix: dedup, cluster, split, validate, assign, assemble."""
    pixel_set = dedup(dset.to_pixels(), tau=tau)
    if not pixel_set.detections:
        raise ReconstructionError("no detections to reconstruct")

    keep = [(i, d) for i, d in enumerate(pixel_set.detections)
            if d.class_id not in EXCLUDED_CLASSES]
    if not keep:
        raise ReconstructionError("no content detections (brackets/operators only)")
    indices = [i for i, _ in keep]
    content = [d for _, d in keep]

    content_set = DetectionSet(content, pixel_set.frame_size, normalized=False)
    cents = centroids(masks(content_set))
    # Centroid.index refers into `content`; remap to the deduped set.
    cents = [Centroid(c.cx, c.cy, indices[c.index]) for c in cents]

    eps_x, eps_y = axis_epsilons(content)
    row_centers = cluster_axis([c.cy for c in cents], ClusterParams(eps_y))
    col_centers = cluster_axis([c.cx for c in cents], ClusterParams(eps_x))
    h_cand, v_cand = infer_lines(row_centers, col_centers, eps_y / 2.0, eps_x / 2.0)
    h_lines = validate_lines(h_cand, cents, "h")
    v_lines = validate_lines(v_cand, cents, "v")

    grid = assign_cells(content, h_lines, v_lines, det_indices=indices)
    dets_by_index = dict(zip(indices, content))
    matrix = assemble_matrix(grid, dets_by_index)
    return ReconstructionReport(matrix=matrix, grid=grid, centroids=cents,
                                epsilon_x=eps_x, epsilon_y=eps_y,
                                warnings=list(grid.warnings))


def write_report(report: ReconstructionReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2))


def write_overlay(image: np.ndarray, report: ReconstructionReport, path: str | Path) -> None:
    """Debug overlay: split lines drawn over the source image."""
    if image.ndim == 2:
        canvas = np.stack([image] * 3, axis=2).astype(np.uint8)
    else:
        canvas = image[:, :, :3].astype(np.uint8).copy()
    h, w = canvas.shape[:2]
    for y in report.grid.h_lines:
        yi = min(max(int(round(y)), 0), h - 1)
        canvas[yi, :] = (220, 40, 40)
    for x in report.grid.v_lines:
        xi = min(max(int(round(x)), 0), w - 1)
        canvas[:, xi] = (40, 40, 220)
    Image.fromarray(canvas).save(path)
