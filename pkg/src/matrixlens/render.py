"""Deterministic frame rendering of calculation traces.

A FramePlan expands a verified trace into a fixed timeline of scenes
(reveal, per-step highlight, accumulate, result); each frame renders to a
standalone SVG that is byte-identical across runs. PNG mirrors (drawn from
the same scene model) support handing the sequence to an external video
encoder.
"""

from __future__ import annotations

import json
import os
import shutil
import subprocess
from dataclasses import asdict, dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from PIL import Image, ImageDraw

from .calctrace import CalcTrace, CellRef, fmt_value, verify_trace
from .matrix import MatrixValue

ENCODER_ENV = "MATRIXLENS_ENCODER"


@dataclass(frozen=True)
class Style:
    view_w: int = 1280
    view_h: int = 720
    cell_side: float = 80.0
    fps: int = 30
    reveal_seconds: float = 0.1
    step_seconds: float = 1.0
    accumulate_seconds: float = 1.5
    result_seconds: float = 1.0
    background: str = "#ffffff"
    square_fill: str = "#fdfdf8"
    square_stroke: str = "#30343a"
    highlight_fill: str = "#ffd54d"
    text_color: str = "#15181d"
    annotation_color: str = "#333a44"
    font_family: str = "monospace"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Style":
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "Style":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SquTexUnit:
    """One square-plus-text element: glyph centered in a square of `side`."""

    glyph: str
    x: float    # center, scene coordinates (y up)
    y: float
    side: float


@dataclass
class MatrixLayout:
    """Zero-spacing grid of units with a bracket pair spanning its height.

    Unit (r, c) center sits at origin + (c*side, -r*side) in scene
    coordinates; origin is the center of unit (0, 0).
    """

    glyphs: list[list[str]]
    brackets: tuple[str, str]
    origin: tuple[float, float]
    side: float

    @property
    def rows(self) -> int:
        return len(self.glyphs)

    @property
    def cols(self) -> int:
        return len(self.glyphs[0])

    @property
    def width(self) -> float:
        return self.cols * self.side

    @property
    def height(self) -> float:
        return self.rows * self.side

    def unit(self, r: int, c: int) -> SquTexUnit:
        ox, oy = self.origin
        return SquTexUnit(self.glyphs[r][c], ox + c * self.side, oy - r * self.side, self.side)

    def units(self) -> list[SquTexUnit]:
        return [self.unit(r, c) for r in range(self.rows) for c in range(self.cols)]


def layout(mv: MatrixValue, brackets: tuple[str, str] = ("[", "]"),
           side: float = 80.0, origin: tuple[float, float] = (0.0, 0.0)) -> MatrixLayout:
    """Grid of square+text units for a matrix, zero spacing on both axes."""
    glyphs = [[fmt_value(mv.at(r, c)) for c in range(mv.cols)] for r in range(mv.rows)]
    return MatrixLayout(glyphs=glyphs, brackets=brackets, origin=origin, side=side)


@dataclass(frozen=True)
class PlanScene:
    """What one phase shows: reveal counts, result cells, highlights, text."""

    a_units: int
    b_units: int
    result_cells: tuple[tuple[int, int], ...]
    highlights: tuple[CellRef, ...]
    annotation: str
    result_text: str | None = None


@dataclass
class PlanPhase:
    kind: str               # reveal | select | multiply | accumulate | emit-result | result
    step_index: int | None
    duration: float
    frame_start: int        # 1-based inclusive; empty phases have end < start
    frame_end: int
    scene: PlanScene


@dataclass
class FramePlan:
    fps: int
    style: Style
    trace: CalcTrace
    layouts: dict[str, MatrixLayout]          # roles "a", "b", "result"
    op_glyphs: list[tuple[str, float, float]]  # (glyph, x, y) scene coords
    det_result_pos: tuple[float, float] | None
    phases: list[PlanPhase]
    frame_count: int

    def phase_for_frame(self, index: int) -> PlanPhase:
        if not 1 <= index <= self.frame_count:
            raise IndexError(f"frame {index} outside 1..{self.frame_count}")
        for phase in self.phases:
            if phase.frame_start <= index <= phase.frame_end:
                return phase
        raise IndexError(f"frame {index} not covered by any phase")

    def to_dict(self) -> dict:
        return {
            "fps": self.fps,
            "frame_count": self.frame_count,
            "op": self.trace.op,
            "result": self.trace.result.to_lists()
                      if isinstance(self.trace.result, MatrixValue) else self.trace.result,
            "style": self.style.to_dict(),
            "phases": [
                {
                    "kind": p.kind,
                    "step": p.step_index,
                    "frames": [p.frame_start, p.frame_end],
                    "annotation": p.scene.annotation,
                    "highlights": [[c.role, c.row, c.col] for c in p.scene.highlights],
                }
                for p in self.phases
            ],
        }


def _phase_duration(style: Style, kind: str) -> float:
    if kind == "reveal":
        return style.reveal_seconds
    if kind == "accumulate":
        return style.accumulate_seconds
    if kind in ("emit-result", "result"):
        return style.result_seconds
    return style.step_seconds


def plan(trace: CalcTrace, style: Style | None = None, fps: int | None = None) -> FramePlan:
    """Expand a verified trace into the full frame timeline.

    Phases: operand reveal unit by unit, one phase per trace step with its
    cells highlighted and expression annotated, then a final result phase.
    """
    style = style or Style()
    fps = fps or style.fps
    report = verify_trace(trace)
    if not report.passed:
        raise ValueError("render requires verified trace")

    is_det = trace.op == "det"
    side = style.cell_side
    bracket_w = 0.45 * side
    gap = 0.75 * side

    blocks: list[tuple[str, float]] = [("a", trace.a.cols * side + 2 * bracket_w)]
    if trace.b is not None:
        op_glyph = "+" if trace.op == "add" else "×"
        blocks.append(("op", gap))
        blocks.append(("b", trace.b.cols * side + 2 * bracket_w))
    if isinstance(trace.result, MatrixValue):
        blocks.append(("eq", gap))
        blocks.append(("result", trace.result.cols * side + 2 * bracket_w))
    elif is_det:
        # The scalar slot shows "= value" itself, so no separate "=" glyph.
        blocks.append(("detval", 2.6 * side))

    total_w = sum(w for _, w in blocks)
    avail_w = style.view_w - 100.0
    if total_w > avail_w:
        shrink = avail_w / total_w
        side *= shrink
        bracket_w *= shrink
        gap *= shrink
        blocks = [(name, w * shrink) for name, w in blocks]
        total_w = sum(w for _, w in blocks)

    center_y = 70.0  # scene y of the matrices' vertical center (y up)
    layouts: dict[str, MatrixLayout] = {}
    op_glyphs: list[tuple[str, float, float]] = []
    det_result_pos: tuple[float, float] | None = None

    x = -total_w / 2.0
    for name, w in blocks:
        if name in ("a", "b", "result"):
            mv = {"a": trace.a, "b": trace.b, "result": trace.result}[name]
            assert isinstance(mv, MatrixValue)
            brackets = ("|", "|") if is_det else ("[", "]")
            origin_x = x + bracket_w + side / 2.0
            origin_y = center_y + (mv.rows - 1) * side / 2.0
            layouts[name] = layout(mv, brackets, side, (origin_x, origin_y))
        elif name == "op":
            op_glyphs.append((op_glyph, x + w / 2.0, center_y))
        elif name == "eq":
            op_glyphs.append(("=", x + w / 2.0, center_y))
        elif name == "detval":
            det_result_pos = (x + w / 2.0, center_y)
        x += w

    a_total = trace.a.rows * trace.a.cols
    b_total = trace.b.rows * trace.b.cols if trace.b is not None else 0

    phases: list[PlanPhase] = []

    def scene(**kwargs) -> PlanScene:
        base = dict(a_units=a_total, b_units=b_total, result_cells=(),
                    highlights=(), annotation="", result_text=None)
        base.update(kwargs)
        return PlanScene(**base)

    for u in range(1, a_total + 1):
        phases.append(PlanPhase("reveal", None, style.reveal_seconds, 0, 0,
                                scene(a_units=u, b_units=0)))
    for u in range(1, b_total + 1):
        phases.append(PlanPhase("reveal", None, style.reveal_seconds, 0, 0,
                                scene(b_units=u)))

    emitted: list[tuple[int, int]] = []
    for i, step in enumerate(trace.steps):
        result_refs = [c for c in step.cells if c.role == "result"]
        if step.kind in ("emit-result", "accumulate"):
            for ref in result_refs:
                if (ref.row, ref.col) not in emitted:
                    emitted.append((ref.row, ref.col))
        result_text = None
        if is_det and step.kind in ("accumulate", "emit-result"):
            result_text = f"= {fmt_value(int(step.value))}" if step.value is not None else None
        phases.append(PlanPhase(
            step.kind, i, _phase_duration(style, step.kind), 0, 0,
            scene(result_cells=tuple(emitted), highlights=tuple(step.cells),
                  annotation=step.expression, result_text=result_text),
        ))

    all_cells = tuple((r, c) for r in range(trace.result.rows) for c in range(trace.result.cols)) \
        if isinstance(trace.result, MatrixValue) else ()
    final_text = f"= {fmt_value(int(trace.result))}" if is_det else None
    phases.append(PlanPhase("result", None, style.result_seconds, 0, 0,
                            scene(result_cells=all_cells, result_text=final_text)))

    start = 1
    for phase in phases:
        n = int(round(phase.duration * fps))
        phase.frame_start = start
        phase.frame_end = start + n - 1
        start += n
    frame_count = start - 1

    return FramePlan(fps=fps, style=style, trace=trace, layouts=layouts,
                     op_glyphs=op_glyphs, det_result_pos=det_result_pos,
                     phases=phases, frame_count=frame_count)


# ── SVG output ──────────────────────────────────────────────────────────

def _f(v: float) -> str:
    return f"{v:.2f}"


def _bracket_path(glyph: str, x: float, top: float, bottom: float, w: float) -> str:
    if glyph == "|":
        return f"M {_f(x)} {_f(top)} L {_f(x)} {_f(bottom)}"
    if glyph == "[":
        return (f"M {_f(x + w)} {_f(top)} L {_f(x)} {_f(top)} "
                f"L {_f(x)} {_f(bottom)} L {_f(x + w)} {_f(bottom)}")
    if glyph == "]":
        return (f"M {_f(x - w)} {_f(top)} L {_f(x)} {_f(top)} "
                f"L {_f(x)} {_f(bottom)} L {_f(x - w)} {_f(bottom)}")
    if glyph == "(":
        mid = (top + bottom) / 2.0
        return (f"M {_f(x + w)} {_f(top)} Q {_f(x - w)} {_f(mid)} "
                f"{_f(x + w)} {_f(bottom)}")
    if glyph == ")":
        mid = (top + bottom) / 2.0
        return (f"M {_f(x - w)} {_f(top)} Q {_f(x + w)} {_f(mid)} "
                f"{_f(x - w)} {_f(bottom)}")
    raise ValueError(f"unsupported bracket glyph {glyph!r}")


def render_frame(fplan: FramePlan, index: int) -> str:
    """Standalone SVG for 1-based frame `index`; byte-deterministic."""
    phase = fplan.phase_for_frame(index)
    sc = phase.scene
    style = fplan.style
    vw, vh = style.view_w, style.view_h

    def to_px(x: float, y: float) -> tuple[float, float]:
        return vw / 2.0 + x, vh / 2.0 - y

    parts: list[str] = []
    parts.append('<?xml version="1.0" encoding="UTF-8"?>')
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{vw}" height="{vh}" '
        f'viewBox="0 0 {vw} {vh}">'
    )
    parts.append(f'<rect x="0" y="0" width="{vw}" height="{vh}" fill="{style.background}"/>')

    highlight_set = {(c.role, c.row, c.col) for c in sc.highlights}

    def emit_unit(role: str, lay: MatrixLayout, r: int, c: int) -> None:
        unit = lay.unit(r, c)
        px, py = to_px(unit.x, unit.y)
        half = unit.side / 2.0
        fill = style.highlight_fill if (role, r, c) in highlight_set else style.square_fill
        parts.append(
            f'<rect x="{_f(px - half)}" y="{_f(py - half)}" width="{_f(unit.side)}" '
            f'height="{_f(unit.side)}" fill="{fill}" stroke="{style.square_stroke}" '
            f'stroke-width="1.50"/>'
        )
        parts.append(
            f'<text x="{_f(px)}" y="{_f(py)}" font-family="{style.font_family}" '
            f'font-size="{_f(unit.side * 0.42)}" fill="{style.text_color}" '
            f'text-anchor="middle" dominant-baseline="central">{escape(unit.glyph)}</text>'
        )

    def emit_brackets(lay: MatrixLayout) -> None:
        ox, oy = lay.origin
        top_y = oy + lay.side / 2.0 + 0.08 * lay.side
        bot_y = oy - (lay.rows - 1) * lay.side - lay.side / 2.0 - 0.08 * lay.side
        lx = ox - lay.side / 2.0 - 0.28 * lay.side
        rx = ox + (lay.cols - 1) * lay.side + lay.side / 2.0 + 0.28 * lay.side
        w = 0.22 * lay.side
        for glyph, x in ((lay.brackets[0], lx), (lay.brackets[1], rx)):
            px_top = to_px(x, top_y)
            px_bot = to_px(x, bot_y)
            path = _bracket_path(glyph, px_top[0], px_top[1], px_bot[1], w)
            parts.append(
                f'<path d="{path}" fill="none" stroke="{style.square_stroke}" '
                f'stroke-width="2.20"/>'
            )

    reveal_counts = {"a": sc.a_units, "b": sc.b_units}
    for role in ("a", "b"):
        lay = fplan.layouts.get(role)
        if lay is None or reveal_counts[role] == 0:
            continue
        parts.append(f'<g id="{role}">')
        emit_brackets(lay)
        shown = 0
        for r in range(lay.rows):
            for c in range(lay.cols):
                if shown >= reveal_counts[role]:
                    break
                emit_unit(role, lay, r, c)
                shown += 1
        parts.append("</g>")

    result_lay = fplan.layouts.get("result")
    if result_lay is not None and sc.result_cells:
        parts.append('<g id="result">')
        emit_brackets(result_lay)
        for r, c in sc.result_cells:
            emit_unit("result", result_lay, r, c)
        parts.append("</g>")

    ops_visible = sc.a_units >= (fplan.layouts["a"].rows * fplan.layouts["a"].cols)
    if ops_visible:
        for glyph, x, y in fplan.op_glyphs:
            px, py = to_px(x, y)
            parts.append(
                f'<text x="{_f(px)}" y="{_f(py)}" font-family="{style.font_family}" '
                f'font-size="{_f(fplan.style.cell_side * 0.5)}" fill="{style.text_color}" '
                f'text-anchor="middle" dominant-baseline="central">{escape(glyph)}</text>'
            )

    if sc.result_text is not None and fplan.det_result_pos is not None:
        px, py = to_px(*fplan.det_result_pos)
        parts.append(
            f'<text x="{_f(px)}" y="{_f(py)}" font-family="{style.font_family}" '
            f'font-size="{_f(fplan.style.cell_side * 0.5)}" fill="{style.text_color}" '
            f'text-anchor="middle" dominant-baseline="central">{escape(sc.result_text)}</text>'
        )

    if sc.annotation:
        parts.append(
            f'<text x="{_f(vw / 2.0)}" y="{_f(vh - 90.0)}" font-family="{style.font_family}" '
            f'font-size="30.00" fill="{style.annotation_color}" text-anchor="middle" '
            f'dominant-baseline="central">{escape(sc.annotation)}</text>'
        )

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_frame_png(fplan: FramePlan, index: int) -> Image.Image:
    """Raster mirror of a frame drawn from the same scene model (for encoders)."""
    phase = fplan.phase_for_frame(index)
    sc = phase.scene
    style = fplan.style
    vw, vh = style.view_w, style.view_h
    img = Image.new("RGB", (vw, vh), style.background)
    draw = ImageDraw.Draw(img)

    def to_px(x: float, y: float) -> tuple[float, float]:
        return vw / 2.0 + x, vh / 2.0 - y

    highlight_set = {(c.role, c.row, c.col) for c in sc.highlights}

    def draw_unit(role: str, lay: MatrixLayout, r: int, c: int) -> None:
        unit = lay.unit(r, c)
        px, py = to_px(unit.x, unit.y)
        half = unit.side / 2.0
        fill = style.highlight_fill if (role, r, c) in highlight_set else style.square_fill
        draw.rectangle([px - half, py - half, px + half, py + half],
                       fill=fill, outline=style.square_stroke, width=2)
        draw.text((px, py), unit.glyph, fill=style.text_color, anchor="mm")

    def draw_brackets(lay: MatrixLayout) -> None:
        ox, oy = lay.origin
        top_y = oy + lay.side / 2.0
        bot_y = oy - (lay.rows - 1) * lay.side - lay.side / 2.0
        lx = ox - lay.side / 2.0 - 0.28 * lay.side
        rx = ox + (lay.cols - 1) * lay.side + lay.side / 2.0 + 0.28 * lay.side
        for x in (lx, rx):
            x0, y0 = to_px(x, top_y)
            x1, y1 = to_px(x, bot_y)
            draw.line([x0, y0, x1, y1], fill=style.square_stroke, width=2)

    reveal_counts = {"a": sc.a_units, "b": sc.b_units}
    for role in ("a", "b"):
        lay = fplan.layouts.get(role)
        if lay is None or reveal_counts[role] == 0:
            continue
        draw_brackets(lay)
        shown = 0
        for r in range(lay.rows):
            for c in range(lay.cols):
                if shown >= reveal_counts[role]:
                    break
                draw_unit(role, lay, r, c)
                shown += 1

    result_lay = fplan.layouts.get("result")
    if result_lay is not None and sc.result_cells:
        draw_brackets(result_lay)
        for r, c in sc.result_cells:
            draw_unit("result", result_lay, r, c)

    for glyph, x, y in fplan.op_glyphs:
        px, py = to_px(x, y)
        draw.text((px, py), glyph, fill=style.text_color, anchor="mm")

    if sc.result_text is not None and fplan.det_result_pos is not None:
        px, py = to_px(*fplan.det_result_pos)
        draw.text((px, py), sc.result_text, fill=style.text_color, anchor="mm")

    if sc.annotation:
        draw.text((vw / 2.0, vh - 90.0), sc.annotation,
                  fill=style.annotation_color, anchor="mm")
    return img


def render_sequence(fplan: FramePlan, out: str | Path, png: bool = False) -> dict:
    """Write frame_000001.svg.. plus plan.json; optional PNG mirrors."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(1, fplan.frame_count + 1):
        (out_dir / f"frame_{i:06d}.svg").write_text(render_frame(fplan, i))
        if png:
            render_frame_png(fplan, i).save(out_dir / f"frame_{i:06d}.png")
    (out_dir / "plan.json").write_text(json.dumps(fplan.to_dict(), ensure_ascii=False, indent=2))
    return {
        "dir": str(out_dir),
        "frame_count": fplan.frame_count,
        "fps": fplan.fps,
        "svg_pattern": "frame_%06d.svg",
        "png": png,
        "png_pattern": "frame_%06d.png" if png else None,
    }


def resolve_encoder(encoder: str | None = None) -> str | None:
    """Configured encoder binary, if present on PATH."""
    name = encoder or os.environ.get(ENCODER_ENV) or "ffmpeg"
    return shutil.which(name)


def encode(manifest: dict, encoder: str | None = None,
           out_name: str = "video.mp4") -> dict:
    """Hand the rendered PNG frames to the external encoder.

    Missing encoder degrades to a frames-only report; encoder failures raise
    with the captured diagnostics.
    """
    binary = resolve_encoder(encoder)
    if binary is None:
        return {"status": "encoder unavailable", "video": None}
    if not manifest.get("png"):
        return {"status": "no raster frames (render with png=True)", "video": None}

    frames_dir = Path(manifest["dir"])
    out_path = frames_dir / out_name
    cmd = [binary, "-y", "-framerate", str(manifest["fps"]),
           "-i", str(frames_dir / manifest["png_pattern"]),
           "-pix_fmt", "yuv420p", str(out_path)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"encoder exited {proc.returncode}: {proc.stderr.strip()[-2000:]}"
        )
    return {"status": "ok", "video": str(out_path)}
