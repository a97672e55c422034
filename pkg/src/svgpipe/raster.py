"""Deterministic CPU rasterizer for the supported SVG subset.

Rendering contract:
  - viewBox maps to a square raster, aspect preserved, centered, white letterbox
  - coverage antialiasing on a 4x4 subsample grid per pixel, box filtered
  - curves flattened to 0.25 device pixel tolerance
  - paint servers are sampled at output pixel centers
  - the framebuffer is quantized to uint8 after every primitive, so painting
    step n onto the rendering of steps 1..n-1 is bit-identical to rendering
    steps 1..n from scratch

All geometry work happens in numpy. No global state; repeated calls with the
same document yield identical bytes.
"""

from __future__ import annotations

import copy
import io
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from . import core, geometry
from .core import (
    ClipPathDef,
    Color,
    Gradient,
    GradientRef,
    SvgDocument,
    SvgNode,
    _StyleContext,
    resolve_styles,
)
from .errors import (
    CyclicReference,
    DanglingReference,
    DegenerateViewBox,
    DimensionMismatch,
    LocalityViolation,
    UnsupportedFeature,
)
from .geometry import Affine, affine_apply, affine_invert, affine_multiply

SUPERSAMPLE = 4
FLATTEN_TOL = 0.25          # device pixels
MAX_USE_DEPTH = 8


# ---------------------------------------------------------------------------
# Paint plan: the document flattened to an ordered list of leaf paints
# ---------------------------------------------------------------------------

@dataclass
class _Poly:
    points: np.ndarray        # (N, 2) float64, subsample-grid coordinates
    closed: bool


@dataclass
class _PaintOp:
    polys: list               # _Poly list forming the area to fill
    rule: str                 # "nonzero" | "evenodd"
    alpha: float              # style opacity already folded in
    color: Optional[tuple]    # (r, g, b) floats in [0,1] for solid paint
    gradient: Optional[Gradient] = None
    grad_to_dev: Optional[Affine] = None   # gradient space -> device pixels
    clips: Optional[list] = None           # list of (polys, rule) to AND


@dataclass
class LeafPaint:
    """All painting for one primitive: optional fill then optional stroke."""
    ops: list


def _device_transform(view_box: tuple, size: int) -> Affine:
    vx, vy, vw, vh = view_box
    if vw <= 0 or vh <= 0:
        raise DegenerateViewBox(f"viewBox {view_box} has no area")
    s = size / max(vw, vh)
    ox = (size - vw * s) / 2.0
    oy = (size - vh * s) / 2.0
    return (s, 0.0, 0.0, s, ox - vx * s, oy - vy * s)


def _leaf_subpaths(node: SvgNode) -> list:
    """Untransformed outline of a leaf as [(points, closed)] in user space."""
    kind = node.kind
    geom = node.geometry
    if kind == "path":
        return geometry.flatten_segments(geom["segments"], tolerance=0.25)
    if kind == "rect":
        w, h = geom["width"], geom["height"]
        if w <= 0 or h <= 0:
            return []
        rx, ry = geom.get("rx"), geom.get("ry")
        if rx is None and ry is None:
            x, y = geom["x"], geom["y"]
            return [([(x, y), (x + w, y), (x + w, y + h), (x, y + h)], True)]
        segs = geometry.rounded_rect_to_segments(geom["x"], geom["y"], w, h, rx, ry)
        return geometry.flatten_segments(segs, tolerance=0.25)
    if kind == "circle":
        if geom["r"] <= 0:
            return []
        segs = geometry.ellipse_to_segments(geom["cx"], geom["cy"], geom["r"], geom["r"])
        return geometry.flatten_segments(segs, tolerance=0.25)
    if kind == "ellipse":
        if geom["rx"] <= 0 or geom["ry"] <= 0:
            return []
        segs = geometry.ellipse_to_segments(geom["cx"], geom["cy"], geom["rx"], geom["ry"])
        return geometry.flatten_segments(segs, tolerance=0.25)
    if kind == "line":
        return [([(geom["x1"], geom["y1"]), (geom["x2"], geom["y2"])], False)]
    if kind == "polyline":
        return [(list(geom["points"]), False)]
    if kind == "polygon":
        return [(list(geom["points"]), True)]
    return []


def _flatten_leaf(node: SvgNode, ctm: Affine, tol: float) -> list:
    """Leaf outline flattened in device space at the given tolerance."""
    kind = node.kind
    geom = node.geometry
    if kind == "path":
        segs = geometry.transform_segments(geom["segments"], ctm)
        return geometry.flatten_segments(segs, tolerance=tol)
    if kind in ("rect", "circle", "ellipse"):
        if kind == "rect":
            w, h = geom["width"], geom["height"]
            if w <= 0 or h <= 0:
                return []
            rx, ry = geom.get("rx"), geom.get("ry")
            if rx is None and ry is None:
                x, y = geom["x"], geom["y"]
                pts = [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]
                return [([affine_apply(ctm, px, py) for px, py in pts], True)]
            segs = geometry.rounded_rect_to_segments(geom["x"], geom["y"], w, h, rx, ry)
        elif kind == "circle":
            if geom["r"] <= 0:
                return []
            segs = geometry.ellipse_to_segments(geom["cx"], geom["cy"],
                                                geom["r"], geom["r"])
        else:
            if geom["rx"] <= 0 or geom["ry"] <= 0:
                return []
            segs = geometry.ellipse_to_segments(geom["cx"], geom["cy"],
                                                geom["rx"], geom["ry"])
        segs = geometry.transform_segments(segs, ctm)
        return geometry.flatten_segments(segs, tolerance=tol)
    # Straight-line kinds transform point by point.
    out = []
    for pts, closed in _leaf_subpaths(node):
        out.append(([affine_apply(ctm, px, py) for px, py in pts], closed))
    return out


def _to_polys(subpaths: list) -> list:
    polys = []
    for pts, closed in subpaths:
        arr = np.asarray(pts, dtype=np.float64)
        if arr.ndim != 2 or len(arr) < 2:
            continue
        polys.append(_Poly(points=arr, closed=closed))
    return polys


def _stroke_polys(subpaths: list, width: float, linecap: str) -> list:
    """Expand polylines into quads plus round-join disks, all closed."""
    half = width / 2.0
    if half <= 0:
        return []
    polys = []

    def disk(center, radius):
        n = int(min(64, max(12, radius * 2.0)))
        ang = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        # Wind the same way as the segment quads so the nonzero rule unions
        # them instead of cancelling where cap and quad overlap.
        pts = np.stack([center[0] + radius * np.cos(ang),
                        center[1] - radius * np.sin(ang)], axis=1)
        polys.append(_Poly(points=pts, closed=True))

    for pts, closed in subpaths:
        arr = np.asarray(pts, dtype=np.float64)
        if len(arr) < 2:
            continue
        if closed and not np.array_equal(arr[0], arr[-1]):
            arr = np.vstack([arr, arr[:1]])
        seg_start = arr[:-1]
        seg_end = arr[1:]
        delta = seg_end - seg_start
        length = np.hypot(delta[:, 0], delta[:, 1])
        keep = length > 1e-12
        seg_start, seg_end = seg_start[keep], seg_end[keep]
        delta, length = delta[keep], length[keep]
        if len(seg_start) == 0:
            continue
        tangent = delta / length[:, None]
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1) * half
        ext = np.zeros_like(tangent)
        if not closed and linecap == "square":
            ext = tangent * half
        for i in range(len(seg_start)):
            p0, p1 = seg_start[i].copy(), seg_end[i].copy()
            if not closed and linecap == "square":
                if i == 0:
                    p0 = p0 - ext[i]
                if i == len(seg_start) - 1:
                    p1 = p1 + ext[i]
            n = normal[i]
            quad = np.array([p0 + n, p1 + n, p1 - n, p0 - n])
            polys.append(_Poly(points=quad, closed=True))
        # Round joins at interior vertices; closed paths join at every vertex.
        joints = seg_end[:-1] if not closed else np.vstack([seg_end[:-1], seg_end[-1:]])
        for j in joints:
            disk(j, half)
        if not closed and linecap == "round":
            disk(seg_start[0], half)
            disk(seg_end[-1], half)
    return polys


def _node_bbox_user(node: SvgNode) -> Optional[tuple]:
    pts = []
    for sub, _closed in _leaf_subpaths(node):
        pts.extend(sub)
    if not pts:
        return None
    arr = np.asarray(pts, dtype=np.float64)
    x0, y0 = arr.min(axis=0)
    x1, y1 = arr.max(axis=0)
    return (float(x0), float(y0), float(x1), float(y1))


class _PaintPlanner:
    def __init__(self, doc: SvgDocument, size: int):
        self.doc = doc
        self.size = size
        self.ss = SUPERSAMPLE
        self.dev = _device_transform(doc.view_box, size)
        # Work directly in subsample coordinates.
        s = float(self.ss)
        self.dev_ss = affine_multiply((s, 0.0, 0.0, s, 0.0, 0.0), self.dev)
        self.tol = FLATTEN_TOL * self.ss
        self.leaves: list = []

    def _clip_polys(self, clip_ref: str, ctm: Affine,
                    bbox_node: Optional[SvgNode]) -> tuple:
        entry = self.doc.defs.get(clip_ref)
        if not isinstance(entry, ClipPathDef):
            raise DanglingReference(clip_ref)
        base = ctm
        if entry.units == "objectBoundingBox":
            bbox = _node_bbox_user(bbox_node) if bbox_node is not None else None
            if bbox is None:
                return ([], "nonzero")
            bx, by, bw, bh = bbox[0], bbox[1], bbox[2] - bbox[0], bbox[3] - bbox[1]
            base = affine_multiply(ctm, (bw, 0.0, 0.0, bh, bx, by))
        polys = []
        for shape in entry.shapes:
            shape_ctm = affine_multiply(base, shape.transform)
            polys.extend(_to_polys(_flatten_leaf(shape, shape_ctm, self.tol)))
        return (polys, "nonzero")

    def _gradient_mapping(self, grad: Gradient, ctm: Affine,
                          node: SvgNode) -> Optional[Affine]:
        """Affine taking gradient coordinates to subsample device pixels."""
        base = ctm
        if grad.units == "objectBoundingBox":
            bbox = _node_bbox_user(node)
            if bbox is None:
                return None
            bw, bh = bbox[2] - bbox[0], bbox[3] - bbox[1]
            if bw == 0 or bh == 0:
                return None
            base = affine_multiply(ctm, (bw, 0.0, 0.0, bh, bbox[0], bbox[1]))
        return affine_multiply(base, grad.transform)

    def _leaf_ops(self, node: SvgNode, ctm: Affine, clips: list) -> None:
        style = node.style
        subpaths = _flatten_leaf(node, ctm, self.tol)
        if not subpaths:
            return
        ops = []
        clip_list = list(clips) if clips else None

        fill = style.fill
        fill_alpha = style.opacity * style.fill_opacity
        if fill is not None and fill_alpha > 0 and node.kind != "line":
            op = self._make_op(fill, fill_alpha, _to_polys(subpaths),
                               style.fill_rule, ctm, node, clip_list)
            if op is not None:
                ops.append(op)

        stroke = style.stroke
        stroke_alpha = style.opacity * style.stroke_opacity
        width = style.stroke_width * geometry.affine_scale_factor(ctm)
        if stroke is not None and stroke_alpha > 0 and width > 0:
            polys = _stroke_polys(subpaths, width, style.stroke_linecap)
            if polys:
                op = self._make_op(stroke, stroke_alpha, polys, "nonzero",
                                   ctm, node, clip_list)
                if op is not None:
                    ops.append(op)
        if ops:
            self.leaves.append(LeafPaint(ops=ops))

    def _make_op(self, paint, alpha: float, polys: list, rule: str,
                 ctm: Affine, node: SvgNode, clips) -> Optional[_PaintOp]:
        if not polys:
            return None
        if isinstance(paint, Color):
            color = (paint.r / 255.0, paint.g / 255.0, paint.b / 255.0)
            return _PaintOp(polys=polys, rule=rule, alpha=alpha, color=color,
                            clips=clips)
        if isinstance(paint, GradientRef):
            grad = self.doc.defs.get(paint.ref_id)
            if not isinstance(grad, Gradient):
                raise DanglingReference(paint.ref_id)
            if not grad.stops:
                return None
            mapping = self._gradient_mapping(grad, ctm, node)
            if mapping is None:
                return None
            return _PaintOp(polys=polys, rule=rule, alpha=alpha, color=None,
                            gradient=grad, grad_to_dev=mapping, clips=clips)
        return None

    def walk(self, node: SvgNode, ctm: Affine, clips: list,
             use_stack: tuple) -> None:
        ctm = affine_multiply(ctm, node.transform)
        if node.clip_ref:
            clips = clips + [self._clip_polys(node.clip_ref, ctm, _clip_target(node))]
        if node.kind == "group":
            for child in node.children:
                self.walk(child, ctm, clips, use_stack)
            return
        if node.kind == "use":
            self._expand_use(node, ctm, clips, use_stack)
            return
        self._leaf_ops(node, ctm, clips)

    def _expand_use(self, node: SvgNode, ctm: Affine, clips: list,
                    use_stack: tuple) -> None:
        href = node.geometry["href"]
        if href in use_stack:
            raise CyclicReference(f"use cycle through #{href}")
        if len(use_stack) >= MAX_USE_DEPTH:
            raise UnsupportedFeature(f"use nesting deeper than {MAX_USE_DEPTH}")
        target = self.doc.defs.get(href)
        if isinstance(target, (Gradient, ClipPathDef)):
            raise DanglingReference(href)
        if target is None:
            target = self.doc.find_paint_node(href)
        if target is None:
            raise DanglingReference(href)
        clone = copy.deepcopy(target)
        clone.node_id = None
        # The instance inherits style from the use site.
        resolve_styles(clone, _StyleContext(node.style,
                                            node.own_style.get("color", Color(0, 0, 0))))
        shifted = affine_multiply(
            ctm, (1.0, 0.0, 0.0, 1.0, node.geometry["x"], node.geometry["y"]))
        self.walk(clone, shifted, clips, use_stack + (href,))

    def plan(self) -> list:
        root = self.doc.root
        base = affine_multiply(self.dev_ss, root.transform)
        clips: list = []
        if root.clip_ref:
            clips = [self._clip_polys(root.clip_ref, base, None)]
        for child in root.children:
            self.walk(child, base, clips, ())
        return self.leaves


def _clip_target(node: SvgNode) -> Optional[SvgNode]:
    return node if node.kind in core.LEAF_KINDS else None


# ---------------------------------------------------------------------------
# Scanline coverage
# ---------------------------------------------------------------------------

def _coverage_counts(polys: list, rule: str, grid: int) -> np.ndarray:
    """Subsample inside/outside grid (uint8 0/1) for a polygon set.

    Scanline crossings are evaluated at subpixel centers (u+0.5, v+0.5) with
    half-open [ymin, ymax) edge spans so shared vertices count once.
    """
    inside = np.zeros((grid, grid), dtype=np.uint8)
    xs_list, row_list, dir_list = [], [], []
    for poly in polys:
        pts = poly.points
        if len(pts) < 2:
            continue
        ring = pts if np.array_equal(pts[0], pts[-1]) else np.vstack([pts, pts[:1]])
        x0, y0 = ring[:-1, 0], ring[:-1, 1]
        x1, y1 = ring[1:, 0], ring[1:, 1]
        keep = y0 != y1
        if not keep.any():
            continue
        x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
        direction = np.where(y1 > y0, 1, -1).astype(np.int32)
        ylo = np.minimum(y0, y1)
        yhi = np.maximum(y0, y1)
        r0 = np.maximum(np.ceil(ylo - 0.5), 0.0).astype(np.int64)
        r1 = np.minimum(np.ceil(yhi - 0.5), float(grid)).astype(np.int64)
        counts = np.maximum(r1 - r0, 0)
        if counts.sum() == 0:
            continue
        idx = np.repeat(np.arange(len(x0)), counts)
        offsets = np.arange(counts.sum()) - np.repeat(
            np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        rows = r0[idx] + offsets
        yc = rows + 0.5
        t = (yc - y0[idx]) / (y1[idx] - y0[idx])
        xs = x0[idx] + t * (x1[idx] - x0[idx])
        xs_list.append(xs)
        row_list.append(rows)
        dir_list.append(direction[idx])
    if not xs_list:
        return inside
    xs = np.concatenate(xs_list)
    rows = np.concatenate(row_list)
    dirs = np.concatenate(dir_list)
    cols = np.clip(np.ceil(xs - 0.5), 0, grid).astype(np.int64)
    delta = np.zeros((grid, grid + 1), dtype=np.int32)
    np.add.at(delta, (rows, cols), dirs)
    winding = np.cumsum(delta[:, :grid], axis=1)
    if rule == "evenodd":
        inside = (winding & 1).astype(np.uint8)
    else:
        inside = (winding != 0).astype(np.uint8)
    return inside


def _op_coverage(op: _PaintOp, size: int) -> np.ndarray:
    """Per-pixel coverage in [0,1] float64 after clip intersection."""
    grid = size * SUPERSAMPLE
    inside = _coverage_counts(op.polys, op.rule, grid)
    if op.clips:
        for clip_polys, clip_rule in op.clips:
            if not clip_polys:
                inside[:] = 0
                break
            inside &= _coverage_counts(clip_polys, clip_rule, grid)
    ss = SUPERSAMPLE
    block = inside.reshape(size, ss, size, ss).sum(axis=(1, 3), dtype=np.uint16)
    return block.astype(np.float64) / (ss * ss)


# ---------------------------------------------------------------------------
# Gradient sampling (at output pixel centers)
# ---------------------------------------------------------------------------

def _gradient_field(op: _PaintOp, size: int) -> tuple:
    """(H,W,3) color and (H,W) opacity arrays for the op's gradient paint."""
    grad = op.gradient
    inv = affine_invert(op.grad_to_dev)
    # Output pixel center (j+0.5, i+0.5) sits at subsample coordinate *SUPERSAMPLE.
    ss = float(SUPERSAMPLE)
    jj, ii = np.meshgrid(np.arange(size, dtype=np.float64) + 0.5,
                         np.arange(size, dtype=np.float64) + 0.5)
    px = jj * ss
    py = ii * ss
    a, b, c, d, e, f = inv
    gx = a * px + c * py + e
    gy = b * px + d * py + f

    if grad.kind == "linear":
        x1, y1 = grad.coords["x1"], grad.coords["y1"]
        x2, y2 = grad.coords["x2"], grad.coords["y2"]
        dx, dy = x2 - x1, y2 - y1
        denom = dx * dx + dy * dy
        if denom == 0:
            t = np.zeros_like(gx)
        else:
            t = ((gx - x1) * dx + (gy - y1) * dy) / denom
    else:
        cx, cy, r = grad.coords["cx"], grad.coords["cy"], grad.coords["r"]
        fx, fy = grad.coords.get("fx", cx), grad.coords.get("fy", cy)
        if r <= 0:
            t = np.ones_like(gx)
        else:
            dx_ = gx - fx
            dy_ = gy - fy
            ex, ey = cx - fx, cy - fy
            a2 = ex * ex + ey * ey - r * r
            dot_de = dx_ * ex + dy_ * ey
            dd = dx_ * dx_ + dy_ * dy_
            if abs(a2) < 1e-12:
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = np.where(dot_de != 0, dd / (2.0 * dot_de), np.inf)
            else:
                disc = dot_de * dot_de - a2 * dd
                disc = np.maximum(disc, 0.0)
                sq = np.sqrt(disc)
                g1 = (dot_de + sq) / a2
                g2 = (dot_de - sq) / a2
                t = np.maximum(g1, g2)
            t = np.where(np.isfinite(t) & (t > 0), t, np.inf)
            # Offset grows outward from the focal point: u = 1 corresponds to
            # the outer circle, so the stop parameter is g itself.

    spread = grad.spread
    if spread == "pad":
        u = np.clip(t, 0.0, 1.0)
    elif spread == "repeat":
        u = np.where(np.isfinite(t), np.mod(t, 1.0), 1.0)
    else:  # reflect
        m = np.where(np.isfinite(t), np.mod(t, 2.0), 0.0)
        u = np.where(m <= 1.0, m, 2.0 - m)
    u = np.where(np.isfinite(u), u, 1.0)

    stops = grad.stops
    offs = np.array([s.offset for s in stops], dtype=np.float64)
    reds = np.array([s.color.r for s in stops], dtype=np.float64) / 255.0
    greens = np.array([s.color.g for s in stops], dtype=np.float64) / 255.0
    blues = np.array([s.color.b for s in stops], dtype=np.float64) / 255.0
    opac = np.array([s.opacity for s in stops], dtype=np.float64)
    color = np.stack([np.interp(u, offs, reds),
                      np.interp(u, offs, greens),
                      np.interp(u, offs, blues)], axis=-1)
    opacity = np.interp(u, offs, opac)
    return color, opacity


# ---------------------------------------------------------------------------
# Painting and rendering
# ---------------------------------------------------------------------------

def _quantize(value: np.ndarray) -> np.ndarray:
    return np.floor(value * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def _paint_op(img: np.ndarray, op: _PaintOp, size: int) -> np.ndarray:
    """Blend one paint op over the uint8 buffer; returns the touched mask."""
    cov = _op_coverage(op, size)
    if op.gradient is not None:
        color, stop_op = _gradient_field(op, size)
        a = cov * op.alpha * stop_op
        color_arr = color
    else:
        a = cov * op.alpha
        color_arr = np.asarray(op.color, dtype=np.float64).reshape(1, 1, 3)
    touched = a > 0
    if not touched.any():
        return touched
    a3 = a[..., None]
    base = img.astype(np.float64) / 255.0
    out = base * (1.0 - a3) + color_arr * a3
    img[:] = _quantize(out)
    return touched


def paint_leaf(img: np.ndarray, leaf: LeafPaint, size: int) -> np.ndarray:
    """Paint one primitive (fill, then stroke). Returns its coverage mask."""
    mask = np.zeros(img.shape[:2], dtype=bool)
    for op in leaf.ops:
        mask |= _paint_op(img, op, size)
    return mask


def plan_paints(doc: SvgDocument, size: int = 512) -> list:
    """Flatten a document into ordered per-primitive paint instructions."""
    return _PaintPlanner(doc, size).plan()


def render(doc: SvgDocument, size: int = 512) -> np.ndarray:
    """Render a document to (size, size, 3) uint8 RGB on white."""
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    for leaf in plan_paints(doc, size):
        paint_leaf(img, leaf, size)
    return img


render_document = render


@dataclass
class StepDiff:
    step_index: int                    # 1-based
    changed_pixels: int
    changed_bbox: Optional[tuple]      # (x, y, w, h) tight pixel bounds
    coverage_mask: Optional[np.ndarray] = None   # bool (H, W)

    @property
    def mask_pixels(self) -> int:
        return int(self.coverage_mask.sum()) if self.coverage_mask is not None else 0


def changed_pixel_mask(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels that differ in any channel (exact, no tolerance)."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return (a != b).any(axis=-1)


def diff_images(a: np.ndarray, b: np.ndarray,
                mask: Optional[np.ndarray] = None,
                step_index: int = 0) -> StepDiff:
    """Exact per-pixel diff; verifies containment in the coverage mask.

    Raises LocalityViolation when a changed pixel falls outside `mask`.
    """
    changed = changed_pixel_mask(a, b)
    if mask is not None:
        outside = changed & ~mask
        if bool(outside.any()):
            raise LocalityViolation(
                f"step {step_index} changed {int(outside.sum())} pixels "
                f"outside its coverage mask")
    ys, xs = np.nonzero(changed)
    bbox = None
    if len(ys):
        bbox = (int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return StepDiff(step_index=step_index, changed_pixels=int(changed.sum()),
                    changed_bbox=bbox, coverage_mask=mask)


def pixel_agreement(a: np.ndarray, b: np.ndarray, tolerance: int = 2) -> float:
    """Fraction of pixels whose max channel difference is <= tolerance."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a.astype(np.int16) - b.astype(np.int16)).max(axis=-1)
    return float((diff <= tolerance).mean())


def render_prefixes(step_docs: list, size: int = 512,
                    check_locality: bool = True) -> tuple:
    """Incrementally render a step sequence.

    Returns (images, diffs): images[i] is the uint8 frame after painting steps
    1..i+1; diffs[i] records what step i+1 changed and its coverage mask.
    Painting step n onto a copy of frame n-1 matches from-scratch prefix
    rendering bit-exactly because the buffer is quantized per primitive.
    Raises LocalityViolation when a step changes pixels outside its own
    coverage mask (unless check_locality is off).
    """
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    images, diffs = [], []
    for index, doc in enumerate(step_docs, start=1):
        before = img.copy()
        mask = np.zeros((size, size), dtype=bool)
        for leaf in plan_paints(doc, size):
            mask |= paint_leaf(img, leaf, size)
        diff = diff_images(before, img,
                           mask=mask if check_locality else None,
                           step_index=index)
        diff.coverage_mask = mask
        diffs.append(diff)
        images.append(img.copy())
    return images, diffs


def coverage_mask(doc: SvgDocument, size: int = 512) -> np.ndarray:
    """Union coverage mask (pixels any primitive of the doc touches)."""
    mask = np.zeros((size, size), dtype=bool)
    for leaf in plan_paints(doc, size):
        for op in leaf.ops:
            cov = _op_coverage(op, size)
            if op.gradient is not None:
                _, stop_op = _gradient_field(op, size)
                mask |= (cov * op.alpha * stop_op) > 0
            else:
                mask |= (cov * op.alpha) > 0
    return mask


def diffs_to_json(diffs: list) -> str:
    records = [
        {"step": d.step_index, "changed_pixels": d.changed_pixels,
         "mask_pixels": d.mask_pixels,
         "changed_bbox": list(d.changed_bbox) if d.changed_bbox else None}
        for d in diffs
    ]
    return json.dumps({"steps": records}, indent=2, sort_keys=True)


def _to_rgba(img: np.ndarray) -> np.ndarray:
    # Frames are stored RGBA with full alpha: everything composites over white.
    rgba = np.empty((*img.shape[:2], 4), dtype=np.uint8)
    rgba[..., :3] = img
    rgba[..., 3] = 255
    return rgba


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(_to_rgba(img), mode="RGBA").save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def mask_png_bytes(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(_to_rgba(img), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()
