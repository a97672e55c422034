"""Flatten a document into ordered, self-contained single-primitive steps.

Each step is a complete SVG document holding exactly one painted primitive
with its full inherited context baked in: the transform attribute carries the
root-to-leaf matrix product, style attributes carry the resolved values, and
any gradient or clip path the primitive needs is copied into the step's defs.
Rendering the steps cumulatively reproduces the original document.

Clip paths on ancestor groups are rebased into the leaf's user space (shape
transforms premultiplied by the inverse of the intervening matrices) and
normalized to userSpaceOnUse, so a step never depends on tree context.
Clips are carried as attributes rather than intersected geometrically; the
baked defs keep every fragment standalone either way.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from . import core, raster
from .core import (
    ClipPathDef,
    Color,
    Gradient,
    GradientRef,
    ResolvedStyle,
    SvgDocument,
    SvgNode,
    _StyleContext,
    resolve_styles,
)
from .errors import (
    AllInvisible,
    CyclicReference,
    DanglingReference,
    EmptyDocument,
    UnsupportedFeature,
)
from .geometry import Affine, affine_invert, affine_multiply

MAX_USE_DEPTH = raster.MAX_USE_DEPTH


@dataclass
class RenderStep:
    index: int                # 1-based position in paint order
    primitive: SvgNode        # baked leaf: composed transform, resolved style
    fragment: str             # self-contained single-primitive document
    provenance: tuple         # child-index path into the original tree
    doc: SvgDocument          # parsed form of `fragment`

    @property
    def kind(self) -> str:
        return self.primitive.kind


@dataclass
class StepSequence:
    steps: list
    source: SvgDocument

    @property
    def n(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __len__(self):
        return len(self.steps)


def _subtree_bbox(node: SvgNode) -> tuple | None:
    """Bounding box of a node's content in its own user space."""
    if node.kind in core.LEAF_KINDS:
        return raster._node_bbox_user(node)
    boxes = []
    for child in node.children:
        box = _subtree_bbox(child)
        if box is None:
            continue
        corners = [(box[0], box[1]), (box[2], box[1]),
                   (box[2], box[3]), (box[0], box[3])]
        a, b, c, d, e, f = child.transform
        pts = [(a * x + c * y + e, b * x + d * y + f) for x, y in corners]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        boxes.append((min(xs), min(ys), max(xs), max(ys)))
    if not boxes:
        return None
    return (min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes))


@dataclass
class _Leaf:
    node: SvgNode             # deep copy, transform/style not yet baked
    ctm: Affine               # root user space placement
    style: ResolvedStyle      # effective style at the leaf
    clip: tuple | None        # (shapes, root-space transforms)
    provenance: tuple


class _Flattener:
    def __init__(self, doc: SvgDocument):
        self.doc = doc
        self.leaves: list = []

    def _clip_shapes_root(self, clip_ref: str, ctm: Affine,
                          node: SvgNode) -> tuple:
        entry = self.doc.defs.get(clip_ref)
        if not isinstance(entry, ClipPathDef):
            raise DanglingReference(clip_ref)
        base = ctm
        if entry.units == "objectBoundingBox":
            box = _subtree_bbox(node)
            if box is None:
                return ([], [])
            bw, bh = box[2] - box[0], box[3] - box[1]
            base = affine_multiply(ctm, (bw, 0.0, 0.0, bh, box[0], box[1]))
        shapes, mats = [], []
        for shape in entry.shapes:
            shapes.append(shape)
            mats.append(affine_multiply(base, shape.transform))
        return (shapes, mats)

    def walk(self, node: SvgNode, ctm: Affine, clip: tuple | None,
             use_stack: tuple, path: tuple) -> None:
        ctm = affine_multiply(ctm, node.transform)
        if node.clip_ref:
            if clip is not None:
                raise UnsupportedFeature("nested clip-path ancestors")
            clip = self._clip_shapes_root(node.clip_ref, ctm, node)
        if node.kind == "group":
            for i, child in enumerate(node.children):
                self.walk(child, ctm, clip, use_stack, path + (i,))
            return
        if node.kind == "use":
            self._expand_use(node, ctm, clip, use_stack, path)
            return
        leaf = copy.deepcopy(node)
        leaf.children = []
        self.leaves.append(_Leaf(node=leaf, ctm=ctm, style=node.style,
                                 clip=clip, provenance=path))

    def _expand_use(self, node: SvgNode, ctm: Affine, clip: tuple | None,
                    use_stack: tuple, path: tuple) -> None:
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
        self.walk(clone, shifted, clip, use_stack + (href,), path)


_DEFAULT_STYLE = ResolvedStyle()


def _bake_own_style(style: ResolvedStyle) -> dict:
    """Non-default resolved values as explicit attributes for a root-level leaf."""
    own: dict = {}
    if style.fill != _DEFAULT_STYLE.fill:
        own["fill"] = style.fill
    if style.fill_opacity != 1.0:
        own["fill_opacity"] = style.fill_opacity
    if style.fill_rule != "nonzero":
        own["fill_rule"] = style.fill_rule
    if style.stroke is not None:
        own["stroke"] = style.stroke
        if style.stroke_width != 1.0:
            own["stroke_width"] = style.stroke_width
        if style.stroke_opacity != 1.0:
            own["stroke_opacity"] = style.stroke_opacity
        if style.stroke_linecap != "butt":
            own["stroke_linecap"] = style.stroke_linecap
    return own


def _step_gradients(doc: SvgDocument, style: ResolvedStyle) -> dict:
    defs = {}
    for paint in (style.fill, style.stroke):
        if isinstance(paint, GradientRef):
            grad = doc.defs.get(paint.ref_id)
            if not isinstance(grad, Gradient):
                raise DanglingReference(paint.ref_id)
            defs[paint.ref_id] = copy.deepcopy(grad)
    return defs


def _build_fragment(doc: SvgDocument, leaf: _Leaf, index: int) -> tuple:
    """(baked primitive node, fragment doc) for one leaf at a given index."""
    node = copy.deepcopy(leaf.node)
    node.node_id = None
    node.transform = leaf.ctm
    node.own_style = _bake_own_style(leaf.style)
    node.own_opacity = leaf.style.opacity
    defs = _step_gradients(doc, leaf.style)

    if leaf.clip is not None:
        shapes, mats = leaf.clip
        inv = affine_invert(leaf.ctm)
        baked = []
        for shape, mat in zip(shapes, mats):
            s = copy.deepcopy(shape)
            s.node_id = None
            s.own_style = {}
            s.own_opacity = 1.0
            s.clip_ref = None
            s.transform = affine_multiply(inv, mat)
            baked.append(s)
        clip_id = f"clip{index}"
        defs[clip_id] = ClipPathDef(shapes=baked, units="userSpaceOnUse")
        node.clip_ref = clip_id
    else:
        node.clip_ref = None

    frag = SvgDocument(view_box=doc.view_box,
                       root=SvgNode(kind="group", children=[node]),
                       defs=defs)
    resolve_styles(frag.root)
    for entry in frag.defs.values():
        if isinstance(entry, ClipPathDef):
            for shape in entry.shapes:
                resolve_styles(shape)
    return node, frag


def flatten(doc: SvgDocument) -> StepSequence:
    """Depth-first document-order steps, one per leaf primitive.

    Every leaf becomes a step, visible or not; prune_invisible separates the
    visually inert ones. Raises EmptyDocument when the tree holds no
    primitives at all (defs content emits no step).
    """
    fl = _Flattener(doc)
    for i, child in enumerate(doc.root.children):
        fl.walk(child, doc.root.transform, None, (), (i,))
    if not fl.leaves:
        raise EmptyDocument("document contains no primitives")

    steps: list = []
    for index, leaf in enumerate(fl.leaves, start=1):
        node, frag = _build_fragment(doc, leaf, index)
        fragment = core.serialize(frag).decode("utf-8")
        steps.append(RenderStep(index=index, primitive=node,
                                fragment=fragment, provenance=leaf.provenance,
                                doc=frag))
    return StepSequence(steps=steps, source=doc)


def _reindex_step(step: RenderStep, new_index: int) -> RenderStep:
    if new_index == step.index:
        return step
    doc = copy.deepcopy(step.doc)
    old_clip = f"clip{step.index}"
    if old_clip in doc.defs:
        doc.defs[f"clip{new_index}"] = doc.defs.pop(old_clip)
        for node in doc.root.iter_nodes():
            if node.clip_ref == old_clip:
                node.clip_ref = f"clip{new_index}"
    fragment = core.serialize(doc).decode("utf-8")
    primitive = next(n for n in doc.root.iter_nodes()
                     if n.kind in core.LEAF_KINDS)
    return RenderStep(index=new_index, primitive=primitive, fragment=fragment,
                      provenance=step.provenance, doc=doc)


def prune_invisible(seq: StepSequence, size: int = 512) -> StepSequence:
    """Drop steps that change zero pixels at their insertion point.

    A zero-delta step leaves the running frame untouched, so removing it
    preserves every later prefix image exactly; later-occluded steps stay
    (occlusion layering is meaningful context). Raises AllInvisible when
    nothing survives.
    """
    images, diffs = raster.render_prefixes([s.doc for s in seq.steps],
                                           size=size)
    kept = [step for step, diff in zip(seq.steps, diffs)
            if diff.changed_pixels > 0]
    if not kept:
        raise AllInvisible("every step is invisible at its insertion point")
    steps = [_reindex_step(step, i) for i, step in enumerate(kept, start=1)]
    return StepSequence(steps=steps, source=seq.source)


def step_fragment(step: RenderStep, doc: SvgDocument | None = None) -> bytes:
    """Canonical single-primitive SVG bytes for a step."""
    return step.fragment.encode("utf-8")


def combine_steps(steps) -> SvgDocument:
    """Merge steps back into one document (the reconstructed document)."""
    step_list = list(steps)
    if not step_list:
        raise EmptyDocument("no steps to combine")
    first = step_list[0].doc
    merged = SvgDocument(view_box=first.view_box,
                         root=SvgNode(kind="group"), defs={})
    for step in step_list:
        for did, entry in step.doc.defs.items():
            merged.defs[did] = copy.deepcopy(entry)
        for child in step.doc.root.children:
            merged.root.children.append(copy.deepcopy(child))
    resolve_styles(merged.root)
    return merged


def primitive_count(doc: SvgDocument) -> int:
    """Number of primitives after flattening (the curation complexity metric)."""
    return flatten(doc).n
