"""SVG document model: parsing, style inheritance, normalization, serialization.

The parsed tree keeps two views of style per element: the properties the
element itself declared (`own_style`) and the fully inherited effective style
(`style`). Effective opacity is the product of the element's own opacity and
every ancestor's, so a leaf's style never needs the tree to be interpreted.

Canonical serialization is deterministic: fixed attribute order (geometry,
then transform, then style alphabetically), hex colors, shortest exact
numbers, one `<defs>` block first with entries sorted by id.
"""

from __future__ import annotations

import decimal
import math
import re
import xml.etree.ElementTree as etree
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

from . import geometry
from .errors import (
    CyclicReference,
    DanglingReference,
    MalformedXml,
    UnsupportedFeature,
)
from .geometry import Affine, IDENTITY, format_number

SVG_NS = "http://www.w3.org/2000/svg"
XLINK_NS = "http://www.w3.org/1999/xlink"

DEFAULT_PRECISION = 3
MAX_GRADIENT_STOPS = 16

PAINTED_KINDS = ("group", "path", "rect", "circle", "ellipse", "line",
                 "polyline", "polygon", "use")
LEAF_KINDS = ("path", "rect", "circle", "ellipse", "line", "polyline", "polygon")

_UNSUPPORTED_TAGS = {
    "text", "tspan", "textPath", "image", "script", "style", "animate",
    "animateTransform", "animateMotion", "set", "filter", "foreignObject",
    "mask", "pattern", "marker", "symbol", "switch", "svg",
}

_DROPPED_TAGS = {"title", "desc", "metadata"}


class Color(NamedTuple):
    r: int
    g: int
    b: int

    def to_hex(self) -> str:
        return f"#{self.r:02x}{self.g:02x}{self.b:02x}"


class GradientRef(NamedTuple):
    ref_id: str


# A paint is a solid color, a reference to a gradient, or nothing at all.
Paint = Union[Color, GradientRef, None]


@dataclass(frozen=True)
class ResolvedStyle:
    fill: Paint = Color(0, 0, 0)
    stroke: Paint = None
    stroke_width: float = 1.0
    opacity: float = 1.0          # cumulative: own opacity times all ancestors'
    fill_opacity: float = 1.0
    stroke_opacity: float = 1.0
    fill_rule: str = "nonzero"
    stroke_linecap: str = "butt"

    def validate(self) -> None:
        for name in ("opacity", "fill_opacity", "stroke_opacity"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise MalformedXml(f"{name} out of range: {v}")
        if self.stroke_width < 0:
            raise MalformedXml(f"negative stroke-width: {self.stroke_width}")


class GradientStop(NamedTuple):
    offset: float
    color: Color
    opacity: float


@dataclass
class Gradient:
    kind: str                      # "linear" | "radial"
    coords: dict                   # linear: x1 y1 x2 y2; radial: cx cy r fx fy
    stops: list
    units: str = "objectBoundingBox"
    transform: Affine = IDENTITY
    spread: str = "pad"


@dataclass
class ClipPathDef:
    shapes: list                   # leaf SvgNodes in clip coordinates
    units: str = "userSpaceOnUse"


@dataclass
class SvgNode:
    kind: str
    geometry: dict = field(default_factory=dict)
    style: ResolvedStyle = field(default_factory=ResolvedStyle)
    transform: Affine = IDENTITY
    children: list = field(default_factory=list)
    own_style: dict = field(default_factory=dict)
    own_opacity: float = 1.0
    node_id: Optional[str] = None
    clip_ref: Optional[str] = None

    def iter_nodes(self):
        yield self
        for child in self.children:
            yield from child.iter_nodes()


@dataclass
class SvgDocument:
    view_box: tuple           # (min_x, min_y, width, height)
    root: SvgNode             # kind == "group"; holds painted content in order
    defs: dict = field(default_factory=dict)
    width: Optional[float] = None
    height: Optional[float] = None
    source_bytes: int = 0

    def find_paint_node(self, node_id: str) -> Optional[SvgNode]:
        for node in self.root.iter_nodes():
            if node.node_id == node_id:
                return node
        return None


# ---------------------------------------------------------------------------
# Colors and lengths
# ---------------------------------------------------------------------------

_NAMED_COLORS = {
    "aliceblue": (240, 248, 255), "antiquewhite": (250, 235, 215),
    "aqua": (0, 255, 255), "aquamarine": (127, 255, 212), "azure": (240, 255, 255),
    "beige": (245, 245, 220), "bisque": (255, 228, 196), "black": (0, 0, 0),
    "blanchedalmond": (255, 235, 205), "blue": (0, 0, 255),
    "blueviolet": (138, 43, 226), "brown": (165, 42, 42),
    "burlywood": (222, 184, 135), "cadetblue": (95, 158, 160),
    "chartreuse": (127, 255, 0), "chocolate": (210, 105, 30),
    "coral": (255, 127, 80), "cornflowerblue": (100, 149, 237),
    "cornsilk": (255, 248, 220), "crimson": (220, 20, 60), "cyan": (0, 255, 255),
    "darkblue": (0, 0, 139), "darkcyan": (0, 139, 139),
    "darkgoldenrod": (184, 134, 11), "darkgray": (169, 169, 169),
    "darkgreen": (0, 100, 0), "darkgrey": (169, 169, 169),
    "darkkhaki": (189, 183, 107), "darkmagenta": (139, 0, 139),
    "darkolivegreen": (85, 107, 47), "darkorange": (255, 140, 0),
    "darkorchid": (153, 50, 204), "darkred": (139, 0, 0),
    "darksalmon": (233, 150, 122), "darkseagreen": (143, 188, 143),
    "darkslateblue": (72, 61, 139), "darkslategray": (47, 79, 79),
    "darkslategrey": (47, 79, 79), "darkturquoise": (0, 206, 209),
    "darkviolet": (148, 0, 211), "deeppink": (255, 20, 147),
    "deepskyblue": (0, 191, 255), "dimgray": (105, 105, 105),
    "dimgrey": (105, 105, 105), "dodgerblue": (30, 144, 255),
    "firebrick": (178, 34, 34), "floralwhite": (255, 250, 240),
    "forestgreen": (34, 139, 34), "fuchsia": (255, 0, 255),
    "gainsboro": (220, 220, 220), "ghostwhite": (248, 248, 255),
    "gold": (255, 215, 0), "goldenrod": (218, 165, 32), "gray": (128, 128, 128),
    "green": (0, 128, 0), "greenyellow": (173, 255, 47), "grey": (128, 128, 128),
    "honeydew": (240, 255, 240), "hotpink": (255, 105, 180),
    "indianred": (205, 92, 92), "indigo": (75, 0, 130), "ivory": (255, 255, 240),
    "khaki": (240, 230, 140), "lavender": (230, 230, 250),
    "lavenderblush": (255, 240, 245), "lawngreen": (124, 252, 0),
    "lemonchiffon": (255, 250, 205), "lightblue": (173, 216, 230),
    "lightcoral": (240, 128, 128), "lightcyan": (224, 255, 255),
    "lightgoldenrodyellow": (250, 250, 210), "lightgray": (211, 211, 211),
    "lightgreen": (144, 238, 144), "lightgrey": (211, 211, 211),
    "lightpink": (255, 182, 193), "lightsalmon": (255, 160, 122),
    "lightseagreen": (32, 178, 170), "lightskyblue": (135, 206, 250),
    "lightslategray": (119, 136, 153), "lightslategrey": (119, 136, 153),
    "lightsteelblue": (176, 196, 222), "lightyellow": (255, 255, 224),
    "lime": (0, 255, 0), "limegreen": (50, 205, 50), "linen": (250, 240, 230),
    "magenta": (255, 0, 255), "maroon": (128, 0, 0),
    "mediumaquamarine": (102, 205, 170), "mediumblue": (0, 0, 205),
    "mediumorchid": (186, 85, 211), "mediumpurple": (147, 112, 219),
    "mediumseagreen": (60, 179, 113), "mediumslateblue": (123, 104, 238),
    "mediumspringgreen": (0, 250, 154), "mediumturquoise": (72, 209, 204),
    "mediumvioletred": (199, 21, 133), "midnightblue": (25, 25, 112),
    "mintcream": (245, 255, 250), "mistyrose": (255, 228, 225),
    "moccasin": (255, 228, 181), "navajowhite": (255, 222, 173),
    "navy": (0, 0, 128), "oldlace": (253, 245, 230), "olive": (128, 128, 0),
    "olivedrab": (107, 142, 35), "orange": (255, 165, 0),
    "orangered": (255, 69, 0), "orchid": (218, 112, 214),
    "palegoldenrod": (238, 232, 170), "palegreen": (152, 251, 152),
    "paleturquoise": (175, 238, 238), "palevioletred": (219, 112, 147),
    "papayawhip": (255, 239, 213), "peachpuff": (255, 218, 185),
    "peru": (205, 133, 63), "pink": (255, 192, 203), "plum": (221, 160, 221),
    "powderblue": (176, 224, 230), "purple": (128, 0, 128),
    "rebeccapurple": (102, 51, 153), "red": (255, 0, 0),
    "rosybrown": (188, 143, 143), "royalblue": (65, 105, 225),
    "saddlebrown": (139, 69, 19), "salmon": (250, 128, 114),
    "sandybrown": (244, 164, 96), "seagreen": (46, 139, 87),
    "seashell": (255, 245, 238), "sienna": (160, 82, 45),
    "silver": (192, 192, 192), "skyblue": (135, 206, 235),
    "slateblue": (106, 90, 205), "slategray": (112, 128, 144),
    "slategrey": (112, 128, 144), "snow": (255, 250, 250),
    "springgreen": (0, 255, 127), "steelblue": (70, 130, 180),
    "tan": (210, 180, 140), "teal": (0, 128, 128), "thistle": (216, 191, 216),
    "tomato": (255, 99, 71), "turquoise": (64, 224, 208),
    "violet": (238, 130, 238), "wheat": (245, 222, 179),
    "white": (255, 255, 255), "whitesmoke": (245, 245, 245),
    "yellow": (255, 255, 0), "yellowgreen": (154, 205, 50),
}

_URL_RE = re.compile(r"^url\(\s*['\"]?#([^)'\"]+)['\"]?\s*\)")
_HEX_RE = re.compile(r"^#([0-9a-fA-F]{3}|[0-9a-fA-F]{6})$")
_RGB_RE = re.compile(
    r"^rgba?\(\s*(-?[0-9.]+%?)\s*,\s*(-?[0-9.]+%?)\s*,\s*(-?[0-9.]+%?)\s*"
    r"(?:,\s*([0-9.]+)\s*)?\)$"
)


def parse_color(text: str) -> Color:
    text = text.strip()
    m = _HEX_RE.match(text)
    if m:
        h = m.group(1)
        if len(h) == 3:
            h = "".join(ch * 2 for ch in h)
        return Color(int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16))
    m = _RGB_RE.match(text)
    if m:
        alpha = m.group(4)
        if alpha is not None and float(alpha) != 1.0:
            # Alpha belongs in fill-opacity/stroke-opacity; folding it in
            # silently would change rendering, so refuse it loudly.
            raise UnsupportedFeature("rgba() with alpha != 1")
        vals = []
        for tok in m.groups()[:3]:
            if tok.endswith("%"):
                vals.append(round(float(tok[:-1]) * 255.0 / 100.0))
            else:
                vals.append(round(float(tok)))
        return Color(*(max(0, min(255, v)) for v in vals))
    named = _NAMED_COLORS.get(text.lower())
    if named:
        return Color(*named)
    raise MalformedXml(f"unparseable color: {text!r}")


def _parse_length(text: str, reference: float | None = None) -> float:
    """Parse an SVG length; percents need a reference length."""
    text = text.strip()
    if text.endswith("%"):
        if reference is None:
            raise MalformedXml(f"percentage length without context: {text!r}")
        return float(text[:-1]) / 100.0 * reference
    for unit, factor in (("px", 1.0), ("pt", 96.0 / 72.0), ("pc", 16.0),
                         ("mm", 96.0 / 25.4), ("cm", 96.0 / 2.54), ("in", 96.0)):
        if text.endswith(unit):
            return float(text[:-len(unit)]) * factor
    try:
        return float(text)
    except ValueError as exc:
        raise MalformedXml(f"unparseable length: {text!r}") from exc


def _parse_fraction(text: str) -> float:
    """Offset-style value: bare number or percentage, as a fraction."""
    text = text.strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100.0
    return float(text)


def _parse_points(text: str) -> list:
    nums = [float(t) for t in re.findall(r"[-+]?(?:\d*\.\d+|\d+\.?)(?:[Ee][+-]?\d+)?", text)]
    if len(nums) % 2 != 0:
        raise MalformedXml("odd number of coordinates in points attribute")
    return [(nums[i], nums[i + 1]) for i in range(0, len(nums), 2)]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_STYLE_PROPS = {
    "fill", "stroke", "stroke-width", "opacity", "fill-opacity",
    "stroke-opacity", "fill-rule", "color", "stroke-linecap",
}

# Presentation clutter that never affects our rendering model.
_IGNORED_PROPS = {
    "stroke-linejoin", "stroke-miterlimit", "clip-rule", "vector-effect",
    "shape-rendering", "color-rendering", "visibility", "display",
    "enable-background", "overflow", "paint-order", "stop-color",
    "stop-opacity", "font-family", "font-size",
}


def _local_tag(el) -> str:
    tag = el.tag
    if isinstance(tag, str) and tag.startswith("{"):
        return tag.split("}", 1)[1]
    return tag if isinstance(tag, str) else ""


def _get_href(el) -> Optional[str]:
    raw = el.get("href") or el.get(f"{{{XLINK_NS}}}href")
    if raw is None:
        return None
    raw = raw.strip()
    if not raw.startswith("#"):
        raise UnsupportedFeature("external href")
    return raw[1:]


def _collect_declared(el) -> dict:
    """Merge presentation attributes with the inline style attribute."""
    declared = {}
    for name, value in el.attrib.items():
        if name in _STYLE_PROPS:
            declared[name] = value.strip()
        elif name == "stroke-dasharray" and value.strip() not in ("none", ""):
            raise UnsupportedFeature("stroke-dasharray")
    style_attr = el.get("style")
    if style_attr:
        for item in style_attr.split(";"):
            if ":" not in item:
                continue
            prop, value = item.split(":", 1)
            prop = prop.strip().lower()
            value = value.strip()
            if prop in _STYLE_PROPS:
                declared[prop] = value
            elif prop == "stroke-dasharray" and value not in ("none", ""):
                raise UnsupportedFeature("stroke-dasharray")
    return declared


@dataclass
class _StyleContext:
    style: ResolvedStyle
    color: Color = Color(0, 0, 0)


def _parse_paint(value: str, ctx: _StyleContext, inherited: Paint) -> Paint:
    value = value.strip()
    if value == "inherit":
        return inherited
    if value in ("none", "transparent"):
        return None
    if value == "currentColor":
        return ctx.color
    m = _URL_RE.match(value)
    if m:
        return GradientRef(m.group(1))
    return parse_color(value)


def _clamp01(v: float) -> float:
    return max(0.0, min(1.0, v))


def _parse_own_style(declared: dict, ctx: _StyleContext) -> tuple:
    """Typed own_style dict plus the element's own opacity and color context."""
    own: dict = {}
    own_opacity = 1.0
    color = ctx.color
    if "color" in declared and declared["color"] != "inherit":
        color = parse_color(declared["color"])
        own["color"] = color
    inner_ctx = _StyleContext(ctx.style, color)
    if "fill" in declared:
        own["fill"] = _parse_paint(declared["fill"], inner_ctx, ctx.style.fill)
    if "stroke" in declared:
        own["stroke"] = _parse_paint(declared["stroke"], inner_ctx, ctx.style.stroke)
    if "stroke-width" in declared and declared["stroke-width"] != "inherit":
        own["stroke_width"] = _parse_length(declared["stroke-width"])
    if "fill-opacity" in declared and declared["fill-opacity"] != "inherit":
        own["fill_opacity"] = _clamp01(_parse_fraction(declared["fill-opacity"]))
    if "stroke-opacity" in declared and declared["stroke-opacity"] != "inherit":
        own["stroke_opacity"] = _clamp01(_parse_fraction(declared["stroke-opacity"]))
    if "fill-rule" in declared and declared["fill-rule"] != "inherit":
        rule = declared["fill-rule"]
        if rule not in ("nonzero", "evenodd"):
            raise MalformedXml(f"unknown fill-rule: {rule!r}")
        own["fill_rule"] = rule
    if "stroke-linecap" in declared and declared["stroke-linecap"] != "inherit":
        cap = declared["stroke-linecap"]
        if cap not in ("butt", "round", "square"):
            raise MalformedXml(f"unknown stroke-linecap: {cap!r}")
        own["stroke_linecap"] = cap
    if "opacity" in declared and declared["opacity"] != "inherit":
        own_opacity = _clamp01(_parse_fraction(declared["opacity"]))
    return own, own_opacity


def resolve_styles(node: SvgNode, ctx: _StyleContext | None = None) -> None:
    """Recompute effective styles for a subtree from its own_style values."""
    if ctx is None:
        ctx = _StyleContext(ResolvedStyle())
    own = node.own_style
    color = own.get("color", ctx.color)
    parent = ctx.style
    style = ResolvedStyle(
        fill=own.get("fill", parent.fill),
        stroke=own.get("stroke", parent.stroke),
        stroke_width=own.get("stroke_width", parent.stroke_width),
        opacity=parent.opacity * node.own_opacity,
        fill_opacity=own.get("fill_opacity", parent.fill_opacity),
        stroke_opacity=own.get("stroke_opacity", parent.stroke_opacity),
        fill_rule=own.get("fill_rule", parent.fill_rule),
        stroke_linecap=own.get("stroke_linecap", parent.stroke_linecap),
    )
    style.validate()
    node.style = style
    child_ctx = _StyleContext(style, color)
    for child in node.children:
        resolve_styles(child, child_ctx)


def _parse_geometry(kind: str, el, vb: tuple) -> dict:
    vw, vh = vb[2], vb[3]
    vdiag = math.hypot(vw, vh) / math.sqrt(2)

    def get_len(name, default, ref):
        raw = el.get(name)
        if raw is None:
            return default
        return _parse_length(raw, ref)

    if kind == "path":
        d = el.get("d")
        if d is None or not d.strip():
            raise MalformedXml("path element without d attribute")
        return {"segments": geometry.parse_path_data(d)}
    if kind == "rect":
        geom = {
            "x": get_len("x", 0.0, vw), "y": get_len("y", 0.0, vh),
            "width": get_len("width", 0.0, vw), "height": get_len("height", 0.0, vh),
        }
        rx = el.get("rx")
        ry = el.get("ry")
        geom["rx"] = _parse_length(rx, vw) if rx is not None else None
        geom["ry"] = _parse_length(ry, vh) if ry is not None else None
        if geom["width"] < 0 or geom["height"] < 0:
            raise MalformedXml("rect with negative size")
        for key in ("rx", "ry"):
            if geom[key] is not None and geom[key] < 0:
                raise MalformedXml(f"rect with negative {key}")
        return geom
    if kind == "circle":
        geom = {"cx": get_len("cx", 0.0, vw), "cy": get_len("cy", 0.0, vh),
                "r": get_len("r", 0.0, vdiag)}
        if geom["r"] < 0:
            raise MalformedXml("circle with negative radius")
        return geom
    if kind == "ellipse":
        geom = {"cx": get_len("cx", 0.0, vw), "cy": get_len("cy", 0.0, vh),
                "rx": get_len("rx", 0.0, vw), "ry": get_len("ry", 0.0, vh)}
        if geom["rx"] < 0 or geom["ry"] < 0:
            raise MalformedXml("ellipse with negative radius")
        return geom
    if kind == "line":
        return {"x1": get_len("x1", 0.0, vw), "y1": get_len("y1", 0.0, vh),
                "x2": get_len("x2", 0.0, vw), "y2": get_len("y2", 0.0, vh)}
    if kind in ("polyline", "polygon"):
        points = _parse_points(el.get("points", ""))
        if kind == "polygon" and len(points) < 3:
            raise MalformedXml("polygon needs at least 3 points")
        if kind == "polyline" and len(points) < 2:
            raise MalformedXml("polyline needs at least 2 points")
        return {"points": points}
    if kind == "use":
        href = _get_href(el)
        if href is None:
            raise MalformedXml("use element without href")
        return {"href": href, "x": get_len("x", 0.0, vw), "y": get_len("y", 0.0, vh)}
    return {}


class _Parser:
    def __init__(self, vb: tuple):
        self.vb = vb
        self.defs: dict = {}
        self.unsupported: set = set()
        self.paint_refs: list = []      # gradient ids referenced by paints
        self.clip_refs: list = []
        self.use_refs: list = []
        self.gradient_hrefs: dict = {}  # gradient id -> href id

    def parse_gradient(self, el, kind: str) -> None:
        gid = el.get("id")
        if not gid:
            return
        vw, vh = self.vb[2], self.vb[3]
        units = el.get("gradientUnitsDefault") or el.get("gradientUnits") or "objectBoundingBox"
        if units not in ("objectBoundingBox", "userSpaceOnUse"):
            raise MalformedXml(f"unknown gradientUnits: {units!r}")
        bbox_units = units == "objectBoundingBox"

        def coord(name, default, ref):
            raw = el.get(name)
            if raw is None:
                return default
            if bbox_units:
                return _parse_fraction(raw)
            return _parse_length(raw, ref)

        if kind == "linear":
            coords = {
                "x1": coord("x1", 0.0, vw), "y1": coord("y1", 0.0, vh),
                "x2": coord("x2", 1.0 if bbox_units else vw, vw),
                "y2": coord("y2", 0.0, vh),
            }
        else:
            half = 0.5 if bbox_units else None
            vdiag = math.hypot(vw, vh) / math.sqrt(2)
            coords = {
                "cx": coord("cx", 0.5 if bbox_units else vw / 2, vw),
                "cy": coord("cy", 0.5 if bbox_units else vh / 2, vh),
                "r": coord("r", half if bbox_units else vdiag / 2, vdiag),
            }
            coords["fx"] = coord("fx", coords["cx"], vw) if el.get("fx") else coords["cx"]
            coords["fy"] = coord("fy", coords["cy"], vh) if el.get("fy") else coords["cy"]
        spread = el.get("spreadMethod", "pad")
        if spread not in ("pad", "reflect", "repeat"):
            raise MalformedXml(f"unknown spreadMethod: {spread!r}")
        stops = []
        for stop_el in el:
            if _local_tag(stop_el) != "stop":
                continue
            declared = dict(stop_el.attrib)
            style_attr = declared.pop("style", None)
            if style_attr:
                for item in style_attr.split(";"):
                    if ":" in item:
                        prop, value = item.split(":", 1)
                        declared[prop.strip()] = value.strip()
            offset = _clamp01(_parse_fraction(declared.get("offset", "0")))
            col_raw = declared.get("stop-color", "black")
            col = Color(0, 0, 0) if col_raw == "currentColor" else parse_color(col_raw)
            op = _clamp01(_parse_fraction(declared.get("stop-opacity", "1")))
            if stops and offset < stops[-1].offset:
                offset = stops[-1].offset
            stops.append(GradientStop(offset, col, op))
        if len(stops) > MAX_GRADIENT_STOPS:
            raise UnsupportedFeature(f"gradient with more than {MAX_GRADIENT_STOPS} stops")
        href = _get_href(el)
        if href:
            self.gradient_hrefs[gid] = href
        self.defs[gid] = Gradient(
            kind=kind, coords=coords, stops=stops, units=units,
            transform=geometry.parse_transform(el.get("gradientTransform")),
            spread=spread,
        )

    def parse_clip_path(self, el) -> None:
        cid = el.get("id")
        if not cid:
            return
        units = el.get("clipPathUnits", "userSpaceOnUse")
        if units not in ("userSpaceOnUse", "objectBoundingBox"):
            raise MalformedXml(f"unknown clipPathUnits: {units!r}")
        shapes = []
        for child in el:
            tag = _local_tag(child)
            if tag in _DROPPED_TAGS:
                continue
            if tag not in LEAF_KINDS:
                self.unsupported.add(f"clipPath/{tag}")
                continue
            shapes.append(self.parse_node(child))
        self.defs[cid] = ClipPathDef(shapes=shapes, units=units)

    def parse_defs_child(self, el) -> None:
        tag = _local_tag(el)
        if tag == "linearGradient":
            self.parse_gradient(el, "linear")
        elif tag == "radialGradient":
            self.parse_gradient(el, "radial")
        elif tag == "clipPath":
            self.parse_clip_path(el)
        elif tag == "defs":
            for child in el:
                self.parse_defs_child(child)
        elif tag in _DROPPED_TAGS:
            pass
        elif tag in ("g",) or tag in LEAF_KINDS or tag == "use":
            node = self.parse_node(el)
            if node.node_id:
                self.defs[node.node_id] = node
        else:
            self.unsupported.add(tag)

    def parse_node(self, el) -> SvgNode:
        tag = _local_tag(el)
        kind = "group" if tag == "g" else tag
        declared = _collect_declared(el)
        own_style, own_opacity = _parse_own_style(declared, _StyleContext(ResolvedStyle()))
        transform = geometry.parse_transform(el.get("transform"))
        if not geometry.affine_is_finite(transform):
            raise MalformedXml("non-finite transform matrix")
        clip_ref = None
        clip_raw = el.get("clip-path")
        if clip_raw and clip_raw.strip() != "none":
            m = _URL_RE.match(clip_raw.strip())
            if not m:
                raise MalformedXml(f"unparseable clip-path: {clip_raw!r}")
            clip_ref = m.group(1)
            self.clip_refs.append(clip_ref)
        node = SvgNode(
            kind=kind,
            geometry=_parse_geometry(kind, el, self.vb) if kind != "group" else {},
            transform=transform,
            own_style=own_style,
            own_opacity=own_opacity,
            node_id=el.get("id"),
            clip_ref=clip_ref,
        )
        for paint in (own_style.get("fill"), own_style.get("stroke")):
            if isinstance(paint, GradientRef):
                self.paint_refs.append(paint.ref_id)
        if kind == "use":
            self.use_refs.append(node.geometry["href"])
        if kind == "group":
            for child in el:
                child_tag = _local_tag(child)
                if child_tag in _DROPPED_TAGS:
                    continue
                if child_tag in ("defs", "linearGradient", "radialGradient", "clipPath"):
                    self.parse_defs_child(child)
                    continue
                if child_tag == "g" or child_tag in LEAF_KINDS or child_tag == "use":
                    node.children.append(self.parse_node(child))
                else:
                    self.unsupported.add(child_tag)
        return node


def _parse_view_box(root_el) -> tuple:
    raw = root_el.get("viewBox")
    if raw:
        parts = raw.replace(",", " ").split()
        if len(parts) != 4:
            raise MalformedXml(f"viewBox needs 4 numbers: {raw!r}")
        try:
            vb = tuple(float(p) for p in parts)
        except ValueError as exc:
            raise MalformedXml(f"unparseable viewBox: {raw!r}") from exc
    else:
        w_raw, h_raw = root_el.get("width"), root_el.get("height")
        if not w_raw or not h_raw:
            raise MalformedXml("svg element needs a viewBox or width/height")
        vb = (0.0, 0.0, _parse_length(w_raw), _parse_length(h_raw))
    if not all(math.isfinite(v) for v in vb):
        raise MalformedXml("viewBox values must be finite")
    if vb[2] <= 0 or vb[3] <= 0:
        raise MalformedXml("viewBox must have strictly positive width and height")
    return vb


def parse_svg(data: bytes | str) -> SvgDocument:
    """Parse SVG text into a style-resolved document tree.

    Raises MalformedXml for broken XML, UnsupportedFeature for elements
    outside the supported set, DanglingReference for unresolvable ids.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedXml("input is not UTF-8 text") from exc
        nbytes = len(data)
    else:
        text = data
        nbytes = len(text.encode("utf-8"))
    try:
        root_el = etree.fromstring(text)
    except etree.ParseError as exc:
        raise MalformedXml(f"XML parse error: {exc}") from exc
    if _local_tag(root_el) != "svg":
        raise MalformedXml(f"root element is <{_local_tag(root_el)}>, expected <svg>")

    vb = _parse_view_box(root_el)
    parser = _Parser(vb)

    root = SvgNode(kind="group")
    declared = _collect_declared(root_el)
    root.own_style, root.own_opacity = _parse_own_style(declared, _StyleContext(ResolvedStyle()))
    for child in root_el:
        tag = _local_tag(child)
        if tag in _DROPPED_TAGS:
            continue
        if tag in ("defs", "linearGradient", "radialGradient", "clipPath"):
            parser.parse_defs_child(child)
            continue
        if tag == "g" or tag in LEAF_KINDS or tag == "use":
            root.children.append(parser.parse_node(child))
        else:
            parser.unsupported.add(tag)

    if parser.unsupported:
        raise UnsupportedFeature(parser.unsupported)

    # Fold gradient href inheritance (stops flow from the referenced gradient).
    for gid, href in parser.gradient_hrefs.items():
        seen = {gid}
        target = href
        while True:
            if target in seen:
                raise CyclicReference(f"gradient href cycle at #{target}")
            seen.add(target)
            base = parser.defs.get(target)
            if base is None:
                raise DanglingReference(target)
            if not isinstance(base, Gradient):
                raise DanglingReference(target)
            if not parser.defs[gid].stops:
                parser.defs[gid].stops = list(base.stops)
            target = parser.gradient_hrefs.get(target)
            if target is None:
                break

    doc = SvgDocument(view_box=vb, root=root, defs=parser.defs,
                      source_bytes=nbytes)
    w_raw, h_raw = root_el.get("width"), root_el.get("height")
    if w_raw and not w_raw.strip().endswith("%"):
        doc.width = _parse_length(w_raw)
    if h_raw and not h_raw.strip().endswith("%"):
        doc.height = _parse_length(h_raw)

    # Reference validation.
    for ref in parser.paint_refs:
        if not isinstance(doc.defs.get(ref), Gradient):
            raise DanglingReference(ref)
    for ref in parser.clip_refs:
        if not isinstance(doc.defs.get(ref), ClipPathDef):
            raise DanglingReference(ref)
    for ref in parser.use_refs:
        target = doc.defs.get(ref)
        if isinstance(target, (Gradient, ClipPathDef)):
            raise DanglingReference(ref)
        if target is None and doc.find_paint_node(ref) is None:
            raise DanglingReference(ref)
    for entry in doc.defs.values():
        if isinstance(entry, SvgNode):
            for sub in entry.iter_nodes():
                for paint in (sub.own_style.get("fill"), sub.own_style.get("stroke")):
                    if isinstance(paint, GradientRef) and \
                            not isinstance(doc.defs.get(paint.ref_id), Gradient):
                        raise DanglingReference(paint.ref_id)

    resolve_styles(root)
    for entry in doc.defs.values():
        if isinstance(entry, SvgNode):
            resolve_styles(entry)
        elif isinstance(entry, ClipPathDef):
            for shape in entry.shapes:
                resolve_styles(shape)
    return doc


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _round_value(v: float, precision: int) -> float:
    # Quantize the shortest decimal representation half-even so canonical
    # output is what a human reading the decimal digits would expect
    # (binary round() turns 2.0015 into 2.001; the decimal reading is 2.002).
    q = decimal.Decimal(repr(v)).quantize(
        decimal.Decimal(1).scaleb(-precision), rounding=decimal.ROUND_HALF_EVEN)
    return float(q)


def _round_geometry(node: SvgNode, precision: int) -> None:
    geom = node.geometry
    if node.kind == "path":
        rounded = []
        for seg in geom["segments"]:
            rounded.append((seg[0], *(_round_value(v, precision) for v in seg[1:])))
        geom["segments"] = rounded
    elif node.kind in ("polyline", "polygon"):
        geom["points"] = [(_round_value(x, precision), _round_value(y, precision))
                          for x, y in geom["points"]]
    else:
        for key, val in geom.items():
            if isinstance(val, (int, float)) and not isinstance(val, bool):
                geom[key] = _round_value(float(val), precision)
    node.transform = tuple(_round_value(v, precision) for v in node.transform)
    own = node.own_style
    for key in ("stroke_width", "fill_opacity", "stroke_opacity"):
        if key in own:
            own[key] = _round_value(own[key], precision)
    node.own_opacity = _round_value(node.own_opacity, precision)


def _collapse_groups(node: SvgNode) -> None:
    new_children = []
    for child in node.children:
        _collapse_groups(child)
        if child.kind != "group":
            new_children.append(child)
            continue
        if not child.children:
            continue  # empty group: no visual effect
        trivial = (
            geometry.affine_is_identity(child.transform)
            and not child.own_style
            and child.own_opacity == 1.0
            and child.node_id is None
            and child.clip_ref is None
        )
        if trivial and len(child.children) == 1:
            new_children.append(child.children[0])
        else:
            new_children.append(child)
    node.children = new_children


def _referenced_ids(doc: SvgDocument) -> set:
    refs: set = set()

    def visit_node(node: SvgNode) -> None:
        for paint in (node.own_style.get("fill"), node.own_style.get("stroke")):
            if isinstance(paint, GradientRef):
                refs.add(paint.ref_id)
        if node.clip_ref:
            refs.add(node.clip_ref)
        if node.kind == "use":
            refs.add(node.geometry["href"])
        for child in node.children:
            visit_node(child)

    visit_node(doc.root)
    # References reachable only through defs entries count as well.
    changed = True
    while changed:
        changed = False
        for did, entry in doc.defs.items():
            if did not in refs:
                continue
            if isinstance(entry, SvgNode):
                for sub in entry.iter_nodes():
                    for paint in (sub.own_style.get("fill"), sub.own_style.get("stroke")):
                        if isinstance(paint, GradientRef) and paint.ref_id not in refs:
                            refs.add(paint.ref_id)
                            changed = True
                    if sub.kind == "use" and sub.geometry["href"] not in refs:
                        refs.add(sub.geometry["href"])
                        changed = True
                    if sub.clip_ref and sub.clip_ref not in refs:
                        refs.add(sub.clip_ref)
                        changed = True
            elif isinstance(entry, ClipPathDef):
                for shape in entry.shapes:
                    for paint in (shape.own_style.get("fill"), shape.own_style.get("stroke")):
                        if isinstance(paint, GradientRef) and paint.ref_id not in refs:
                            refs.add(paint.ref_id)
                            changed = True
    return refs


def normalize(doc: SvgDocument, precision: int = DEFAULT_PRECISION) -> SvgDocument:
    """SVGO-style cleanup: drop dead defs, collapse trivial groups, round numbers.

    Pure transformation; rendering stays pixel-equivalent within the raster
    tolerance used throughout the pipeline.
    """
    import copy

    doc = copy.deepcopy(doc)
    _collapse_groups(doc.root)
    # Run empty-group removal to a fixed point (unwrapping can empty a parent).
    for _ in range(8):
        before = sum(1 for _ in doc.root.iter_nodes())
        _collapse_groups(doc.root)
        if sum(1 for _ in doc.root.iter_nodes()) == before:
            break

    refs = _referenced_ids(doc)
    painted_ids = {n.node_id for n in doc.root.iter_nodes() if n.node_id}
    doc.defs = {k: v for k, v in doc.defs.items() if k in refs and k not in painted_ids}

    for node in doc.root.iter_nodes():
        _round_geometry(node, precision)
    for entry in doc.defs.values():
        if isinstance(entry, SvgNode):
            for node in entry.iter_nodes():
                _round_geometry(node, precision)
        elif isinstance(entry, ClipPathDef):
            for shape in entry.shapes:
                _round_geometry(shape, precision)
        elif isinstance(entry, Gradient):
            entry.coords = {k: _round_value(v, precision) for k, v in entry.coords.items()}
            entry.transform = tuple(_round_value(v, precision) for v in entry.transform)
            entry.stops = [
                GradientStop(_round_value(s.offset, precision), s.color,
                             _round_value(s.opacity, precision))
                for s in entry.stops
            ]

    resolve_styles(doc.root)
    for entry in doc.defs.values():
        if isinstance(entry, SvgNode):
            resolve_styles(entry)
        elif isinstance(entry, ClipPathDef):
            for shape in entry.shapes:
                resolve_styles(shape)
    return doc


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _paint_text(paint: Paint) -> str:
    if paint is None:
        return "none"
    if isinstance(paint, GradientRef):
        return f"url(#{paint.ref_id})"
    return paint.to_hex()


_STYLE_ATTR_ORDER = [
    ("fill", "fill"),
    ("fill-opacity", "fill_opacity"),
    ("fill-rule", "fill_rule"),
    ("opacity", None),             # own opacity, handled specially
    ("stroke", "stroke"),
    ("stroke-linecap", "stroke_linecap"),
    ("stroke-opacity", "stroke_opacity"),
    ("stroke-width", "stroke_width"),
]

_GEOMETRY_ATTR_ORDER = {
    "path": ["d"],
    "rect": ["x", "y", "width", "height", "rx", "ry"],
    "circle": ["cx", "cy", "r"],
    "ellipse": ["cx", "cy", "rx", "ry"],
    "line": ["x1", "y1", "x2", "y2"],
    "polyline": ["points"],
    "polygon": ["points"],
    "use": ["href", "x", "y"],
}


def _geometry_attrs(node: SvgNode) -> list:
    attrs = []
    geom = node.geometry
    for name in _GEOMETRY_ATTR_ORDER.get(node.kind, []):
        if node.kind == "path" and name == "d":
            attrs.append(("d", geometry.serialize_path_data(geom["segments"])))
        elif node.kind in ("polyline", "polygon") and name == "points":
            attrs.append(("points", " ".join(
                f"{format_number(x)},{format_number(y)}" for x, y in geom["points"])))
        elif node.kind == "use" and name == "href":
            attrs.append(("href", f"#{geom['href']}"))
        else:
            val = geom.get(name)
            if val is None:
                continue
            if name in ("x", "y", "cx", "cy", "x1", "y1", "x2", "y2") and val == 0 \
                    and node.kind != "use":
                continue
            attrs.append((name, format_number(val)))
    return attrs


def _node_attrs(node: SvgNode) -> list:
    attrs = []
    if node.node_id:
        attrs.append(("id", node.node_id))
    attrs.extend(_geometry_attrs(node))
    if not geometry.affine_is_identity(node.transform):
        attrs.append(("transform", "matrix(" + " ".join(
            format_number(v) for v in node.transform) + ")"))
    if node.clip_ref:
        attrs.append(("clip-path", f"url(#{node.clip_ref})"))
    own = node.own_style
    for attr_name, key in _STYLE_ATTR_ORDER:
        if attr_name == "opacity":
            if node.own_opacity != 1.0:
                attrs.append(("opacity", format_number(node.own_opacity)))
            continue
        if key not in own:
            continue
        val = own[key]
        if key in ("fill", "stroke"):
            attrs.append((attr_name, _paint_text(val)))
        elif key in ("fill_rule", "stroke_linecap"):
            attrs.append((attr_name, val))
        else:
            attrs.append((attr_name, format_number(val)))
    if "color" in own:
        attrs.append(("color", own["color"].to_hex()))
    return attrs


def _emit(tag: str, attrs: list, children: list) -> str:
    head = tag + "".join(f' {k}="{v}"' for k, v in attrs)
    if not children:
        return f"<{head}/>"
    return f"<{head}>" + "".join(children) + f"</{tag}>"


def _emit_node(node: SvgNode) -> str:
    tag = "g" if node.kind == "group" else node.kind
    return _emit(tag, _node_attrs(node), [_emit_node(c) for c in node.children])


def _emit_gradient(gid: str, grad: Gradient) -> str:
    tag = "linearGradient" if grad.kind == "linear" else "radialGradient"
    attrs = [("id", gid)]
    if grad.kind == "linear":
        for name in ("x1", "y1", "x2", "y2"):
            attrs.append((name, format_number(grad.coords[name])))
    else:
        for name in ("cx", "cy", "r"):
            attrs.append((name, format_number(grad.coords[name])))
        if grad.coords.get("fx") != grad.coords.get("cx") or \
                grad.coords.get("fy") != grad.coords.get("cy"):
            attrs.append(("fx", format_number(grad.coords["fx"])))
            attrs.append(("fy", format_number(grad.coords["fy"])))
    if grad.units != "objectBoundingBox":
        attrs.append(("gradientUnits", grad.units))
    if not geometry.affine_is_identity(grad.transform):
        attrs.append(("gradientTransform", "matrix(" + " ".join(
            format_number(v) for v in grad.transform) + ")"))
    if grad.spread != "pad":
        attrs.append(("spreadMethod", grad.spread))
    stops = []
    for stop in grad.stops:
        stop_attrs = [("offset", format_number(stop.offset)),
                      ("stop-color", stop.color.to_hex())]
        if stop.opacity != 1.0:
            stop_attrs.append(("stop-opacity", format_number(stop.opacity)))
        stops.append(_emit("stop", stop_attrs, []))
    return _emit(tag, attrs, stops)


def _emit_def(did: str, entry) -> str:
    if isinstance(entry, Gradient):
        return _emit_gradient(did, entry)
    if isinstance(entry, ClipPathDef):
        attrs = [("id", did)]
        if entry.units != "userSpaceOnUse":
            attrs.append(("clipPathUnits", entry.units))
        return _emit("clipPath", attrs, [_emit_node(s) for s in entry.shapes])
    entry.node_id = did
    return _emit_node(entry)


def serialize(doc: SvgDocument) -> bytes:
    """Canonical standalone SVG text; same tree always yields identical bytes."""
    vb = " ".join(format_number(v) for v in doc.view_box)
    attrs = [("xmlns", SVG_NS), ("viewBox", vb)]
    if doc.width is not None:
        attrs.append(("width", format_number(doc.width)))
    if doc.height is not None:
        attrs.append(("height", format_number(doc.height)))
    attrs.extend(_node_attrs(SvgNode(kind="group", own_style=doc.root.own_style,
                                     own_opacity=doc.root.own_opacity)))
    children = []
    if doc.defs:
        defs_children = [_emit_def(did, doc.defs[did]) for did in sorted(doc.defs)]
        children.append(_emit("defs", [], defs_children))
    children.extend(_emit_node(c) for c in doc.root.children)
    return _emit("svg", attrs, children).encode("utf-8")


def svg_length(doc: SvgDocument) -> int:
    """Byte length of the canonical serialization (the curation size metric)."""
    return len(serialize(doc))


# ---------------------------------------------------------------------------
# Structural equality (round-trip checks)
# ---------------------------------------------------------------------------

def _nodes_equal(a: SvgNode, b: SvgNode) -> bool:
    if (a.kind, a.node_id, a.clip_ref, a.own_opacity) != \
            (b.kind, b.node_id, b.clip_ref, b.own_opacity):
        return False
    if a.transform != b.transform or a.own_style != b.own_style:
        return False
    if a.geometry != b.geometry:
        return False
    if len(a.children) != len(b.children):
        return False
    return all(_nodes_equal(x, y) for x, y in zip(a.children, b.children))


def _defs_equal(a: dict, b: dict) -> bool:
    if set(a) != set(b):
        return False
    for key in a:
        ea, eb = a[key], b[key]
        if type(ea) is not type(eb):
            return False
        if isinstance(ea, Gradient):
            if (ea.kind, ea.coords, ea.stops, ea.units, ea.transform, ea.spread) != \
                    (eb.kind, eb.coords, eb.stops, eb.units, eb.transform, eb.spread):
                return False
        elif isinstance(ea, ClipPathDef):
            if ea.units != eb.units or len(ea.shapes) != len(eb.shapes):
                return False
            if not all(_nodes_equal(x, y) for x, y in zip(ea.shapes, eb.shapes)):
                return False
        else:
            if not _nodes_equal(ea, eb):
                return False
    return True


def documents_equal(a: SvgDocument, b: SvgDocument) -> bool:
    """Structural equality: same geometry, styles, transforms, defs, order."""
    if a.view_box != b.view_box or a.width != b.width or a.height != b.height:
        return False
    return _nodes_equal(a.root, b.root) and _defs_equal(a.defs, b.defs)
