"""Affine transforms and SVG path-data handling.

Path data is canonicalized at parse time: every command is made absolute and
rewritten in terms of M / L / C / Z only (H/V become L, quadratics are degree-
elevated to cubics, arcs are approximated by cubic spans with <= 90 degrees of
sweep each). Downstream code therefore only ever sees four commands.
"""

from __future__ import annotations

import math
import re

from .errors import MalformedXml

# Matrix (a, b, c, d, e, f) maps (x, y) -> (a*x + c*y + e, b*x + d*y + f).
Affine = tuple[float, float, float, float, float, float]

IDENTITY: Affine = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)

_NUM_RE = re.compile(r"[-+]?(?:\d*\.\d+|\d+\.?)(?:[Ee][+-]?\d+)?")
_CMD_RE = re.compile(r"[MmLlHhVvCcSsQqTtAaZz]")

# Control-point factor for approximating a quarter circle with one cubic.
_KAPPA = 0.5522847498307936


def affine_multiply(m1: Affine, m2: Affine) -> Affine:
    """Compose two transforms; m2 is applied first, then m1."""
    a1, b1, c1, d1, e1, f1 = m1
    a2, b2, c2, d2, e2, f2 = m2
    return (
        a1 * a2 + c1 * b2,
        b1 * a2 + d1 * b2,
        a1 * c2 + c1 * d2,
        b1 * c2 + d1 * d2,
        a1 * e2 + c1 * f2 + e1,
        b1 * e2 + d1 * f2 + f1,
    )


def affine_apply(m: Affine, x: float, y: float) -> tuple[float, float]:
    a, b, c, d, e, f = m
    return (a * x + c * y + e, b * x + d * y + f)


def affine_invert(m: Affine) -> Affine:
    a, b, c, d, e, f = m
    det = a * d - b * c
    if det == 0:
        raise ZeroDivisionError("singular transform")
    ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
    return (ia, ib, ic, id_, -(ia * e + ic * f), -(ib * e + id_ * f))


def affine_is_identity(m: Affine) -> bool:
    return m == IDENTITY


def affine_is_finite(m: Affine) -> bool:
    return all(math.isfinite(v) for v in m)


def affine_scale_factor(m: Affine) -> float:
    """Geometric-mean scale, used to map stroke widths into device space."""
    a, b, c, d, _, _ = m
    det = abs(a * d - b * c)
    return math.sqrt(det)


def translate(tx: float, ty: float) -> Affine:
    return (1.0, 0.0, 0.0, 1.0, tx, ty)


def scale(sx: float, sy: float | None = None) -> Affine:
    if sy is None:
        sy = sx
    return (sx, 0.0, 0.0, sy, 0.0, 0.0)


def parse_transform(text: str | None) -> Affine:
    """Parse an SVG transform attribute into a single composed matrix."""
    if not text or not text.strip():
        return IDENTITY
    result = IDENTITY
    pos = 0
    func_re = re.compile(r"(matrix|translate|scale|rotate|skewX|skewY)\s*\(([^)]*)\)")
    for match in func_re.finditer(text):
        gap = text[pos:match.start()]
        if gap.strip(" ,\t\n\r"):
            raise MalformedXml(f"bad transform syntax: {text!r}")
        pos = match.end()
        name = match.group(1)
        nums = [float(t) for t in _NUM_RE.findall(match.group(2))]
        if name == "matrix":
            if len(nums) != 6:
                raise MalformedXml(f"matrix() needs 6 numbers: {text!r}")
            m = tuple(nums)
        elif name == "translate":
            if len(nums) not in (1, 2):
                raise MalformedXml(f"translate() needs 1-2 numbers: {text!r}")
            m = translate(nums[0], nums[1] if len(nums) > 1 else 0.0)
        elif name == "scale":
            if len(nums) not in (1, 2):
                raise MalformedXml(f"scale() needs 1-2 numbers: {text!r}")
            m = scale(nums[0], nums[1] if len(nums) > 1 else None)
        elif name == "rotate":
            if len(nums) not in (1, 3):
                raise MalformedXml(f"rotate() needs 1 or 3 numbers: {text!r}")
            ang = math.radians(nums[0])
            ca, sa = math.cos(ang), math.sin(ang)
            m = (ca, sa, -sa, ca, 0.0, 0.0)
            if len(nums) == 3:
                cx, cy = nums[1], nums[2]
                m = affine_multiply(affine_multiply(translate(cx, cy), m), translate(-cx, -cy))
        elif name == "skewX":
            if len(nums) != 1:
                raise MalformedXml(f"skewX() needs 1 number: {text!r}")
            m = (1.0, 0.0, math.tan(math.radians(nums[0])), 1.0, 0.0, 0.0)
        else:  # skewY
            if len(nums) != 1:
                raise MalformedXml(f"skewY() needs 1 number: {text!r}")
            m = (1.0, math.tan(math.radians(nums[0])), 0.0, 1.0, 0.0, 0.0)
        result = affine_multiply(result, m)
    if text[pos:].strip(" ,\t\n\r"):
        raise MalformedXml(f"bad transform syntax: {text!r}")
    return result


# ---------------------------------------------------------------------------
# Path data
# ---------------------------------------------------------------------------
# A parsed path is a list of segments. Segment forms:
#   ("M", x, y)                      move (starts a subpath)
#   ("L", x, y)                      line
#   ("C", x1, y1, x2, y2, x, y)      cubic
#   ("Z",)                           close current subpath
Segment = tuple


class _PathScanner:
    """Token scanner aware of arc-flag packing ("A5 5 0 011 7")."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self, comma_ok: bool = True) -> None:
        allowed = " \t\r\n," if comma_ok else " \t\r\n"
        while self.pos < len(self.text) and self.text[self.pos] in allowed:
            self.pos += 1

    def peek_command(self) -> str | None:
        self.skip_ws()
        if self.pos < len(self.text) and _CMD_RE.match(self.text[self.pos]):
            return self.text[self.pos]
        return None

    def take_command(self) -> str | None:
        cmd = self.peek_command()
        if cmd is not None:
            self.pos += 1
        return cmd

    def number(self) -> float:
        self.skip_ws()
        m = _NUM_RE.match(self.text, self.pos)
        if not m:
            raise MalformedXml(f"expected number at char {self.pos} of path data")
        self.pos = m.end()
        return float(m.group(0))

    def flag(self) -> int:
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] in "01":
            v = int(self.text[self.pos])
            self.pos += 1
            return v
        raise MalformedXml(f"expected arc flag at char {self.pos} of path data")

    def more_arguments(self) -> bool:
        self.skip_ws()
        if self.pos >= len(self.text):
            return False
        return _NUM_RE.match(self.text, self.pos) is not None

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)


def _quad_to_cubic(x0, y0, qx, qy, x, y):
    c1x = x0 + 2.0 / 3.0 * (qx - x0)
    c1y = y0 + 2.0 / 3.0 * (qy - y0)
    c2x = x + 2.0 / 3.0 * (qx - x)
    c2y = y + 2.0 / 3.0 * (qy - y)
    return ("C", c1x, c1y, c2x, c2y, x, y)


def _arc_to_cubics(x0, y0, rx, ry, phi_deg, large_arc, sweep, x, y):
    """Endpoint-parameterized elliptical arc as a run of cubic segments."""
    if x0 == x and y0 == y:
        return []
    rx, ry = abs(rx), abs(ry)
    if rx == 0 or ry == 0:
        return [("L", x, y)]
    phi = math.radians(phi_deg % 360.0)
    cphi, sphi = math.cos(phi), math.sin(phi)
    # Rotate to align the ellipse axes; work on the half-chord.
    dx2, dy2 = (x0 - x) / 2.0, (y0 - y) / 2.0
    x1p = cphi * dx2 + sphi * dy2
    y1p = -sphi * dx2 + cphi * dy2
    lam = (x1p / rx) ** 2 + (y1p / ry) ** 2
    if lam > 1:
        s = math.sqrt(lam)
        rx *= s
        ry *= s
    num = rx * rx * ry * ry - rx * rx * y1p * y1p - ry * ry * x1p * x1p
    den = rx * rx * y1p * y1p + ry * ry * x1p * x1p
    coef = math.sqrt(max(0.0, num / den)) if den else 0.0
    if large_arc == sweep:
        coef = -coef
    cxp = coef * rx * y1p / ry
    cyp = -coef * ry * x1p / rx
    cx = cphi * cxp - sphi * cyp + (x0 + x) / 2.0
    cy = sphi * cxp + cphi * cyp + (y0 + y) / 2.0

    def angle(ux, uy, vx, vy):
        dot = ux * vx + uy * vy
        norm = math.hypot(ux, uy) * math.hypot(vx, vy)
        a = math.acos(max(-1.0, min(1.0, dot / norm)))
        if ux * vy - uy * vx < 0:
            a = -a
        return a

    theta1 = angle(1, 0, (x1p - cxp) / rx, (y1p - cyp) / ry)
    dtheta = angle((x1p - cxp) / rx, (y1p - cyp) / ry, (-x1p - cxp) / rx, (-y1p - cyp) / ry)
    if not sweep and dtheta > 0:
        dtheta -= 2 * math.pi
    elif sweep and dtheta < 0:
        dtheta += 2 * math.pi

    n = max(1, int(math.ceil(abs(dtheta) / (math.pi / 2))))
    delta = dtheta / n
    t = 4.0 / 3.0 * math.tan(delta / 4.0)
    segs = []
    for i in range(n):
        th1 = theta1 + i * delta
        th2 = th1 + delta
        c1, s1 = math.cos(th1), math.sin(th1)
        c2, s2 = math.cos(th2), math.sin(th2)

        def on_ellipse(cth, sth):
            ex = rx * cth
            ey = ry * sth
            return (cphi * ex - sphi * ey + cx, sphi * ex + cphi * ey + cy)

        def deriv(cth, sth):
            ex = -rx * sth
            ey = ry * cth
            return (cphi * ex - sphi * ey, sphi * ex + cphi * ey)

        p1 = on_ellipse(c1, s1)
        p2 = on_ellipse(c2, s2)
        d1 = deriv(c1, s1)
        d2 = deriv(c2, s2)
        segs.append((
            "C",
            p1[0] + t * d1[0], p1[1] + t * d1[1],
            p2[0] - t * d2[0], p2[1] - t * d2[1],
            p2[0], p2[1],
        ))
    if segs:
        last = segs[-1]
        segs[-1] = ("C", last[1], last[2], last[3], last[4], x, y)
    return segs


def parse_path_data(d: str) -> list[Segment]:
    """Parse an SVG path `d` string into canonical absolute M/L/C/Z segments."""
    scanner = _PathScanner(d)
    segments: list[Segment] = []
    cx, cy = 0.0, 0.0          # current point
    sx, sy = 0.0, 0.0          # subpath start
    prev_cubic_ctrl = None     # reflection anchor for S
    prev_quad_ctrl = None      # reflection anchor for T
    last_cmd = None
    after_close = False

    while not scanner.at_end():
        cmd = scanner.take_command()
        if cmd is None:
            if last_cmd is None:
                raise MalformedXml("path data must start with a moveto")
            # Implicit repetition of the previous command; M repeats as L.
            cmd = last_cmd
            if cmd == "M":
                cmd = "L"
            elif cmd == "m":
                cmd = "l"
        rel = cmd.islower()
        op = cmd.upper()
        if op != "Z" and not scanner.more_arguments():
            raise MalformedXml(f"command {cmd!r} is missing arguments")
        if after_close and op not in ("M", "Z"):
            # Drawing straight after a close restarts at the subpath origin.
            segments.append(("M", cx, cy))
        if op != "Z":
            after_close = False

        if op == "M":
            x, y = scanner.number(), scanner.number()
            if rel:
                x += cx
                y += cy
            segments.append(("M", x, y))
            cx, cy = x, y
            sx, sy = x, y
            prev_cubic_ctrl = prev_quad_ctrl = None
        elif op == "L":
            x, y = scanner.number(), scanner.number()
            if rel:
                x += cx
                y += cy
            segments.append(("L", x, y))
            cx, cy = x, y
            prev_cubic_ctrl = prev_quad_ctrl = None
        elif op == "H":
            x = scanner.number()
            if rel:
                x += cx
            segments.append(("L", x, cy))
            cx = x
            prev_cubic_ctrl = prev_quad_ctrl = None
        elif op == "V":
            y = scanner.number()
            if rel:
                y += cy
            segments.append(("L", cx, y))
            cy = y
            prev_cubic_ctrl = prev_quad_ctrl = None
        elif op == "C":
            x1, y1 = scanner.number(), scanner.number()
            x2, y2 = scanner.number(), scanner.number()
            x, y = scanner.number(), scanner.number()
            if rel:
                x1 += cx; y1 += cy; x2 += cx; y2 += cy; x += cx; y += cy
            segments.append(("C", x1, y1, x2, y2, x, y))
            prev_cubic_ctrl = (x2, y2)
            prev_quad_ctrl = None
            cx, cy = x, y
        elif op == "S":
            x2, y2 = scanner.number(), scanner.number()
            x, y = scanner.number(), scanner.number()
            if rel:
                x2 += cx; y2 += cy; x += cx; y += cy
            if prev_cubic_ctrl is not None:
                x1, y1 = 2 * cx - prev_cubic_ctrl[0], 2 * cy - prev_cubic_ctrl[1]
            else:
                x1, y1 = cx, cy
            segments.append(("C", x1, y1, x2, y2, x, y))
            prev_cubic_ctrl = (x2, y2)
            prev_quad_ctrl = None
            cx, cy = x, y
        elif op == "Q":
            qx, qy = scanner.number(), scanner.number()
            x, y = scanner.number(), scanner.number()
            if rel:
                qx += cx; qy += cy; x += cx; y += cy
            segments.append(_quad_to_cubic(cx, cy, qx, qy, x, y))
            prev_quad_ctrl = (qx, qy)
            prev_cubic_ctrl = None
            cx, cy = x, y
        elif op == "T":
            x, y = scanner.number(), scanner.number()
            if rel:
                x += cx; y += cy
            if prev_quad_ctrl is not None:
                qx, qy = 2 * cx - prev_quad_ctrl[0], 2 * cy - prev_quad_ctrl[1]
            else:
                qx, qy = cx, cy
            segments.append(_quad_to_cubic(cx, cy, qx, qy, x, y))
            prev_quad_ctrl = (qx, qy)
            prev_cubic_ctrl = None
            cx, cy = x, y
        elif op == "A":
            rx_, ry_ = scanner.number(), scanner.number()
            rot = scanner.number()
            laf, swf = scanner.flag(), scanner.flag()
            x, y = scanner.number(), scanner.number()
            if rel:
                x += cx; y += cy
            segments.extend(_arc_to_cubics(cx, cy, rx_, ry_, rot, laf, swf, x, y))
            prev_cubic_ctrl = prev_quad_ctrl = None
            cx, cy = x, y
        elif op == "Z":
            segments.append(("Z",))
            cx, cy = sx, sy
            prev_cubic_ctrl = prev_quad_ctrl = None
            after_close = True
        last_cmd = cmd
        if segments and segments[0][0] != "M":
            raise MalformedXml("path data must start with a moveto")
    return segments


def format_number(x: float) -> str:
    """Shortest exact decimal form; integers lose their trailing .0."""
    if x == 0:
        return "0"
    if math.isfinite(x) and x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(float(x))


def serialize_path_data(segments: list[Segment]) -> str:
    parts = []
    for seg in segments:
        parts.append(seg[0] + " ".join(format_number(v) for v in seg[1:]))
    return "".join(parts)


def transform_segments(segments: list[Segment], m: Affine) -> list[Segment]:
    """Map every coordinate pair through an affine transform."""
    if affine_is_identity(m):
        return list(segments)
    out = []
    for seg in segments:
        op = seg[0]
        if op == "Z":
            out.append(seg)
            continue
        coords = []
        vals = seg[1:]
        for i in range(0, len(vals), 2):
            coords.extend(affine_apply(m, vals[i], vals[i + 1]))
        out.append((op, *coords))
    return out


def _flatten_cubic(p0, p1, p2, p3, tolerance, out, depth=0):
    """Adaptive subdivision down to a maximum chord deviation of `tolerance`."""
    # Flatness test: distance of control points from the chord.
    dx, dy = p3[0] - p0[0], p3[1] - p0[1]
    d1 = abs((p1[0] - p0[0]) * dy - (p1[1] - p0[1]) * dx)
    d2 = abs((p2[0] - p0[0]) * dy - (p2[1] - p0[1]) * dx)
    chord2 = dx * dx + dy * dy
    if chord2 >= 1e-18:
        flat = (d1 + d2) * (d1 + d2) <= 4.0 * tolerance * tolerance * chord2
    else:
        # Degenerate chord: flat only if the control points stay close too.
        span = max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]),
                   abs(p2[0] - p0[0]), abs(p2[1] - p0[1]))
        flat = span <= tolerance
    if flat or depth >= 24:
        out.append(p3)
        return
    m01 = ((p0[0] + p1[0]) / 2, (p0[1] + p1[1]) / 2)
    m12 = ((p1[0] + p2[0]) / 2, (p1[1] + p2[1]) / 2)
    m23 = ((p2[0] + p3[0]) / 2, (p2[1] + p3[1]) / 2)
    m012 = ((m01[0] + m12[0]) / 2, (m01[1] + m12[1]) / 2)
    m123 = ((m12[0] + m23[0]) / 2, (m12[1] + m23[1]) / 2)
    mid = ((m012[0] + m123[0]) / 2, (m012[1] + m123[1]) / 2)
    _flatten_cubic(p0, m01, m012, mid, tolerance, out, depth + 1)
    _flatten_cubic(mid, m123, m23, p3, tolerance, out, depth + 1)


def flatten_segments(segments: list[Segment], tolerance: float = 0.25):
    """Flatten M/L/C/Z segments into polylines.

    Returns a list of (points, closed) pairs, points being [(x, y), ...].
    """
    subpaths = []
    points: list[tuple[float, float]] = []
    closed = False

    def finish():
        nonlocal points, closed
        if len(points) >= 2:
            subpaths.append((points, closed))
        points = []
        closed = False

    cur = None
    for seg in segments:
        op = seg[0]
        if op == "M":
            finish()
            cur = (seg[1], seg[2])
            points = [cur]
        elif op == "L":
            cur = (seg[1], seg[2])
            points.append(cur)
        elif op == "C":
            p0 = cur if cur is not None else (seg[5], seg[6])
            buf: list[tuple[float, float]] = []
            _flatten_cubic(p0, (seg[1], seg[2]), (seg[3], seg[4]),
                           (seg[5], seg[6]), tolerance, buf)
            points.extend(buf)
            cur = (seg[5], seg[6])
        elif op == "Z":
            if points:
                closed = True
                cur = points[0]
                finish()
    finish()
    return subpaths


def segments_bbox(segments: list[Segment]) -> tuple[float, float, float, float] | None:
    """Tight-ish bounding box (x, y, w, h) using flattened geometry."""
    xs: list[float] = []
    ys: list[float] = []
    for pts, _ in flatten_segments(segments, tolerance=0.05):
        xs.extend(p[0] for p in pts)
        ys.extend(p[1] for p in pts)
    if not xs:
        return None
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    return (x0, y0, x1 - x0, y1 - y0)


def ellipse_to_segments(cx: float, cy: float, rx: float, ry: float) -> list[Segment]:
    """Ellipse outline as four cubic arcs, starting at the +x extreme."""
    kx, ky = _KAPPA * rx, _KAPPA * ry
    return [
        ("M", cx + rx, cy),
        ("C", cx + rx, cy + ky, cx + kx, cy + ry, cx, cy + ry),
        ("C", cx - kx, cy + ry, cx - rx, cy + ky, cx - rx, cy),
        ("C", cx - rx, cy - ky, cx - kx, cy - ry, cx, cy - ry),
        ("C", cx + kx, cy - ry, cx + rx, cy - ky, cx + rx, cy),
        ("Z",),
    ]


def rounded_rect_to_segments(x, y, w, h, rx, ry) -> list[Segment]:
    # SVG auto-rx/ry rules: an unset radius copies the other one.
    if rx is None:
        rx = ry if ry is not None else 0.0
    if ry is None:
        ry = rx
    rx = min(rx, w / 2)
    ry = min(ry, h / 2)
    if rx <= 0 or ry <= 0:
        return [("M", x, y), ("L", x + w, y), ("L", x + w, y + h), ("L", x, y + h), ("Z",)]
    kx, ky = _KAPPA * rx, _KAPPA * ry
    return [
        ("M", x + rx, y),
        ("L", x + w - rx, y),
        ("C", x + w - rx + kx, y, x + w, y + ry - ky, x + w, y + ry),
        ("L", x + w, y + h - ry),
        ("C", x + w, y + h - ry + ky, x + w - rx + kx, y + h, x + w - rx, y + h),
        ("L", x + rx, y + h),
        ("C", x + rx - kx, y + h, x, y + h - ry + ky, x, y + h - ry),
        ("L", x, y + ry),
        ("C", x, y + ry - ky, x + rx - kx, y, x + rx, y),
        ("Z",),
    ]
