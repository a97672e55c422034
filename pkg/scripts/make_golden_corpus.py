#!/usr/bin/env python3
"""Regenerate the committed golden SVG corpus under tests/corpus/.

The corpus is deterministic (fixed seed, fixed formatting) so re-running this
script never churns the checked-in files.  It contains:

* ``crosscheck_*``  - single large flat-filled primitives.  These are simple
  enough to re-render independently with matplotlib, giving the renderer an
  external reference oracle.
* ``feature_*``     - handcrafted documents exercising one feature each:
  gradients (both unit systems, focal points, spread methods), clip paths,
  ``use`` reuse, path commands (arcs, smooth curves), caps, fill rules,
  opacity stacking, and letterboxed viewBoxes.
* ``scene_*``       - seeded random multi-primitive scenes.
* ``bad_*``         - documents the ingest stage must reject (malformed XML,
  unsupported elements, dangling references, oversized files, degenerate
  viewBox) plus ``dup_*`` duplicates for deduplication.

Usage::

    python3 scripts/make_golden_corpus.py [--out DIR] [--verify]
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#17becf", "crimson", "teal", "gold", "navy",
    "darkorange", "seagreen", "indigo", "sienna",
]

SEED = 20240817


def svg(body: str, view_box: str = "0 0 64 64") -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{view_box}">'
            f"{body}</svg>\n")


def poly_points(cx: float, cy: float, r: float, k: int, phase: float = -90.0) -> str:
    import math

    pts = []
    for i in range(k):
        a = math.radians(phase + 360.0 * i / k)
        pts.append(f"{cx + r * math.cos(a):.1f},{cy + r * math.sin(a):.1f}")
    return " ".join(pts)


def crosscheck_files() -> dict[str, str]:
    """Single large solid shapes; each covers >20% of the canvas."""
    files: dict[str, str] = {}
    rects = [
        (8, 8, 48, 48), (4, 16, 56, 32), (16, 4, 32, 56),
        (10, 10, 40, 28), (20, 20, 36, 36), (6, 30, 52, 24),
    ]
    for i, (x, y, w, h) in enumerate(rects):
        color = PALETTE[i % len(PALETTE)]
        files[f"crosscheck_rect_{i:02d}"] = svg(
            f'<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{color}"/>')
    circles = [(32, 32, 24), (24, 24, 18), (40, 36, 20), (32, 28, 14),
               (28, 40, 16), (36, 20, 15)]
    for i, (cx, cy, r) in enumerate(circles):
        color = PALETTE[(i + 6) % len(PALETTE)]
        files[f"crosscheck_circle_{i:02d}"] = svg(
            f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="{color}"/>')
    ellipses = [(32, 32, 26, 16), (30, 34, 14, 22), (36, 28, 20, 12),
                (26, 30, 18, 18)]
    for i, (cx, cy, rx, ry) in enumerate(ellipses):
        color = PALETTE[(i + 12) % len(PALETTE)]
        files[f"crosscheck_ellipse_{i:02d}"] = svg(
            f'<ellipse cx="{cx}" cy="{cy}" rx="{rx}" ry="{ry}" fill="{color}"/>')
    polys = [
        poly_points(32, 34, 26, 3),
        poly_points(32, 32, 24, 3, phase=30),
        poly_points(30, 32, 22, 3, phase=180),
        poly_points(32, 32, 25, 4, phase=45),
        poly_points(32, 32, 24, 4),
        poly_points(32, 32, 25, 5),
        poly_points(32, 32, 24, 6),
        poly_points(32, 32, 24, 8),
    ]
    for i, pts in enumerate(polys):
        color = PALETTE[(i + 3) % len(PALETTE)]
        files[f"crosscheck_polygon_{i:02d}"] = svg(
            f'<polygon points="{pts}" fill="{color}"/>')
    return files


def feature_files() -> dict[str, str]:
    f: dict[str, str] = {}
    f["feature_lineargrad_obb"] = svg(
        '<defs><linearGradient id="lg1">'
        '<stop offset="0" stop-color="#1f77b4"/>'
        '<stop offset="1" stop-color="#ff7f0e"/>'
        '</linearGradient></defs>'
        '<rect x="8" y="8" width="48" height="48" fill="url(#lg1)"/>')
    f["feature_lineargrad_user"] = svg(
        '<defs><linearGradient id="lg2" gradientUnits="userSpaceOnUse" '
        'x1="0" y1="0" x2="64" y2="0" '
        'gradientTransform="rotate(45 32 32)">'
        '<stop offset="0" stop-color="crimson"/>'
        '<stop offset="0.5" stop-color="gold"/>'
        '<stop offset="1" stop-color="teal"/>'
        '</linearGradient></defs>'
        '<rect x="4" y="4" width="56" height="56" fill="url(#lg2)"/>')
    f["feature_radialgrad_obb"] = svg(
        '<defs><radialGradient id="rg1">'
        '<stop offset="0" stop-color="#fff7bc"/>'
        '<stop offset="1" stop-color="#d95f0e"/>'
        '</radialGradient></defs>'
        '<circle cx="32" cy="32" r="26" fill="url(#rg1)"/>')
    f["feature_radialgrad_focal"] = svg(
        '<defs><radialGradient id="rg2" gradientUnits="userSpaceOnUse" '
        'cx="32" cy="32" r="20" fx="24" fy="24" spreadMethod="reflect">'
        '<stop offset="0" stop-color="#9467bd"/>'
        '<stop offset="1" stop-color="#e377c2"/>'
        '</radialGradient></defs>'
        '<rect x="2" y="2" width="60" height="60" fill="url(#rg2)"/>')
    f["feature_radialgrad_repeat"] = svg(
        '<defs><radialGradient id="rg3" gradientUnits="userSpaceOnUse" '
        'cx="30" cy="30" r="12" spreadMethod="repeat">'
        '<stop offset="0" stop-color="navy"/>'
        '<stop offset="1" stop-color="#17becf"/>'
        '</radialGradient></defs>'
        '<rect x="6" y="6" width="52" height="52" fill="url(#rg3)"/>')
    f["feature_clip_rect"] = svg(
        '<defs><clipPath id="cp1">'
        '<rect x="12" y="12" width="40" height="40"/>'
        '</clipPath></defs>'
        '<g clip-path="url(#cp1)">'
        '<circle cx="16" cy="16" r="14" fill="#1f77b4"/>'
        '<circle cx="48" cy="48" r="14" fill="#d62728"/>'
        '<circle cx="32" cy="32" r="12" fill="gold"/>'
        '</g>')
    f["feature_clip_circle_transform"] = svg(
        '<defs><clipPath id="cp2">'
        '<circle cx="32" cy="32" r="20"/>'
        '</clipPath></defs>'
        '<rect x="0" y="0" width="64" height="64" fill="seagreen" '
        'clip-path="url(#cp2)" transform="translate(4 2)"/>')
    f["feature_use_chain"] = svg(
        '<defs><rect id="brick" x="0" y="0" width="20" height="12" '
        'fill="sienna"/></defs>'
        '<use href="#brick" x="6" y="10"/>'
        '<use href="#brick" x="30" y="10" fill="#8c564b"/>'
        '<use href="#brick" x="18" y="26" transform="rotate(10 28 32)"/>'
        '<use href="#brick" x="6" y="42" transform="scale(1.2)"/>')
    f["feature_evenodd_star"] = svg(
        f'<polygon points="{poly_points(32, 34, 26, 5)} '
        f'{poly_points(32, 34, 11, 5, phase=-54)}" '
        'fill="#ff7f0e" fill-rule="evenodd"/>')
    f["feature_nonzero_overlap"] = svg(
        '<path d="M 10 10 L 54 10 L 54 54 L 10 54 Z '
        'M 22 22 L 42 22 L 42 42 L 22 42 Z" fill="#2ca02c"/>')
    f["feature_polyline_stroke"] = svg(
        '<polyline points="6,50 20,18 32,44 46,12 58,38" fill="none" '
        'stroke="#d62728" stroke-width="5" stroke-linecap="round"/>')
    f["feature_line_caps"] = svg(
        '<line x1="10" y1="14" x2="54" y2="14" stroke="navy" '
        'stroke-width="8" stroke-linecap="butt"/>'
        '<line x1="10" y1="32" x2="54" y2="32" stroke="teal" '
        'stroke-width="8" stroke-linecap="round"/>'
        '<line x1="10" y1="50" x2="54" y2="50" stroke="indigo" '
        'stroke-width="8" stroke-linecap="square"/>')
    f["feature_rounded_rect"] = svg(
        '<rect x="8" y="12" width="48" height="40" rx="10" fill="#9467bd"/>')
    f["feature_arc_pie"] = svg(
        '<path d="M 32 32 L 32 6 A 26 26 0 1 1 8.9 44.2 Z" fill="gold"/>'
        '<path d="M 32 32 L 8.9 44.2 A 26 26 0 0 1 32 6 Z" fill="navy"/>')
    f["feature_smooth_curves"] = svg(
        '<path d="M 6 40 Q 16 8 32 34 T 58 30 L 58 56 L 6 56 Z" '
        'fill="#17becf"/>')
    f["feature_opacity_stack"] = svg(
        '<g opacity="0.8">'
        '<rect x="6" y="6" width="36" height="36" fill="crimson"/>'
        '<g opacity="0.5">'
        '<circle cx="40" cy="40" r="18" fill="navy" fill-opacity="0.9"/>'
        '</g></g>')
    f["feature_transform_mix"] = svg(
        '<g transform="translate(32 32) rotate(30) scale(1.4 0.8)">'
        '<rect x="-18" y="-12" width="36" height="24" fill="#2ca02c"/>'
        '</g>'
        '<g transform="matrix(0.9 0.2 -0.2 0.9 6 4)">'
        '<ellipse cx="20" cy="44" rx="12" ry="7" fill="darkorange"/>'
        '</g>')
    f["feature_stroke_and_fill"] = svg(
        '<rect x="12" y="12" width="40" height="40" fill="#e377c2" '
        'fill-opacity="0.7" stroke="#1f77b4" stroke-width="4" '
        'stroke-opacity="0.8"/>')
    f["feature_css_style_attr"] = svg(
        '<rect x="10" y="10" width="44" height="30" '
        'style="fill: rgb(20%, 40%, 80%); stroke: rgb(200,30,30); '
        'stroke-width: 3"/>'
        '<circle cx="32" cy="50" r="9" style="fill:#2ca02c;fill-opacity:0.85"/>')
    f["feature_letterbox"] = svg(
        '<rect x="0" y="0" width="120" height="80" fill="#deebf7"/>'
        '<circle cx="60" cy="40" r="30" fill="#3182bd"/>'
        '<rect x="10" y="10" width="24" height="60" fill="#9ecae1"/>',
        view_box="0 0 120 80")
    return f


def _rand_color(rng: random.Random) -> str:
    return rng.choice(PALETTE)


def _rand_transform(rng: random.Random) -> str:
    kind = rng.randrange(4)
    if kind == 0:
        return f'translate({rng.uniform(-8, 8):.1f} {rng.uniform(-8, 8):.1f})'
    if kind == 1:
        return (f'rotate({rng.uniform(-40, 40):.1f} '
                f'{rng.uniform(20, 44):.1f} {rng.uniform(20, 44):.1f})')
    if kind == 2:
        return f'scale({rng.uniform(0.7, 1.3):.2f})'
    return (f'matrix({rng.uniform(0.8, 1.2):.2f} {rng.uniform(-0.2, 0.2):.2f} '
            f'{rng.uniform(-0.2, 0.2):.2f} {rng.uniform(0.8, 1.2):.2f} '
            f'{rng.uniform(-4, 4):.1f} {rng.uniform(-4, 4):.1f})')


def _rand_primitive(rng: random.Random, extent: float) -> str:
    lo, hi = extent * 0.1, extent * 0.9
    fill = _rand_color(rng)
    kind = rng.randrange(7)
    if kind == 0:
        x, y = rng.uniform(lo, hi * 0.7), rng.uniform(lo, hi * 0.7)
        w, h = rng.uniform(8, extent * 0.5), rng.uniform(8, extent * 0.5)
        rx = f' rx="{rng.uniform(1, 5):.1f}"' if rng.random() < 0.3 else ""
        return (f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" '
                f'height="{h:.1f}"{rx} fill="{fill}"/>')
    if kind == 1:
        cx, cy = rng.uniform(lo, hi), rng.uniform(lo, hi)
        r = rng.uniform(4, extent * 0.3)
        op = (f' fill-opacity="{rng.uniform(0.5, 1.0):.2f}"'
              if rng.random() < 0.4 else "")
        return f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{r:.1f}"{op} fill="{fill}"/>'
    if kind == 2:
        cx, cy = rng.uniform(lo, hi), rng.uniform(lo, hi)
        rx, ry = rng.uniform(4, extent * 0.25), rng.uniform(4, extent * 0.25)
        return (f'<ellipse cx="{cx:.1f}" cy="{cy:.1f}" rx="{rx:.1f}" '
                f'ry="{ry:.1f}" fill="{fill}"/>')
    if kind == 3:
        x1, y1 = rng.uniform(lo, hi), rng.uniform(lo, hi)
        x2, y2 = rng.uniform(lo, hi), rng.uniform(lo, hi)
        cap = rng.choice(["butt", "round", "square"])
        return (f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                f'stroke="{fill}" stroke-width="{rng.uniform(2, 5):.1f}" '
                f'stroke-linecap="{cap}"/>')
    if kind == 4:
        pts = " ".join(
            f"{rng.uniform(lo, hi):.1f},{rng.uniform(lo, hi):.1f}"
            for _ in range(rng.randrange(3, 6)))
        return (f'<polyline points="{pts}" fill="none" stroke="{fill}" '
                f'stroke-width="{rng.uniform(1.5, 4):.1f}"/>')
    if kind == 5:
        cx, cy = rng.uniform(lo + 8, hi - 8), rng.uniform(lo + 8, hi - 8)
        pts = poly_points(cx, cy, rng.uniform(6, extent * 0.2),
                          rng.randrange(3, 8), phase=rng.uniform(0, 360))
        return f'<polygon points="{pts}" fill="{fill}"/>'
    x0, y0 = rng.uniform(lo, hi * 0.6), rng.uniform(lo, hi * 0.6)
    x1, y1 = x0 + rng.uniform(8, 20), y0 + rng.uniform(-6, 6)
    x2, y2 = x0 + rng.uniform(4, 16), y0 + rng.uniform(8, 20)
    c1x, c1y = x0 + rng.uniform(-6, 6), y0 - rng.uniform(2, 10)
    return (f'<path d="M {x0:.1f} {y0:.1f} C {c1x:.1f} {c1y:.1f} '
            f'{x1:.1f} {y1:.1f} {x1:.1f} {y1:.1f} L {x2:.1f} {y2:.1f} Z" '
            f'fill="{fill}"/>')


def scene_files(count: int = 70) -> dict[str, str]:
    rng = random.Random(SEED)
    files: dict[str, str] = {}
    boxes = ["0 0 64 64", "0 0 100 100", "0 0 120 80", "-10 -10 84 84"]
    for i in range(count):
        vb = boxes[i % len(boxes)]
        extent = float(vb.split()[2])
        parts: list[str] = []
        defs: list[str] = []
        n_prims = rng.randrange(3, 10)
        if rng.random() < 0.25:
            gid = f"g{i}"
            c1, c2 = _rand_color(rng), _rand_color(rng)
            if rng.random() < 0.5:
                defs.append(
                    f'<linearGradient id="{gid}">'
                    f'<stop offset="0" stop-color="{c1}"/>'
                    f'<stop offset="1" stop-color="{c2}"/></linearGradient>')
            else:
                defs.append(
                    f'<radialGradient id="{gid}">'
                    f'<stop offset="0" stop-color="{c1}"/>'
                    f'<stop offset="1" stop-color="{c2}"/></radialGradient>')
            x, y = rng.uniform(4, extent / 2), rng.uniform(4, extent / 2)
            w = rng.uniform(extent * 0.3, extent * 0.6)
            parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" '
                         f'height="{w:.1f}" fill="url(#{gid})"/>')
            n_prims -= 1
        for _ in range(n_prims):
            prim = _rand_primitive(rng, extent)
            roll = rng.random()
            if roll < 0.2:
                prim = f'<g transform="{_rand_transform(rng)}">{prim}</g>'
            elif roll < 0.3:
                prim = f'<g opacity="{rng.uniform(0.6, 0.95):.2f}">{prim}</g>'
            parts.append(prim)
        if rng.random() < 0.15:
            cid = f"c{i}"
            m = extent * 0.12
            defs.append(f'<clipPath id="{cid}"><rect x="{m:.1f}" y="{m:.1f}" '
                        f'width="{extent - 2 * m:.1f}" '
                        f'height="{extent - 2 * m:.1f}"/></clipPath>')
            k = rng.randrange(1, min(3, len(parts)) + 1)
            clipped = "".join(parts[:k])
            parts = [f'<g clip-path="url(#{cid})">{clipped}</g>'] + parts[k:]
        body = (f"<defs>{''.join(defs)}</defs>" if defs else "") + "".join(parts)
        files[f"scene_{i:02d}"] = svg(body, view_box=vb)
    return files


def reject_files(good: dict[str, str]) -> dict[str, str]:
    files: dict[str, str] = {}
    files["bad_malformed"] = '<svg xmlns="http://www.w3.org/2000/svg"><rect\n'
    files["bad_unsupported_text"] = svg('<text x="10" y="30">hello</text>')
    files["bad_dangling_ref"] = svg(
        '<rect x="4" y="4" width="40" height="40" fill="url(#nope)"/>')
    many = "".join(
        f'<rect x="{i % 40}.25" y="{i // 40}.75" width="3.5" height="2.5" '
        f'fill="#0{i % 10}12a{i % 10}"/>' for i in range(400))
    files["bad_oversized"] = svg(many)
    files["bad_degenerate_viewbox"] = (
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 0 64">'
        '<rect x="0" y="0" width="10" height="10" fill="red"/></svg>\n')
    files["dup_of_scene_00"] = good["scene_00"]
    files["dup_of_crosscheck_rect_00"] = good["crosscheck_rect_00"]
    return files


def build_corpus() -> dict[str, str]:
    files: dict[str, str] = {}
    files.update(crosscheck_files())
    files.update(feature_files())
    files.update(scene_files())
    files.update(reject_files(files))
    return files


def verify(out_dir: Path) -> int:
    """Run every good file through the full parse/flatten/render path."""
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
    from svgpipe import core, raster, reconstruct

    failures = 0
    good = sorted(p for p in out_dir.glob("*.svg")
                  if not p.name.startswith(("bad_", "dup_")))
    for path in good:
        try:
            doc = core.normalize(core.parse_svg(path.read_bytes()))
            canonical = core.serialize(doc)
            assert len(canonical) <= 8192, f"{len(canonical)} bytes"
            seq = reconstruct.flatten(core.parse_svg(canonical))
            seq = reconstruct.prune_invisible(seq, size=128)
            raster.render_prefixes([s.doc for s in seq.steps], size=128,
                                   check_locality=True)
        except Exception as exc:  # noqa: BLE001 - report and keep going
            failures += 1
            print(f"FAIL {path.name}: {type(exc).__name__}: {exc}")
    print(f"verified {len(good)} good files, {failures} failures")
    return failures


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "tests" / "corpus"),
    )
    parser.add_argument("--verify", action="store_true",
                        help="render-check the generated corpus")
    args = parser.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    files = build_corpus()
    changed = 0
    for name, content in sorted(files.items()):
        path = out_dir / f"{name}.svg"
        data = content.encode("utf-8")
        if not path.exists() or path.read_bytes() != data:
            path.write_bytes(data)
            changed += 1
    print(f"wrote {changed} of {len(files)} files to {out_dir}")
    if args.verify:
        return 1 if verify(out_dir) else 0
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
