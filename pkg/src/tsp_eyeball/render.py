"""Deterministic raster rendering of instances and candidate routes.

Images come from a self-contained software rasterizer: a numpy RGB canvas,
circle and thick-segment fills computed with plain IEEE-754 arithmetic, node
labels stamped from an embedded 5x7 bitmap digit font at an integer scale,
and a minimal PNG writer (8-bit RGB, filter 0, fixed zlib level). No
drawing library and no system font is consulted, so identical inputs give
identical PNG bytes on every platform.

Determinism rules baked in here:

* Point placement maps the data bounding box onto the canvas with a fixed
  relative margin; the y axis is flipped so larger y is drawn higher.
* Route edges are drawn as an undirected edge set in sorted order, so any
  rotation or reversal of the same cycle renders byte-identically.
* Label positions follow a fixed collision ladder (up-right, up-left,
  down-right, down-left); candidates that leave the canvas or overlap an
  already placed label are skipped, with the last rung as fallback.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .instances import Instance
from .solver import Route, validate_route

MIN_CANVAS_PX = 256

RGB = tuple[int, int, int]


class RenderError(ValueError):
    """Raised for degenerate styles or undrawable inputs."""


@dataclass(frozen=True)
class RenderStyle:
    canvas_px: int = 768
    marker_radius_px: int = 7
    label_font_px: int = 14
    route_stroke_px: int = 3
    margin_frac: float = 0.05
    background: RGB = (255, 255, 255)
    point_color: RGB = (31, 61, 122)
    label_color: RGB = (16, 16, 16)
    route_color: RGB = (196, 57, 43)
    highlight_color: RGB = (24, 140, 64)

    def validate(self) -> None:
        if self.canvas_px < MIN_CANVAS_PX:
            raise RenderError(f"canvas_px must be at least {MIN_CANVAS_PX}, got {self.canvas_px}")
        if self.marker_radius_px < 1 or self.route_stroke_px < 1:
            raise RenderError("marker radius and route stroke must be positive")
        if self.label_font_px < 7:
            raise RenderError("label_font_px must be at least 7 (one glyph row per pixel)")
        if not 0.0 <= self.margin_frac < 0.5:
            raise RenderError(f"margin_frac must lie in [0, 0.5), got {self.margin_frac}")
        for color in (self.background, self.point_color, self.label_color, self.route_color, self.highlight_color):
            if len(color) != 3 or any(not 0 <= c <= 255 for c in color):
                raise RenderError(f"bad RGB triple {color!r}")


def style_digest(style: RenderStyle) -> str:
    """Stable digest of every style field; recorded in run manifests."""
    blob = json.dumps(
        {
            "canvas_px": style.canvas_px,
            "marker_radius_px": style.marker_radius_px,
            "label_font_px": style.label_font_px,
            "route_stroke_px": style.route_stroke_px,
            "margin_frac": style.margin_frac,
            "background": list(style.background),
            "point_color": list(style.point_color),
            "label_color": list(style.label_color),
            "route_color": list(style.route_color),
            "highlight_color": list(style.highlight_color),
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Image:
    data: bytes
    mime: str
    sha256: str

    @classmethod
    def from_png(cls, png: bytes) -> "Image":
        return cls(png, "image/png", hashlib.sha256(png).hexdigest())


# ---------------------------------------------------------------------------
# PNG codec (8-bit RGB, no interlace, every scanline filter 0)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", zlib.crc32(tag + payload))


def encode_png(pixels: np.ndarray) -> bytes:
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise RenderError("encode_png expects an (H, W, 3) uint8 array")
    height, width, _ = pixels.shape
    filtered = np.zeros((height, 1 + width * 3), dtype=np.uint8)
    filtered[:, 1:] = pixels.reshape(height, width * 3)
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    idat = zlib.compress(filtered.tobytes(), 6)
    return _PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNGs produced by encode_png (filter 0 only)."""
    if not data.startswith(_PNG_SIGNATURE):
        raise RenderError("not a PNG stream")
    pos = len(_PNG_SIGNATURE)
    width = height = None
    idat = bytearray()
    while pos < len(data):
        (length,) = struct.unpack_from(">I", data, pos)
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color, comp, filt, interlace = struct.unpack(">IIBBBBB", payload)
            if (depth, color, comp, filt, interlace) != (8, 2, 0, 0, 0):
                raise RenderError("decoder only handles images produced by this package")
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            break
    if width is None or height is None:
        raise RenderError("missing IHDR chunk")
    raw = zlib.decompress(bytes(idat))
    stride = 1 + width * 3
    if len(raw) != height * stride:
        raise RenderError("IDAT length mismatch")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride)
    if rows[:, 0].any():
        raise RenderError("decoder only handles filter-0 scanlines")
    return rows[:, 1:].reshape(height, width, 3).copy()


# ---------------------------------------------------------------------------
# 5x7 digit glyphs, stamped at an integer scale

_GLYPHS: dict[str, tuple[str, ...]] = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

GLYPH_W = 5
GLYPH_H = 7


def glyph_pixel_count(text: str) -> int:
    """Lit pixels for ``text`` at scale 1; scales with scale**2."""
    return sum(row.count("1") for ch in text for row in _GLYPHS[ch])


def _label_scale(style: RenderStyle) -> int:
    return max(1, style.label_font_px // GLYPH_H)


def _label_size(text: str, scale: int) -> tuple[int, int]:
    # glyphs are GLYPH_W wide with a 1-column gap between characters
    width = (len(text) * (GLYPH_W + 1) - 1) * scale
    return width, GLYPH_H * scale


def _stamp_text(canvas: np.ndarray, x: int, y: int, text: str, scale: int, color: RGB) -> None:
    h, w, _ = canvas.shape
    cursor = x
    col = np.array(color, dtype=np.uint8)
    for ch in text:
        glyph = _GLYPHS[ch]
        for gy, row in enumerate(glyph):
            for gx, bit in enumerate(row):
                if bit != "1":
                    continue
                y0 = y + gy * scale
                x0 = cursor + gx * scale
                y1, x1 = min(y0 + scale, h), min(x0 + scale, w)
                if y0 < h and x0 < w and y1 > max(y0, 0) and x1 > max(x0, 0):
                    canvas[max(y0, 0) : y1, max(x0, 0) : x1] = col
        cursor += (GLYPH_W + 1) * scale


# ---------------------------------------------------------------------------
# primitive fills

def _fill_disc(canvas: np.ndarray, cx: int, cy: int, radius: int, color: RGB) -> None:
    h, w, _ = canvas.shape
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    canvas[y0:y1, x0:x1][mask] = np.array(color, dtype=np.uint8)


def _fill_segment(canvas: np.ndarray, a: tuple[int, int], b: tuple[int, int], stroke: int, color: RGB) -> None:
    h, w, _ = canvas.shape
    half = stroke / 2.0
    pad = int(half) + 1
    x0 = max(min(a[0], b[0]) - pad, 0)
    x1 = min(max(a[0], b[0]) + pad + 1, w)
    y0 = max(min(a[1], b[1]) - pad, 0)
    y1 = min(max(a[1], b[1]) + pad + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    vx, vy = b[0] - a[0], b[1] - a[1]
    seg_len2 = float(vx * vx + vy * vy)
    if seg_len2 == 0.0:
        d2 = (xs - a[0]) ** 2 + (ys - a[1]) ** 2
    else:
        t = ((xs - a[0]) * vx + (ys - a[1]) * vy) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        px = a[0] + t * vx
        py = a[1] + t * vy
        d2 = (xs - px) ** 2 + (ys - py) ** 2
    mask = d2 <= half * half
    canvas[y0:y1, x0:x1][mask] = np.array(color, dtype=np.uint8)


# ---------------------------------------------------------------------------
# layout

def _pixel_positions(instance: Instance, style: RenderStyle) -> dict[int, tuple[int, int]]:
    """Map data coordinates onto canvas pixels: fit bbox, fixed margin, y up."""
    size = style.canvas_px
    margin = int(round(size * style.margin_frac))
    avail = size - 1 - 2 * margin
    xs = [p.x for p in instance.points]
    ys = [p.y for p in instance.points]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)

    def scale(v: float, vmin: float, vmax: float) -> int:
        if vmax == vmin:
            return margin + avail // 2
        return margin + int(round((v - vmin) * avail / (vmax - vmin)))

    out = {}
    for p in instance.points:
        px = scale(p.x, xmin, xmax)
        py = (size - 1) - scale(p.y, ymin, ymax)
        out[p.id] = (px, py)
    return out


def _place_labels(
    positions: dict[int, tuple[int, int]], style: RenderStyle
) -> dict[int, tuple[int, int]]:
    """Top-left label corner per node, in ascending ID order.

    Each label tries the ladder rungs in order and takes the first that stays
    on canvas and avoids every already placed label box; if all four fail,
    the final rung wins regardless.
    """
    scale = _label_scale(style)
    gap = style.marker_radius_px + 2
    size = style.canvas_px
    placed_boxes: list[tuple[int, int, int, int]] = []
    out: dict[int, tuple[int, int]] = {}
    for node_id in sorted(positions):
        cx, cy = positions[node_id]
        w, h = _label_size(str(node_id), scale)
        rungs = [
            (cx + gap, cy - gap - h),  # up-right
            (cx - gap - w, cy - gap - h),  # up-left
            (cx + gap, cy + gap),  # down-right
            (cx - gap - w, cy + gap),  # down-left
        ]
        chosen = rungs[-1]
        for x, y in rungs:
            box = (x, y, x + w, y + h)
            if x < 0 or y < 0 or box[2] > size or box[3] > size:
                continue
            if any(not (box[2] <= bx0 or bx1 <= box[0] or box[3] <= by0 or by1 <= box[1])
                   for bx0, by0, bx1, by1 in placed_boxes):
                continue
            chosen = (x, y)
            break
        x, y = chosen
        x = min(max(x, 0), size - w)
        y = min(max(y, 0), size - h)
        placed_boxes.append((x, y, x + w, y + h))
        out[node_id] = (x, y)
    return out


# ---------------------------------------------------------------------------
# public renderers

def _base_canvas(style: RenderStyle) -> np.ndarray:
    canvas = np.empty((style.canvas_px, style.canvas_px, 3), dtype=np.uint8)
    canvas[:, :] = np.array(style.background, dtype=np.uint8)
    return canvas


def _draw_markers_and_labels(
    canvas: np.ndarray,
    positions: dict[int, tuple[int, int]],
    style: RenderStyle,
    highlight_id: int | None,
) -> None:
    for node_id in sorted(positions):
        cx, cy = positions[node_id]
        color = style.highlight_color if node_id == highlight_id else style.point_color
        _fill_disc(canvas, cx, cy, style.marker_radius_px, color)
    scale = _label_scale(style)
    for node_id, (x, y) in _place_labels(positions, style).items():
        _stamp_text(canvas, x, y, str(node_id), scale, style.label_color)


def render_points(instance: Instance, style: RenderStyle | None = None) -> Image:
    """Node scatter image: markers plus ID labels, no route."""
    style = style or RenderStyle()
    style.validate()
    positions = _pixel_positions(instance, style)
    canvas = _base_canvas(style)
    _draw_markers_and_labels(canvas, positions, style, highlight_id=None)
    return Image.from_png(encode_png(canvas))


def render_route(instance: Instance, route: Route, style: RenderStyle | None = None) -> Image:
    """Route image: tour edges under markers and labels, start node highlighted.

    Edges are drawn as the sorted undirected edge set, so every rotation or
    reversal of the same cycle produces identical bytes.
    """
    style = style or RenderStyle()
    style.validate()
    validate_route(route.order, instance.n)
    positions = _pixel_positions(instance, style)
    canvas = _base_canvas(style)
    edges = sorted(
        (min(a, b), max(a, b))
        for a, b in zip(route.order, route.order[1:] + route.order[:1])
    )
    for a, b in edges:
        _fill_segment(canvas, positions[a], positions[b], style.route_stroke_px, style.route_color)
    _draw_markers_and_labels(canvas, positions, style, highlight_id=1)
    return Image.from_png(encode_png(canvas))


def save_image(image: Image, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(image.data)


# ---------------------------------------------------------------------------
# montages (used for report contact sheets)

def downscale_half(pixels: np.ndarray) -> np.ndarray:
    """2x integer-mean downscale; odd trailing row/column cropped."""
    h, w, _ = pixels.shape
    h -= h % 2
    w -= w % 2
    p = pixels[:h, :w].astype(np.uint16)
    avg = (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2]) // 4
    return avg.astype(np.uint8)


def montage(images: list[np.ndarray], columns: int, pad: int = 4, background: RGB = (255, 255, 255)) -> np.ndarray:
    """Grid montage of equally sized tiles, row-major."""
    if not images:
        raise RenderError("montage needs at least one tile")
    th, tw, _ = images[0].shape
    if any(im.shape != images[0].shape for im in images):
        raise RenderError("montage tiles must share one shape")
    columns = max(1, min(columns, len(images)))
    rows = (len(images) + columns - 1) // columns
    out = np.empty((rows * th + (rows + 1) * pad, columns * tw + (columns + 1) * pad, 3), dtype=np.uint8)
    out[:, :] = np.array(background, dtype=np.uint8)
    for idx, tile in enumerate(images):
        r, c = divmod(idx, columns)
        y = pad + r * (th + pad)
        x = pad + c * (tw + pad)
        out[y : y + th, x : x + tw] = tile
    return out
