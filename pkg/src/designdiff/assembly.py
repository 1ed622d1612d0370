"""Component sprite compositing driven by an assembly graph.

Nodes are processed in order: each sprite is resized to the node's size
(corner-aligned bilinear), placed at its position, and alpha-composited over
the accumulated canvas (standard source-over), so later nodes occlude earlier
ones. Per-node boolean occupancy masks (post-resize alpha > 0.5 at the placed
location) feed the IoC metric.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .schema import AssemblyGraph, DesignImage, FeatureSchema, ParametricDesign, SchemaError
from .synthetic import DEFAULT_RENDER_SPEC, GRAYS, RenderSpec, _disk, _ellipse, _line, _rect

logger = logging.getLogger(__name__)

ALPHA_THRESHOLD = 0.5

COMPONENT_CATEGORIES = ("crank", "bottle", "saddle", "handlebar", "frame", "wheel", "rack")


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class ComponentLibrary:
    """RGBA sprites by id, plus per-sprite category/source metadata."""

    sprites: Mapping[str, DesignImage]
    metadata: Mapping[str, dict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for cid, sprite in self.sprites.items():
            if sprite.channels != 4:
                raise AssemblyError(f"sprite {cid!r} has no alpha channel")

    def category(self, component_id: str) -> str:
        meta = self.metadata.get(component_id, {})
        return meta.get("category", component_id.split("_")[0])


@dataclass(frozen=True)
class CompositeResult:
    """Composite RGB canvas plus one occupancy mask per graph node."""

    composite: DesignImage
    masks: tuple[np.ndarray, ...]


def resize_bilinear(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """Corner-aligned bilinear resize; identity when the size is unchanged."""
    src_h, src_w = pixels.shape[:2]
    if (src_w, src_h) == (width, height):
        return pixels.copy()
    ys = np.linspace(0.0, src_h - 1.0, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0.0, src_w - 1.0, width) if width > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    p00 = pixels[y0][:, x0]
    p01 = pixels[y0][:, x1]
    p10 = pixels[y1][:, x0]
    p11 = pixels[y1][:, x1]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return (top * (1 - fy) + bot * fy).astype(pixels.dtype)


def assemble(
    graph: AssemblyGraph,
    library: ComponentLibrary,
    canvas_size: int,
    background: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> CompositeResult:
    """Overlay the graph's sprites onto a blank canvas, in node order.

    Off-canvas sprite regions are clipped silently; unknown component ids and
    non-positive sizes raise.
    """
    canvas = np.empty((canvas_size, canvas_size, 3), dtype=np.float64)
    canvas[:, :] = background
    masks: list[np.ndarray] = []
    for idx, node in enumerate(graph.nodes):
        if node.component_id not in library.sprites:
            raise AssemblyError(f"node #{idx}: unknown component id {node.component_id!r}")
        w, h = node.size
        if w <= 0 or h <= 0:
            raise AssemblyError(f"node #{idx} ({node.component_id}): non-positive size {node.size}")
        sprite = library.sprites[node.component_id].pixels.astype(np.float64)
        resized = resize_bilinear(sprite, w, h)
        x, y = node.position

        # clip to canvas
        sx0, sy0 = max(0, -x), max(0, -y)
        sx1 = min(w, canvas_size - x)
        sy1 = min(h, canvas_size - y)
        mask = np.zeros((canvas_size, canvas_size), dtype=bool)
        if sx1 > sx0 and sy1 > sy0:
            patch = resized[sy0:sy1, sx0:sx1]
            alpha = patch[:, :, 3:4]
            region = canvas[y + sy0 : y + sy1, x + sx0 : x + sx1]
            region[:] = patch[:, :, :3] * alpha + region * (1.0 - alpha)
            mask[y + sy0 : y + sy1, x + sx0 : x + sx1] = patch[:, :, 3] > ALPHA_THRESHOLD
        masks.append(mask)
    return CompositeResult(
        composite=DesignImage(pixels=np.clip(canvas, 0.0, 1.0).astype(np.float32)),
        masks=tuple(masks),
    )


def masks_by_category(
    result: CompositeResult, graph: AssemblyGraph, library: ComponentLibrary
) -> dict[str, np.ndarray]:
    """Union the per-node occupancy masks by component category."""
    out: dict[str, np.ndarray] = {}
    for node, mask in zip(graph.nodes, result.masks):
        cat = library.category(node.component_id)
        out[cat] = np.logical_or(out.get(cat, np.zeros_like(mask)), mask)
    return out


# -- synthetic sprite library ------------------------------------------------


def _sprite(w: int, h: int) -> np.ndarray:
    px = np.zeros((h, w, 4), dtype=np.float32)
    px[:, :, :3] = 1.0
    return px


def _paint(px: np.ndarray, mask_draw, gray: float) -> np.ndarray:
    """Run a renderer primitive on an RGB view, then derive alpha from coverage."""
    rgb = px[:, :, :3].copy()
    before = rgb.copy()
    mask_draw(rgb)
    changed = np.any(rgb != before, axis=2)
    px[:, :, :3] = rgb
    px[:, :, 3] = np.where(changed, 1.0, px[:, :, 3])
    return px


def build_synthetic_library(spec: RenderSpec = DEFAULT_RENDER_SPEC) -> ComponentLibrary:
    """Canonical sprites for the seven component categories.

    Sprites are drawn with the renderer's primitives at a reference size and
    carry binary alpha; :func:`assemble` rescales them to each node's size.
    """
    g = spec.gray
    sprites: dict[str, DesignImage] = {}
    meta: dict[str, dict] = {}

    def add(cid: str, category: str, px: np.ndarray) -> None:
        sprites[cid] = DesignImage(pixels=np.clip(px, 0.0, 1.0))
        meta[cid] = {"category": category, "source": "synthetic"}

    px = _sprite(21, 21)
    add("wheel", "wheel", _paint(px, lambda c: _disk(c, 10, 10, 10, g("wheel")), g("wheel")))

    px = _sprite(11, 11)
    add("crank", "crank", _paint(px, lambda c: _disk(c, 5, 5, 5, g("crank")), g("crank")))

    px = _sprite(11, 3)
    add("saddle", "saddle", _paint(px, lambda c: _rect(c, 0, 0, 11, 3, g("saddle")), g("saddle")))

    px = _sprite(3, 9)
    add("bottle", "bottle", _paint(px, lambda c: _ellipse(c, 1, 4, 1.5, 4.0, g("bottle")), g("bottle")))

    px = _sprite(13, 2)
    add("rack", "rack", _paint(px, lambda c: _rect(c, 0, 0, 13, 2, g("rack")), g("rack")))

    px = _sprite(7, 1)
    add("handlebar_flat", "handlebar", _paint(px, lambda c: _rect(c, 0, 0, 7, 1, g("handlebar")), g("handlebar")))

    px = _sprite(8, 3)

    def draw_riser(c):
        _rect(c, 0, 0, 7, 1, g("handlebar"))
        _line(c, 7, 1, 7, 2, g("handlebar"))

    add("handlebar_riser", "handlebar", _paint(px, draw_riser, g("handlebar")))

    px = _sprite(7, 4)

    def draw_drop(c):
        _rect(c, 0, 0, 7, 1, g("handlebar"))
        _line(c, 0, 1, 0, 3, g("handlebar"))

    add("handlebar_drop", "handlebar", _paint(px, draw_drop, g("handlebar")))

    # canonical diamond frame at mid-range proportions, 33x22
    px = _sprite(33, 22)

    def draw_frame(c):
        bb = (7, 21)
        st_top = (1, 5)
        ht_top = (25, 5)
        ht_bot = (28, 16)
        _line(c, *bb, 0, 21, g("stays"))
        _line(c, *st_top, 0, 21, g("stays"))
        _line(c, *ht_bot, 32, 21, g("stays"))
        _line(c, *bb, *ht_bot, g("down_tube"))
        _line(c, *st_top, *ht_top, g("top_tube"))
        _line(c, *ht_top, *ht_bot, g("head_tube"))
        _line(c, *bb, *st_top, g("seat_tube"))

    add("frame", "frame", _paint(px, draw_frame, g("seat_tube")))

    return ComponentLibrary(sprites=sprites, metadata=meta)


# -- library persistence ------------------------------------------------------


def save_library(library: ComponentLibrary, out_dir: Path) -> None:
    from .synthetic import save_image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for cid, sprite in library.sprites.items():
        fname = f"{cid}.png"
        save_image(sprite, out_dir / fname)
        manifest[cid] = {"file": fname, **library.metadata.get(cid, {})}
    (out_dir / "library.json").write_text(json.dumps({"sprites": manifest}, indent=2))


def load_library(lib_dir: Path) -> ComponentLibrary:
    from .synthetic import load_image

    lib_dir = Path(lib_dir)
    doc = json.loads((lib_dir / "library.json").read_text())
    sprites, meta = {}, {}
    for cid, entry in doc["sprites"].items():
        image = load_image(lib_dir / entry["file"])
        px = image.pixels
        if px.shape[2] == 3:
            # PNGs saved without alpha: treat non-white pixels as opaque
            alpha = (np.max(np.abs(px - 1.0), axis=2) > 1e-6).astype(np.float32)
            px = np.concatenate([px, alpha[:, :, None]], axis=2)
        sprites[cid] = DesignImage(pixels=px)
        meta[cid] = {k: v for k, v in entry.items() if k != "file"}
    return ComponentLibrary(sprites=sprites, metadata=meta)
