"""Procedural bike-style dataset: sampler, renderer, analytic feature oracle.

The renderer is a pure deterministic function of (design, render spec). Every
continuous feature maps *affinely* to one pixel quantity (a position offset,
a radius, a width); every drawn component uses its own exact gray level and
anti-aliasing is disabled, so :func:`extract_features` can invert the render
exactly (up to the rounding of the affine map, i.e. half a pixel).

Draw order matters: extraction-critical components are painted last so their
anchor pixels are never occluded. The geometry below keeps every primitive
on-canvas for all valid feature values (checked by the test suite over the
full corner set).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from PIL import Image

from .schema import (
    CONTINUOUS,
    AssemblyGraph,
    DesignImage,
    FeatureSchema,
    GraphNode,
    ParametricDesign,
    SchemaError,
    TextPrompt,
    parse_schema,
    require_valid,
    serialize_schema,
)

logger = logging.getLogger(__name__)

DEFAULT_PROMPT = "bike, white background"

# Gray level (0..255) per drawn component; all distinct, background is white.
GRAYS: Mapping[str, int] = MappingProxyType(
    {
        "wheel": 0,
        "saddle": 38,
        "handlebar": 51,
        "stem": 64,
        "seat_tube": 77,
        "top_tube": 89,
        "head_tube": 102,
        "down_tube": 115,
        "stays": 128,
        "crank": 140,
        "bottle": 153,
        "fender": 178,
        "rack": 191,
        "kickstand": 204,
    }
)

# Pixels per feature unit at the reference 64px canvas; scaled by canvas/64.
SLOPES: Mapping[str, float] = MappingProxyType(
    {
        "saddle_height": 0.1,
        "seat_tube_length": 0.1,
        "stem_angle": 0.2,
        "top_tube_length": 0.08,
        "head_tube_angle": 0.3,  # applied to (value - 60)
        "head_tube_length": 0.1,
        "wheel_radius": 0.025,
        "wheelbase": 1.0 / 35.0,
        "saddle_length": 0.04,
        "crank_length": 0.02,
        "handlebar_width": 0.0125,
    }
)

HEAD_TUBE_ANGLE_OFFSET = 60.0


@dataclass(frozen=True)
class RenderSpec:
    """Background color plus the affine feature-to-pixel mappings."""

    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grays: Mapping[str, int] = field(default_factory=lambda: GRAYS)
    slopes: Mapping[str, float] = field(default_factory=lambda: SLOPES)

    def gray(self, name: str) -> float:
        return self.grays[name] / 255.0

    def slope(self, name: str, canvas_size: int) -> float:
        """Pixels per feature unit at the given canvas size."""
        return self.slopes[name] * (canvas_size / 64.0)


DEFAULT_RENDER_SPEC = RenderSpec()


def _ri(x: float) -> int:
    """Round half up; the one rounding convention of the renderer."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Layout:
    """Integer pixel anchors shared by the renderer and graph builder."""

    size: int
    u: float
    gy: int
    x_rear: int
    x_front: int
    wheel_r: int
    bbx: int
    st_top: tuple[int, int]
    ht_top: tuple[int, int]
    ht_bot: tuple[int, int]
    saddle_xy: tuple[int, int]
    saddle_w: int
    saddle_rows: int
    crank_r: int
    stem_y0: int
    stem_end: tuple[int, int]
    bar_w: int
    bar_style: str
    bottles: tuple[tuple[int, int], ...]
    bottle_ax: float
    bottle_ay: float
    rack: bool
    fender: bool
    kickstand: bool


def compute_layout(
    design: ParametricDesign, schema: FeatureSchema, spec: RenderSpec = DEFAULT_RENDER_SPEC
) -> Layout:
    s = schema.canvas_size
    u = s / 64.0
    v = lambda name: design.value(schema, name)  # noqa: E731
    sl = lambda name: spec.slope(name, s)  # noqa: E731

    gy = _ri(52 * u)
    w = _ri(sl("wheelbase") * v("wheelbase"))
    x_rear = _ri((s - w) / 2 - 2 * u)
    x_front = x_rear + w
    wheel_r = _ri(sl("wheel_radius") * v("wheel_radius"))
    bbx = x_rear + _ri(0.42 * w)

    dy_st = _ri(sl("seat_tube_length") * v("seat_tube_length"))
    st_top = (bbx - _ri(0.3 * dy_st), gy - dy_st)
    dx_tt = _ri(sl("top_tube_length") * v("top_tube_length"))
    ht_top = (st_top[0] + dx_tt, st_top[1])
    dx_ht = _ri(sl("head_tube_angle") * (v("head_tube_angle") - HEAD_TUBE_ANGLE_OFFSET))
    dy_ht = _ri(sl("head_tube_length") * v("head_tube_length"))
    ht_bot = (ht_top[0] + dx_ht, ht_top[1] + dy_ht)

    dy_saddle = _ri(sl("saddle_height") * v("saddle_height"))
    saddle_xy = (st_top[0], gy - dy_saddle)
    saddle_w = _ri(sl("saddle_length") * v("saddle_length"))
    saddle_rows = max(3, _ri(3 * u))
    crank_r = _ri(sl("crank_length") * v("crank_length"))

    # The stem always rises from its base: the affine pixel quantity is the
    # rise above stem_y0, offset so the lowest stem_angle maps to rise 0.
    stem_y0 = ht_top[1] - max(1, _ri(u))
    stem_rise = _ri(sl("stem_angle") * v("stem_angle")) + _ri(4 * u)
    stem_end = (ht_top[0] + _ri(10 * u), stem_y0 - stem_rise)
    bar_w = _ri(sl("handlebar_width") * v("handlebar_width"))

    n_bottles = int(round(v("num_bottles")))
    b1x = bbx + _ri(5 * u)
    # keep a >=2 column gap between the bottles so they never merge into one
    # connected blob at fractional canvas scales
    b2x = max(bbx + _ri(9 * u), b1x + 2 * int(1.5 * u) + 2)
    anchors = [(b1x, gy - _ri(16 * u)), (b2x, gy - _ri(12 * u))]

    return Layout(
        size=s,
        u=u,
        gy=gy,
        x_rear=x_rear,
        x_front=x_front,
        wheel_r=wheel_r,
        bbx=bbx,
        st_top=st_top,
        ht_top=ht_top,
        ht_bot=ht_bot,
        saddle_xy=saddle_xy,
        saddle_w=saddle_w,
        saddle_rows=saddle_rows,
        crank_r=crank_r,
        stem_y0=stem_y0,
        stem_end=stem_end,
        bar_w=bar_w,
        bar_style=design.category(schema, "handlebar_style"),
        bottles=tuple(anchors[:n_bottles]),
        bottle_ax=1.5 * u,
        bottle_ay=4.0 * u,
        rack=design.category(schema, "rack") != "none",
        fender=design.category(schema, "fender") != "none",
        kickstand=design.category(schema, "kickstand") != "none",
    )


# -- raster primitives (no anti-aliasing; pixels are set, never blended) ---


def _put(canvas: np.ndarray, x: int, y: int, value: float) -> None:
    h, w = canvas.shape[:2]
    if 0 <= x < w and 0 <= y < h:
        canvas[y, x, :3] = value


def _line(canvas: np.ndarray, x0: int, y0: int, x1: int, y1: int, value: float) -> None:
    """Bresenham line including both endpoints."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        _put(canvas, x, y, value)
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def _disk(canvas: np.ndarray, cx: int, cy: int, r: int, value: float) -> None:
    for dy in range(-r, r + 1):
        span = int(math.isqrt(r * r - dy * dy))
        for dx in range(-span, span + 1):
            _put(canvas, cx + dx, cy + dy, value)


def _rect(canvas: np.ndarray, x0: int, y0: int, w: int, h: int, value: float) -> None:
    for yy in range(y0, y0 + h):
        for xx in range(x0, x0 + w):
            _put(canvas, xx, yy, value)


def _ellipse(canvas: np.ndarray, cx: int, cy: int, ax: float, ay: float, value: float) -> None:
    for dy in range(-int(ay), int(ay) + 1):
        for dx in range(-int(ax), int(ax) + 1):
            if (dx / ax) ** 2 + (dy / ay) ** 2 <= 1.0:
                _put(canvas, cx + dx, cy + dy, value)


def _draw_handlebar(canvas: np.ndarray, lay: Layout, value: float) -> None:
    ex, ey = lay.stem_end
    w = lay.bar_w
    rise = max(2, _ri(2 * lay.u))
    drop = max(3, _ri(3 * lay.u))
    if lay.bar_style == "riser":
        bar_row = ey - rise
        for k in range(1, rise + 1):
            _put(canvas, ex, ey - rise + k, value)
    else:
        bar_row = ey
    for x in range(ex - w, ex):
        _put(canvas, x, bar_row, value)
    if lay.bar_style == "drop":
        for k in range(1, drop + 1):
            _put(canvas, ex - w, bar_row + k, value)


def render_design(
    design: ParametricDesign, schema: FeatureSchema, spec: RenderSpec = DEFAULT_RENDER_SPEC
) -> DesignImage:
    """Rasterize a complete design onto a white canvas.

    Raises for incomplete designs: run the parametric autocomplete stage
    first to fill masked features.
    """
    if not design.is_complete:
        raise SchemaError(
            "cannot render an incomplete design; complete it first via the "
            "imputation autocomplete stage"
        )
    require_valid(design, schema)
    lay = compute_layout(design, schema, spec)
    g = spec.gray
    s = lay.size
    canvas = np.empty((s, s, 3), dtype=np.float32)
    canvas[:, :] = spec.background

    # Structural tubes first (decorative; extraction never reads their endpoints).
    _line(canvas, lay.bbx, lay.gy, lay.x_rear, lay.gy, g("stays"))  # chainstay
    _line(canvas, *lay.st_top, lay.x_rear, lay.gy, g("stays"))  # seat stay
    _line(canvas, *lay.ht_bot, lay.x_front, lay.gy, g("stays"))  # fork
    _line(canvas, lay.bbx, lay.gy, *lay.ht_bot, g("down_tube"))
    _line(canvas, *lay.st_top, *lay.ht_top, g("top_tube"))

    # Wheels next; extraction reads their center-row runs, which nothing
    # painted afterwards can reach (the head tube stops above gy).
    for cx in (lay.x_rear, lay.x_front):
        _disk(canvas, cx, lay.gy, lay.wheel_r, g("wheel"))

    if lay.fender:
        row = lay.gy - lay.wheel_r - max(1, _ri(2 * lay.u))
        reach = _ri(4 * lay.u)
        for x in range(lay.x_front - reach, lay.x_front + reach + 1):
            _put(canvas, x, row, g("fender"))
    if lay.rack:
        row0 = lay.gy - _ri(10 * lay.u) - _ri(3 * lay.u)
        reach = _ri(6 * lay.u)
        _rect(canvas, lay.x_rear - reach, row0, 2 * reach + 1, max(1, _ri(2 * lay.u)), g("rack"))
    if lay.kickstand:
        _line(
            canvas,
            lay.bbx + _ri(2 * lay.u),
            lay.gy + _ri(2 * lay.u),
            lay.bbx + _ri(5 * lay.u),
            lay.gy + _ri(7 * lay.u),
            g("kickstand"),
        )

    _disk(canvas, lay.bbx, lay.gy, lay.crank_r, g("crank"))
    for bx, by in lay.bottles:
        _ellipse(canvas, bx, by, lay.bottle_ax, lay.bottle_ay, g("bottle"))

    # Extraction-critical components own their anchor pixels (drawn on top).
    _line(canvas, *lay.ht_top, *lay.ht_bot, g("head_tube"))
    _line(canvas, lay.bbx, lay.gy, *lay.st_top, g("seat_tube"))

    sx, sy = lay.saddle_xy
    half = (lay.saddle_rows - 1) // 2
    _rect(canvas, sx - lay.saddle_w // 2, sy - half, lay.saddle_w, lay.saddle_rows, g("saddle"))
    for y in range(sy + half + 1, lay.st_top[1]):  # seat post
        _put(canvas, sx, y, g("saddle"))

    _line(canvas, lay.ht_top[0], lay.stem_y0, lay.ht_top[0], lay.stem_end[1], g("stem"))
    _line(canvas, lay.ht_top[0], lay.stem_end[1], *lay.stem_end, g("stem"))
    _draw_handlebar(canvas, lay, g("handlebar"))

    return DesignImage(pixels=canvas)


# -- analytic extraction oracle --------------------------------------------


def _gray_mask(pixels: np.ndarray, level: float) -> np.ndarray:
    rgb = pixels[:, :, :3]
    return np.all(np.abs(rgb - level) < (0.5 / 255.0), axis=2)


def _col_clusters(mask: np.ndarray) -> list[np.ndarray]:
    """Split a mask into clusters of contiguous columns (gap > 1 col splits)."""
    cols = np.unique(np.nonzero(mask)[1])
    if cols.size == 0:
        return []
    breaks = np.nonzero(np.diff(cols) > 1)[0]
    groups = np.split(cols, breaks + 1)
    out = []
    for gcols in groups:
        m = np.zeros_like(mask)
        m[:, gcols] = mask[:, gcols]
        out.append(m)
    return out


def _top_pixel(mask: np.ndarray) -> tuple[int, int]:
    ys, xs = np.nonzero(mask)
    i = int(np.argmin(ys))
    return int(xs[i]), int(ys[i])


def _bottom_pixel(mask: np.ndarray) -> tuple[int, int]:
    ys, xs = np.nonzero(mask)
    i = int(np.argmax(ys))
    return int(xs[i]), int(ys[i])


def extract_features(
    image: DesignImage, schema: FeatureSchema, spec: RenderSpec = DEFAULT_RENDER_SPEC
) -> ParametricDesign:
    """Invert :func:`render_design` analytically.

    Returns a design whose mask doubles as the per-feature detection flag:
    undetectable geometry (e.g. an all-background image) yields mask=False
    entries instead of raising.
    """
    px = image.pixels
    s = schema.canvas_size
    if px.shape[0] != s or px.shape[1] != s:
        raise SchemaError(f"expected a {s}x{s} canvas, got {px.shape[:2]}")
    u = s / 64.0
    gy = _ri(52 * u)
    sl = lambda name: spec.slope(name, s)  # noqa: E731

    values = np.zeros(len(schema), dtype=np.float64)
    mask = np.zeros(len(schema), dtype=bool)

    def set_value(name: str, value: float) -> None:
        values[schema.index(name)] = value
        mask[schema.index(name)] = True

    def set_category(name: str, label: str) -> None:
        spec_f = schema.feature(name)
        values[schema.index(name)] = spec_f.categories.index(label)
        mask[schema.index(name)] = True

    # Wheels: runs of black pixels on the wheel-center row. The front run is
    # never occluded; the rear run keeps its left edge (the crank can only
    # cover its right side), and both wheels share one radius.
    wheel_row = _gray_mask(px, spec.gray("wheel"))[gy]
    runs: list[tuple[int, int]] = []
    x = 0
    while x < s:
        if wheel_row[x]:
            x0 = x
            while x < s and wheel_row[x]:
                x += 1
            runs.append((x0, x - 1))
        else:
            x += 1
    if len(runs) >= 2:
        front_lo, front_hi = runs[-1]
        r = (front_hi - front_lo) // 2
        x_front = (front_lo + front_hi) // 2
        x_rear = runs[0][0] + r
        if r > 0:
            set_value("wheel_radius", r / sl("wheel_radius"))
            set_value("wheelbase", (x_front - x_rear) / sl("wheelbase"))

    crank = _gray_mask(px, spec.gray("crank"))
    if crank.any():
        _, cy = _top_pixel(crank)
        set_value("crank_length", (gy - cy) / sl("crank_length"))

    st = _gray_mask(px, spec.gray("seat_tube"))
    st_top = None
    if st.any():
        st_top = _top_pixel(st)
        set_value("seat_tube_length", (gy - st_top[1]) / sl("seat_tube_length"))

    ht = _gray_mask(px, spec.gray("head_tube"))
    ht_top = None
    if ht.any():
        ht_top = _top_pixel(ht)
        ht_bot = _bottom_pixel(ht)
        dy = ht_bot[1] - ht_top[1]
        if dy > 0:
            set_value("head_tube_length", dy / sl("head_tube_length"))
            set_value(
                "head_tube_angle",
                (ht_bot[0] - ht_top[0]) / sl("head_tube_angle") + HEAD_TUBE_ANGLE_OFFSET,
            )
        if st_top is not None:
            set_value("top_tube_length", (ht_top[0] - st_top[0]) / sl("top_tube_length"))

    saddle = _gray_mask(px, spec.gray("saddle"))
    if saddle.any():
        ys, xs = np.nonzero(saddle)
        rows = max(3, _ri(3 * u))
        sy = int(ys.min()) + (rows - 1) // 2
        set_value("saddle_height", (gy - sy) / sl("saddle_height"))
        set_value("saddle_length", len(np.unique(xs)) / sl("saddle_length"))

    stem = _gray_mask(px, spec.gray("stem"))
    if stem.any() and ht_top is not None:
        ys, xs = np.nonzero(stem)
        i = int(np.argmax(xs))
        stem_y0 = ht_top[1] - max(1, _ri(u))
        rise = stem_y0 - int(ys[i])
        set_value("stem_angle", (rise - _ri(4 * u)) / sl("stem_angle"))

    bar = _gray_mask(px, spec.gray("handlebar"))
    if bar.any():
        ys, xs = np.nonzero(bar)
        rows, counts = np.unique(ys, return_counts=True)
        bar_row = int(rows[np.argmax(counts)])
        bar_cols = xs[ys == bar_row]
        set_value("handlebar_width", len(bar_cols) / sl("handlebar_width"))
        below = xs[ys > bar_row]
        if below.size == 0:
            set_category("handlebar_style", "flat")
        elif below.max() > bar_cols.max():
            set_category("handlebar_style", "riser")
        else:
            set_category("handlebar_style", "drop")

    bottles = _col_clusters(_gray_mask(px, spec.gray("bottle")))
    if len(bottles) <= 2:
        set_value("num_bottles", len(bottles))
    set_category("rack", "rear" if _gray_mask(px, spec.gray("rack")).any() else "none")
    set_category("fender", "front" if _gray_mask(px, spec.gray("fender")).any() else "none")
    set_category(
        "kickstand", "present" if _gray_mask(px, spec.gray("kickstand")).any() else "none"
    )
    # presence categoricals are only trustworthy if the image contains a bike
    if not (st.any() or ht.any() or len(runs) >= 2):
        mask[:] = False

    return ParametricDesign(values=values, mask=mask)


def pixel_tolerance(schema: FeatureSchema, name: str, spec: RenderSpec = DEFAULT_RENDER_SPEC) -> float:
    """Feature units corresponding to one pixel at the schema's canvas size."""
    return 1.0 / spec.slope(name, schema.canvas_size)


# -- assembly-graph derivation ---------------------------------------------


def graph_from_design(
    design: ParametricDesign, schema: FeatureSchema, spec: RenderSpec = DEFAULT_RENDER_SPEC
) -> AssemblyGraph:
    """Derive the component graph whose nodes mirror the renderer's layout."""
    if not design.is_complete:
        raise SchemaError("graph derivation needs a complete design")
    lay = compute_layout(design, schema, spec)
    nodes: list[GraphNode] = []

    frame_xs = [lay.st_top[0], lay.bbx, lay.ht_bot[0], lay.x_rear, lay.x_front]
    frame_ys = [lay.st_top[1], lay.ht_bot[1], lay.gy]
    nodes.append(
        GraphNode(
            "frame",
            size=(max(frame_xs) - min(frame_xs) + 1, max(frame_ys) - min(frame_ys) + 1),
            position=(min(frame_xs), min(frame_ys)),
        )
    )
    d = 2 * lay.wheel_r + 1
    nodes.append(GraphNode("wheel", (d, d), (lay.x_rear - lay.wheel_r, lay.gy - lay.wheel_r)))
    nodes.append(GraphNode("wheel", (d, d), (lay.x_front - lay.wheel_r, lay.gy - lay.wheel_r)))
    dc = 2 * lay.crank_r + 1
    nodes.append(GraphNode("crank", (dc, dc), (lay.bbx - lay.crank_r, lay.gy - lay.crank_r)))

    sx, sy = lay.saddle_xy
    half = (lay.saddle_rows - 1) // 2
    nodes.append(
        GraphNode("saddle", (lay.saddle_w, lay.saddle_rows), (sx - lay.saddle_w // 2, sy - half))
    )

    ex, ey = lay.stem_end
    rise = max(2, _ri(2 * lay.u))
    drop = max(3, _ri(3 * lay.u))
    if lay.bar_style == "riser":
        nodes.append(
            GraphNode("handlebar_riser", (lay.bar_w + 1, rise + 1), (ex - lay.bar_w, ey - rise))
        )
    elif lay.bar_style == "drop":
        nodes.append(GraphNode("handlebar_drop", (lay.bar_w, drop + 1), (ex - lay.bar_w, ey)))
    else:
        nodes.append(GraphNode("handlebar_flat", (lay.bar_w, 1), (ex - lay.bar_w, ey)))

    bw = 2 * int(lay.bottle_ax) + 1
    bh = 2 * int(lay.bottle_ay) + 1
    for bx, by in lay.bottles:
        nodes.append(GraphNode("bottle", (bw, bh), (bx - int(lay.bottle_ax), by - int(lay.bottle_ay))))
    if lay.rack:
        reach = _ri(6 * lay.u)
        row0 = lay.gy - _ri(10 * lay.u) - _ri(3 * lay.u)
        nodes.append(
            GraphNode("rack", (2 * reach + 1, max(1, _ri(2 * lay.u))), (lay.x_rear - reach, row0))
        )

    # Edges annotate structural adjacency (frame connects to everything else).
    edges = tuple((0, i) for i in range(1, len(nodes)))
    return AssemblyGraph(nodes=tuple(nodes), edges=edges)


# -- sampling and dataset construction --------------------------------------


def sample_design(rng_seed, schema: FeatureSchema) -> ParametricDesign:
    """Sample a complete design: uniform in range / uniform over categories."""
    rng = np.random.default_rng(rng_seed)
    values = np.zeros(len(schema), dtype=np.float64)
    for i, f in enumerate(schema.features):
        if f.kind == CONTINUOUS:
            values[i] = rng.uniform(f.range[0], f.range[1])
        else:
            values[i] = rng.integers(0, f.num_categories)
    return ParametricDesign.complete(values)


@dataclass(frozen=True)
class DatasetSplit:
    """Train/test record lists; each record is (design, image, prompt)."""

    train: tuple[tuple[ParametricDesign, DesignImage, TextPrompt], ...]
    test: tuple[tuple[ParametricDesign, DesignImage, TextPrompt], ...]
    split_seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))


def split_counts(n: int) -> tuple[int, int]:
    """90-10 split by count."""
    n_train = int(n * 0.9)
    return n_train, n - n_train


def build_dataset(
    n_samples: int,
    schema: FeatureSchema,
    seed: int,
    spec: RenderSpec = DEFAULT_RENDER_SPEC,
    prompt: str = DEFAULT_PROMPT,
) -> DatasetSplit:
    """Sample, render, and split ``n_samples`` synthetic records."""
    if n_samples < 10:
        raise SchemaError(f"need at least 10 samples, got {n_samples}")
    records = []
    for i in range(n_samples):
        design = sample_design([seed, i], schema)
        records.append((design, render_design(design, schema, spec), TextPrompt(prompt)))
    n_train, _ = split_counts(n_samples)
    perm = np.random.default_rng([seed, 0x5917]).permutation(n_samples)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return DatasetSplit(
        train=tuple(records[i] for i in train_idx),
        test=tuple(records[i] for i in test_idx),
        split_seed=seed,
    )


# -- manifest / PNG persistence ---------------------------------------------


def save_image(image: DesignImage, path: Path) -> None:
    arr = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    mode = "RGBA" if arr.shape[2] == 4 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def load_image(path: Path) -> DesignImage:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=2)
    return DesignImage(pixels=arr.astype(np.float32) / 255.0)


def save_dataset(split: DatasetSplit, schema: FeatureSchema, out_dir: Path) -> Path:
    """Write a dataset directory: manifest.csv + schema.json + PNG images."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "schema.json").write_text(serialize_schema(schema))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "image", "prompt", *schema.names])
        idx = 0
        for part, records in (("train", split.train), ("test", split.test)):
            for design, image, prompt in records:
                rel = f"images/im_{idx:06d}.png"
                save_image(image, out_dir / rel)
                writer.writerow([part, rel, prompt.text, *[repr(float(v)) for v in design.values]])
                idx += 1
    (out_dir / "split_seed.txt").write_text(str(split.split_seed))
    return manifest


def load_dataset(data_dir: Path) -> tuple[DatasetSplit, FeatureSchema]:
    data_dir = Path(data_dir)
    schema = parse_schema((data_dir / "schema.json").read_text())
    train, test = [], []
    with open(data_dir / "manifest.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[3:]
        if list(names) != list(schema.names):
            raise SchemaError("manifest feature columns do not match schema")
        for row in reader:
            part, rel, prompt = row[0], row[1], row[2]
            design = ParametricDesign.complete([float(x) for x in row[3:]])
            record = (design, load_image(data_dir / rel), TextPrompt(prompt))
            (train if part == "train" else test).append(record)
    split_seed = int((data_dir / "split_seed.txt").read_text())
    return DatasetSplit(train=tuple(train), test=tuple(test), split_seed=split_seed), schema


# -- BIKED-format ingestion --------------------------------------------------


def schema_from_biked_header(
    names: list[str], rows: list[list[str]], canvas_size: int
) -> FeatureSchema:
    """Build a schema stub from a BIKED-style CSV header + data rows.

    The header is authoritative for feature names and ordering. A column is
    categorical when every observed value is a small non-negative integer
    with at most 8 distinct levels; ranges come from the observed data.
    """
    from .schema import FeatureSpec

    specs = []
    for j, name in enumerate(names):
        col = [float(r[j]) for r in rows if r[j] != ""]
        if not col:
            raise SchemaError(f"feature column {name!r} has no observed values")
        distinct = sorted(set(col))
        is_cat = (
            all(v == int(v) and 0 <= v <= 32 for v in distinct) and 2 <= len(distinct) <= 8
        )
        if is_cat:
            specs.append(
                FeatureSpec(
                    name=name,
                    kind="categorical",
                    categories=tuple(str(int(v)) for v in distinct),
                )
            )
        else:
            lo, hi = min(col), max(col)
            if lo == hi:
                hi = lo + 1.0
            specs.append(FeatureSpec(name=name, kind="continuous", range=(lo, hi)))
    if not any(f.kind == "categorical" for f in specs):
        # FeatureSchema requires at least one categorical feature; a marker
        # column keeps ingested all-continuous tables loadable.
        specs.append(
            FeatureSpec(name="_ingest_marker", kind="categorical", categories=("0", "1"))
        )
    return FeatureSchema(features=tuple(specs), canvas_size=canvas_size, version="biked-ingest")


def ingest_biked(
    csv_path: Path,
    image_dir: Path,
    split_seed: int = 0,
    prompt: str = DEFAULT_PROMPT,
) -> tuple[DatasetSplit, FeatureSchema]:
    """Ingest a BIKED-format table (feature columns + image paths).

    Expected columns: ``image`` (relative PNG path), optional ``prompt``,
    then one column per feature. Rows whose image file is missing are
    skipped with a warning; more than 10% skips is a hard error. Empty
    feature cells become masked (unobserved) entries.
    """
    csv_path, image_dir = Path(csv_path), Path(image_dir)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if "image" not in header:
        raise SchemaError("BIKED manifest needs an 'image' column")
    img_col = header.index("image")
    prompt_col = header.index("prompt") if "prompt" in header else None
    feat_cols = [j for j in range(len(header)) if j not in (img_col, prompt_col)]
    names = [header[j] for j in feat_cols]

    kept_rows, records = [], []
    skipped = 0
    first_canvas = None
    for row in rows:
        path = image_dir / row[img_col]
        if not path.exists():
            skipped += 1
            logger.warning("skipping row: missing image file %s", path)
            continue
        image = load_image(path)
        if first_canvas is None:
            first_canvas = image.height
        kept_rows.append([row[j] for j in feat_cols])
        records.append((row, image))
    if not records:
        raise SchemaError("no ingestible rows (all image files missing?)")
    if skipped > 0.10 * len(rows):
        raise SchemaError(f"{skipped}/{len(rows)} rows skipped (>10%); refusing to ingest")

    schema = schema_from_biked_header(names, kept_rows, canvas_size=first_canvas)
    marker = len(schema) > len(names)

    dataset = []
    for (row, image), feats in zip(records, kept_rows):
        values = np.zeros(len(schema), dtype=np.float64)
        mask = np.zeros(len(schema), dtype=bool)
        for i, cell in enumerate(feats):
            if cell == "":
                continue
            v = float(cell)
            spec = schema.features[i]
            values[i] = spec.categories.index(str(int(v))) if spec.kind == "categorical" else v
            mask[i] = True
        if marker:
            mask[-1] = True  # marker column is always "observed" as category 0
        text = row[prompt_col] if prompt_col is not None and row[prompt_col] else prompt
        dataset.append((ParametricDesign(values=values, mask=mask), image, TextPrompt(text)))

    n = len(dataset)
    n_train, _ = split_counts(n)
    perm = np.random.default_rng([split_seed, 0x5917]).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    split = DatasetSplit(
        train=tuple(dataset[i] for i in train_idx),
        test=tuple(dataset[i] for i in test_idx),
        split_seed=split_seed,
    )
    return split, schema
