"""Feature schema, parametric designs, and the shared domain types.

Everything downstream (sampler, renderer, imputer, encoders, experiment
harness) validates against one :class:`FeatureSchema`. All domain types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SCHEMA_FORMAT_VERSION = "1"

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    """Raised for malformed schemas, documents, or mismatched designs."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureSpec:
    """One feature of the parametric design vector.

    ``range`` is required for continuous features (real units: mm or degrees),
    ``categories`` for categorical ones. ``render_role`` ties the feature to a
    geometric primitive in the synthetic renderer; ingested data uses "none".
    """

    name: str
    kind: str
    range: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None
    render_role: str = "none"

    def __post_init__(self) -> None:
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CONTINUOUS:
            if self.range is None:
                raise SchemaError(f"feature {self.name!r}: continuous feature needs a range")
            lo, hi = self.range
            if not lo < hi:
                raise SchemaError(f"feature {self.name!r}: range must satisfy lo < hi, got {self.range}")
            object.__setattr__(self, "range", (float(lo), float(hi)))
        else:
            if self.categories is None or len(self.categories) < 2:
                raise SchemaError(f"feature {self.name!r}: categorical feature needs >=2 categories")
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))

    @property
    def num_categories(self) -> int:
        return len(self.categories) if self.categories else 0


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list plus the canvas size dataset images use."""

    features: tuple[FeatureSpec, ...]
    canvas_size: int = 64
    version: str = "synthetic-16"

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        kinds = {f.kind for f in self.features}
        if CONTINUOUS not in kinds or CATEGORICAL not in kinds:
            raise SchemaError("schema needs at least one continuous and one categorical feature")
        if self.canvas_size < 8:
            raise SchemaError(f"canvas_size too small: {self.canvas_size}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)

    def feature(self, name: str) -> FeatureSpec:
        return self.features[self.index(name)]

    @property
    def continuous_indices(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.features) if f.kind == CONTINUOUS)

    @property
    def categorical_indices(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.features) if f.kind == CATEGORICAL)

    def content_hash(self) -> str:
        """Deterministic hash of the schema content; stored in checkpoints."""
        return hashlib.sha256(serialize_schema(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ParametricDesign:
    """Feature values aligned to a schema plus an observation mask.

    Categorical values are stored as integer category indices. ``mask[i]``
    is True where the value is observed; unobserved entries carry an
    arbitrary placeholder and are ignored by validation.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen(np.asarray(self.values, dtype=np.float64).copy())
        mask = _frozen(np.asarray(self.mask, dtype=bool).copy())
        if values.ndim != 1 or mask.ndim != 1 or values.shape != mask.shape:
            raise SchemaError("values and mask must be 1-D arrays of equal length")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def complete(cls, values: Sequence[float]) -> "ParametricDesign":
        v = np.asarray(values, dtype=np.float64)
        return cls(values=v, mask=np.ones(len(v), dtype=bool))

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def value(self, schema: FeatureSchema, name: str) -> float:
        return float(self.values[schema.index(name)])

    def category(self, schema: FeatureSchema, name: str) -> str:
        spec = schema.feature(name)
        return spec.categories[int(round(self.value(schema, name)))]

    def with_mask(self, mask: Iterable[bool]) -> "ParametricDesign":
        return ParametricDesign(values=self.values.copy(), mask=np.asarray(list(mask), dtype=bool))

    def with_value(self, schema: FeatureSchema, name: str, value: float) -> "ParametricDesign":
        values = self.values.copy()
        values[schema.index(name)] = value
        return ParametricDesign(values=values, mask=self.mask.copy())


@dataclass(frozen=True)
class DesignImage:
    """H x W x C pixel array with values normalized to [0, 1].

    Dataset images are RGB; component sprites carry an alpha channel (RGBA).
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] not in (3, 4):
            raise SchemaError(f"expected HxWx3 or HxWx4 pixels, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise SchemaError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px.copy()))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class TextPrompt:
    """UTF-8 prompt, lowercased before tokenization, max 256 chars."""

    text: str

    def __post_init__(self) -> None:
        if self.text is None:
            raise SchemaError("prompt text must not be None")
        if len(self.text) > 256:
            raise SchemaError(f"prompt longer than 256 characters ({len(self.text)})")


@dataclass(frozen=True)
class GraphNode:
    """Component instance: id, size (w, h) in pixels, top-left position."""

    component_id: str
    size: tuple[int, int]
    position: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))
        object.__setattr__(self, "position", (int(self.position[0]), int(self.position[1])))


@dataclass(frozen=True)
class AssemblyGraph:
    """Ordered component nodes (ordering = overlay order) plus edge annotations.

    Edges are connection annotations only; geometry lives entirely in the
    node size/position attributes. Canvas coordinates are top-left-origin,
    y-down integers.
    """

    nodes: tuple[GraphNode, ...] = ()
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        for a, b in edges:
            if not (0 <= a < len(self.nodes) and 0 <= b < len(self.nodes)):
                raise SchemaError(f"edge ({a}, {b}) references a missing node")
        object.__setattr__(self, "edges", edges)


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which feature, which rule, what was observed."""

    feature: str
    rule: str
    observed: float

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.feature}: {self.rule} (observed {self.observed})"


def validate_design(design: ParametricDesign, schema: FeatureSchema) -> list[Violation]:
    """Check a design against its schema; empty list means valid.

    Pure function: observed continuous values must lie inside the declared
    range, observed categorical indices must be valid and integral. Masked
    (unobserved) entries are never checked.
    """
    if len(design.values) != len(schema):
        raise SchemaError(
            f"design has {len(design.values)} values but schema {schema.version!r} "
            f"declares {len(schema)} features"
        )
    violations: list[Violation] = []
    for i, spec in enumerate(schema.features):
        if not design.mask[i]:
            continue
        v = float(design.values[i])
        if not np.isfinite(v):
            violations.append(Violation(spec.name, "value must be finite", v))
        elif spec.kind == CONTINUOUS:
            lo, hi = spec.range
            if not (lo <= v <= hi):
                violations.append(Violation(spec.name, f"outside range [{lo}, {hi}]", v))
        else:
            if v != int(v):
                violations.append(Violation(spec.name, "category index must be integral", v))
            elif not (0 <= int(v) < spec.num_categories):
                violations.append(
                    Violation(spec.name, f"category index outside [0, {spec.num_categories})", v)
                )
    return violations


def require_valid(design: ParametricDesign, schema: FeatureSchema) -> None:
    violations = validate_design(design, schema)
    if violations:
        raise SchemaError("invalid design: " + "; ".join(str(v) for v in violations))


# -- serialization -------------------------------------------------------
#
# Schemas and designs travel as JSON with an explicit `version` field; the
# exact field names are documented in docs/file_formats.md.


def serialize_schema(schema: FeatureSchema) -> str:
    doc = {
        "format_version": SCHEMA_FORMAT_VERSION,
        "version": schema.version,
        "canvas_size": schema.canvas_size,
        "features": [
            {
                "name": f.name,
                "kind": f.kind,
                **({"range": list(f.range)} if f.kind == CONTINUOUS else {}),
                **({"categories": list(f.categories)} if f.kind == CATEGORICAL else {}),
                "render_role": f.render_role,
            }
            for f in schema.features
        ],
    }
    return json.dumps(doc, indent=2)


def parse_schema(doc: str) -> FeatureSchema:
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as e:
        raise SchemaError(f"malformed schema document: {e}") from e
    for key in ("version", "canvas_size", "features"):
        if key not in data:
            raise SchemaError(f"schema document missing field {key!r}")
    features = []
    for i, fd in enumerate(data["features"]):
        if "name" not in fd or "kind" not in fd:
            raise SchemaError(f"feature #{i}: missing 'name' or 'kind'")
        kind = fd["kind"]
        if kind == CONTINUOUS and "range" not in fd:
            raise SchemaError(f"feature {fd['name']!r}: continuous feature missing 'range'")
        if kind == CATEGORICAL and "categories" not in fd:
            raise SchemaError(f"feature {fd['name']!r}: categorical feature missing 'categories'")
        features.append(
            FeatureSpec(
                name=fd["name"],
                kind=kind,
                range=tuple(fd["range"]) if kind == CONTINUOUS else None,
                categories=tuple(fd["categories"]) if kind == CATEGORICAL else None,
                render_role=fd.get("render_role", "none"),
            )
        )
    return FeatureSchema(
        features=tuple(features),
        canvas_size=int(data["canvas_size"]),
        version=str(data["version"]),
    )


def serialize_design(design: ParametricDesign, schema: FeatureSchema) -> str:
    return json.dumps(
        {
            "format_version": SCHEMA_FORMAT_VERSION,
            "schema_version": schema.version,
            "values": [float(v) for v in design.values],
            "mask": [bool(m) for m in design.mask],
        },
        indent=2,
    )


def parse_design(doc: str, schema: FeatureSchema) -> ParametricDesign:
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as e:
        raise SchemaError(f"malformed design document: {e}") from e
    if "values" not in data or "mask" not in data:
        raise SchemaError("design document missing 'values' or 'mask'")
    if data.get("schema_version") not in (None, schema.version):
        raise SchemaError(
            f"design was written for schema {data['schema_version']!r}, "
            f"current schema is {schema.version!r}"
        )
    design = ParametricDesign(
        values=np.asarray(data["values"], dtype=np.float64),
        mask=np.asarray(data["mask"], dtype=bool),
    )
    if len(design.values) != len(schema):
        raise SchemaError("design length does not match schema")
    return design


def serialize_graph(graph: AssemblyGraph) -> str:
    return json.dumps(
        {
            "format_version": SCHEMA_FORMAT_VERSION,
            "nodes": [
                {"component_id": n.component_id, "size": list(n.size), "position": list(n.position)}
                for n in graph.nodes
            ],
            "edges": [list(e) for e in graph.edges],
        },
        indent=2,
    )


def parse_graph(doc: str) -> AssemblyGraph:
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as e:
        raise SchemaError(f"malformed graph document: {e}") from e
    if "nodes" not in data:
        raise SchemaError("graph document missing 'nodes'")
    nodes = []
    for i, nd in enumerate(data["nodes"]):
        for key in ("component_id", "size", "position"):
            if key not in nd:
                raise SchemaError(f"graph node #{i}: missing {key!r}")
        nodes.append(
            GraphNode(
                component_id=nd["component_id"],
                size=tuple(nd["size"]),
                position=tuple(nd["position"]),
            )
        )
    return AssemblyGraph(nodes=tuple(nodes), edges=tuple(tuple(e) for e in data.get("edges", [])))


# -- desk-scale default schema -------------------------------------------

_CONTINUOUS_FEATURES = [
    # name, lo, hi, render_role
    ("saddle_height", 240.0, 340.0, "saddle_y"),
    ("seat_tube_length", 160.0, 220.0, "seat_tube"),
    ("stem_angle", -20.0, 30.0, "stem"),
    ("top_tube_length", 220.0, 320.0, "top_tube"),
    ("head_tube_angle", 60.0, 80.0, "head_tube_slant"),
    ("head_tube_length", 80.0, 140.0, "head_tube_drop"),
    ("wheel_radius", 280.0, 400.0, "wheel_size"),
    ("wheelbase", 980.0, 1400.0, "wheel_spread"),
    ("saddle_length", 200.0, 350.0, "saddle_w"),
    ("crank_length", 150.0, 275.0, "crank"),
    ("handlebar_width", 400.0, 720.0, "handlebar_w"),
]

_CATEGORICAL_FEATURES = [
    ("num_bottles", ("0", "1", "2"), "bottles"),
    ("handlebar_style", ("drop", "flat", "riser"), "handlebar_glyph"),
    ("rack", ("none", "rear"), "rack"),
    ("fender", ("none", "front"), "fender"),
    ("kickstand", ("none", "present"), "kickstand"),
]


def default_schema(canvas_size: int = 64) -> FeatureSchema:
    """The 16-feature desk-scale schema (11 continuous, 5 categorical)."""
    features = [
        FeatureSpec(name=n, kind=CONTINUOUS, range=(lo, hi), render_role=role)
        for n, lo, hi, role in _CONTINUOUS_FEATURES
    ] + [
        FeatureSpec(name=n, kind=CATEGORICAL, categories=cats, render_role=role)
        for n, cats, role in _CATEGORICAL_FEATURES
    ]
    return FeatureSchema(features=tuple(features), canvas_size=canvas_size, version="synthetic-16")
