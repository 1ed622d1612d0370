import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from designdiff.schema import (
    AssemblyGraph,
    DesignImage,
    FeatureSchema,
    FeatureSpec,
    GraphNode,
    ParametricDesign,
    SchemaError,
    TextPrompt,
    default_schema,
    parse_design,
    parse_graph,
    parse_schema,
    serialize_design,
    serialize_graph,
    serialize_schema,
    validate_design,
)
from designdiff.synthetic import sample_design


def test_default_schema_shape(schema):
    assert len(schema) == 16
    assert len(schema.continuous_indices) == 11
    assert len(schema.categorical_indices) == 5
    assert schema.canvas_size == 64
    assert len(set(schema.names)) == 16


def test_feature_spec_invariants():
    with pytest.raises(SchemaError):
        FeatureSpec(name="bad", kind="continuous", range=(2.0, 1.0))
    with pytest.raises(SchemaError):
        FeatureSpec(name="bad", kind="categorical", categories=("only",))
    with pytest.raises(SchemaError):
        FeatureSpec(name="bad", kind="mystery")


def test_schema_requires_both_kinds():
    cont = FeatureSpec(name="a", kind="continuous", range=(0, 1))
    with pytest.raises(SchemaError):
        FeatureSchema(features=(cont,))


def test_schema_rejects_duplicate_names():
    f = FeatureSpec(name="a", kind="continuous", range=(0, 1))
    c = FeatureSpec(name="a", kind="categorical", categories=("x", "y"))
    with pytest.raises(SchemaError):
        FeatureSchema(features=(f, c))


def test_validate_in_range_complete_design(schema):
    design = sample_design(3, schema)
    assert validate_design(design, schema) == []


def test_validate_flags_out_of_range(schema):
    design = sample_design(3, schema)
    lo, _ = schema.feature("saddle_height").range
    bad = design.with_value(schema, "saddle_height", lo - 1.0)
    violations = validate_design(bad, schema)
    assert len(violations) == 1
    assert violations[0].feature == "saddle_height"
    assert violations[0].observed == lo - 1.0


def test_validate_mask_suppresses_check(schema):
    design = sample_design(3, schema)
    lo, _ = schema.feature("saddle_height").range
    bad = design.with_value(schema, "saddle_height", lo - 50.0)
    mask = bad.mask.copy()
    mask[schema.index("saddle_height")] = False
    masked = bad.with_mask(mask)
    assert validate_design(masked, schema) == []
    # brute-force re-check: overwriting the masked slot with any in-range
    # value makes the design fully valid again
    fixed = masked.with_value(schema, "saddle_height", lo + 1.0).with_mask([True] * len(schema))
    assert validate_design(fixed, schema) == []


def test_validate_categorical_index(schema):
    design = sample_design(3, schema)
    bad = design.with_value(schema, "num_bottles", 7)
    assert any(v.feature == "num_bottles" for v in validate_design(bad, schema))
    frac = design.with_value(schema, "num_bottles", 0.5)
    assert any("integral" in v.rule for v in validate_design(frac, schema))


def test_validate_length_mismatch(schema):
    with pytest.raises(SchemaError):
        validate_design(ParametricDesign.complete([1.0, 2.0]), schema)


def test_validate_is_pure(schema):
    design = sample_design(5, schema)
    before = design.values.copy(), design.mask.copy()
    validate_design(design, schema)
    validate_design(design, schema)
    assert np.array_equal(design.values, before[0])
    assert np.array_equal(design.mask, before[1])


def test_schema_roundtrip(schema):
    doc = serialize_schema(schema)
    again = parse_schema(doc)
    assert again == schema
    assert again.content_hash() == schema.content_hash()


def test_parse_schema_missing_range():
    doc = json.dumps(
        {
            "format_version": "1",
            "version": "x",
            "canvas_size": 64,
            "features": [
                {"name": "a", "kind": "continuous"},
                {"name": "b", "kind": "categorical", "categories": ["x", "y"]},
            ],
        }
    )
    with pytest.raises(SchemaError, match="missing 'range'"):
        parse_schema(doc)


def test_parse_schema_malformed():
    with pytest.raises(SchemaError):
        parse_schema("{not json")


def test_design_roundtrip(schema):
    design = sample_design(9, schema).with_mask([i % 2 == 0 for i in range(len(schema))])
    doc = serialize_design(design, schema)
    again = parse_design(doc, schema)
    assert np.array_equal(again.values, design.values)
    assert np.array_equal(again.mask, design.mask)


def test_graph_roundtrip():
    graph = AssemblyGraph(
        nodes=(
            GraphNode("wheel", (21, 21), (4, 30)),
            GraphNode("saddle", (11, 3), (10, 12)),
        ),
        edges=((0, 1),),
    )
    assert parse_graph(serialize_graph(graph)) == graph


def test_graph_rejects_bad_edges():
    with pytest.raises(SchemaError):
        AssemblyGraph(nodes=(GraphNode("wheel", (3, 3), (0, 0)),), edges=((0, 4),))


def test_design_image_bounds():
    with pytest.raises(SchemaError):
        DesignImage(pixels=np.full((8, 8, 3), 1.5, dtype=np.float32))
    with pytest.raises(SchemaError):
        DesignImage(pixels=np.zeros((8, 8, 2), dtype=np.float32))


def test_text_prompt_limits():
    TextPrompt("bike, white background")
    with pytest.raises(SchemaError):
        TextPrompt("x" * 300)
    with pytest.raises(SchemaError):
        TextPrompt(None)


def test_types_are_immutable(schema):
    design = sample_design(1, schema)
    with pytest.raises(ValueError):
        design.values[0] = 99.0
    image = DesignImage(pixels=np.zeros((8, 8, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        image.pixels[0, 0, 0] = 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_sampled_designs_always_validate(seed):
    schema = default_schema()
    assert validate_design(sample_design(seed, schema), schema) == []
