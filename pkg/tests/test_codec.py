import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from designdiff.codec import FeatureCodec
from designdiff.schema import SchemaError, default_schema
from designdiff.synthetic import sample_design


@pytest.fixture(scope="module")
def codec():
    return FeatureCodec(default_schema())


def test_encoded_width(codec):
    # 11 continuous + one-hot blocks 3+3+2+2+2
    assert codec.encoded_width == 11 + 12
    assert codec.model_input_width == codec.encoded_width + 16


def test_encode_decode_roundtrip(codec):
    design = sample_design(4, codec.schema)
    vec = codec.encode(design)
    decoded, clamped = codec.decode(vec)
    assert clamped == 0
    assert np.allclose(decoded.values, design.values, atol=1e-9)


def test_encode_normalizes_to_unit_interval(codec):
    design = sample_design(12, codec.schema)
    vec = codec.encode(design)
    n_cont = len(codec.schema.continuous_indices)
    assert vec[:n_cont].min() >= 0.0 and vec[:n_cont].max() <= 1.0
    for i in codec.schema.categorical_indices:
        sl = codec.slices()[codec.schema.features[i].name]
        assert vec[sl].sum() == 1.0


def test_unobserved_entries_encode_to_zero(codec):
    design = sample_design(4, codec.schema).with_mask([False] * 16)
    assert np.all(codec.encode(design) == 0.0)


def test_decode_clamps_and_counts(codec):
    vec = codec.encode(sample_design(4, codec.schema))
    vec[0] = 1.7
    vec[1] = -0.4
    decoded, clamped = codec.decode(vec)
    assert clamped == 2
    lo0, hi0 = codec.schema.features[0].range
    assert decoded.values[0] == hi0
    assert decoded.values[1] == codec.schema.features[1].range[0]


def test_mask_expansion(codec):
    mask = np.zeros(16, dtype=bool)
    mask[codec.schema.index("num_bottles")] = True
    enc = codec.encode_mask(mask)
    sl = codec.slices()["num_bottles"]
    assert enc[sl].all()
    assert enc.sum() == sl.stop - sl.start


def test_decode_rejects_bad_width(codec):
    with pytest.raises(SchemaError):
        codec.decode(np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=9999))
def test_roundtrip_property(seed):
    codec = FeatureCodec(default_schema())
    design = sample_design(seed, codec.schema)
    decoded, clamped = codec.decode(codec.encode(design))
    assert clamped == 0
    assert np.allclose(decoded.values, design.values, atol=1e-9)
