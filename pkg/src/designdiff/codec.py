"""Encoding of designs at model boundaries.

One normalization convention everywhere: continuous features map to [0, 1]
via their schema range; categorical features are one-hot encoded. Inside the
package designs stay as (values, mask) with integer category indices — this
codec is the only place the two representations meet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import CATEGORICAL, CONTINUOUS, FeatureSchema, ParametricDesign, SchemaError


@dataclass(frozen=True)
class FeatureCodec:
    """Maps designs to flat model vectors and back.

    Encoded layout: all continuous features first (normalized to [0, 1],
    schema order), then the one-hot blocks of the categorical features
    (schema order).
    """

    schema: FeatureSchema

    @property
    def encoded_width(self) -> int:
        w = len(self.schema.continuous_indices)
        for i in self.schema.categorical_indices:
            w += self.schema.features[i].num_categories
        return w

    @property
    def feature_count(self) -> int:
        return len(self.schema)

    def slices(self) -> dict[str, slice]:
        """Encoded-vector slice per feature name."""
        out: dict[str, slice] = {}
        pos = 0
        for i in self.schema.continuous_indices:
            out[self.schema.features[i].name] = slice(pos, pos + 1)
            pos += 1
        for i in self.schema.categorical_indices:
            spec = self.schema.features[i]
            out[spec.name] = slice(pos, pos + spec.num_categories)
            pos += spec.num_categories
        return out

    def normalize_value(self, name: str, value: float) -> float:
        spec = self.schema.feature(name)
        if spec.kind != CONTINUOUS:
            raise SchemaError(f"{name} is not continuous")
        lo, hi = spec.range
        return (value - lo) / (hi - lo)

    def denormalize_value(self, name: str, unit: float) -> float:
        lo, hi = self.schema.feature(name).range
        return lo + unit * (hi - lo)

    def encode(self, design: ParametricDesign) -> np.ndarray:
        """Encode observed entries; unobserved entries come out as zeros."""
        out = np.zeros(self.encoded_width, dtype=np.float64)
        pos = 0
        for i in self.schema.continuous_indices:
            if design.mask[i]:
                lo, hi = self.schema.features[i].range
                out[pos] = (design.values[i] - lo) / (hi - lo)
            pos += 1
        for i in self.schema.categorical_indices:
            k = self.schema.features[i].num_categories
            if design.mask[i]:
                out[pos + int(round(design.values[i]))] = 1.0
            pos += k
        return out

    def encode_mask(self, mask: np.ndarray) -> np.ndarray:
        """Expand a per-feature mask to the encoded width (one-hot blocks share a flag)."""
        out = np.zeros(self.encoded_width, dtype=bool)
        pos = 0
        for i in self.schema.continuous_indices:
            out[pos] = mask[i]
            pos += 1
        for i in self.schema.categorical_indices:
            k = self.schema.features[i].num_categories
            out[pos : pos + k] = mask[i]
            pos += k
        return out

    def decode(self, vec: np.ndarray, clamp: bool = True) -> tuple[ParametricDesign, int]:
        """Decode an encoded vector into a complete design.

        Continuous entries are clamped into their schema range when ``clamp``
        is set; categorical blocks decode by argmax. Returns the design and
        the number of clamped continuous entries.
        """
        if vec.shape != (self.encoded_width,):
            raise SchemaError(f"expected encoded width {self.encoded_width}, got {vec.shape}")
        values = np.zeros(len(self.schema), dtype=np.float64)
        clamped = 0
        pos = 0
        for i in self.schema.continuous_indices:
            lo, hi = self.schema.features[i].range
            raw = lo + float(vec[pos]) * (hi - lo)
            if clamp:
                bounded = min(max(raw, lo), hi)
                if bounded != raw:
                    clamped += 1
                raw = bounded
            values[i] = raw
            pos += 1
        for i in self.schema.categorical_indices:
            k = self.schema.features[i].num_categories
            values[i] = int(np.argmax(vec[pos : pos + k]))
            pos += k
        return ParametricDesign.complete(values), clamped

    def model_input(self, values_encoded: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Parametric-encoder input: encoded values followed by per-feature mask flags."""
        if values_encoded.shape != (self.encoded_width,):
            raise SchemaError("bad encoded width")
        if mask.shape != (self.feature_count,):
            raise SchemaError("bad mask width")
        return np.concatenate([values_encoded, mask.astype(np.float64)])

    @property
    def model_input_width(self) -> int:
        return self.encoded_width + self.feature_count
