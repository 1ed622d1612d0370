"""designdiff: multimodally controlled diffusion for parametric design synthesis.

A frozen base diffusion model steered by a zero-convolution control branch
conditioned on fused parametric, component-image, and text embeddings, with a
diffusion-based parametric autocomplete front-end and a full evaluation
harness.
"""

from .codec import FeatureCodec
from .configs import PipelineConfig, ci_profile, desk_profile, full_profile, get_profile
from .metrics import diversity_score, ioc, psnr, ssim
from .pipeline import DesignPipeline
from .schema import (
    AssemblyGraph,
    DesignImage,
    FeatureSchema,
    FeatureSpec,
    GraphNode,
    ParametricDesign,
    TextPrompt,
    default_schema,
    parse_schema,
    serialize_schema,
    validate_design,
)
from .synthetic import (
    DatasetSplit,
    build_dataset,
    extract_features,
    graph_from_design,
    ingest_biked,
    render_design,
    sample_design,
)

__version__ = "0.1.0"

__all__ = [
    "AssemblyGraph",
    "DatasetSplit",
    "DesignImage",
    "DesignPipeline",
    "FeatureCodec",
    "FeatureSchema",
    "FeatureSpec",
    "GraphNode",
    "ParametricDesign",
    "PipelineConfig",
    "TextPrompt",
    "build_dataset",
    "ci_profile",
    "default_schema",
    "desk_profile",
    "diversity_score",
    "extract_features",
    "full_profile",
    "get_profile",
    "graph_from_design",
    "ingest_biked",
    "ioc",
    "parse_schema",
    "psnr",
    "render_design",
    "sample_design",
    "serialize_schema",
    "ssim",
    "validate_design",
]
