"""HTTP service over a trained pipeline.

Endpoints: GET /schema, POST /autocomplete, POST /assemble, POST /generate,
POST /evaluate. Images travel as base64-encoded PNG. Every response carries
the pipeline config hash and the request seed so results are reproducible.
Generation requests are funneled through a single inference worker behind a
bounded queue (429 on overflow).
"""

from __future__ import annotations

import base64
import io
import json
import threading
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .assembly import assemble, masks_by_category
from .imputation import autocomplete
from .metrics import diversity_score, ioc, psnr, ssim
from .pipeline import DesignPipeline
from .schema import (
    AssemblyGraph,
    DesignImage,
    GraphNode,
    ParametricDesign,
    SchemaError,
    serialize_schema,
    validate_design,
)
from .synthetic import render_design


def image_to_b64(image: DesignImage) -> str:
    arr = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    mode = "RGBA" if arr.shape[2] == 4 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def b64_to_image(data: str) -> DesignImage:
    arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(data))))
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=2)
    return DesignImage(pixels=arr.astype(np.float32) / 255.0)


def mask_to_b64(mask: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray((mask.astype(np.uint8)) * 255, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


class DesignPayload(BaseModel):
    values: list[float]
    mask: Optional[list[bool]] = None

    def to_design(self, n_features: int) -> ParametricDesign:
        mask = self.mask if self.mask is not None else [True] * len(self.values)
        if len(self.values) != n_features or len(mask) != len(self.values):
            raise SchemaError(
                f"design must carry exactly {n_features} values (and a mask of equal length)"
            )
        return ParametricDesign(values=np.array(self.values), mask=np.array(mask, dtype=bool))


class NodePayload(BaseModel):
    component_id: str
    size: tuple[int, int]
    position: tuple[int, int]


class GraphPayload(BaseModel):
    nodes: list[NodePayload] = Field(default_factory=list)
    edges: list[tuple[int, int]] = Field(default_factory=list)

    def to_graph(self) -> AssemblyGraph:
        return AssemblyGraph(
            nodes=tuple(GraphNode(n.component_id, n.size, n.position) for n in self.nodes),
            edges=tuple(self.edges),
        )


class AutocompleteRequest(BaseModel):
    design: DesignPayload
    n: int = Field(default=5, ge=1, le=256)
    seed: int = 0


class AssembleRequest(BaseModel):
    graph: GraphPayload


class GenerateRequest(BaseModel):
    design: Optional[DesignPayload] = None
    graph: Optional[GraphPayload] = None
    prompt: str = "bike, white background"
    n_samples: int = Field(default=1, ge=1, le=64)
    steps: Optional[int] = None
    guidance_scale: Optional[float] = None
    seed: int = 0
    parametric_path: str = "imputation"


class EvaluateRequest(BaseModel):
    images: list[str]
    design: Optional[DesignPayload] = None
    graph: Optional[GraphPayload] = None


def create_app(pipeline: DesignPipeline, queue_limit: int = 4) -> FastAPI:
    app = FastAPI(title="designdiff", version="0.1.0")
    config_hash = pipeline.config.config_hash()
    n_features = len(pipeline.schema)
    infer_lock = threading.Lock()
    pending = threading.BoundedSemaphore(queue_limit)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        errors = exc.errors()
        # range violations (e.g. oversize n_samples) are semantic -> 422;
        # everything else (malformed JSON, wrong fields/types) -> 400
        only_ranges = errors and all(
            e["type"] in ("less_than_equal", "greater_than_equal") for e in errors
        )
        detail = [
            {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]} for e in errors
        ]
        return JSONResponse(status_code=422 if only_ranges else 400, content={"detail": detail})

    @app.exception_handler(SchemaError)
    async def schema_error_handler(request: Request, exc: SchemaError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def _envelope(seed: int | None = None, **payload) -> dict:
        out = {"config_hash": config_hash}
        if seed is not None:
            out["seed"] = seed
        out.update(payload)
        return out

    @app.get("/schema")
    def get_schema():
        return _envelope(schema=json.loads(serialize_schema(pipeline.schema)))

    @app.post("/autocomplete")
    def post_autocomplete(req: AutocompleteRequest):
        if pipeline.imputer is None:
            return JSONResponse(
                status_code=503,
                content={"detail": "no trained imputer loaded; run `designdiff train imputer`"},
            )
        design = req.design.to_design(n_features)
        violations = validate_design(design, pipeline.schema)
        if violations:
            raise SchemaError("; ".join(str(v) for v in violations))
        results = autocomplete(design, pipeline.imputer, req.n, req.seed)
        return _envelope(
            seed=req.seed,
            candidates=[
                {"values": d.values.tolist(), "mask": d.mask.tolist()} for d in results
            ],
            clamped=list(results.clamped),
        )

    @app.post("/assemble")
    def post_assemble(req: AssembleRequest):
        graph = req.graph.to_graph()
        try:
            result = assemble(graph, pipeline.library, pipeline.schema.canvas_size)
        except ValueError as e:
            raise SchemaError(str(e)) from e
        return _envelope(
            composite=image_to_b64(result.composite),
            masks=[mask_to_b64(m) for m in result.masks],
        )

    @app.post("/generate")
    def post_generate(req: GenerateRequest):
        if pipeline.base is None:
            return JSONResponse(
                status_code=503,
                content={"detail": "no trained base model loaded; run `designdiff train base`"},
            )
        if req.design is None and req.graph is None and not req.prompt:
            raise SchemaError("at least one condition modality must be present")
        if req.parametric_path == "imputation" and req.design is not None:
            incomplete = req.design.mask is not None and not all(req.design.mask)
            if incomplete and pipeline.imputer is None:
                return JSONResponse(
                    status_code=503,
                    content={"detail": "partial designs need the trained imputer"},
                )
        if not pending.acquire(blocking=False):
            return JSONResponse(
                status_code=429,
                content={"detail": f"generation queue full (limit {queue_limit}); retry later"},
            )
        try:
            with infer_lock:
                design = req.design.to_design(n_features) if req.design else None
                graph = req.graph.to_graph() if req.graph else None
                images = pipeline.generate(
                    design=design,
                    graph=graph,
                    prompt=req.prompt,
                    n=req.n_samples,
                    steps=req.steps,
                    seed=req.seed,
                    guidance_scale=req.guidance_scale,
                    parametric_path=req.parametric_path,
                )
        finally:
            pending.release()
        readbacks, source = pipeline.readback(images)
        return _envelope(
            seed=req.seed,
            readback_source=source,
            samples=[
                {
                    "image": image_to_b64(im),
                    "readback": {"values": rb.values.tolist(), "mask": rb.mask.tolist()},
                }
                for im, rb in zip(images, readbacks)
            ],
        )

    @app.post("/evaluate")
    def post_evaluate(req: EvaluateRequest):
        if not req.images:
            raise SchemaError("evaluate needs at least one image")
        images = [b64_to_image(s) for s in req.images]
        metrics: dict = {}
        if req.graph is not None and req.graph.nodes:
            graph = req.graph.to_graph()
            result = assemble(graph, pipeline.library, pipeline.schema.canvas_size)
            per_cat = masks_by_category(result, graph, pipeline.library)
            metrics["ioc"] = {
                cat: float(np.mean([ioc(mask, im) for im in images]))
                for cat, mask in per_cat.items()
            }
        if req.design is not None:
            design = req.design.to_design(n_features)
            if design.is_complete and pipeline.schema.version.startswith("synthetic"):
                reference = render_design(design, pipeline.schema)
                metrics["psnr"] = float(np.mean([psnr(im, reference) for im in images]))
                metrics["ssim"] = float(np.mean([ssim(im, reference) for im in images]))
        if len(images) >= 2:
            metrics["diversity"] = diversity_score(
                images, lambda im: pipeline.encode_composite(im).pooled.vector
            )
        return _envelope(metrics=metrics, n_images=len(images))

    return app
