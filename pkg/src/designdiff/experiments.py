"""Experiment harness: the six evaluation protocols and their reports.

Experiments operate on a trained :class:`~designdiff.pipeline.DesignPipeline`
plus the dataset split it was trained on. Every report regenerates
bit-identically from its stored seeds and config; every aggregate number is
traceable to the stored raw per-sample values.

Experiment ids
--------------
ablation_imputation    imputation path vs zero-mask path on SSIM/PSNR/diversity
parametric_adherence   complete vectors in, per-feature R^2 / accuracy back
feature_specific       single pinned feature, median/mean/SD/%error/accuracy
single_component       one component image in, IoC/PSNR/SSIM per category
multimodal_nonoverlap  split information across modalities, IoC + R^2 jointly
multimodal_conflict    contradictory saddle-height fixtures, which modality wins
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .assembly import assemble, masks_by_category
from .diffusion import ddim_sample, guided_eps_fn, tensor_to_image
from .fusion import MultimodalCondition
from .metrics import diversity_score, ioc, psnr, ssim
from .pipeline import DesignPipeline
from .schema import AssemblyGraph, DesignImage, ParametricDesign, SchemaError
from .surrogates import r_squared
from .synthetic import DatasetSplit, extract_features, graph_from_design, render_design

logger = logging.getLogger(__name__)

EXPERIMENT_IDS = (
    "ablation_imputation",
    "parametric_adherence",
    "feature_specific",
    "single_component",
    "multimodal_nonoverlap",
    "multimodal_conflict",
)

EVALUATED_CONTINUOUS = (
    "saddle_height",
    "seat_tube_length",
    "stem_angle",
    "top_tube_length",
    "head_tube_angle",
)
EVALUATED_CATEGORICAL = ("num_bottles", "handlebar_style")

# component category -> the parametric features it visually pins down
CATEGORY_FEATURES = {
    "saddle": ("saddle_height", "saddle_length"),
    "bottle": ("num_bottles",),
    "crank": ("crank_length",),
    "handlebar": ("handlebar_width", "handlebar_style", "stem_angle"),
    "frame": ("seat_tube_length", "top_tube_length", "head_tube_angle", "head_tube_length"),
}
SINGLE_COMPONENT_CATEGORIES = ("crank", "bottle", "saddle", "handlebar", "frame")

FEATURE_SPECIFIC_CASES = (
    ("num_bottles", 2.0),
    ("seat_tube_length", 180.0),
    ("rack", 1.0),
    ("stem_angle", 10.0),
)


@dataclass(frozen=True)
class ExperimentConfig:
    n_samples: int = 100  # per condition / category
    seed: int = 0
    steps: int | None = None
    guidance_scale: float | None = None
    mask_fraction: float = 0.4  # fraction of features masked in the ablation
    n_designs: int = 10  # base designs for feature_specific
    batch_size: int = 50
    conflict_high: float = 330.0  # parametric saddle height target
    conflict_low: float = 250.0  # component-implied saddle height
    save_images: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EvaluationReport:
    experiment_id: str
    tables: dict[str, list[dict]]
    metadata: dict
    raw: dict[str, list] = field(default_factory=dict)

    def table(self, name: str) -> list[dict]:
        return self.tables[name]

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = {
            "experiment_id": self.experiment_id,
            "metadata": self.metadata,
            "tables": self.tables,
        }
        (out_dir / "report.json").write_text(json.dumps(summary, indent=2, default=_jsonify))
        for name, rows in self.tables.items():
            if not rows:
                continue
            with open(out_dir / f"{name}.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                writer.writerows(rows)
        (out_dir / "raw.json").write_text(json.dumps(self.raw, indent=2, default=_jsonify))

    @classmethod
    def load(cls, out_dir: Path) -> "EvaluationReport":
        out_dir = Path(out_dir)
        summary = json.loads((out_dir / "report.json").read_text())
        raw = json.loads((out_dir / "raw.json").read_text()) if (out_dir / "raw.json").exists() else {}
        return cls(
            experiment_id=summary["experiment_id"],
            tables=summary["tables"],
            metadata=summary["metadata"],
            raw=raw,
        )


def _jsonify(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _require(pipeline: DesignPipeline, needs_imputer: bool = True) -> None:
    missing = []
    if pipeline.base is None:
        missing.append("base (train base)")
    if pipeline.branch is None:
        missing.append("control branch (train control)")
    if needs_imputer and pipeline.imputer is None:
        missing.append("imputer (train imputer)")
    if missing:
        raise SchemaError("experiment prerequisites missing: " + ", ".join(missing))


def generate_for_conditions(
    pipeline: DesignPipeline,
    conditions: Sequence[MultimodalCondition],
    config: ExperimentConfig,
    seed: int,
) -> list[DesignImage]:
    """Batched controlled DDIM over per-row conditions, chunked and seeded."""
    model = pipeline.controlled()
    size = pipeline.schema.canvas_size
    d = pipeline.config.embed_dim
    hint_c = pipeline.component_encoder.cfg.spatial_channels
    hint_hw = pipeline.component_encoder.cfg.spatial_size
    steps = config.steps if config.steps is not None else pipeline.config.sampling.steps
    guidance = (
        config.guidance_scale
        if config.guidance_scale is not None
        else pipeline.config.sampling.guidance_scale
    )
    with torch.no_grad():
        empty_ctx = pipeline.text_encoder.empty_context()

    out: list[DesignImage] = []
    for chunk_no, start in enumerate(range(0, len(conditions), config.batch_size)):
        chunk = conditions[start : start + config.batch_size]
        b = len(chunk)
        text_ctx = torch.stack(
            [torch.tensor(c.text.vector, dtype=torch.float32) for c in chunk]
        ).reshape(b, 1, d)
        fused_ctx = torch.stack(
            [torch.tensor(c.fused.vector, dtype=torch.float32) for c in chunk]
        ).reshape(b, 1, d)
        hint = torch.zeros(b, hint_c, hint_hw, hint_hw)
        hint_mask = torch.zeros(b)
        for i, c in enumerate(chunk):
            if c.spatial_hint is not None:
                hint[i] = torch.tensor(np.asarray(c.spatial_hint))
                hint_mask[i] = 1.0

        def cond_fn(x, t):
            return model.eps_controlled(x, t, text_ctx, fused_ctx, hint=hint, hint_mask=hint_mask)

        def uncond_fn(x, t):
            return pipeline.base.unet(x, t, empty_ctx.expand(x.shape[0], -1, -1))

        eps_fn = guided_eps_fn(cond_fn, uncond_fn, guidance)
        with torch.no_grad():
            x = ddim_sample(
                eps_fn, (b, 3, size, size), pipeline.base.schedule, steps, seed + 7919 * chunk_no
            )
        out.extend(tensor_to_image(xi) for xi in x)
    return out


def _component_feature_fn(pipeline: DesignPipeline):
    def feature_fn(image: DesignImage) -> np.ndarray:
        return pipeline.encode_composite(image).pooled.vector

    return feature_fn


def _pick_test_records(dataset: DatasetSplit, n: int, rng: np.random.Generator):
    test = list(dataset.test)
    idx = rng.integers(0, len(test), size=n)
    return [test[int(i)] for i in idx]


def _category_graph(design: ParametricDesign, pipeline: DesignPipeline, category: str) -> AssemblyGraph:
    full = graph_from_design(design, pipeline.schema)
    nodes = tuple(
        n for n in full.nodes if pipeline.library.category(n.component_id) == category
    )
    if not nodes:
        raise SchemaError(f"design has no {category!r} nodes")
    return AssemblyGraph(nodes=nodes, edges=())


def _fold_scores(y_true: np.ndarray, y_pred: np.ndarray, folds: int = 5, score=r_squared):
    """Score per contiguous fold -> (mean, sd); folds with <2 points are skipped."""
    chunks_t = np.array_split(y_true, folds)
    chunks_p = np.array_split(y_pred, folds)
    vals = [score(t, p) for t, p in zip(chunks_t, chunks_p) if len(t) >= 2]
    return float(np.mean(vals)), float(np.std(vals))


# -- experiments --------------------------------------------------------------


def _ablation_imputation(pipeline, dataset, config):
    rng = np.random.default_rng([config.seed, 1])
    records = _pick_test_records(dataset, config.n_samples, rng)
    n_feat = len(pipeline.schema)
    masks = []
    for _ in records:
        mask = rng.random(n_feat) >= config.mask_fraction
        if mask.all():
            mask[rng.integers(n_feat)] = False
        masks.append(mask)

    feature_fn = _component_feature_fn(pipeline)
    rows, raw = [], {}
    for path in ("imputation", "zero_mask"):
        conditions = [
            pipeline.build_condition(
                design=rec[0].with_mask(mask),
                graph=None,
                prompt=rec[2].text,
                parametric_path=path,
                seed=int(rng.integers(2**31)) if path == "imputation" else 0,
            )
            for rec, mask in zip(records, masks)
        ]
        images = generate_for_conditions(pipeline, conditions, config, seed=config.seed + 17)
        ssims = [ssim(im, rec[1]) for im, rec in zip(images, records)]
        psnrs = [psnr(im, rec[1]) for im, rec in zip(images, records)]
        div = diversity_score(images, feature_fn)
        rows.append(
            {
                "path": path,
                "ssim": float(np.mean(ssims)),
                "psnr": float(np.mean(psnrs)),
                "diversity": div,
                "n": len(images),
            }
        )
        raw[path] = {"ssim": ssims, "psnr": psnrs}
    return {"ablation": rows}, raw


def _parametric_adherence(pipeline, dataset, config):
    rng = np.random.default_rng([config.seed, 2])
    records = _pick_test_records(dataset, config.n_samples, rng)
    conditions = [
        pipeline.build_condition(design=rec[0], graph=None, prompt=rec[2].text)
        for rec in records
    ]
    images = generate_for_conditions(pipeline, conditions, config, seed=config.seed + 29)
    readbacks = [extract_features(im, pipeline.schema) for im in images]

    rows, raw = [], {"targets": {}, "predictions": {}}
    for name in EVALUATED_CONTINUOUS:
        j = pipeline.schema.index(name)
        pairs = [
            (rec[0].values[j], rb.values[j])
            for rec, rb in zip(records, readbacks)
            if rb.mask[j]
        ]
        detected = len(pairs)
        if detected < 2:
            rows.append({"feature": name, "kind": "r2", "score": float("nan"), "sd": float("nan"), "n": detected})
            continue
        y_true = np.array([p[0] for p in pairs])
        y_pred = np.array([p[1] for p in pairs])
        mean, sd = _fold_scores(y_true, y_pred)
        rows.append(
            {"feature": name, "kind": "r2", "score": r_squared(y_true, y_pred), "sd": sd, "n": detected}
        )
        raw["targets"][name] = y_true.tolist()
        raw["predictions"][name] = y_pred.tolist()
    for name in EVALUATED_CATEGORICAL:
        j = pipeline.schema.index(name)
        pairs = [
            (rec[0].values[j], rb.values[j])
            for rec, rb in zip(records, readbacks)
            if rb.mask[j]
        ]
        y_true = np.array([p[0] for p in pairs])
        y_pred = np.array([p[1] for p in pairs])
        acc = float((y_true == y_pred).mean()) if len(pairs) else float("nan")
        rows.append({"feature": name, "kind": "accuracy", "score": acc, "sd": 0.0, "n": len(pairs)})
        raw["targets"][name] = y_true.tolist()
        raw["predictions"][name] = y_pred.tolist()
    return {"adherence": rows}, raw


def _feature_specific(pipeline, dataset, config):
    rng = np.random.default_rng([config.seed, 3])
    per_design = max(1, config.n_samples // config.n_designs)
    rows, raw = [], {}
    for name, target in FEATURE_SPECIFIC_CASES:
        spec = pipeline.schema.feature(name)
        records = _pick_test_records(dataset, config.n_designs, rng)
        conditions = []
        for rec in records:
            pinned = rec[0].with_value(pipeline.schema, name, target)
            for _ in range(per_design):
                conditions.append(
                    pipeline.build_condition(design=pinned, graph=None, prompt=rec[2].text)
                )
        images = generate_for_conditions(
            pipeline, conditions, config, seed=config.seed + 43 + pipeline.schema.index(name)
        )
        j = pipeline.schema.index(name)
        readbacks = [extract_features(im, pipeline.schema) for im in images]
        values = [float(rb.values[j]) for rb in readbacks if rb.mask[j]]
        values_arr = np.array(values)
        row = {
            "feature": name,
            "target": target,
            "median": float(np.median(values_arr)) if len(values) else float("nan"),
            "mean": float(np.mean(values_arr)) if len(values) else float("nan"),
            "sd": float(np.std(values_arr)) if len(values) else float("nan"),
            "n": len(values),
        }
        if spec.kind == "continuous":
            row["pct_error"] = (
                abs(row["mean"] - target) / abs(target) * 100.0 if target else float("nan")
            )
            row["accuracy"] = float("nan")
        else:
            row["pct_error"] = float("nan")
            row["accuracy"] = float((values_arr == target).mean()) if len(values) else float("nan")
        rows.append(row)
        raw[name] = values
    return {"feature_specific": rows}, raw


def _single_component(pipeline, dataset, config):
    rng = np.random.default_rng([config.seed, 4])
    rows, raw = [], {}
    for cat_no, category in enumerate(SINGLE_COMPONENT_CATEGORIES):
        records = []
        while len(records) < config.n_samples:
            rec = _pick_test_records(dataset, 1, rng)[0]
            try:
                _category_graph(rec[0], pipeline, category)
            except SchemaError:
                continue  # e.g. designs with zero bottles
            records.append(rec)
        graphs = [_category_graph(rec[0], pipeline, category) for rec in records]
        conditions = [
            pipeline.build_condition(design=None, graph=g, prompt=rec[2].text)
            for g, rec in zip(graphs, records)
        ]
        images = generate_for_conditions(pipeline, conditions, config, seed=config.seed + 71 + cat_no)
        iocs, psnrs, ssims = [], [], []
        for g, rec, im in zip(graphs, records, images):
            result = assemble(g, pipeline.library, pipeline.schema.canvas_size)
            mask = masks_by_category(result, g, pipeline.library)[category]
            iocs.append(ioc(mask, im))
            psnrs.append(psnr(im, rec[1]))
            ssims.append(ssim(im, rec[1]))
        rows.append(
            {
                "category": category,
                "ioc": float(np.mean(iocs)),
                "psnr": float(np.mean(psnrs)),
                "ssim": float(np.mean(ssims)),
                "n": len(images),
            }
        )
        raw[category] = {"ioc": iocs, "psnr": psnrs, "ssim": ssims}
    return {"single_component": rows}, raw


def _multimodal_nonoverlap(pipeline, dataset, config):
    rng = np.random.default_rng([config.seed, 5])
    rows, raw = [], {}
    for cat_no, category in enumerate(SINGLE_COMPONENT_CATEGORIES):
        removed = CATEGORY_FEATURES[category]
        records = []
        while len(records) < config.n_samples:
            rec = _pick_test_records(dataset, 1, rng)[0]
            try:
                _category_graph(rec[0], pipeline, category)
            except SchemaError:
                continue
            records.append(rec)
        conditions, graphs = [], []
        for rec in records:
            mask = np.ones(len(pipeline.schema), dtype=bool)
            for name in removed:
                mask[pipeline.schema.index(name)] = False
            graph = _category_graph(rec[0], pipeline, category)
            graphs.append(graph)
            conditions.append(
                pipeline.build_condition(
                    design=rec[0].with_mask(mask),
                    graph=graph,
                    prompt=rec[2].text,
                    parametric_path="zero_mask",
                )
            )
        images = generate_for_conditions(pipeline, conditions, config, seed=config.seed + 97 + cat_no)

        iocs, psnrs, ssims = [], [], []
        for g, rec, im in zip(graphs, records, images):
            result = assemble(g, pipeline.library, pipeline.schema.canvas_size)
            mask = masks_by_category(result, g, pipeline.library)[category]
            iocs.append(ioc(mask, im))
            psnrs.append(psnr(im, rec[1]))
            ssims.append(ssim(im, rec[1]))
        readbacks = [extract_features(im, pipeline.schema) for im in images]
        kept = [n for n in EVALUATED_CONTINUOUS if n not in removed]
        r2s = []
        for name in kept:
            j = pipeline.schema.index(name)
            pairs = [
                (rec[0].values[j], rb.values[j])
                for rec, rb in zip(records, readbacks)
                if rb.mask[j]
            ]
            if len(pairs) >= 2:
                r2s.append(r_squared(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])))
        rows.append(
            {
                "category": category,
                "ioc": float(np.mean(iocs)),
                "r2_observed": float(np.mean(r2s)) if r2s else float("nan"),
                "psnr": float(np.mean(psnrs)),
                "ssim": float(np.mean(ssims)),
                "n": len(images),
            }
        )
        raw[category] = {"ioc": iocs, "r2_features": kept}
    return {"multimodal_nonoverlap": rows}, raw


def _multimodal_conflict(pipeline, dataset, config):
    rng = np.random.default_rng([config.seed, 6])
    records = _pick_test_records(dataset, config.n_samples, rng)
    name = "saddle_height"
    j = pipeline.schema.index(name)
    conditions = []
    for rec in records:
        parametric = rec[0].with_value(pipeline.schema, name, config.conflict_high)
        low_design = rec[0].with_value(pipeline.schema, name, config.conflict_low)
        graph = _category_graph(low_design, pipeline, "saddle")
        conditions.append(
            pipeline.build_condition(design=parametric, graph=graph, prompt=rec[2].text)
        )
    images = generate_for_conditions(pipeline, conditions, config, seed=config.seed + 131)
    values = []
    for im in images:
        rb = extract_features(im, pipeline.schema)
        if rb.mask[j]:
            values.append(float(rb.values[j]))
    arr = np.array(values)
    med = float(np.median(arr)) if len(arr) else float("nan")
    rows = [
        {
            "feature": name,
            "parametric_target": config.conflict_high,
            "component_target": config.conflict_low,
            "generated_median": med,
            "generated_mean": float(np.mean(arr)) if len(arr) else float("nan"),
            "generated_sd": float(np.std(arr)) if len(arr) else float("nan"),
            "wins": "component"
            if abs(med - config.conflict_low) < abs(med - config.conflict_high)
            else "parametric",
            "n": len(arr),
        }
    ]
    return {"multimodal_conflict": rows}, {"generated": values}


_RUNNERS = {
    "ablation_imputation": _ablation_imputation,
    "parametric_adherence": _parametric_adherence,
    "feature_specific": _feature_specific,
    "single_component": _single_component,
    "multimodal_nonoverlap": _multimodal_nonoverlap,
    "multimodal_conflict": _multimodal_conflict,
}


def run_experiment(
    experiment_id: str,
    pipeline: DesignPipeline,
    dataset: DatasetSplit,
    config: ExperimentConfig | None = None,
) -> EvaluationReport:
    """Run one protocol and assemble its report (deterministic per config)."""
    if experiment_id not in _RUNNERS:
        raise SchemaError(f"unknown experiment {experiment_id!r}; choose from {EXPERIMENT_IDS}")
    config = config or ExperimentConfig()
    _require(pipeline, needs_imputer=experiment_id != "single_component")
    tables, raw = _RUNNERS[experiment_id](pipeline, dataset, config)
    return EvaluationReport(
        experiment_id=experiment_id,
        tables=tables,
        metadata={
            "config": config.to_dict(),
            "pipeline_config_hash": pipeline.config.config_hash(),
            "profile": pipeline.config.profile,
            "diversity_feature_fn": "component_encoder_pooled",
            "split_seed": dataset.split_seed,
        },
        raw=raw,
    )
