"""End-to-end pipeline bundle: schema + encoders + fusion + base + control.

``DesignPipeline`` owns every stage and is what the CLI, the HTTP service,
and the experiment harness operate on. ``ConditionBuilder`` prepares batched
training conditions for the control stage (modality dropout, parametric
conditioning path, component composites).
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import configs
from .assembly import ComponentLibrary, assemble, build_synthetic_library
from .codec import FeatureCodec
from .configs import PipelineConfig, TrainControlConfig
from .control import ControlBranch, ControlledDiffusionModel, build_control_branch, train_control
from .diffusion import (
    BaseDiffusion,
    NoiseSchedule,
    TrainLog,
    images_to_batch,
    tensor_to_image,
    train_base,
)
from .diffusion import ddim_sample, guided_eps_fn
from .encoders import (
    ComponentEncoder,
    ComponentFeatures,
    Embedding,
    ParametricEncoder,
    TextEncoder,
    encode_text,
)
from .fusion import FusionModule, MultimodalCondition, fuse
from .imputation import ImputerModel, autocomplete, impute_batch, impute_masked_zero, train_imputer
from .schema import (
    AssemblyGraph,
    DesignImage,
    FeatureSchema,
    ParametricDesign,
    SchemaError,
    default_schema,
    parse_schema,
    serialize_schema,
)
from .synthetic import DatasetSplit, extract_features, graph_from_design

logger = logging.getLogger(__name__)

PARAMETRIC_PATHS = ("imputation", "zero_mask")


class DesignPipeline:
    """Every stage of the controlled-diffusion pipeline, plus persistence."""

    def __init__(
        self,
        config: PipelineConfig,
        schema: FeatureSchema | None = None,
        library: ComponentLibrary | None = None,
    ):
        self.config = config
        self.schema = schema if schema is not None else default_schema(config.canvas_size)
        if self.schema.canvas_size != config.unet.image_size:
            raise SchemaError(
                f"schema canvas ({self.schema.canvas_size}) != unet image size "
                f"({config.unet.image_size})"
            )
        self.codec = FeatureCodec(self.schema)
        self.library = library if library is not None else build_synthetic_library()

        torch.manual_seed(0xD1F)
        self.text_encoder = TextEncoder(config.text_encoder)
        self.parametric_encoder = ParametricEncoder(
            self.codec.model_input_width, config.parametric_encoder
        )
        self.component_encoder = ComponentEncoder(
            dataclasses.replace(config.component_encoder, input_size=self.schema.canvas_size)
        )
        self.fusion = FusionModule(config.fusion)
        self.base: BaseDiffusion | None = None
        self.branch: ControlBranch | None = None
        self.imputer: ImputerModel | None = None

    # -- conditioning -------------------------------------------------------

    def parametric_model_input(
        self, design: ParametricDesign, path: str = "imputation", seed: int = 0
    ) -> np.ndarray:
        """Encoder input for a (possibly partial) design via the chosen path."""
        if path not in PARAMETRIC_PATHS:
            raise SchemaError(f"unknown parametric path {path!r}; choose from {PARAMETRIC_PATHS}")
        if design.is_complete:
            return self.codec.model_input(
                self.codec.encode(design), np.ones(len(self.schema), dtype=bool)
            )
        if path == "imputation":
            if self.imputer is None:
                raise SchemaError("imputation path requires a trained imputer (train it first)")
            completed = autocomplete(design, self.imputer, 1, seed)[0]
            return self.codec.model_input(
                self.codec.encode(completed), np.ones(len(self.schema), dtype=bool)
            )
        values, mask = impute_masked_zero(design, self.codec)
        return self.codec.model_input(values, mask)

    def encode_parametric_design(
        self, design: ParametricDesign, path: str = "imputation", seed: int = 0
    ) -> Embedding:
        x = torch.as_tensor(
            self.parametric_model_input(design, path, seed), dtype=torch.float32
        ).reshape(1, -1)
        with torch.no_grad():
            out = self.parametric_encoder(x)
        return Embedding(vector=out[0].numpy().astype(np.float64), modality="parametric")

    def encode_graph(self, graph: AssemblyGraph) -> ComponentFeatures:
        composite = assemble(graph, self.library, self.schema.canvas_size).composite
        return self.encode_composite(composite)

    def encode_composite(self, composite: DesignImage) -> ComponentFeatures:
        arr = np.asarray(composite.pixels[:, :, :3], dtype=np.float32).transpose(2, 0, 1)
        x = torch.from_numpy(arr.copy()).unsqueeze(0) * 2.0 - 1.0
        with torch.no_grad():
            spatial, pooled = self.component_encoder(x)
        return ComponentFeatures(
            pooled=Embedding(vector=pooled[0].numpy().astype(np.float64), modality="component"),
            spatial=spatial[0].numpy(),
        )

    def build_condition(
        self,
        design: ParametricDesign | None = None,
        graph: AssemblyGraph | None = None,
        prompt: str = "bike, white background",
        parametric_path: str = "imputation",
        seed: int = 0,
    ) -> MultimodalCondition:
        param_emb = (
            self.encode_parametric_design(design, parametric_path, seed)
            if design is not None
            else None
        )
        comp = self.encode_graph(graph) if graph is not None else None
        text_emb = encode_text(prompt, self.text_encoder)
        return fuse(param_emb, comp, text_emb, self.fusion)

    # -- generation ----------------------------------------------------------

    def controlled(self) -> ControlledDiffusionModel:
        if self.base is None or self.branch is None:
            raise SchemaError("controlled model requires trained base and control branch")
        return ControlledDiffusionModel(self.base, self.branch)

    def generate(
        self,
        design: ParametricDesign | None = None,
        graph: AssemblyGraph | None = None,
        prompt: str = "bike, white background",
        n: int = 1,
        steps: int | None = None,
        seed: int = 0,
        guidance_scale: float | None = None,
        parametric_path: str = "imputation",
    ) -> list[DesignImage]:
        """Deterministic controlled generation (DDIM + classifier-free guidance)."""
        if self.base is None:
            raise SchemaError("generation requires a trained base model")
        if design is None and graph is None and not prompt:
            raise SchemaError("at least one condition modality must be present")
        steps = steps if steps is not None else self.config.sampling.steps
        guidance = (
            guidance_scale if guidance_scale is not None else self.config.sampling.guidance_scale
        )
        size = self.schema.canvas_size

        condition = self.build_condition(design, graph, prompt, parametric_path, seed)
        text_ctx = torch.tensor(condition.text.vector, dtype=torch.float32).reshape(1, 1, -1)
        with torch.no_grad():
            empty_ctx = self.text_encoder.empty_context()

        if self.branch is not None:
            model = self.controlled()
            fused_ctx = torch.tensor(
                condition.fused.vector, dtype=torch.float32
            ).reshape(1, 1, -1)
            hint = (
                torch.tensor(condition.spatial_hint, dtype=torch.float32).unsqueeze(0)
                if condition.spatial_hint is not None
                else None
            )

            def cond_fn(x, t):
                b = x.shape[0]
                h = hint.expand(b, -1, -1, -1) if hint is not None else None
                return model.eps_controlled(
                    x, t, text_ctx.expand(b, -1, -1), fused_ctx.expand(b, -1, -1), hint=h
                )

        else:

            def cond_fn(x, t):
                return self.base.unet(x, t, text_ctx.expand(x.shape[0], -1, -1))

        def uncond_fn(x, t):
            return self.base.unet(x, t, empty_ctx.expand(x.shape[0], -1, -1))

        eps_fn = guided_eps_fn(cond_fn, uncond_fn, guidance)
        with torch.no_grad():
            x = ddim_sample(eps_fn, (n, 3, size, size), self.base.schedule, steps, seed)
        return [tensor_to_image(xi) for xi in x]

    def readback(self, images: Sequence[DesignImage]) -> tuple[list[ParametricDesign], str]:
        """Read features back from generated images.

        Uses the analytic oracle for the synthetic schema; falls back to an
        all-unobserved design otherwise (surrogate readback happens in the
        evaluation harness, which owns the trained surrogates).
        """
        if self.schema.version.startswith("synthetic"):
            return [extract_features(im, self.schema) for im in images], "oracle"
        empty = ParametricDesign(
            values=np.zeros(len(self.schema)), mask=np.zeros(len(self.schema), dtype=bool)
        )
        return [empty for _ in images], "none"

    # -- training stages -----------------------------------------------------

    def train_imputer_stage(self, dataset: DatasetSplit) -> TrainLog:
        designs = [rec[0] for rec in dataset.train]
        self.imputer, log = train_imputer(designs, self.schema, self.config.imputer)
        return log

    def train_base_stage(self, dataset: DatasetSplit) -> TrainLog:
        schedule = NoiseSchedule.from_config(self.config.schedule)
        self.base, log = train_base(
            dataset, self.config.train_base, self.config.unet, schedule, self.text_encoder
        )
        return log

    def train_control_stage(
        self, dataset: DatasetSplit, config: TrainControlConfig | None = None
    ) -> tuple[TrainLog, TrainLog]:
        if self.base is None:
            raise SchemaError("train the base model before the control branch")
        config = config if config is not None else self.config.train_control
        if self.branch is None:
            self.branch = build_control_branch(
                self.base, self.component_encoder.cfg.spatial_channels
            )
        builder = ConditionBuilder(self, dataset)
        _, log, val_log = train_control(self.controlled(), builder, config)
        return log, val_log

    # -- persistence -----------------------------------------------------------

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "schema.json").write_text(serialize_schema(self.schema))
        (out_dir / "config.json").write_text(
            json.dumps(
                {"profile": self.config.profile, "config": self.config.to_dict(),
                 "config_hash": self.config.config_hash()},
                indent=2,
                default=list,
            )
        )
        self.text_encoder.save_vocab(out_dir / "vocab.txt")
        torch.save(self.text_encoder.state_dict(), out_dir / "text_encoder.pt")
        if self.base is not None:
            self.base.save(out_dir / "base.pt")
        if self.imputer is not None:
            self.imputer.save(out_dir / "imputer.pt")
        if self.branch is not None:
            torch.save(
                {
                    "branch_state": self.branch.state_dict(),
                    "hint_channels": self.branch.hint_channels,
                    "text_encoder": self.text_encoder.state_dict(),
                    "parametric_encoder": self.parametric_encoder.state_dict(),
                    "component_encoder": self.component_encoder.state_dict(),
                    "fusion": self.fusion.state_dict(),
                    "base_checksum": self.base.checksum() if self.base else None,
                    "config_hash": self.config.config_hash(),
                },
                out_dir / "control.pt",
            )

    @classmethod
    def load(cls, run_dir: Path, config: PipelineConfig | None = None) -> "DesignPipeline":
        run_dir = Path(run_dir)
        stored = json.loads((run_dir / "config.json").read_text())
        if config is None:
            config = _config_from_dict(stored["config"], stored["profile"])
        schema = parse_schema((run_dir / "schema.json").read_text())
        pipe = cls(config, schema=schema)
        if (run_dir / "vocab.txt").exists():
            vocab = TextEncoder.load_vocab(run_dir / "vocab.txt")
            pipe.text_encoder = TextEncoder(config.text_encoder, vocab=vocab)
        if (run_dir / "text_encoder.pt").exists():
            pipe.text_encoder.load_state_dict(
                torch.load(run_dir / "text_encoder.pt", map_location="cpu", weights_only=False)
            )
        if (run_dir / "base.pt").exists():
            pipe.base, _ = BaseDiffusion.load(run_dir / "base.pt")
            pipe.base.freeze()
        if (run_dir / "imputer.pt").exists():
            pipe.imputer = ImputerModel.load(run_dir / "imputer.pt", schema)
        if (run_dir / "control.pt").exists():
            payload = torch.load(run_dir / "control.pt", map_location="cpu", weights_only=False)
            if pipe.base is None:
                raise SchemaError("control checkpoint present but base.pt is missing")
            if payload["base_checksum"] != pipe.base.checksum():
                raise SchemaError(
                    "control checkpoint was trained against a different base model "
                    "(checksum mismatch); refusing to load the pair"
                )
            pipe.branch = build_control_branch(pipe.base, payload["hint_channels"])
            pipe.branch.load_state_dict(payload["branch_state"])
            pipe.branch.eval()
            pipe.text_encoder.load_state_dict(payload["text_encoder"])
            pipe.parametric_encoder.load_state_dict(payload["parametric_encoder"])
            pipe.component_encoder.load_state_dict(payload["component_encoder"])
            pipe.fusion.load_state_dict(payload["fusion"])
        return pipe


def _config_from_dict(data: dict, profile: str) -> PipelineConfig:
    def build(cls, key):
        payload = dict(data[key])
        for k, v in payload.items():
            if isinstance(v, list):
                payload[k] = tuple(v)
        return cls(**payload)

    return PipelineConfig(
        profile=profile,
        canvas_size=data["canvas_size"],
        dataset_size=data["dataset_size"],
        dataset_seed=data["dataset_seed"],
        embed_dim=data["embed_dim"],
        unet=build(configs.UNetConfig, "unet"),
        schedule=build(configs.ScheduleConfig, "schedule"),
        text_encoder=build(configs.TextEncoderConfig, "text_encoder"),
        parametric_encoder=build(configs.ParametricEncoderConfig, "parametric_encoder"),
        component_encoder=build(configs.ComponentEncoderConfig, "component_encoder"),
        fusion=build(configs.FusionConfig, "fusion"),
        imputer=build(configs.ImputerConfig, "imputer"),
        train_base=build(configs.TrainBaseConfig, "train_base"),
        train_control=build(configs.TrainControlConfig, "train_control"),
        sampling=build(configs.SampleConfig, "sampling"),
    )


class ConditionBuilder:
    """Batched training conditions for the control stage.

    Precomputes per-record image tensors, component composites (derived from
    each design's assembly graph), and complete parametric encoder inputs.
    Applies the configured parametric path, mask augmentation, and modality
    dropout per batch.
    """

    def __init__(self, pipeline: DesignPipeline, dataset: DatasetSplit, val_records: int = 128):
        self.pipeline = pipeline
        self.records = list(dataset.train)
        self.n_train = len(self.records)
        schema = pipeline.schema
        self._images = images_to_batch([r[1] for r in self.records])
        composites = []
        for design, _, _ in self.records:
            graph = graph_from_design(design, schema)
            comp = assemble(graph, pipeline.library, schema.canvas_size).composite
            composites.append(comp)
        self._composites = images_to_batch(composites)
        self._complete_inputs = torch.stack(
            [
                torch.as_tensor(
                    pipeline.codec.model_input(
                        pipeline.codec.encode(d), np.ones(len(schema), dtype=bool)
                    ),
                    dtype=torch.float32,
                )
                for d, _, _ in self.records
            ]
        )
        self._prompts = [r[2].text for r in self.records]
        self._abars = torch.from_numpy(
            NoiseSchedule.from_config(pipeline.config.schedule).alpha_bars
        ).float()
        self.timesteps = pipeline.config.schedule.timesteps

        rng = np.random.default_rng(1234)
        test = list(dataset.test) or self.records
        pick = rng.choice(len(test), size=min(val_records, len(test)), replace=False)
        self._val_records = [test[i] for i in pick]
        self._val_cache: dict | None = None

    def images(self, idx: torch.Tensor) -> torch.Tensor:
        return self._images[idx]

    def forward_noise(self, x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        ab = self._abars[t][:, None, None, None]
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise

    def trainable_parameters(self):
        pipe = self.pipeline
        return (
            list(pipe.text_encoder.parameters())
            + list(pipe.parametric_encoder.parameters())
            + list(pipe.component_encoder.parameters())
            + list(pipe.fusion.parameters())
        )

    def training_contexts(
        self,
        idx: torch.Tensor,
        config: TrainControlConfig,
        np_rng: np.random.Generator,
        torch_rng: torch.Generator,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """(text_ctx, fused_ctx, hint, hint_mask) for one training batch."""
        pipe = self.pipeline
        b = len(idx)
        schema = pipe.schema
        n_feat = len(schema)

        par_inputs = self._complete_inputs[idx].clone()
        augment = np_rng.random(b) < config.mask_augment_prob
        if augment.any():
            partials, rows = [], []
            for row in np.nonzero(augment)[0]:
                design = self.records[int(idx[row])][0]
                ratio = np_rng.uniform(0.1, 0.9)
                mask = np_rng.random(n_feat) >= ratio
                if mask.all():
                    mask[np_rng.integers(n_feat)] = False
                partial = design.with_mask(mask)
                if config.parametric_path == "imputation":
                    partials.append(partial)
                    rows.append(row)
                else:
                    values, m = impute_masked_zero(partial, pipe.codec)
                    par_inputs[row] = torch.as_tensor(
                        pipe.codec.model_input(values, m), dtype=torch.float32
                    )
            if partials:
                completed = impute_batch(
                    pipe.imputer, partials, seed=int(np_rng.integers(2**31))
                )
                for row, design in zip(rows, completed):
                    par_inputs[row] = torch.as_tensor(
                        pipe.codec.model_input(
                            pipe.codec.encode(design), np.ones(n_feat, dtype=bool)
                        ),
                        dtype=torch.float32,
                    )

        param_emb = pipe.parametric_encoder(par_inputs)
        spatial, pooled = pipe.component_encoder(self._composites[idx])
        text_ctx = pipe.text_encoder.encode_batch([self._prompts[int(i)] for i in idx])

        keep_p = (
            torch.rand(b, generator=torch_rng) >= config.dropout_parametric
        ).float()[:, None]
        keep_c = (torch.rand(b, generator=torch_rng) >= config.dropout_component).float()
        drop_t = torch.rand(b, generator=torch_rng) < config.dropout_text
        if drop_t.any():
            empty = pipe.text_encoder.empty_context()
            text_ctx = torch.where(drop_t[:, None, None], empty, text_ctx)

        fused = pipe.fusion(
            param_emb * keep_p, pooled * keep_c[:, None], text_ctx[:, 0, :]
        )
        return text_ctx, fused.unsqueeze(1), spatial, keep_c

    @torch.no_grad()
    def _validation_setup(self) -> dict:
        if self._val_cache is None:
            pipe = self.pipeline
            schema = pipe.schema
            gen = torch.Generator().manual_seed(555)
            x0 = images_to_batch([r[1] for r in self._val_records])
            t = torch.randint(1, self.timesteps + 1, (len(self._val_records),), generator=gen)
            noise = torch.randn(x0.shape, generator=gen)
            composites = images_to_batch(
                [
                    assemble(
                        graph_from_design(r[0], schema), pipe.library, schema.canvas_size
                    ).composite
                    for r in self._val_records
                ]
            )
            par = torch.stack(
                [
                    torch.as_tensor(
                        pipe.codec.model_input(
                            pipe.codec.encode(r[0]), np.ones(len(schema), dtype=bool)
                        ),
                        dtype=torch.float32,
                    )
                    for r in self._val_records
                ]
            )
            self._val_cache = {
                "x_t": self.forward_noise(x0, t, noise),
                "t": t,
                "noise": noise,
                "composites": composites,
                "par": par,
                "prompts": [r[2].text for r in self._val_records],
            }
        return self._val_cache

    @torch.no_grad()
    def validation_mse(self, model) -> float:
        """Controlled epsilon-MSE on the fixed validation triples, full conditions."""
        pipe = self.pipeline
        v = self._validation_setup()
        param_emb = pipe.parametric_encoder(v["par"])
        spatial, pooled = pipe.component_encoder(v["composites"])
        text_ctx = pipe.text_encoder.encode_batch(v["prompts"])
        fused = pipe.fusion(param_emb, pooled, text_ctx[:, 0, :]).unsqueeze(1)
        eps = model.eps_controlled(v["x_t"], v["t"], text_ctx, fused, hint=spatial)
        return float(torch.mean((eps - v["noise"]) ** 2))

    @torch.no_grad()
    def base_validation_mse(self) -> float:
        """Text-only frozen-base epsilon-MSE on the same validation triples."""
        pipe = self.pipeline
        v = self._validation_setup()
        text_ctx = pipe.text_encoder.encode_batch(v["prompts"])
        eps = pipe.base.unet(v["x_t"], v["t"], text_ctx)
        return float(torch.mean((eps - v["noise"]) ** 2))
