"""Command-line interface: dataset building, training stages, generation,
evaluation, and the HTTP service."""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import configs
from .assembly import assemble, build_synthetic_library, load_library, save_library
from .experiments import EXPERIMENT_IDS, EvaluationReport, ExperimentConfig, run_experiment
from .imputation import autocomplete
from .pipeline import DesignPipeline
from .schema import (
    SchemaError,
    default_schema,
    parse_design,
    parse_graph,
    serialize_design,
)
from .surrogates import save_surrogates, train_surrogates
from .synthetic import build_dataset, ingest_biked, load_dataset, save_dataset, save_image

logger = logging.getLogger(__name__)


def _load_profile(profile: str, config_path: str | None) -> configs.PipelineConfig:
    cfg = configs.get_profile(profile)
    if config_path:
        from .pipeline import _config_from_dict

        data = json.loads(Path(config_path).read_text())
        cfg = _config_from_dict(data.get("config", data), data.get("profile", profile))
    return cfg


def _fail(message: str) -> None:
    raise click.ClickException(message)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Multimodally controlled diffusion for parametric design synthesis."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.group()
def dataset() -> None:
    """Build or ingest datasets."""


@dataset.command("build")
@click.option("--n", default=4000, show_default=True, help="Number of samples.")
@click.option("--seed", default=7, show_default=True)
@click.option("--canvas", default=64, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def dataset_build(n: int, seed: int, canvas: int, out: Path) -> None:
    """Sample, render, and split a synthetic dataset."""
    try:
        schema = default_schema(canvas)
        split = build_dataset(n, schema, seed)
        save_dataset(split, schema, out)
    except SchemaError as e:
        _fail(str(e))
    click.echo(f"wrote {len(split.train)} train / {len(split.test)} test records to {out}")


@dataset.command("ingest")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--split-seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def dataset_ingest(csv_path: Path, image_dir: Path, split_seed: int, out: Path) -> None:
    """Ingest a BIKED-format table (feature columns + image paths)."""
    try:
        split, schema = ingest_biked(csv_path, image_dir, split_seed)
        save_dataset(split, schema, out)
    except SchemaError as e:
        _fail(str(e))
    click.echo(
        f"ingested {len(split.train)}+{len(split.test)} records "
        f"({len(schema)} features) to {out}"
    )


@main.group()
def train() -> None:
    """Training stages (run in order: imputer, base, control, surrogates)."""


def _open_run(run: Path, profile: str, config: str | None, data: Path):
    # the invocation's profile/config is authoritative; the run directory
    # contributes weights and the schema
    cfg = _load_profile(profile, config)
    split, schema = load_dataset(data)
    if (run / "config.json").exists():
        pipe = DesignPipeline.load(run, config=cfg)
    else:
        pipe = DesignPipeline(cfg, schema=schema)
    return pipe, split


@train.command("imputer")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--run", required=True, type=click.Path(path_type=Path))
@click.option("--profile", default="desk", show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--epochs", default=None, type=int)
def train_imputer_cmd(data: Path, run: Path, profile: str, config: str | None, epochs: int | None) -> None:
    try:
        pipe, split = _open_run(run, profile, config, data)
        if epochs is not None:
            pipe.config = dataclasses.replace(
                pipe.config, imputer=dataclasses.replace(pipe.config.imputer, epochs=epochs)
            )
        log = pipe.train_imputer_stage(split)
        pipe.save(run)
        log.to_csv(run / "imputer_train.csv")
    except (SchemaError, RuntimeError) as e:
        _fail(str(e))
    click.echo(f"imputer trained (final loss {log.final_loss:.4f}); saved to {run}")


@train.command("base")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--run", required=True, type=click.Path(path_type=Path))
@click.option("--profile", default="desk", show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--steps", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
def train_base_cmd(data: Path, run: Path, profile: str, config: str | None, steps, batch_size) -> None:
    try:
        pipe, split = _open_run(run, profile, config, data)
        tb = pipe.config.train_base
        if steps is not None:
            tb = dataclasses.replace(tb, steps=steps)
        if batch_size is not None:
            tb = dataclasses.replace(tb, batch_size=batch_size)
        pipe.config = dataclasses.replace(pipe.config, train_base=tb)
        log = pipe.train_base_stage(split)
        pipe.save(run)
        log.to_csv(run / "base_train.csv")
    except (SchemaError, RuntimeError) as e:
        _fail(str(e))
    click.echo(
        f"base trained ({pipe.base.parameter_count:,} params, final loss {log.final_loss:.4f})"
    )


@train.command("control")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--run", required=True, type=click.Path(path_type=Path))
@click.option("--profile", default="desk", show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--steps", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
def train_control_cmd(data: Path, run: Path, profile: str, config: str | None, steps, batch_size) -> None:
    try:
        pipe, split = _open_run(run, profile, config, data)
        if pipe.base is None:
            _fail("no trained base in the run directory; run `train base` first")
        tc = pipe.config.train_control
        if steps is not None:
            tc = dataclasses.replace(tc, steps=steps)
        if batch_size is not None:
            tc = dataclasses.replace(tc, batch_size=batch_size)
        pipe.config = dataclasses.replace(pipe.config, train_control=tc)
        log, val_log = pipe.train_control_stage(split)
        pipe.save(run)
        log.to_csv(run / "control_train.csv")
        if val_log.rows:
            val_log.to_csv(run / "control_val.csv")
    except (SchemaError, RuntimeError) as e:
        _fail(str(e))
    click.echo(f"control branch trained (final loss {log.final_loss:.4f}); saved to {run}")


@train.command("surrogates")
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--run", required=True, type=click.Path(path_type=Path))
@click.option("--features", default=None, help="Comma-separated feature names.")
@click.option("--epochs", default=8, show_default=True)
def train_surrogates_cmd(data: Path, run: Path, features: str | None, epochs: int) -> None:
    from .experiments import EVALUATED_CATEGORICAL, EVALUATED_CONTINUOUS
    from .surrogates import SurrogateTrainConfig

    try:
        split, schema = load_dataset(data)
        names = (
            [f.strip() for f in features.split(",")]
            if features
            else list(EVALUATED_CONTINUOUS + EVALUATED_CATEGORICAL)
        )
        models = train_surrogates(split, schema, names, SurrogateTrainConfig(epochs=epochs))
        run.mkdir(parents=True, exist_ok=True)
        save_surrogates(models, run / "surrogates.pt")
    except (SchemaError, KeyError, RuntimeError) as e:
        _fail(str(e))
    for name, m in models.items():
        click.echo(f"{name}: {m.task} score {m.score:.3f}")


@main.command("autocomplete")
@click.option("--params", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--run", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--n", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(path_type=Path))
def autocomplete_cmd(params: Path, run: Path, n: int, seed: int, out: Path | None) -> None:
    """Complete a partial design file with the trained imputer."""
    try:
        pipe = DesignPipeline.load(run)
        if pipe.imputer is None:
            _fail("run directory has no trained imputer")
        design = parse_design(params.read_text(), pipe.schema)
        results = autocomplete(design, pipe.imputer, n, seed)
    except SchemaError as e:
        _fail(str(e))
    docs = [json.loads(serialize_design(d, pipe.schema)) for d in results]
    payload = json.dumps({"candidates": docs, "clamped": list(results.clamped)}, indent=2)
    if out:
        out.write_text(payload)
        click.echo(f"wrote {n} candidates to {out}")
    else:
        click.echo(payload)


@main.command("assemble")
@click.option("--graph", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--library", "library_dir", default=None, type=click.Path(exists=True, path_type=Path))
@click.option("--canvas", default=64, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def assemble_cmd(graph: Path, library_dir: Path | None, canvas: int, out: Path) -> None:
    """Composite a graph's sprites onto a canvas and write the PNG."""
    try:
        lib = load_library(library_dir) if library_dir else build_synthetic_library()
        g = parse_graph(graph.read_text())
        result = assemble(g, lib, canvas)
    except (SchemaError, ValueError) as e:
        _fail(str(e))
    save_image(result.composite, out)
    click.echo(f"wrote composite ({len(result.masks)} component masks) to {out}")


@main.command("generate")
@click.option("--run", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--params", default=None, type=click.Path(exists=True, path_type=Path))
@click.option("--graph", default=None, type=click.Path(exists=True, path_type=Path))
@click.option("--prompt", default="bike, white background", show_default=True)
@click.option("--n", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--steps", default=None, type=int)
@click.option("--guidance", default=None, type=float)
@click.option("--path", "parametric_path", default="imputation", show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def generate_cmd(run, params, graph, prompt, n, seed, steps, guidance, parametric_path, out: Path) -> None:
    """Generate designs from any combination of condition modalities."""
    try:
        pipe = DesignPipeline.load(run)
        design = parse_design(Path(params).read_text(), pipe.schema) if params else None
        g = parse_graph(Path(graph).read_text()) if graph else None
        if design is None and g is None and not prompt:
            _fail("at least one condition modality is required")
        images = pipe.generate(
            design=design,
            graph=g,
            prompt=prompt,
            n=n,
            steps=steps,
            seed=seed,
            guidance_scale=guidance,
            parametric_path=parametric_path,
        )
    except SchemaError as e:
        _fail(str(e))
    out.mkdir(parents=True, exist_ok=True)
    readbacks, source = pipe.readback(images)
    rows = []
    for i, (im, rb) in enumerate(zip(images, readbacks)):
        save_image(im, out / f"sample_{i:03d}.png")
        rows.append(
            {
                "image": f"sample_{i:03d}.png",
                "readback": {"values": rb.values.tolist(), "mask": rb.mask.tolist()},
            }
        )
    (out / "generation.json").write_text(
        json.dumps(
            {"seed": seed, "prompt": prompt, "readback_source": source, "samples": rows},
            indent=2,
        )
    )
    click.echo(f"wrote {n} samples to {out}")


@main.command("evaluate")
@click.argument("experiment_id", type=click.Choice(EXPERIMENT_IDS))
@click.option("--run", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--n", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--steps", default=None, type=int)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def evaluate_cmd(experiment_id, run, data, n, seed, steps, out: Path) -> None:
    """Run one evaluation protocol and persist its report."""
    try:
        pipe = DesignPipeline.load(run)
        split, _ = load_dataset(data)
        cfg = ExperimentConfig(n_samples=n, seed=seed, steps=steps)
        report = run_experiment(experiment_id, pipe, split, cfg)
        report.save(out)
    except SchemaError as e:
        _fail(str(e))
    click.echo(f"report written to {out}")
    _print_report(report)


@main.command("report")
@click.option("--report", "report_dir", required=True, type=click.Path(exists=True, path_type=Path))
def report_cmd(report_dir: Path) -> None:
    """Render a stored report as human-readable tables."""
    try:
        report = EvaluationReport.load(report_dir)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        _fail(f"cannot read report: {e}")
    _print_report(report)


def _print_report(report: EvaluationReport) -> None:
    click.echo(f"== {report.experiment_id} ==")
    for name, rows in report.tables.items():
        if not rows:
            continue
        cols = list(rows[0].keys())
        widths = {
            c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in cols
        }
        click.echo("  " + "  ".join(c.ljust(widths[c]) for c in cols))
        for r in rows:
            click.echo("  " + "  ".join(_fmt(r[c]).ljust(widths[c]) for c in cols))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


@main.command("serve")
@click.option("--run", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8712, show_default=True)
@click.option("--queue-limit", default=4, show_default=True)
def serve_cmd(run: Path, host: str, port: int, queue_limit: int) -> None:
    """Serve the HTTP API over a trained run directory."""
    import uvicorn

    from .service import create_app

    try:
        pipe = DesignPipeline.load(run)
    except SchemaError as e:
        _fail(str(e))
    app = create_app(pipe, queue_limit=queue_limit)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
