import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from designdiff.cli import main
from designdiff.schema import serialize_design, serialize_graph
from designdiff.synthetic import graph_from_design, load_image, sample_design


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def tiny_run_dir(tiny_pipeline, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    tiny_pipeline.save(run)
    return run


def test_unknown_command_exits_2(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code == 2
    assert "Usage" in result.output or "No such command" in result.output


def test_unknown_flag_exits_2(runner):
    result = runner.invoke(main, ["dataset", "build", "--bogus", "1"])
    assert result.exit_code == 2


def test_dataset_build_split_arithmetic(runner, tmp_path):
    out = tmp_path / "ds"
    result = runner.invoke(
        main, ["dataset", "build", "--n", "4000", "--seed", "7", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert "3600 train / 400 test" in result.output
    manifest = (out / "manifest.csv").read_text().splitlines()
    assert len(manifest) == 4001  # header + rows
    assert sum(1 for line in manifest[1:] if line.startswith("train,")) == 3600


def test_dataset_build_precondition_exit_1(runner, tmp_path):
    result = runner.invoke(
        main, ["dataset", "build", "--n", "3", "--out", str(tmp_path / "x")]
    )
    assert result.exit_code == 1
    assert "at least 10" in result.output


def test_assemble_command(runner, tmp_path, schema):
    design = sample_design(5, schema)
    graph_doc = serialize_graph(graph_from_design(design, schema))
    graph_path = tmp_path / "graph.json"
    graph_path.write_text(graph_doc)
    out = tmp_path / "composite.png"
    result = runner.invoke(main, ["assemble", "--graph", str(graph_path), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert out.exists()
    img = load_image(out)
    assert img.pixels.shape == (64, 64, 3)


def test_autocomplete_command_bypass(runner, tmp_path, tiny_run_dir, tiny_pipeline, schema):
    design = sample_design(5, schema)
    params = tmp_path / "full.json"
    params.write_text(serialize_design(design, schema))
    result = runner.invoke(
        main,
        ["autocomplete", "--params", str(params), "--run", str(tiny_run_dir), "--n", "3"],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output[result.output.index("{") :])
    assert len(payload["candidates"]) == 3
    for cand in payload["candidates"]:
        assert np.allclose(cand["values"], design.values)


@pytest.mark.slow
def test_generate_twice_is_identical(runner, tmp_path, tiny_run_dir, schema):
    design = sample_design(3, schema)
    params = tmp_path / "partial.json"
    partial = design.with_mask([True] * 10 + [False] * 6)
    params.write_text(serialize_design(partial, schema))
    graph_path = tmp_path / "graph.json"
    graph_path.write_text(serialize_graph(graph_from_design(design, schema)))

    outputs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        result = runner.invoke(
            main,
            [
                "generate",
                "--run", str(tiny_run_dir),
                "--params", str(params),
                "--graph", str(graph_path),
                "--prompt", "bike, white background",
                "--n", "2",
                "--seed", "1",
                "--steps", "6",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        outputs.append(out)
    for name in ("sample_000.png", "sample_001.png"):
        a = (outputs[0] / name).read_bytes()
        b = (outputs[1] / name).read_bytes()
        assert a == b
    assert (outputs[0] / "generation.json").read_text() == (
        outputs[1] / "generation.json"
    ).read_text()


@pytest.mark.slow
def test_evaluate_conflict_report_layout(runner, tmp_path, tiny_run_dir):
    data = tmp_path / "ds"
    build = runner.invoke(main, ["dataset", "build", "--n", "40", "--seed", "11", "--out", str(data)])
    assert build.exit_code == 0, build.output
    out = tmp_path / "report"
    result = runner.invoke(
        main,
        [
            "evaluate", "multimodal_conflict",
            "--run", str(tiny_run_dir),
            "--data", str(data),
            "--n", "4",
            "--seed", "2",
            "--steps", "6",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    row = report["tables"]["multimodal_conflict"][0]
    assert {"parametric_target", "component_target", "generated_median"} <= set(row)
    # report command renders it
    shown = runner.invoke(main, ["report", "--report", str(out)])
    assert shown.exit_code == 0
    assert "multimodal_conflict" in shown.output


def test_evaluate_missing_models_exit_1(runner, tmp_path):
    empty_run = tmp_path / "emptyrun"
    empty_run.mkdir()
    result = runner.invoke(
        main,
        ["evaluate", "parametric_adherence", "--run", str(empty_run), "--data", str(tmp_path), "--out", str(tmp_path / "r")],
    )
    assert result.exit_code == 1
