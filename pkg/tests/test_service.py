import numpy as np
import pytest
from fastapi.testclient import TestClient

from designdiff.pipeline import DesignPipeline
from designdiff.schema import serialize_graph
from designdiff.service import b64_to_image, create_app, image_to_b64
from designdiff.synthetic import graph_from_design, sample_design


@pytest.fixture(scope="module")
def client(tiny_pipeline):
    return TestClient(create_app(tiny_pipeline, queue_limit=2))


def _graph_payload(graph):
    return {
        "nodes": [
            {"component_id": n.component_id, "size": list(n.size), "position": list(n.position)}
            for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges],
    }


def test_schema_endpoint(client, schema):
    r = client.get("/schema")
    assert r.status_code == 200
    body = r.json()
    assert body["schema"]["version"] == schema.version
    assert len(body["schema"]["features"]) == len(schema)
    assert "config_hash" in body


def test_autocomplete_bypass_echoes_input(client, schema):
    design = sample_design(4, schema)
    r = client.post(
        "/autocomplete",
        json={"design": {"values": design.values.tolist()}, "n": 4, "seed": 0},
    )
    assert r.status_code == 200
    body = r.json()
    assert len(body["candidates"]) == 4
    for cand in body["candidates"]:
        assert np.allclose(cand["values"], design.values)
        assert all(cand["mask"])
    assert body["seed"] == 0


def test_autocomplete_invalid_design_400(client, schema):
    lo, _ = schema.feature("saddle_height").range
    design = sample_design(4, schema).with_value(schema, "saddle_height", lo - 5)
    r = client.post("/autocomplete", json={"design": {"values": design.values.tolist()}})
    assert r.status_code == 400
    assert "saddle_height" in str(r.json()["detail"])


def test_assemble_empty_graph_is_white(client):
    r = client.post("/assemble", json={"graph": {"nodes": [], "edges": []}})
    assert r.status_code == 200
    image = b64_to_image(r.json()["composite"])
    assert np.all(image.pixels == 1.0)
    assert r.json()["masks"] == []


def test_assemble_unknown_sprite_400(client):
    graph = {"nodes": [{"component_id": "ghost", "size": [4, 4], "position": [0, 0]}], "edges": []}
    r = client.post("/assemble", json={"graph": graph})
    assert r.status_code == 400


def test_malformed_body_400(client):
    r = client.post(
        "/generate", content=b"{not json", headers={"content-type": "application/json"}
    )
    assert r.status_code == 400
    r2 = client.post("/autocomplete", json={"design": {"values": "nope"}})
    assert r2.status_code == 400
    assert any("values" in d["field"] for d in r2.json()["detail"])


def test_oversize_n_samples_422(client):
    r = client.post("/generate", json={"prompt": "bike", "n_samples": 65})
    assert r.status_code == 422


@pytest.mark.slow
def test_generate_deterministic_and_idempotent(client, schema):
    design = sample_design(6, schema)
    payload = {
        "design": {"values": design.values.tolist()},
        "prompt": "bike, white background",
        "n_samples": 2,
        "steps": 6,
        "seed": 5,
    }
    a = client.post("/generate", json=payload)
    b = client.post("/generate", json=payload)
    assert a.status_code == 200, a.text
    assert a.content == b.content  # byte-identical payloads
    body = a.json()
    assert body["seed"] == 5
    assert body["readback_source"] == "oracle"
    assert len(body["samples"]) == 2
    assert len(body["samples"][0]["readback"]["values"]) == len(schema)


@pytest.mark.slow
def test_generate_then_evaluate_smoke(client, schema):
    """End-to-end: generated images evaluated against their own condition."""
    design = sample_design(8, schema)
    graph = graph_from_design(design, schema)
    gen = client.post(
        "/generate",
        json={
            "design": {"values": design.values.tolist()},
            "graph": _graph_payload(graph),
            "n_samples": 2,
            "steps": 6,
            "seed": 9,
        },
    )
    assert gen.status_code == 200, gen.text
    images = [s["image"] for s in gen.json()["samples"]]
    ev = client.post(
        "/evaluate",
        json={
            "images": images,
            "design": {"values": design.values.tolist()},
            "graph": _graph_payload(graph),
        },
    )
    assert ev.status_code == 200, ev.text
    metrics = ev.json()["metrics"]
    for cat, value in metrics["ioc"].items():
        assert 0.0 <= value <= 1.0
    assert np.isfinite(metrics["psnr"])
    assert np.isfinite(metrics["ssim"])
    assert metrics["diversity"] >= 0.0


def test_evaluate_requires_images(client):
    r = client.post("/evaluate", json={"images": []})
    assert r.status_code == 400


def test_missing_model_503(tiny_config):
    pipe = DesignPipeline(tiny_config)  # untrained
    client = TestClient(create_app(pipe))
    r = client.post("/generate", json={"prompt": "bike", "n_samples": 1})
    assert r.status_code == 503
    r2 = client.post(
        "/autocomplete", json={"design": {"values": [0.0] * 16, "mask": [False] * 16}}
    )
    assert r2.status_code == 503


def test_image_b64_roundtrip(schema):
    from designdiff.synthetic import render_design

    img = render_design(sample_design(2, schema), schema)
    back = b64_to_image(image_to_b64(img))
    assert np.array_equal(
        np.rint(img.pixels * 255).astype(np.uint8), np.rint(back.pixels * 255).astype(np.uint8)
    )


def test_checkpoint_pairing_guard(tiny_pipeline, tiny_config, tmp_path):
    """Loading refuses a control checkpoint paired with a different base."""
    import torch

    run = tmp_path / "run"
    tiny_pipeline.save(run)
    payload = torch.load(run / "control.pt", weights_only=False)
    payload["base_checksum"] = "not-the-right-checksum"
    torch.save(payload, run / "control.pt")
    from designdiff.schema import SchemaError

    with pytest.raises(SchemaError, match="checksum mismatch"):
        DesignPipeline.load(run)
