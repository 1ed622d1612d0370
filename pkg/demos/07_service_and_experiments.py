"""The HTTP API and the experiment harness.

Uses the trained run directory when one exists (runs/acceptance by default,
as produced by the README's training commands); otherwise trains a throwaway
toy pipeline first. The service is exercised in-process via the test client;
`designdiff serve --run <dir>` exposes the same app over a real port.
"""

import dataclasses
import os
from pathlib import Path

from fastapi.testclient import TestClient

from designdiff import DesignPipeline, build_dataset
from designdiff.configs import ImputerConfig, TrainBaseConfig, TrainControlConfig, ci_profile
from designdiff.experiments import ExperimentConfig, run_experiment
from designdiff.service import create_app
from designdiff.synthetic import graph_from_design

run_dir = Path(os.environ.get("DESIGNDIFF_RUN", Path(__file__).parents[1] / "runs/acceptance"))
if (run_dir / "control.pt").exists():
    print(f"loading trained pipeline from {run_dir}")
    pipeline = DesignPipeline.load(run_dir)
    n_data = 400
else:
    print("no trained run found; training a 2-minute toy pipeline instead")
    config = dataclasses.replace(
        ci_profile(),
        dataset_size=200,
        imputer=ImputerConfig(epochs=8),
        train_base=TrainBaseConfig(batch_size=8, steps=80, log_every=20),
        train_control=TrainControlConfig(batch_size=8, steps=80, log_every=20),
    )
    pipeline = DesignPipeline(config)
    n_data = 200
dataset = build_dataset(n_data, pipeline.schema, seed=pipeline.config.dataset_seed)

client = TestClient(create_app(pipeline))
schema_doc = client.get("/schema").json()
print("GET /schema ->", len(schema_doc["schema"]["features"]), "features,",
      "config", schema_doc["config_hash"][:8])

design, _, prompt = dataset.test[0]
partial_mask = [True] * 12 + [False] * 4
r = client.post(
    "/autocomplete",
    json={"design": {"values": design.values.tolist(), "mask": partial_mask}, "n": 3, "seed": 1},
)
print("POST /autocomplete ->", len(r.json()["candidates"]), "candidates")

graph = graph_from_design(design, pipeline.schema)
r = client.post(
    "/generate",
    json={
        "design": {"values": design.values.tolist()},
        "graph": {
            "nodes": [
                {"component_id": n.component_id, "size": list(n.size), "position": list(n.position)}
                for n in graph.nodes
            ],
            "edges": [list(e) for e in graph.edges],
        },
        "prompt": prompt.text,
        "n_samples": 2,
        "seed": 7,
        "steps": 20,
    },
)
body = r.json()
print("POST /generate ->", len(body["samples"]), "samples, readback via", body["readback_source"])
r = client.post(
    "/evaluate",
    json={"images": [s["image"] for s in body["samples"]],
          "design": {"values": design.values.tolist()}},
)
print("POST /evaluate ->", {k: round(v, 3) if isinstance(v, float) else v
                            for k, v in r.json()["metrics"].items()})

# One small experiment run through the harness proper.
report = run_experiment(
    "multimodal_conflict",
    pipeline,
    dataset,
    ExperimentConfig(n_samples=6, steps=20, batch_size=6, seed=0),
)
row = report.table("multimodal_conflict")[0]
print("\nconflict fixture:", f"parametric {row['parametric_target']}mm",
      f"vs component {row['component_target']}mm",
      f"-> generated median {row['generated_median']:.0f}mm ({row['wins']} wins)")
