"""Shared fixtures.

``tiny_pipeline`` trains a deliberately under-sized pipeline in ~1 minute and
backs the behavioral tests (wiring, determinism, contracts). The acceptance
suite instead uses ``acceptance_pipeline``, which loads the CI-profile
checkpoints from the run directory (env DESIGNDIFF_RUN, default
``runs/acceptance``) and trains them from scratch if absent.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

import numpy as np
import pytest
import torch

from designdiff.configs import (
    ImputerConfig,
    TrainBaseConfig,
    TrainControlConfig,
    ci_profile,
    get_profile,
)
from designdiff.pipeline import DesignPipeline
from designdiff.schema import default_schema
from designdiff.synthetic import build_dataset

torch.set_num_threads(min(os.cpu_count() or 2, 4))

REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDEN_DIR = Path(__file__).resolve().parent / "goldens"


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def tiny_config():
    cfg = ci_profile()
    return dataclasses.replace(
        cfg,
        dataset_size=160,
        imputer=ImputerConfig(epochs=6, batch_size=64),
        train_base=TrainBaseConfig(batch_size=8, steps=60, log_every=10),
        train_control=TrainControlConfig(batch_size=8, steps=60, log_every=10),
    )


@pytest.fixture(scope="session")
def tiny_dataset(schema):
    return build_dataset(160, schema, seed=11)


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_config, tiny_dataset):
    """Small trained pipeline for behavioral tests (quality not asserted)."""
    pipe = DesignPipeline(tiny_config)
    pipe.train_imputer_stage(tiny_dataset)
    pipe.train_base_stage(tiny_dataset)
    pipe.train_control_stage(tiny_dataset)
    return pipe


def acceptance_run_dir() -> Path:
    return Path(os.environ.get("DESIGNDIFF_RUN", REPO_ROOT / "runs" / "acceptance"))


def acceptance_profile_name() -> str:
    return os.environ.get("DESIGNDIFF_PROFILE", "ci")


@pytest.fixture(scope="session")
def acceptance_dataset():
    profile = get_profile(acceptance_profile_name())
    schema = default_schema(profile.canvas_size)
    return build_dataset(profile.dataset_size, schema, seed=profile.dataset_seed)


@pytest.fixture(scope="session")
def acceptance_pipeline(acceptance_dataset):
    """The trained CI-profile pipeline backing the acceptance criteria.

    Loads checkpoints when present; otherwise trains the documented profile
    from scratch (hours on CPU) and saves them for later runs.
    """
    run_dir = acceptance_run_dir()
    if (run_dir / "control.pt").exists():
        return DesignPipeline.load(run_dir)
    pipe = DesignPipeline(get_profile(acceptance_profile_name()))
    pipe.train_imputer_stage(acceptance_dataset)
    pipe.train_base_stage(acceptance_dataset)
    pipe.train_control_stage(acceptance_dataset)
    pipe.save(run_dir)
    return pipe


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training/sampling tests")
