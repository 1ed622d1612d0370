"""Acceptance suite: one test per primary criterion, at its stated tolerance.

The fast criteria run against throwaway models; the trained-model criteria
run against the shipped CI-profile checkpoints (see conftest:
``acceptance_pipeline``), or whatever DESIGNDIFF_RUN / DESIGNDIFF_PROFILE
select. Each test prints one PASS/FAIL line for its criterion.
"""

from __future__ import annotations

import copy

import numpy as np
import pytest
import torch

from designdiff.configs import TrainControlConfig
from designdiff.control import ControlledDiffusionModel, build_control_branch, train_control
from designdiff.experiments import ExperimentConfig, run_experiment
from designdiff.imputation import autocomplete, impute_batch
from designdiff.metrics import diversity_score, ioc, psnr, ssim
from designdiff.pipeline import ConditionBuilder
from designdiff.synthetic import extract_features, pixel_tolerance, render_design, sample_design

pytestmark = pytest.mark.slow


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_zero_init_equivalence(acceptance_pipeline):
    """Fresh control branch leaves the base prediction untouched (<1e-6,
    100 random triples)."""
    pipe = acceptance_pipeline
    branch = build_control_branch(pipe.base, pipe.component_encoder.cfg.spatial_channels)
    model = ControlledDiffusionModel(pipe.base, branch)
    size = pipe.schema.canvas_size
    d = pipe.config.embed_dim
    hint_c = pipe.component_encoder.cfg.spatial_channels
    gen = torch.Generator().manual_seed(0)
    worst = 0.0
    with torch.no_grad():
        for _ in range(100):
            x = torch.randn(1, 3, size, size, generator=gen)
            t = torch.randint(1, pipe.base.schedule.timesteps + 1, (1,), generator=gen)
            text = torch.randn(1, 1, d, generator=gen)
            fused = torch.randn(1, 1, d, generator=gen)
            hint = torch.randn(1, hint_c, size // 8, size // 8, generator=gen)
            diff = model.eps_controlled(x, t, text, fused, hint=hint) - pipe.base.unet(x, t, text)
            worst = max(worst, float(diff.abs().max()))
    _verdict("zero-init equivalence", worst < 1e-6, f"max abs diff {worst:.2e} over 100 triples")


def test_freeze_invariance_1000_steps(acceptance_pipeline, acceptance_dataset):
    """Base checksum identical before/after 1,000 control-training steps."""
    pipe = copy.deepcopy(acceptance_pipeline)
    before = pipe.base.checksum()
    builder = ConditionBuilder(pipe, acceptance_dataset)
    cfg = TrainControlConfig(batch_size=4, steps=1000, log_every=500, seed=77)
    train_control(pipe.controlled(), builder, cfg)
    after = pipe.base.checksum()
    _verdict(
        "freeze invariance",
        before == after,
        f"checksum {'unchanged' if before == after else 'CHANGED'} across 1000 steps",
    )


def test_imputation_bypass_and_preservation(acceptance_pipeline):
    """All-true mask returns the input verbatim with zero denoiser calls;
    observed entries preserved bit-exactly across 1,000 random cases."""
    pipe = acceptance_pipeline
    schema = pipe.schema
    imputer = pipe.imputer
    complete = sample_design(5, schema)
    calls_before = imputer.denoiser_calls
    out = autocomplete(complete, imputer, 7, seed=0)
    bypass_ok = (
        imputer.denoiser_calls == calls_before
        and len(out) == 7
        and all(np.array_equal(d.values, complete.values) for d in out)
    )

    rng = np.random.default_rng(123)
    partials = []
    for i in range(1000):
        design = sample_design([31337, i], schema)
        mask = rng.random(len(schema)) < rng.uniform(0.05, 0.95)
        partials.append(design.with_mask(mask))
    completed = impute_batch(imputer, partials, seed=9)
    preserved = all(
        np.array_equal(done.values[p.mask], p.values[p.mask])
        for p, done in zip(partials, completed)
    )
    spot = partials[0]
    spot_out = autocomplete(spot, imputer, 3, seed=1)
    preserved &= all(np.array_equal(d.values[spot.mask], spot.values[spot.mask]) for d in spot_out)
    _verdict(
        "imputation bypass and preservation",
        bypass_ok and preserved,
        f"bypass={bypass_ok}, preservation over 1000 cases={preserved}",
    )


def test_metric_oracles():
    """PSNR capped/exact cases, SSIM brute-force agreement, diversity pair
    enumeration to 1e-9, IoC constructed 0/0.5/1.0 cases."""
    from test_metrics import _ssim_bruteforce

    ok = True
    details = []

    a = np.random.default_rng(0).random((16, 16, 3))
    ok &= psnr(a, a) == 100.0
    ok &= abs(psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.1)) - 20.0) < 1e-12
    details.append("psnr cap+20dB")

    ok &= abs(ssim(a, a) - 1.0) < 1e-12
    rng = np.random.default_rng(1)
    x, y = rng.random((14, 14, 3)), rng.random((14, 14, 3))
    ok &= abs(ssim(x, y) - _ssim_bruteforce(x, y)) < 1e-6
    details.append("ssim brute-force 1e-6")

    import itertools

    from designdiff.metrics import cosine_distance

    samples = [rng.random(8) for _ in range(5)]
    brute = (2 / 20) * sum(
        cosine_distance(p, q) for p, q in itertools.combinations(samples, 2)
    )
    ok &= abs(diversity_score(samples, lambda s: s) - brute) < 1e-9
    details.append("diversity 1e-9")

    mask = np.zeros((32, 32), dtype=bool)
    mask[5:15, 5:15] = True
    full = np.ones((32, 32, 3))
    full[5:15, 5:15] = 0.0
    half = np.ones((32, 32, 3))
    half[5:10, 5:15] = 0.0
    ok &= ioc(mask, full) == 1.0
    ok &= ioc(mask, np.ones((32, 32, 3))) == 0.0
    ok &= ioc(mask, half) == 0.5
    details.append("ioc 0/0.5/1")

    _verdict("metric oracles", bool(ok), ", ".join(details))


def test_assembly_goldens():
    """Algorithm-1 composites match the stored goldens bit-exactly (10
    fixtures including the overlap-order pair)."""
    from designdiff.assembly import assemble, build_synthetic_library
    from designdiff.synthetic import load_image
    from test_assembly import GOLDEN_CASES

    from conftest import GOLDEN_DIR

    library = build_synthetic_library()
    assert len(GOLDEN_CASES) == 10
    mismatches = []
    for name, graph in GOLDEN_CASES:
        result = assemble(graph, library, 64)
        got = np.rint(result.composite.pixels * 255).astype(np.uint8)
        want = np.rint(load_image(GOLDEN_DIR / f"{name}.png").pixels * 255).astype(np.uint8)
        if not np.array_equal(got, want):
            mismatches.append(name)
    _verdict("assembly goldens", not mismatches, f"10 fixtures, mismatches: {mismatches or 'none'}")


def test_renderer_oracle_closed_loop(schema):
    """extract(render(p)) within 1 pixel-equivalent (continuous) and exact
    (categorical) on 1,000 random designs."""
    failures = 0
    for i in range(1000):
        d = sample_design([2024, i], schema)
        e = extract_features(render_design(d, schema), schema)
        for j, f in enumerate(schema.features):
            if not e.mask[j]:
                failures += 1
            elif f.kind == "continuous":
                if abs(e.values[j] - d.values[j]) > pixel_tolerance(schema, f.name):
                    failures += 1
            elif e.values[j] != d.values[j]:
                failures += 1
    _verdict("renderer/oracle closed loop", failures == 0, f"{failures} failures over 1000 designs")


def test_gradient_checks():
    """Encoders and fusion projection vs central differences (<1e-3 rel)."""
    from designdiff.configs import (
        ComponentEncoderConfig,
        FusionConfig,
        ParametricEncoderConfig,
        TextEncoderConfig,
    )
    from designdiff.encoders import ComponentEncoder, ParametricEncoder, TextEncoder
    from designdiff.fusion import FusionModule
    from test_encoders import directional_grad_check

    torch.manual_seed(0)
    errs = {}
    enc_p = ParametricEncoder(10, ParametricEncoderConfig(embed_dim=16, hidden_dim=24)).double()
    errs["parametric"] = directional_grad_check(lambda x: enc_p(x), torch.randn(1, 10))

    enc_c = ComponentEncoder(
        ComponentEncoderConfig(embed_dim=8, channels=(4, 4, 8, 8, 12, 12, 16, 16), input_size=16)
    ).double()
    errs["component"] = directional_grad_check(lambda x: enc_c(x)[1], torch.randn(1, 3, 16, 16))

    enc_t = TextEncoder(TextEncoderConfig(embed_dim=12, token_dim=6)).double()
    ids = torch.tensor(enc_t.ids_for("bike, white background"))
    errs["text"] = directional_grad_check(
        lambda w: enc_t.proj(w[ids].mean(dim=0, keepdim=True)), enc_t.embeddings.weight.detach()
    )

    fusion = FusionModule(FusionConfig(embed_dim=8)).double()
    errs["fusion"] = directional_grad_check(
        lambda x: fusion.proj(x), torch.randn(1, 16, dtype=torch.float64)
    )
    worst = max(errs.values())
    _verdict(
        "gradient checks",
        worst < 1e-3,
        "max rel err " + ", ".join(f"{k}={v:.2e}" for k, v in errs.items()),
    )


def test_parametric_adherence(acceptance_pipeline, acceptance_dataset):
    """Table 3 analogue: R^2 >= 0.6 on >=3 of 5 continuous features and
    accuracy >= 0.7 on num_bottles, from 100 complete vectors."""
    report = run_experiment(
        "parametric_adherence",
        acceptance_pipeline,
        acceptance_dataset,
        ExperimentConfig(n_samples=100, seed=0),
    )
    rows = {r["feature"]: r for r in report.table("adherence")}
    r2_ok = sum(
        1
        for name in (
            "saddle_height",
            "seat_tube_length",
            "stem_angle",
            "top_tube_length",
            "head_tube_angle",
        )
        if np.isfinite(rows[name]["score"]) and rows[name]["score"] >= 0.6
    )
    bottles_acc = rows["num_bottles"]["score"]
    detail = (
        f"R2>=0.6 on {r2_ok}/5 features "
        + str({n: round(rows[n]["score"], 3) for n in rows})
        + f"; num_bottles accuracy {bottles_acc:.2f}"
    )
    _verdict("desk-scale parametric adherence", r2_ok >= 3 and bottles_acc >= 0.7, detail)


def test_component_conditioning(acceptance_pipeline, acceptance_dataset):
    """Table 5 analogue: mean IoC >= 0.6 for >=3 of 5 component categories
    over 100 samples each."""
    report = run_experiment(
        "single_component",
        acceptance_pipeline,
        acceptance_dataset,
        ExperimentConfig(n_samples=100, seed=0),
    )
    rows = {r["category"]: r["ioc"] for r in report.table("single_component")}
    passing = sum(1 for v in rows.values() if v >= 0.6)
    _verdict(
        "desk-scale component conditioning",
        passing >= 3,
        f"IoC>=0.6 in {passing}/5 categories " + str({k: round(v, 3) for k, v in rows.items()}),
    )


def test_ablation_direction(acceptance_pipeline, acceptance_dataset):
    """Table 2 analogue: imputation path beats zero-masking on SSIM and
    diversity, each margin exceeding the across-seed SD over 3 seeds."""
    ssim_diffs, div_diffs = [], []
    for seed in (0, 1, 2):
        report = run_experiment(
            "ablation_imputation",
            acceptance_pipeline,
            acceptance_dataset,
            ExperimentConfig(n_samples=50, seed=seed),
        )
        rows = {r["path"]: r for r in report.table("ablation")}
        ssim_diffs.append(rows["imputation"]["ssim"] - rows["zero_mask"]["ssim"])
        div_diffs.append(rows["imputation"]["diversity"] - rows["zero_mask"]["diversity"])
    ssim_margin, ssim_sd = float(np.mean(ssim_diffs)), float(np.std(ssim_diffs))
    div_margin, div_sd = float(np.mean(div_diffs)), float(np.std(div_diffs))
    ok = ssim_margin > ssim_sd and div_margin > div_sd
    _verdict(
        "ablation direction",
        ok,
        f"ssim margin {ssim_margin:.4f} vs sd {ssim_sd:.4f}; "
        f"diversity margin {div_margin:.4f} vs sd {div_sd:.4f}",
    )


def test_conflict_behavior(acceptance_pipeline, acceptance_dataset):
    """Table 7 analogue: on 100 conflicting saddle-height fixtures the median
    generated value sits strictly closer to the component-implied value."""
    report = run_experiment(
        "multimodal_conflict",
        acceptance_pipeline,
        acceptance_dataset,
        ExperimentConfig(n_samples=100, seed=0),
    )
    row = report.table("multimodal_conflict")[0]
    med = row["generated_median"]
    closer_to_component = abs(med - row["component_target"]) < abs(med - row["parametric_target"])
    _verdict(
        "conflict behavior",
        bool(closer_to_component and row["n"] > 0),
        f"median {med:.1f} vs component {row['component_target']} / "
        f"parametric {row['parametric_target']} (n={row['n']})",
    )


def test_diversity_positivity(acceptance_pipeline, acceptance_dataset):
    """10 samples from one fixed condition with distinct seeds: diversity > 0
    and at least 9 pairwise-distinct images."""
    pipe = acceptance_pipeline
    design = acceptance_dataset.test[0][0]
    images = []
    for seed in range(10):
        images.extend(pipe.generate(design=design, n=1, seed=seed, steps=pipe.config.sampling.steps))
    div = diversity_score(images, lambda im: pipe.encode_composite(im).pooled.vector)
    distinct = set()
    for im in images:
        distinct.add(np.rint(im.pixels * 255).astype(np.uint8).tobytes())
    _verdict(
        "diversity positivity",
        div > 0.0 and len(distinct) >= 9,
        f"diversity {div:.4f}, {len(distinct)}/10 distinct images",
    )
