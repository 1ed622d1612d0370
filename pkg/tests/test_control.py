import dataclasses

import numpy as np
import pytest
import torch

from designdiff.configs import TrainControlConfig, UNetConfig
from designdiff.control import (
    ControlBranch,
    ControlError,
    ControlledDiffusionModel,
    build_control_branch,
    controlled_denoise,
)
from designdiff.diffusion import BaseDiffusion, NoiseSchedule, UNet
from designdiff.pipeline import ConditionBuilder
from designdiff.synthetic import sample_design


def _tiny_base(trained=True, channels=(8, 8, 8, 8), context_dim=8):
    cfg = UNetConfig(image_size=16, channels=channels, context_dim=context_dim, norm_groups=4)
    return BaseDiffusion(UNet(cfg), NoiseSchedule.linear(20), trained=trained)


HINT_CHANNELS = 6


def test_build_requires_trained_base():
    with pytest.raises(ControlError):
        build_control_branch(_tiny_base(trained=False), HINT_CHANNELS)


def test_zero_convs_are_exactly_zero_at_build():
    branch = build_control_branch(_tiny_base(), HINT_CHANNELS)
    for conv in branch.zero_convs():
        assert torch.all(conv.weight == 0.0)
        assert torch.all(conv.bias == 0.0)


def test_branch_copies_base_weights_bit_exact():
    base = _tiny_base()
    branch = build_control_branch(base, HINT_CHANNELS)
    for name in ("stem", "enc0", "down0", "enc1", "down1", "enc2", "down2", "mid1", "mid2"):
        base_mod = getattr(base.unet, name)
        branch_mod = getattr(branch, name)
        for (pa_name, pa), (pb_name, pb) in zip(
            base_mod.state_dict().items(), branch_mod.state_dict().items()
        ):
            assert pa_name == pb_name
            assert torch.equal(pa, pb), f"{name}.{pa_name}"


def test_branch_never_owns_base_parameters():
    base = _tiny_base()
    branch = build_control_branch(base, HINT_CHANNELS)
    base_params = {id(p) for p in base.unet.parameters()}
    assert all(id(p) not in base_params for p in branch.parameters())


def test_incompatible_base_rejected():
    base = _tiny_base()
    other = _tiny_base(channels=(8, 16, 16, 16))
    branch = build_control_branch(other, HINT_CHANNELS)
    with pytest.raises(ControlError, match="incompatible"):
        ControlledDiffusionModel(base, branch)


def test_zero_init_equivalence_100_triples(tiny_pipeline):
    """Freshly built branch leaves the base output untouched (<1e-6)."""
    base = tiny_pipeline.base
    branch = build_control_branch(base, tiny_pipeline.component_encoder.cfg.spatial_channels)
    model = ControlledDiffusionModel(base, branch)
    gen = torch.Generator().manual_seed(0)
    size = tiny_pipeline.schema.canvas_size
    d = tiny_pipeline.config.embed_dim
    hint_c = tiny_pipeline.component_encoder.cfg.spatial_channels
    worst = 0.0
    with torch.no_grad():
        for _ in range(100):
            x = torch.randn(1, 3, size, size, generator=gen)
            t = torch.randint(1, 1000, (1,), generator=gen)
            text = torch.randn(1, 1, d, generator=gen)
            fused = torch.randn(1, 1, d, generator=gen)
            hint = torch.randn(1, hint_c, size // 8, size // 8, generator=gen)
            controlled = model.eps_controlled(x, t, text, fused, hint=hint)
            plain = base.unet(x, t, text)
            worst = max(worst, float((controlled - plain).abs().max()))
    assert worst < 1e-6, worst


def test_two_path_recomputation_oracle(tiny_pipeline):
    """Small nonzero taps: controlled output equals the base applied to
    manually recomputed branch residuals."""
    base = tiny_pipeline.base
    branch = build_control_branch(base, tiny_pipeline.component_encoder.cfg.spatial_channels)
    gen = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for conv in branch.zero_convs():
            conv.weight.normal_(0.0, 1e-3, generator=gen)
            conv.bias.normal_(0.0, 1e-3, generator=gen)
    model = ControlledDiffusionModel(base, branch)
    size = tiny_pipeline.schema.canvas_size
    d = tiny_pipeline.config.embed_dim
    hint_c = tiny_pipeline.component_encoder.cfg.spatial_channels
    x = torch.randn(2, 3, size, size, generator=gen)
    t = torch.tensor([10, 500])
    text = torch.randn(2, 1, d, generator=gen)
    fused = torch.randn(2, 1, d, generator=gen)
    hint = torch.randn(2, hint_c, size // 8, size // 8, generator=gen)
    with torch.no_grad():
        via_model = model.eps_controlled(x, t, text, fused, hint=hint)
        residuals = branch(x, t, fused, hint=hint)
        via_manual = base.unet(x, t, text, control=residuals)
        plain = base.unet(x, t, text)
    assert torch.allclose(via_model, via_manual, atol=1e-7)
    assert not torch.allclose(via_model, plain, atol=1e-7)  # taps actually inject


def test_gradient_reaches_zero_convs_at_init(tiny_pipeline, tiny_dataset):
    """At zero init the taps still receive nonzero gradient on a real batch."""
    base = tiny_pipeline.base
    branch = build_control_branch(base, tiny_pipeline.component_encoder.cfg.spatial_channels)
    model = ControlledDiffusionModel(base, branch)
    builder = ConditionBuilder(tiny_pipeline, tiny_dataset)
    idx = torch.arange(4)
    x0 = builder.images(idx)
    gen = torch.Generator().manual_seed(2)
    t = torch.randint(1, builder.timesteps + 1, (4,), generator=gen)
    noise = torch.randn(x0.shape, generator=gen)
    x_t = builder.forward_noise(x0, t, noise)
    cfg = TrainControlConfig(mask_augment_prob=0.0)
    text_ctx, fused_ctx, hint, hint_mask = builder.training_contexts(
        idx, cfg, np.random.default_rng(0), gen
    )
    eps = model.eps_controlled(x_t, t, text_ctx, fused_ctx, hint=hint, hint_mask=hint_mask)
    loss = ((eps - noise) ** 2).mean()
    loss.backward()
    grads = [conv.weight.grad.abs().max().item() for conv in branch.skip_taps]
    grads.append(branch.mid_tap.weight.grad.abs().max().item())
    assert any(g > 0 for g in grads), grads


def test_controlled_denoise_without_condition_warns(tiny_pipeline, caplog):
    base = tiny_pipeline.base
    model = ControlledDiffusionModel(base, tiny_pipeline.branch)
    x = torch.randn(1, 3, 64, 64)
    with caplog.at_level("WARNING"):
        out = controlled_denoise(model, x, torch.tensor(5), None)
    assert out.shape == x.shape
    assert any("without a condition" in r.message for r in caplog.records)


def test_controlled_denoise_with_condition(tiny_pipeline, schema):
    model = tiny_pipeline.controlled()
    design = sample_design(3, schema)
    from designdiff.synthetic import graph_from_design

    cond = tiny_pipeline.build_condition(
        design=design, graph=graph_from_design(design, schema), prompt="bike"
    )
    x = torch.randn(2, 3, 64, 64)
    out = controlled_denoise(model, x, torch.tensor([4, 9]), cond)
    assert out.shape == x.shape


def test_freeze_invariance_over_training(tiny_pipeline, tiny_dataset):
    """Base checksum identical across a short control-training run."""
    from designdiff.control import train_control

    before = tiny_pipeline.base.checksum()
    builder = ConditionBuilder(tiny_pipeline, tiny_dataset)
    cfg = TrainControlConfig(batch_size=4, steps=5, log_every=1, seed=9)
    train_control(tiny_pipeline.controlled(), builder, cfg)
    assert tiny_pipeline.base.checksum() == before


def test_train_control_table2_zero_mask_path(tiny_pipeline, tiny_dataset):
    """Config with imputation disabled consumes (zero-filled values, mask)."""
    from designdiff.control import train_control

    builder = ConditionBuilder(tiny_pipeline, tiny_dataset)
    cfg = TrainControlConfig(
        batch_size=4, steps=3, log_every=1, parametric_path="zero_mask", mask_augment_prob=1.0
    )
    _, log, _ = train_control(tiny_pipeline.controlled(), builder, cfg)
    assert len(log.rows) >= 1


def test_train_control_requires_trained_base(tiny_dataset, tiny_config):
    from designdiff.control import train_control
    from designdiff.pipeline import DesignPipeline

    pipe = DesignPipeline(tiny_config)
    base = _tiny_base(trained=False, channels=tiny_config.unet.channels, context_dim=tiny_config.embed_dim)
    branch = ControlBranch(base.unet, 4)
    with pytest.raises(ControlError):
        pipe.base = base
        builder = ConditionBuilder(pipe, tiny_dataset)
        train_control(ControlledDiffusionModel(base, branch), builder, TrainControlConfig(steps=1))
