import numpy as np
import pytest
import torch

from radiomap.backbone import BackboneConfig, DenoiseBackbone
from radiomap.checkpoint import load_checkpoint, params_fingerprint
from radiomap.errors import ResumeMismatch, ShapeMismatch
from radiomap.oracle import compute_pathloss, generate_scene
from radiomap.seeding import cosine_lr
from radiomap.training import (
    LOG_NAME,
    TrainConfig,
    TrainingSet,
    compute_latent_scale,
    diffusion_loss,
    load_frozen_vae,
    read_log,
    run_training,
    run_vae_training,
    train_step,
)
from radiomap.vae import VaeConfig, train_vae

TINY_BB = BackboneConfig(latent_size=8, base_width=8, prompt_embed_dim=8,
                         prompt_width=8, prompt_stride=8)


@pytest.fixture(scope="module")
def tiny_world():
    scenes = [generate_scene(200 + k, 32, 4, 2) for k in range(4)]
    grays = np.stack([compute_pathloss(s).gray for s in scenes])
    vae = train_vae(grays, VaeConfig(embed_dim=8), steps=30, seed=0, batch_size=4,
                    lr_start=1e-3, lr_end=1e-4)
    return scenes, grays, vae


def test_loss_perfect_predictions_zero():
    x = torch.randn(2, 3, 4, 4)
    assert float(diffusion_loss(x, x, x, x)) == 0.0


def test_loss_unit_offset_is_one():
    eps = torch.randn(2, 3, 4, 4)
    f = torch.randn(2, 3, 4, 4)
    assert float(diffusion_loss(eps, eps, f, f + 1.0)) == pytest.approx(1.0)


def test_loss_symmetric_in_heads():
    rng = np.random.default_rng(0)
    eps = rng.standard_normal((2, 3, 4, 4))
    f = rng.standard_normal((2, 3, 4, 4))
    r = rng.standard_normal((2, 3, 4, 4))
    a = diffusion_loss(eps, eps + r, f, f)
    b = diffusion_loss(eps, eps, f, f + r)
    assert float(a) == pytest.approx(float(b))


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        diffusion_loss(torch.zeros(2, 3), torch.zeros(2, 4), torch.zeros(1), torch.zeros(1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_start=1e-6, lr_end=1e-5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(drift_kind="quadratic")


def test_cosine_lr_monotone_between_endpoints():
    lrs = [cosine_lr(s, 100, 5e-5, 5e-6) for s in range(100)]
    assert lrs[0] == pytest.approx(5e-5)
    assert lrs[-1] == pytest.approx(5e-6)
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_train_step_deterministic_sequences(tiny_world):
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    scale = compute_latent_scale(vae, train_set.grays)
    cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=6, seed=9)

    def run():
        torch.manual_seed(cfg.seed)
        model = DenoiseBackbone(TINY_BB)
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_start)
        return [train_step(model, opt, vae, train_set, cfg, s, cfg.max_steps, scale)[0]
                for s in range(cfg.max_steps)]

    assert run() == run()


def test_train_step_loss_on_oracle_stub_is_zero(tiny_world):
    # an exact predictor makes the objective vanish: check the loss identity
    # through the same plumbing train_step uses
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    from radiomap.diffusion import forward_diffuse, solve_drift_ground_truth
    from radiomap.seeding import derived_rng, normal_like

    rng = derived_rng(0, "stub")
    with torch.no_grad():
        mean, _ = vae.encode_stats(train_set.grays)
    z0 = mean
    t = torch.full((z0.shape[0],), 0.5)
    eps = normal_like(rng, z0)
    drift = solve_drift_ground_truth(z0, "constant")
    z_t = forward_diffuse(z0, t, eps, drift)
    assert float(diffusion_loss(eps, eps, drift.target(), drift.target())) == 0.0
    assert torch.isfinite(z_t).all()


def test_vae_frozen_during_diffusion_training(tiny_world, tmp_path):
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    before = params_fingerprint(vae)
    cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=3, seed=1)
    run_training(train_set, cfg, vae, TINY_BB, tmp_path / "run")
    assert params_fingerprint(vae) == before


def test_run_training_outputs(tiny_world, tmp_path):
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=5, seed=2,
                      checkpoint_every=0)
    out = tmp_path / "run"
    final = run_training(train_set, cfg, vae, TINY_BB, out)
    assert final.exists()
    # checkpoint_every=0 -> only the final checkpoint
    assert len(list(out.glob("*.rmck"))) == 1
    log = read_log(out)
    assert len(log) == cfg.max_steps
    assert (out / "config.json").exists()
    config, arrays = load_checkpoint(final)
    assert config["kind"] == "diffusion"
    assert config["step"] == cfg.max_steps
    assert any(k.startswith("vae.") for k in arrays)
    assert any(k.startswith("opt.") for k in arrays)


def test_interrupt_resume_replays_log(tiny_world, tmp_path):
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    full_cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=8, seed=5)
    out_a = tmp_path / "uninterrupted"
    run_training(train_set, full_cfg, vae, TINY_BB, out_a)
    log_a = read_log(out_a)

    # interrupted run: stop at 4 steps, then resume to 8 with the same config
    out_b = tmp_path / "interrupted"
    half_cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=4, seed=5)
    # checkpoint taken mid-run at step 4 via checkpoint_every on the full config
    cfg_ck = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=8, seed=5,
                         checkpoint_every=4)
    # simulate the interrupt by training a copy only up to the step-4 checkpoint
    out_c = tmp_path / "with_ckpt"
    run_training(train_set, cfg_ck, vae, TINY_BB, out_c)
    mid = out_c / "diffusion_step000004.rmck"
    assert mid.exists()
    resumed = run_training(train_set, cfg_ck, vae, TINY_BB, out_c, resume=mid)
    assert resumed.exists()
    log_c = read_log(out_c)
    assert log_c == log_a
    del half_cfg, out_b


def test_resume_rejects_config_change(tiny_world, tmp_path):
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=2, seed=0)
    final = run_training(train_set, cfg, vae, TINY_BB, tmp_path / "a")
    other = TrainConfig(batch_size=4, lr_start=2e-3, lr_end=1e-4, max_steps=2, seed=0)
    with pytest.raises(ResumeMismatch):
        run_training(train_set, other, vae, TINY_BB, tmp_path / "b", resume=final)


def test_vae_run_loop_and_reload(tiny_world, tmp_path):
    _, grays, _ = tiny_world
    cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=4, seed=3)
    final = run_vae_training(grays, VaeConfig(embed_dim=8), cfg, tmp_path / "vrun")
    vae = load_frozen_vae(final)
    assert not any(p.requires_grad for p in vae.parameters())
    assert len(read_log(tmp_path / "vrun")) == 4


def test_vae_resume_replays_log(tiny_world, tmp_path):
    _, grays, _ = tiny_world
    vcfg = VaeConfig(embed_dim=8)
    cfg = TrainConfig(batch_size=4, lr_start=1e-3, lr_end=1e-4, max_steps=6, seed=4,
                      checkpoint_every=3)
    out_a = tmp_path / "full"
    run_vae_training(grays, vcfg, cfg, out_a)
    out_b = tmp_path / "resumed"
    run_vae_training(grays, vcfg, cfg, out_b)
    mid = out_b / "vae_step000003.rmck"
    run_vae_training(grays, vcfg, cfg, out_b, resume=mid)
    assert read_log(out_a) == read_log(out_b)


def test_latent_scale_positive(tiny_world):
    scenes, grays, vae = tiny_world
    train_set = TrainingSet.from_pairs(scenes, grays)
    assert compute_latent_scale(vae, train_set.grays) > 0
