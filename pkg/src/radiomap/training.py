"""Stage-2 trainer: the dual drift/noise objective over frozen-VAE latents.

Every random draw (batch choice, posterior noise, time indices, forward
noise) derives from (seed, step), so interrupting at a checkpoint and
resuming replays the remaining steps bit-identically. Training logs are
newline-delimited ``step,lr,loss`` records next to the checkpoints.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import ingest
from .backbone import BackboneConfig, DenoiseBackbone
from .checkpoint import (
    config_hash,
    load_checkpoint,
    load_module_arrays,
    module_arrays,
    save_checkpoint,
)
from .diffusion import forward_diffuse, solve_drift_ground_truth
from .errors import DivergedLoss, ResumeMismatch, ShapeMismatch
from .seeding import cosine_lr, derived_rng, normal_like
from .vae import Vae, VaeConfig, vae_train_step

LOG_NAME = "train_log.csv"
CONFIG_ECHO_NAME = "config.json"


@dataclass(frozen=True)
class TrainConfig:
    t_train: int = 1000
    batch_size: int = 8
    lr_start: float = 5e-5
    lr_end: float = 5e-6
    max_steps: int = 1000
    seed: int = 0
    drift_kind: str = "constant"
    checkpoint_every: int = 0
    latent_mode: str = "sample"
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.drift_kind not in ("constant", "linear"):
            raise ValueError(f"unknown drift kind {self.drift_kind!r}")
        if self.latent_mode not in ("sample", "mean"):
            raise ValueError(f"latent_mode must be 'sample' or 'mean', got {self.latent_mode!r}")


def diffusion_loss(eps, eps_hat, f, f_hat):
    """Mean squared residual of both heads: ||eps - eps_hat||^2 + ||f - f_hat||^2,
    each averaged per element so losses are comparable across scales."""
    if eps.shape != eps_hat.shape:
        raise ShapeMismatch(f"eps {tuple(eps.shape)} vs eps_hat {tuple(eps_hat.shape)}")
    if f.shape != f_hat.shape:
        raise ShapeMismatch(f"f {tuple(f.shape)} vs f_hat {tuple(f_hat.shape)}")
    return ((eps - eps_hat) ** 2).mean() + ((f - f_hat) ** 2).mean()


@dataclass
class TrainingSet:
    """In-memory training arrays: gray maps and their prompts."""

    grays: torch.Tensor   # (M, 1, N, N)
    prompts: torch.Tensor  # (M, 3, N, N)

    def __len__(self):
        return self.grays.shape[0]

    @classmethod
    def from_pairs(cls, scenes, grays):
        prompts = np.stack([ingest.build_prompt(s).channels for s in scenes]).astype(np.float32)
        g = np.asarray(grays, dtype=np.float32)[:, None]
        return cls(torch.from_numpy(g), torch.from_numpy(prompts))

    @classmethod
    def from_index(cls, index, loader=None):
        loader = loader or ingest.load_record
        scenes, grays = [], []
        for record in index.records:
            scene, gray = loader(index, record)
            scenes.append(scene)
            grays.append(gray)
        return cls.from_pairs(scenes, np.stack(grays))


def compute_latent_scale(vae: Vae, grays) -> float:
    """RMS of the posterior means over the training set; latents are divided
    by this before diffusion so the unit-variance start distribution fits."""
    with torch.no_grad():
        mean, _ = vae.encode_stats(grays)
        rms = float(torch.sqrt((mean**2).mean()))
    return max(rms, 1e-6)


def _select_batch(rng, count, batch_size):
    if batch_size >= count:
        return np.arange(count)
    return np.sort(rng.choice(count, size=batch_size, replace=False))


def train_step(model, opt, vae, train_set, cfg: TrainConfig, step, max_steps, latent_scale):
    """One optimizer step of the dual objective; returns (loss, lr)."""
    rng = derived_rng(cfg.seed, "diffusion", step)
    idx = _select_batch(rng, len(train_set), cfg.batch_size)
    grays = train_set.grays[idx]
    prompts = train_set.prompts[idx]

    with torch.no_grad():
        mean, logvar = vae.encode_stats(grays)
        z0 = mean
        if cfg.latent_mode == "sample":
            z0 = mean + torch.exp(0.5 * logvar) * normal_like(rng, mean)
        z0 = z0 / latent_scale

    t_idx = rng.integers(1, cfg.t_train + 1, size=z0.shape[0])
    t = torch.from_numpy(t_idx / cfg.t_train).to(z0.dtype)
    eps = normal_like(rng, z0)
    drift = solve_drift_ground_truth(z0, cfg.drift_kind, seed=int(rng.integers(2**31)))
    z_t = forward_diffuse(z0, t, eps, drift)

    f_hat, eps_hat = model(z_t, t, prompts)
    loss = diffusion_loss(eps, eps_hat, drift.target(), f_hat)
    if not torch.isfinite(loss):
        raise DivergedLoss(f"non-finite diffusion loss at step {step}")
    lr = cosine_lr(step, max_steps, cfg.lr_start, cfg.lr_end)
    for group in opt.param_groups:
        group["lr"] = lr
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.detach()), lr


# --- optimizer state <-> named arrays -----------------------------------------


def optimizer_arrays(opt, named_params):
    arrays = {}
    for name, p in named_params:
        state = opt.state.get(p)
        if not state:
            continue
        step = state["step"]
        arrays[f"opt.{name}.step"] = np.asarray(
            step.detach().cpu().numpy() if torch.is_tensor(step) else step, dtype=np.float32
        )
        arrays[f"opt.{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
        arrays[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
    return arrays


def load_optimizer_arrays(opt, named_params, arrays):
    for name, p in named_params:
        key = f"opt.{name}.step"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(np.asarray(arrays[key]).reshape(-1)[0]), dtype=torch.float32),
            "exp_avg": torch.from_numpy(arrays[f"opt.{name}.exp_avg"].copy()).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(arrays[f"opt.{name}.exp_avg_sq"].copy()).to(p.dtype),
        }


# --- run loops ----------------------------------------------------------------


def _append_log(out_dir, step, lr, loss):
    with open(Path(out_dir) / LOG_NAME, "a", encoding="utf-8", newline="\n") as f:
        f.write(f"{step},{lr!r},{loss!r}\n")


def _truncate_log(out_dir, keep_steps):
    """Drop log lines past the resume point so the combined log replays the
    uninterrupted run exactly."""
    path = Path(out_dir) / LOG_NAME
    if not path.exists():
        return
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines()
             if ln and int(ln.split(",", 1)[0]) <= keep_steps]
    path.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def read_log(out_dir):
    path = Path(out_dir) / LOG_NAME
    rows = []
    for ln in path.read_text(encoding="utf-8").splitlines():
        if ln:
            step, lr, loss = ln.split(",")
            rows.append((int(step), float(lr), float(loss)))
    return rows


def _write_config_echo(out_dir, config):
    with open(Path(out_dir) / CONFIG_ECHO_NAME, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)


def backbone_config_from_dict(d) -> BackboneConfig:
    d = dict(d)
    for key in ("channel_mults", "attention_stages"):
        d[key] = tuple(d[key])
    return BackboneConfig(**d)


def _resume_setup(resume_path, expect_kind, identity):
    ckpt_config, arrays = load_checkpoint(resume_path)
    if ckpt_config.get("kind") != expect_kind:
        raise ResumeMismatch(f"{resume_path} holds a {ckpt_config.get('kind')!r} checkpoint")
    saved_identity = {k: ckpt_config[k] for k in identity}
    if config_hash(saved_identity) != config_hash(identity):
        raise ResumeMismatch("config hash differs from the checkpoint's")
    return ckpt_config, arrays


def run_training(train_set: TrainingSet, cfg: TrainConfig, vae: Vae,
                 backbone_cfg: BackboneConfig, out_dir, resume=None):
    """Full diffusion training run with periodic checkpoints and a loss log.

    The frozen VAE is embedded in every checkpoint so inference needs only one
    file. Returns the final checkpoint path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae_cfg_dict = asdict(vae.cfg)
    identity = {
        "train": asdict(cfg),
        "backbone": asdict(backbone_cfg),
        "vae": vae_cfg_dict,
    }

    if resume is not None:
        ckpt_config, arrays = _resume_setup(resume, "diffusion", identity)
        start_step = int(ckpt_config["step"])
        latent_scale = float(ckpt_config["latent_scale"])
        model = DenoiseBackbone(backbone_cfg)
        load_module_arrays(model, arrays, "model.")
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_start, weight_decay=cfg.weight_decay)
        load_optimizer_arrays(opt, list(model.named_parameters()), arrays)
        _truncate_log(out_dir, start_step)
    else:
        torch.manual_seed(cfg.seed)
        model = DenoiseBackbone(backbone_cfg)
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_start, weight_decay=cfg.weight_decay)
        start_step = 0
        latent_scale = compute_latent_scale(vae, train_set.grays)

    def save(step, path):
        config = dict(identity, kind="diffusion", step=step, latent_scale=latent_scale)
        arrays = module_arrays(model, "model.")
        arrays.update(module_arrays(vae, "vae."))
        arrays.update(optimizer_arrays(opt, list(model.named_parameters())))
        save_checkpoint(path, config, arrays)

    _write_config_echo(out_dir, dict(identity, latent_scale=latent_scale))
    final_path = out_dir / "diffusion_final.rmck"
    for step in range(start_step, cfg.max_steps):
        loss, lr = train_step(model, opt, vae, train_set, cfg, step, cfg.max_steps, latent_scale)
        _append_log(out_dir, step + 1, lr, loss)
        done = step + 1
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.max_steps:
            save(done, out_dir / f"diffusion_step{done:06d}.rmck")
    save(cfg.max_steps, final_path)
    return final_path


def run_vae_training(grays, vae_cfg: VaeConfig, cfg: TrainConfig, out_dir, resume=None):
    """Stage-1 run loop with the same checkpoint/log/resume contract.

    A diverged loss writes an abort checkpoint before propagating.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = np.asarray(grays, dtype=np.float32)
    data = torch.from_numpy(g[:, None])
    identity = {"train": asdict(cfg), "vae": asdict(vae_cfg)}

    if resume is not None:
        ckpt_config, arrays = _resume_setup(resume, "vae", identity)
        start_step = int(ckpt_config["step"])
        model = Vae(vae_cfg)
        load_module_arrays(model, arrays, "model.")
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_start, weight_decay=cfg.weight_decay)
        load_optimizer_arrays(opt, list(model.named_parameters()), arrays)
        _truncate_log(out_dir, start_step)
    else:
        torch.manual_seed(cfg.seed)
        model = Vae(vae_cfg)
        opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_start, weight_decay=cfg.weight_decay)
        start_step = 0

    def save(step, path):
        config = dict(identity, kind="vae", step=step)
        arrays = module_arrays(model, "model.")
        arrays.update(optimizer_arrays(opt, list(model.named_parameters())))
        save_checkpoint(path, config, arrays)

    _write_config_echo(out_dir, identity)
    final_path = out_dir / "vae_final.rmck"
    for step in range(start_step, cfg.max_steps):
        try:
            loss, lr = vae_train_step(model, opt, data, vae_cfg, step, cfg.max_steps,
                                      cfg.seed, cfg.lr_start, cfg.lr_end, cfg.batch_size)
        except DivergedLoss:
            save(step, out_dir / "vae_diverged.rmck")
            raise
        _append_log(out_dir, step + 1, lr, loss)
        done = step + 1
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.max_steps:
            save(done, out_dir / f"vae_step{done:06d}.rmck")
    save(cfg.max_steps, final_path)
    return final_path


def load_frozen_vae(ckpt_path) -> Vae:
    config, arrays = load_checkpoint(ckpt_path)
    if config.get("kind") != "vae":
        raise ResumeMismatch(f"{ckpt_path} holds a {config.get('kind')!r} checkpoint, expected vae")
    vae = Vae(VaeConfig(**config["vae"]))
    load_module_arrays(vae, arrays, "model.")
    return vae.freeze()
