"""End-to-end inference: checkpoint -> prompt -> latent sampling -> decode."""

import time
from dataclasses import dataclass

import numpy as np
import torch

from . import ingest
from .backbone import DenoiseBackbone
from .checkpoint import load_checkpoint, load_module_arrays
from .diffusion import DDMSchedule, sample_array
from .errors import ResumeMismatch
from .training import backbone_config_from_dict
from .vae import Vae, VaeConfig


@dataclass
class ModelBundle:
    """Everything needed to run inference, rebuilt from one checkpoint."""

    model: DenoiseBackbone
    vae: Vae
    latent_scale: float
    drift_kind: str
    t_train: int

    @property
    def latent_shape(self):
        cfg = self.model.cfg
        return (cfg.z_channels, cfg.latent_size, cfg.latent_size)


def load_bundle(ckpt_path) -> ModelBundle:
    config, arrays = load_checkpoint(ckpt_path)
    if config.get("kind") != "diffusion":
        raise ResumeMismatch(
            f"{ckpt_path} holds a {config.get('kind')!r} checkpoint, expected diffusion"
        )
    backbone_cfg = backbone_config_from_dict(config["backbone"])
    model = DenoiseBackbone(backbone_cfg)
    load_module_arrays(model, arrays, "model.")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    vae = Vae(VaeConfig(**config["vae"]))
    load_module_arrays(vae, arrays, "vae.")
    vae.freeze()
    return ModelBundle(
        model=model,
        vae=vae,
        latent_scale=float(config["latent_scale"]),
        drift_kind=config["train"]["drift_kind"],
        t_train=int(config["train"]["t_train"]),
    )


def _batched_predictor(model, prompts):
    def predictor(z, t, _prompt):
        zt = torch.from_numpy(np.ascontiguousarray(z, dtype=np.float32))
        with torch.no_grad():
            f_hat, eps_hat = model(zt, float(t), prompts)
        return f_hat.numpy().astype(z.dtype), eps_hat.numpy().astype(z.dtype)

    return predictor


def generate_gray_maps(bundle: ModelBundle, scenes, steps=500, seed=0):
    """Sample radio maps for a batch of scenes; returns ((B, N, N) grays in
    [0, 1], wall-clock sampling seconds)."""
    prompts = np.stack([ingest.build_prompt(s).channels for s in scenes]).astype(np.float32)
    prompts_t = torch.from_numpy(prompts)
    schedule = DDMSchedule(t_train=bundle.t_train, t_infer=steps)
    shape = (len(scenes),) + bundle.latent_shape
    start = time.perf_counter()
    z = sample_array(
        _batched_predictor(bundle.model, prompts_t), None, schedule, seed, shape,
        drift_kind=bundle.drift_kind,
    )
    elapsed = time.perf_counter() - start
    z = torch.from_numpy(z.astype(np.float32)) * bundle.latent_scale
    with torch.no_grad():
        grays = bundle.vae.decode(z)[:, 0].numpy()
    return grays.astype(np.float64), elapsed


def generate_gray_map(bundle: ModelBundle, scene, steps=500, seed=0):
    grays, elapsed = generate_gray_maps(bundle, [scene], steps=steps, seed=seed)
    return grays[0], elapsed
