"""Stage-1 autoencoder: grayscale maps to 3-channel latents and back.

Trained independently of the diffusion model and frozen afterward; diffusion
training only ever reads the encoder posterior. The regularizer is a diagonal
Gaussian KL with a small weight; the perceptual weight is zero.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .domain import LatentTensor
from .errors import DivergedLoss, NonFiniteActivation, ShapeMismatch
from .seeding import cosine_lr, derived_rng, normal_like

LOGVAR_CLAMP = 20.0


@dataclass(frozen=True)
class VaeConfig:
    z_channels: int = 3
    embed_dim: int = 128
    downsample_factor: int = 4
    kl_weight: float = 1e-6
    perceptual_weight: float = 0.0

    def __post_init__(self):
        if self.z_channels != 3:
            raise ValueError("latents are fixed at 3 channels")
        if self.perceptual_weight != 0.0:
            raise ValueError("perceptual losses are out of scope; weight must stay 0")
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ValueError(f"downsample_factor must be a power of two, got {f}")
        if self.embed_dim < 4:
            raise ValueError(f"embed_dim too small: {self.embed_dim}")

    @property
    def n_down(self) -> int:
        return int(math.log2(self.downsample_factor))


def _norm(channels):
    return nn.GroupNorm(math.gcd(8, channels), channels)


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x):
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return self.skip(x) + h


class Vae(nn.Module):
    """Conv encoder/decoder pair with a diagonal Gaussian latent."""

    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.embed_dim
        widths = [w * (2**i) for i in range(cfg.n_down + 1)]

        enc = [nn.Conv2d(1, widths[0], 3, padding=1)]
        for i in range(cfg.n_down):
            enc.append(ResBlock(widths[i], widths[i]))
            enc.append(nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1))
        enc.append(ResBlock(widths[-1], widths[-1]))
        enc.append(_norm(widths[-1]))
        enc.append(nn.SiLU())
        enc.append(nn.Conv2d(widths[-1], 2 * cfg.z_channels, 3, padding=1))
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(cfg.z_channels, widths[-1], 3, padding=1),
               ResBlock(widths[-1], widths[-1])]
        for i in reversed(range(cfg.n_down)):
            dec.append(nn.Upsample(scale_factor=2, mode="nearest"))
            dec.append(nn.Conv2d(widths[i + 1], widths[i], 3, padding=1))
            dec.append(ResBlock(widths[i], widths[i]))
        dec.append(_norm(widths[0]))
        dec.append(nn.SiLU())
        dec.append(nn.Conv2d(widths[0], 1, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    def encode_stats(self, x):
        """Posterior mean and log-variance for a (B, 1, N, N) batch."""
        if x.shape[-1] % self.cfg.downsample_factor or x.shape[-2] % self.cfg.downsample_factor:
            raise ShapeMismatch(
                f"grid {tuple(x.shape[-2:])} not divisible by factor {self.cfg.downsample_factor}"
            )
        stats = self.encoder(x)
        mean, logvar = torch.chunk(stats, 2, dim=1)
        return mean, torch.clamp(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)

    def decode(self, z):
        if z.shape[-3] != self.cfg.z_channels:
            raise ShapeMismatch(f"latent has {z.shape[-3]} channels, expected {self.cfg.z_channels}")
        return torch.sigmoid(self.decoder(z))

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


def _to_batch(gray):
    g = np.asarray(gray, dtype=np.float32)
    if g.ndim == 2:
        g = g[None]
    if g.ndim != 3 or g.shape[0] != 1:
        raise ShapeMismatch(f"expected a 1xNxN grayscale map, got shape {g.shape}")
    return torch.from_numpy(g[None])


def vae_encode(gray, vae: Vae, mode="mean", seed=None) -> LatentTensor:
    """Encode one map; mode="mean" is deterministic, mode="sample" draws from
    the diagonal Gaussian posterior with the given seed."""
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")
    with torch.no_grad():
        mean, logvar = vae.encode_stats(_to_batch(gray))
    if not (torch.isfinite(mean).all() and torch.isfinite(logvar).all()):
        raise NonFiniteActivation("encoder emitted non-finite posterior statistics")
    z = mean
    if mode == "sample":
        rng = derived_rng(0 if seed is None else seed, "vae-posterior")
        z = mean + torch.exp(0.5 * logvar) * normal_like(rng, mean)
    return LatentTensor(z[0].numpy(), vae.cfg.downsample_factor)


def vae_decode(latent, vae: Vae) -> np.ndarray:
    """Decode a latent back to a grayscale map in [0, 1]."""
    data = latent.data if isinstance(latent, LatentTensor) else np.asarray(latent, dtype=np.float32)
    if data.ndim != 3:
        raise ShapeMismatch(f"latent must be CxHxW, got shape {data.shape}")
    with torch.no_grad():
        out = vae.decode(torch.tensor(data, dtype=torch.float32)[None])
    return out[0, 0].numpy()


def vae_loss_terms(vae: Vae, batch, eps):
    """Reconstruction L1 and per-element KL for one batch and posterior noise."""
    mean, logvar = vae.encode_stats(batch)
    z = mean + torch.exp(0.5 * logvar) * eps
    recon = vae.decode(z)
    l1 = (recon - batch).abs().mean()
    kl = 0.5 * (mean**2 + torch.exp(logvar) - 1.0 - logvar).mean()
    return l1, kl


def vae_train_step(vae: Vae, opt, grays, cfg: VaeConfig, step, total_steps, seed,
                   lr_start=5e-5, lr_end=5e-6, batch_size=2):
    """One optimizer step; every random draw derives from (seed, step)."""
    rng = derived_rng(seed, "vae", step)
    m = grays.shape[0]
    if batch_size >= m:
        batch = grays
    else:
        idx = rng.choice(m, size=batch_size, replace=False)
        batch = grays[np.sort(idx)]
    mean_shape = torch.empty(
        (batch.shape[0], cfg.z_channels,
         batch.shape[-2] // cfg.downsample_factor, batch.shape[-1] // cfg.downsample_factor)
    )
    eps = normal_like(rng, mean_shape)
    lr = cosine_lr(step, total_steps, lr_start, lr_end)
    for group in opt.param_groups:
        group["lr"] = lr
    l1, kl = vae_loss_terms(vae, batch, eps)
    loss = l1 + cfg.kl_weight * kl
    if not torch.isfinite(loss):
        raise DivergedLoss(f"non-finite autoencoder loss at step {step}")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.detach()), lr


def train_vae(grays, cfg: VaeConfig, steps, seed=0, batch_size=2,
              lr_start=5e-5, lr_end=5e-6, history=None) -> Vae:
    """Train from scratch on a stack of grayscale maps and return the frozen
    autoencoder. ``grays`` is an (M, N, N) array in [0, 1]."""
    g = np.asarray(grays, dtype=np.float32)
    if g.ndim != 3 or g.shape[0] == 0:
        raise ValueError(f"expected a non-empty (M, N, N) stack, got shape {g.shape}")
    data = torch.from_numpy(g[:, None])
    torch.manual_seed(seed)
    vae = Vae(cfg)
    opt = torch.optim.AdamW(vae.parameters(), lr=lr_start)
    for step in range(steps):
        loss, lr = vae_train_step(vae, opt, data, cfg, step, steps, seed,
                                  lr_start, lr_end, batch_size)
        if history is not None:
            history.append((step, lr, loss))
    return vae.freeze()
