"""Conditional denoising network.

A U-Net over latents with sinusoidal time conditioning injected into every
residual block, cross-attention onto the encoded prompt, an adaptive spectral
filter after encoder stages, and two independent decoders emitting the drift
and noise predictions. The spectral filter and the attention kernel are also
exposed as standalone functions operating on plain arrays.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .domain import PromptTensor
from .errors import DimMismatch, NonFiniteActivation, ShapeMismatch


def aft_apply(z, w):
    """Adaptive spectral filter with a residual connection.

    out = z + invFFT2(w * FFT2(z)) using a real-input transform over the two
    spatial dims, so the output is exactly real. ``w`` holds complex weights
    of shape (C, H, W//2 + 1) over the half-spectrum; w = 0 is the identity.
    """
    c, height, width = z.shape[-3:]
    expected = (c, height, width // 2 + 1)
    if tuple(w.shape) != expected:
        raise ShapeMismatch(f"filter weights {tuple(w.shape)}, expected {expected}")
    if torch.is_tensor(z):
        spec = torch.fft.rfft2(z)
        return z + torch.fft.irfft2(w * spec, s=(height, width))
    spec = np.fft.rfft2(z, axes=(-2, -1))
    return z + np.fft.irfft2(w * spec, s=(height, width), axes=(-2, -1))


def cross_attention(z_flat, prompt_emb, w_q, w_k, w_v):
    """softmax(Q K^T / sqrt(d_k)) V with Q from the flattened features and
    K, V from the prompt embedding; every output row is a convex combination
    of the V rows. Leading batch axes broadcast."""
    if z_flat.shape[-1] != w_q.shape[0]:
        raise DimMismatch(f"query dim {z_flat.shape[-1]} vs W_Q rows {w_q.shape[0]}")
    if prompt_emb.shape[-1] != w_k.shape[0] or prompt_emb.shape[-1] != w_v.shape[0]:
        raise DimMismatch(f"prompt dim {prompt_emb.shape[-1]} vs W_K/W_V rows")
    if w_q.shape[1] != w_k.shape[1]:
        raise DimMismatch(f"key dim mismatch: {w_q.shape[1]} vs {w_k.shape[1]}")
    q = z_flat @ w_q
    k = prompt_emb @ w_k
    v = prompt_emb @ w_v
    logits = (q @ k.swapaxes(-1, -2)) / math.sqrt(w_q.shape[1])
    if torch.is_tensor(logits):
        weights = torch.softmax(logits, dim=-1)
    else:
        shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
        weights = shifted / shifted.sum(axis=-1, keepdims=True)
    return weights @ v


def sinusoidal_time_embedding(t, dim):
    """Continuous-time sinusoidal embedding for t in (0, 1]."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = t[:, None] * 1000.0 * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _norm(channels):
    return nn.GroupNorm(math.gcd(8, channels), channels)


class AftFilter(nn.Module):
    """Learnable half-spectrum weights applied by aft_apply."""

    def __init__(self, channels, size):
        super().__init__()
        self.weight = nn.Parameter(0.02 * torch.randn(channels, size, size // 2 + 1, 2))

    def forward(self, x):
        return aft_apply(x, torch.view_as_complex(self.weight))


class CrossAttentionBlock(nn.Module):
    def __init__(self, channels, prompt_dim, attn_dim=None):
        super().__init__()
        attn_dim = attn_dim or channels
        self.norm = _norm(channels)
        self.w_q = nn.Linear(channels, attn_dim, bias=False)
        self.w_k = nn.Linear(prompt_dim, attn_dim, bias=False)
        self.w_v = nn.Linear(prompt_dim, attn_dim, bias=False)
        self.proj = nn.Linear(attn_dim, channels)

    def forward(self, x, tokens):
        b, c, h, w = x.shape
        flat = self.norm(x).flatten(2).transpose(1, 2)
        att = cross_attention(flat, tokens, self.w_q.weight.T, self.w_k.weight.T, self.w_v.weight.T)
        return x + self.proj(att).transpose(1, 2).reshape(b, c, h, w)


class TimeResBlock(nn.Module):
    def __init__(self, c_in, c_out, t_dim):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, c_out)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x, temb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.t_proj(self.act(temb))[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return self.skip(x) + h


class PromptEncoder(nn.Module):
    """Strided conv stack projecting the 3xNxN prompt to M embedding tokens."""

    def __init__(self, embed_dim, stride=8, width=32):
        super().__init__()
        if stride < 2 or (stride & (stride - 1)) != 0:
            raise ValueError(f"prompt stride must be a power of two >= 2, got {stride}")
        self.stride = stride
        layers = []
        c = 3
        for i in range(int(math.log2(stride))):
            out = embed_dim if i == int(math.log2(stride)) - 1 else width
            layers.append(nn.Conv2d(c, out, 3, stride=2, padding=1))
            if out != embed_dim:
                layers.append(nn.SiLU())
            c = out
        self.net = nn.Sequential(*layers)

    def forward(self, prompt):
        if prompt.shape[-1] % self.stride or prompt.shape[-2] % self.stride:
            raise ShapeMismatch(
                f"prompt grid {tuple(prompt.shape[-2:])} not divisible by stride {self.stride}"
            )
        h = self.net(prompt)
        return h.flatten(2).transpose(1, 2)


def encode_prompt(prompt: PromptTensor, encoder: PromptEncoder) -> np.ndarray:
    """Deterministically embed one prompt as an (M, embed_dim) token grid."""
    x = torch.tensor(prompt.channels, dtype=torch.float32)[None]
    with torch.no_grad():
        tokens = encoder(x)
    return tokens[0].numpy()


@dataclass(frozen=True)
class BackboneConfig:
    z_channels: int = 3
    latent_size: int = 16
    base_width: int = 64
    channel_mults: tuple = (1, 2)
    blocks_per_stage: int = 1
    attention_stages: tuple = (1,)
    prompt_embed_dim: int = 64
    prompt_stride: int = 8
    prompt_width: int = 32
    aft_enabled: bool = True
    drift_kind: str = "constant"

    def __post_init__(self):
        if not self.channel_mults or any(m < 1 for m in self.channel_mults):
            raise ValueError("channel_mults must be non-empty positive integers")
        if not self.attention_stages:
            raise ValueError("at least one attention stage is required")
        if any(not 0 <= s < len(self.channel_mults) for s in self.attention_stages):
            raise ValueError(f"attention stage out of range: {self.attention_stages}")
        if self.base_width < 4 or self.prompt_embed_dim < 1:
            raise ValueError("widths must be positive")
        if self.drift_kind not in ("constant", "linear"):
            raise ValueError(f"unknown drift kind {self.drift_kind!r}")

    @property
    def drift_param_count(self) -> int:
        return 2 if self.drift_kind == "linear" else 1

    @property
    def widths(self) -> tuple:
        return tuple(self.base_width * m for m in self.channel_mults)


class _HeadDecoder(nn.Module):
    """One U-Net decoder branch; the two heads are independent instances."""

    def __init__(self, cfg: BackboneConfig, t_dim, out_channels):
        super().__init__()
        widths = cfg.widths
        self.blocks = nn.ModuleList()
        self.attns = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            stage = nn.ModuleList([TimeResBlock(2 * w, w, t_dim)])
            for _ in range(cfg.blocks_per_stage - 1):
                stage.append(TimeResBlock(w, w, t_dim))
            self.blocks.append(stage)
            self.attns.append(
                CrossAttentionBlock(w, cfg.prompt_embed_dim) if i in cfg.attention_stages else None
            )
            if i > 0:
                self.ups.append(
                    nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                  nn.Conv2d(w, widths[i - 1], 3, padding=1))
                )
        self.out_norm = _norm(widths[0])
        self.out_conv = nn.Conv2d(widths[0], out_channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, h, skips, tokens, temb):
        n_stages = len(self.blocks)
        for level in range(n_stages):
            h = torch.cat([h, skips[n_stages - 1 - level]], dim=1)
            for block in self.blocks[level]:
                h = block(h, temb)
            if self.attns[level] is not None:
                h = self.attns[level](h, tokens)
            if level < n_stages - 1:
                h = self.ups[level](h)
        return self.out_conv(self.act(self.out_norm(h)))


class DenoiseBackbone(nn.Module):
    """Shared encoder, two decoders: predicts (drift, noise) from (z_t, t, C)."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        t_dim = 4 * cfg.base_width
        self.t_dim = t_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_width, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim)
        )
        self.prompt_encoder = PromptEncoder(cfg.prompt_embed_dim, cfg.prompt_stride, cfg.prompt_width)
        self.conv_in = nn.Conv2d(cfg.z_channels, widths[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.enc_attns = nn.ModuleList()
        self.enc_afts = nn.ModuleList()
        self.downs = nn.ModuleList()
        size = cfg.latent_size
        c_prev = widths[0]
        for i, w in enumerate(widths):
            stage = nn.ModuleList([TimeResBlock(c_prev, w, t_dim)])
            for _ in range(cfg.blocks_per_stage - 1):
                stage.append(TimeResBlock(w, w, t_dim))
            self.enc_blocks.append(stage)
            self.enc_attns.append(
                CrossAttentionBlock(w, cfg.prompt_embed_dim) if i in cfg.attention_stages else None
            )
            self.enc_afts.append(AftFilter(w, size) if cfg.aft_enabled else None)
            if i < len(widths) - 1:
                self.downs.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
                size //= 2
            c_prev = w

        w_last = widths[-1]
        self.mid_block1 = TimeResBlock(w_last, w_last, t_dim)
        self.mid_attn = CrossAttentionBlock(w_last, cfg.prompt_embed_dim)
        self.mid_block2 = TimeResBlock(w_last, w_last, t_dim)

        self.f_decoder = _HeadDecoder(cfg, t_dim, cfg.z_channels * cfg.drift_param_count)
        self.eps_decoder = _HeadDecoder(cfg, t_dim, cfg.z_channels)

    def forward(self, z_t, t, prompt, check_finite=False):
        cfg = self.cfg
        if z_t.ndim != 4 or z_t.shape[1] != cfg.z_channels or z_t.shape[-1] != cfg.latent_size:
            raise ShapeMismatch(
                f"latent batch {tuple(z_t.shape)}, expected (B, {cfg.z_channels}, "
                f"{cfg.latent_size}, {cfg.latent_size})"
            )
        if not torch.is_tensor(t):
            t = torch.full((z_t.shape[0],), float(t), dtype=z_t.dtype)
        temb = self.time_mlp(sinusoidal_time_embedding(t.to(z_t.dtype), cfg.base_width))
        tokens = self.prompt_encoder(prompt)

        def guard(h, name):
            if check_finite and not torch.isfinite(h).all():
                raise NonFiniteActivation(f"non-finite activation leaving block {name}")
            return h

        h = guard(self.conv_in(z_t), "conv_in")
        skips = []
        for i in range(len(cfg.widths)):
            for block in self.enc_blocks[i]:
                h = block(h, temb)
            if self.enc_attns[i] is not None:
                h = self.enc_attns[i](h, tokens)
            if self.enc_afts[i] is not None:
                h = self.enc_afts[i](h)
            h = guard(h, f"encoder_stage_{i}")
            skips.append(h)
            if i < len(cfg.widths) - 1:
                h = self.downs[i](h)
        h = self.mid_block1(h, temb)
        h = self.mid_attn(h, tokens)
        h = guard(self.mid_block2(h, temb), "middle")
        f_hat = guard(self.f_decoder(h, skips, tokens, temb), "drift_decoder")
        eps_hat = guard(self.eps_decoder(h, skips, tokens, temb), "noise_decoder")
        return f_hat, eps_hat


@dataclass(frozen=True)
class PredictionPair:
    """The two network heads: drift prediction and noise prediction."""

    f_hat: np.ndarray
    eps_hat: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f_hat)
        e = np.asarray(self.eps_hat)
        if f.shape[-2:] != e.shape[-2:]:
            raise ShapeMismatch(f"heads disagree on spatial dims: {f.shape} vs {e.shape}")
        if not (np.isfinite(f).all() and np.isfinite(e).all()):
            raise NonFiniteActivation("prediction heads emitted non-finite values")
        object.__setattr__(self, "f_hat", f)
        object.__setattr__(self, "eps_hat", e)


def predict(model: DenoiseBackbone, z_t, t, prompt, check_finite=True) -> PredictionPair:
    """Single-sample numpy front end to the backbone forward pass."""
    if isinstance(prompt, PromptTensor):
        prompt = prompt.channels
    z = torch.tensor(np.asarray(z_t), dtype=torch.float32)[None]
    p = torch.tensor(np.asarray(prompt), dtype=torch.float32)[None]
    with torch.no_grad():
        f_hat, eps_hat = model(z, float(t), p, check_finite=check_finite)
    return PredictionPair(f_hat[0].numpy(), eps_hat[0].numpy())
