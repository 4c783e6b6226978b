"""Radio map construction from environment rasters and a base-station
position, using a conditional decoupled denoising diffusion model over
autoencoder latents, plus the deterministic oracle simulator, metric suite,
and CLI that tie the pipeline together."""

__version__ = "0.1.0"

from .domain import (
    BaseStation,
    EnvironmentScene,
    LatentTensor,
    PromptTensor,
    RadioMap,
    validate_scene,
)
from .ingest import EncodeConfig, build_prompt, decode_gray, encode_gray
from .oracle import OracleConfig, compute_pathloss, generate_scene

__all__ = [
    "BaseStation",
    "EnvironmentScene",
    "LatentTensor",
    "PromptTensor",
    "RadioMap",
    "validate_scene",
    "EncodeConfig",
    "build_prompt",
    "encode_gray",
    "decode_gray",
    "OracleConfig",
    "generate_scene",
    "compute_pathloss",
    "__version__",
]
