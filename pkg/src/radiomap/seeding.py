"""Deterministic randomness plumbing.

Every stochastic draw in training and inference comes from a generator derived
from (seed, tag...) so that interrupted runs replay bit-identically: resuming
at step k re-derives exactly the generators the uninterrupted run would have
used.
"""

import hashlib
import math

import numpy as np


def derived_rng(seed, *tags) -> np.random.Generator:
    """Independent generator for a (seed, tags) address."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            entropy.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
        else:
            digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:8], "little"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def cosine_lr(step, total_steps, lr_start, lr_end) -> float:
    """Cosine decay from lr_start (step 0) to lr_end (last step); monotone
    non-increasing."""
    if total_steps <= 1:
        return lr_end
    progress = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * progress))


def normal_like(rng: np.random.Generator, tensor):
    """Standard-normal torch tensor drawn from a numpy generator, so torch's
    global RNG state never influences training."""
    import torch

    return torch.from_numpy(rng.standard_normal(tuple(tensor.shape))).to(tensor.dtype)
