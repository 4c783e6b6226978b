"""Decoupled diffusion core.

The forward process splits into a deterministic attenuation of the latent to
zero plus an additive Wiener term:

    z_t = z_0 + F(t) + sqrt(t) * eps,      F(t) = integral of the drift on [0, t]

where the drift family satisfies the boundary condition z_0 + F(1) = 0, so the
marginal is N(z_0 + F(t), t I). The reverse transition conditioned on
(z_t, z_0) is

    z_{t-dt} = z_t + F(t-dt) - F(t) - (dt / sqrt(t)) * eps
               + sqrt(dt * (t - dt) / t) * xi

which is deterministic on the final step (dt == t). A classic DDPM schedule is
included purely as a cross-check reference.

All element-wise operations are array-agnostic: numpy arrays and torch
tensors both work, with per-sample time vectors broadcast over leading batch
axes.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .domain import LatentTensor, PromptTensor
from .errors import (
    DtOutOfRange,
    PredictorShapeMismatch,
    ShapeMismatch,
    StepOutOfRange,
    TOutOfRange,
)

DRIFT_KINDS = ("constant", "linear")


def _violates(cond) -> bool:
    if isinstance(cond, (bool, np.bool_)):
        return bool(cond)
    return bool(cond.any())


def _expand_t(t, like):
    """Reshape a per-sample time vector for broadcasting against ``like``."""
    if isinstance(t, (int, float)):
        return float(t)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (like.ndim - t.ndim))


def _cat(parts, axis):
    if torch.is_tensor(parts[0]):
        return torch.cat(parts, dim=axis)
    return np.concatenate(parts, axis=axis)


def _split_halves(arr, axis):
    size = arr.shape[axis]
    if size % 2:
        raise ShapeMismatch(f"cannot split axis of size {size} into two halves")
    half = size // 2
    if torch.is_tensor(arr):
        return torch.split(arr, half, dim=axis)
    return np.split(arr, 2, axis=axis)


@dataclass(frozen=True)
class DriftFamily:
    """A drift f_t with z_0 + integral_0^1 f dt = 0.

    constant: f = c with c = -z_0.
    linear:   f = a t + b with a drawn from N(0, I) and b = -z_0 - a/2.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        expected = 1 if self.kind == "constant" else 2
        if len(self.params) != expected:
            raise ValueError(f"{self.kind} drift takes {expected} parameter tensors")

    def integral(self, t):
        """F(t) = integral of the drift over [0, t]."""
        if self.kind == "constant":
            c = self.params[0]
            return c * _expand_t(t, c)
        a, b = self.params
        t = _expand_t(t, a)
        return a * (t * t * 0.5) + b * t

    def increment(self, t, dt):
        """Integral of the drift from t down to t - dt (the reverse-step term)."""
        return self.integral(t - dt) - self.integral(t)

    def target(self):
        """Regression label for the drift head (linear stacks a and b on the
        channel axis)."""
        if self.kind == "constant":
            return self.params[0]
        return _cat(self.params, axis=-3)

    def boundary_residual(self, z0):
        """z_0 + F(1); zero for a well-formed family."""
        return z0 + self.integral(1.0)

    @classmethod
    def from_prediction(cls, f_hat, kind):
        if kind == "constant":
            return cls("constant", (f_hat,))
        a, b = _split_halves(f_hat, axis=-3)
        return cls("linear", (a, b))


def solve_drift_ground_truth(z0, kind="constant", seed=None) -> DriftFamily:
    """Solve the boundary condition z_0 + integral_0^1 f dt = 0 for the family.

    constant: c = -z_0 directly. linear: a is sampled from N(0, I) (seeded)
    and substituted, giving b = -z_0 - a/2.
    """
    if kind == "constant":
        return DriftFamily("constant", (-z0,))
    if kind == "linear":
        rng = np.random.default_rng(seed)
        if torch.is_tensor(z0):
            a = torch.from_numpy(rng.standard_normal(tuple(z0.shape))).to(z0.dtype)
        else:
            a = rng.standard_normal(z0.shape).astype(z0.dtype, copy=False)
        b = -z0 - a * 0.5
        return DriftFamily("linear", (a, b))
    raise ValueError(f"unknown drift kind {kind!r}")


def forward_diffuse(z0, t, eps, drift: DriftFamily):
    """z_t = z_0 + F(t) + sqrt(t) * eps for t in (0, 1]; caller supplies eps so
    the training loss can reuse the exact noise sample as its label."""
    if _violates(t <= 0) or _violates(t > 1):
        raise TOutOfRange(f"t must lie in (0, 1], got {t}")
    if eps.shape != z0.shape:
        raise ShapeMismatch(f"eps shape {eps.shape} vs z0 shape {z0.shape}")
    te = _expand_t(t, z0)
    return z0 + drift.integral(t) + te**0.5 * eps


def reverse_step(z_t, t, dt, f_hat, eps_hat, xi=None, drift_kind="constant"):
    """One reverse transition from t to t - dt.

    The variance factor dt*(t-dt)/t vanishes when dt == t, so the final step
    is deterministic and ``xi`` is ignored there. Pass xi=None for a
    zero-noise step.
    """
    if _violates(t <= 0) or _violates(t > 1):
        raise TOutOfRange(f"t must lie in (0, 1], got {t}")
    if _violates(dt <= 0) or _violates(dt > t):
        raise DtOutOfRange(f"dt must lie in (0, t], got dt={dt} t={t}")
    if eps_hat.shape != z_t.shape:
        raise ShapeMismatch(f"eps_hat shape {eps_hat.shape} vs z_t shape {z_t.shape}")
    drift = DriftFamily.from_prediction(f_hat, drift_kind)
    te = _expand_t(t, z_t)
    dte = _expand_t(dt, z_t)
    z = z_t + drift.increment(t, dt) - (dte / te**0.5) * eps_hat
    if xi is not None:
        z = z + (dte * (te - dte) / te) ** 0.5 * xi
    return z


@dataclass(frozen=True)
class DDMSchedule:
    """Uniform time discretization t = n / T with the marginal coefficients of
    the constant family: gamma_t = 1 - t (data attenuation) and
    delta_t = sqrt(t) (accumulated noise scale)."""

    t_train: int = 1000
    t_infer: int = 500

    def __post_init__(self):
        if self.t_train < 1 or self.t_infer < 1:
            raise ValueError("step counts must be >= 1")

    def t_of(self, n, steps=None) -> float:
        steps = steps or self.t_train
        if not 1 <= n <= steps:
            raise StepOutOfRange(f"n must lie in [1, {steps}], got {n}")
        return n / steps

    @staticmethod
    def gamma_t(t):
        return 1.0 - t

    @staticmethod
    def delta_t(t):
        return t**0.5


def sample_array(predictor, prompt, schedule: DDMSchedule, seed, shape,
                 drift_kind="constant", dtype=np.float64):
    """Reverse sampling loop over T_infer uniform steps starting from
    z_1 ~ N(0, I). ``shape`` may carry a leading batch axis; the predictor
    maps (z_t, t, prompt) to (f_hat, eps_hat) of matching shapes.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(shape).astype(dtype, copy=False)
    steps = schedule.t_infer
    f_channels = z.shape[-3] * (1 if drift_kind == "constant" else 2)
    for n in range(steps, 0, -1):
        t = n / steps
        dt = 1.0 / steps
        f_hat, eps_hat = predictor(z, t, prompt)
        f_hat = np.asarray(f_hat)
        eps_hat = np.asarray(eps_hat)
        if eps_hat.shape != z.shape or f_hat.shape[-3] != f_channels:
            raise PredictorShapeMismatch(
                f"predictor returned f {f_hat.shape}, eps {eps_hat.shape} for z {z.shape}"
            )
        xi = rng.standard_normal(shape).astype(dtype, copy=False) if n > 1 else None
        z = reverse_step(z, t, dt, f_hat, eps_hat, xi, drift_kind)
    return z


def sample(predictor, prompt: PromptTensor, schedule: DDMSchedule, seed,
           latent_shape=(3, 16, 16), spatial_factor=None, drift_kind="constant") -> LatentTensor:
    """Sample one latent conditioned on a prompt; deterministic given seed."""
    z = sample_array(predictor, prompt, schedule, seed, tuple(latent_shape), drift_kind)
    if spatial_factor is None:
        spatial_factor = prompt.size_n // latent_shape[-1]
    return LatentTensor(z.astype(np.float32), spatial_factor)


# --- classic DDPM reference (cross-check only) --------------------------------


@dataclass(frozen=True)
class DDPMRefSchedule:
    """Reference schedule: x_n = sqrt(abar_n) x_0 + sqrt(1 - abar_n) eps."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-D array")
        # beta = 0 entries are tolerated so that an identity prefix (x_n = x_0)
        # can be expressed; alpha_bar is then non-increasing rather than
        # strictly decreasing.
        if (betas < 0).any() or (betas >= 1).any():
            raise ValueError("betas must lie in [0, 1)")
        alphas = 1.0 - betas
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", np.cumprod(alphas))

    @classmethod
    def linear_ramp(cls, t_total=1000, beta_start=1e-4, beta_end=0.02):
        return cls(np.linspace(beta_start, beta_end, t_total))

    @property
    def t_total(self) -> int:
        return self.betas.size

    def _check_step(self, n):
        if not 1 <= n <= self.t_total:
            raise StepOutOfRange(f"n must lie in [1, {self.t_total}], got {n}")


def ddpm_reference_forward(x0, n, sched: DDPMRefSchedule, eps):
    sched._check_step(n)
    abar = sched.alpha_bars[n - 1]
    return abar**0.5 * x0 + (1.0 - abar) ** 0.5 * eps


def ddpm_reference_reverse_step(x_n, n, eps_pred, sched: DDPMRefSchedule, xi=None):
    """One reverse update; the noise term restores the forward marginal's
    variance and is dropped when xi is None."""
    sched._check_step(n)
    alpha = sched.alphas[n - 1]
    abar = sched.alpha_bars[n - 1]
    x = (x_n - (1.0 - alpha) / (1.0 - abar) ** 0.5 * eps_pred) / alpha**0.5
    if xi is not None:
        x = x + sched.betas[n - 1] * xi
    return x
