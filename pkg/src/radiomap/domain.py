"""Core data types shared by every other module.

Grids are row-major numpy arrays with the origin at the top-left. All types
are immutable after construction (backing arrays are flagged read-only), so
instances can be shared freely across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BsInsideBuilding, MaskNotBinary, MaskOverlap, ShapeMismatch

DEFAULT_GRID_SIZE = 256
DEFAULT_BS_HEIGHT_M = 1.5
DEFAULT_BS_POWER_DBM = 23.0
DEFAULT_CARRIER_HZ = 5.9e9


def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BaseStation:
    """Transmitter record: grid position plus carried RF constants.

    ``height_m`` is carried for completeness but never consumed by the 2-D
    pipeline (building and antenna heights are flattened into constants).
    """

    row: int
    col: int
    height_m: float = DEFAULT_BS_HEIGHT_M
    power_dbm: float = DEFAULT_BS_POWER_DBM
    carrier_hz: float = DEFAULT_CARRIER_HZ

    def __post_init__(self):
        if self.row < 0 or self.col < 0:
            raise ValueError(f"negative grid index ({self.row}, {self.col})")
        for name in ("power_dbm", "carrier_hz"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive, got {v!r}")


@dataclass(frozen=True)
class EnvironmentScene:
    """Static/dynamic obstacle masks plus the base-station record.

    ``static_mask[i, j] == 1`` marks a cell inside a building,
    ``dynamic_mask[i, j] == 1`` marks a cell occupied by a vehicle.
    """

    static_mask: np.ndarray
    dynamic_mask: np.ndarray
    bs: BaseStation
    size_n: int

    def __post_init__(self):
        n = self.size_n
        for name in ("static_mask", "dynamic_mask"):
            m = np.asarray(getattr(self, name))
            if m.shape != (n, n):
                raise ShapeMismatch(f"{name} has shape {m.shape}, expected ({n}, {n})")
            object.__setattr__(self, name, _freeze(m))


def validate_scene(scene: EnvironmentScene) -> EnvironmentScene:
    """Check every scene invariant; return the scene unchanged if all hold.

    Raises MaskNotBinary / BsInsideBuilding / MaskOverlap naming the first
    offending cell. Idempotent: re-validating a validated scene never errors.
    """
    for name in ("static_mask", "dynamic_mask"):
        m = getattr(scene, name)
        bad = np.argwhere(~np.isin(m, (0, 1)))
        if bad.size:
            r, c = bad[0]
            raise MaskNotBinary(f"{name}[{r}][{c}] = {m[r, c]} is not in {{0, 1}}")
    bs = scene.bs
    if not (0 <= bs.row < scene.size_n and 0 <= bs.col < scene.size_n):
        raise ValueError(f"bs at ({bs.row}, {bs.col}) outside {scene.size_n}x{scene.size_n} grid")
    if scene.static_mask[bs.row, bs.col]:
        raise BsInsideBuilding(f"bs at ({bs.row}, {bs.col}) lies inside a building")
    bad = np.argwhere((scene.static_mask != 0) & (scene.dynamic_mask != 0))
    if bad.size:
        r, c = bad[0]
        raise MaskOverlap(f"cell ({r}, {c}) is marked in both masks")
    return scene


@dataclass(frozen=True)
class RadioMap:
    """A pathloss grid in dB together with its grayscale encoding in [0, 1]."""

    pathloss_db: np.ndarray
    gray: np.ndarray

    def __post_init__(self):
        pl = np.asarray(self.pathloss_db, dtype=np.float64)
        g = np.asarray(self.gray, dtype=np.float64)
        if pl.shape != g.shape:
            raise ShapeMismatch(f"pathloss {pl.shape} vs gray {g.shape}")
        if g.size and (g.min() < 0.0 or g.max() > 1.0):
            raise ValueError("gray entries must lie in [0, 1]")
        object.__setattr__(self, "pathloss_db", _freeze(pl))
        object.__setattr__(self, "gray", _freeze(g))


@dataclass(frozen=True)
class PromptTensor:
    """Conditioning tensor: channels [static mask, dynamic mask, BS one-hot]."""

    channels: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 3 or ch.shape[0] != 3 or ch.shape[1] != ch.shape[2]:
            raise ShapeMismatch(f"prompt must be 3xNxN, got {ch.shape}")
        for k in (0, 1):
            if not np.isin(ch[k], (0.0, 1.0)).all():
                raise MaskNotBinary(f"prompt channel {k} is not binary")
        onehot = ch[2]
        ones = int((onehot == 1.0).sum())
        if ones != 1 or not np.isin(onehot, (0.0, 1.0)).all() or onehot.sum() != 1.0:
            raise ValueError(f"prompt channel 2 must be one-hot, found {ones} ones")
        object.__setattr__(self, "channels", _freeze(ch))

    @property
    def size_n(self) -> int:
        return self.channels.shape[1]

    def bs_cell(self):
        r, c = np.argwhere(self.channels[2] == 1.0)[0]
        return int(r), int(c)


@dataclass(frozen=True)
class LatentTensor:
    """Compressed 3-channel representation of a grayscale map.

    ``spatial_factor`` is the integer downsample ratio N / h of the autoencoder
    that produced the latent.
    """

    data: np.ndarray
    spatial_factor: int

    Z_CHANNELS = 3

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[0] != self.Z_CHANNELS or d.shape[1] != d.shape[2]:
            raise ShapeMismatch(f"latent must be 3xhxh, got {d.shape}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def grid_size(self) -> int:
        return self.data.shape[1] * self.spatial_factor
