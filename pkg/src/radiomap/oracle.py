"""Deterministic desk-scale ground truth: scene generation and pathloss maps.

The propagation model is log-distance pathloss plus per-cell attenuation
accumulated along the ray from the base station, computed by an exact grid
traversal (compiled kernel when available). Buildings block fully and their
interiors are forced to gray 0; vehicles attenuate partially and can never
fully block.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import trace_obstruction_counts
from .domain import BaseStation, EnvironmentScene, RadioMap, validate_scene
from .errors import PlacementFailure
from .ingest import EncodeConfig, encode_gray

FLOOR_DEPTH_DB = 147.0  # default truncation depth below the reference loss
MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class OracleConfig:
    exponent_n: float = 2.0
    ref_loss_db: float = 40.0
    static_atten_db_per_cell: float = math.inf
    dynamic_atten_db_per_cell: float = 3.0
    floor_db: float | None = None
    levels: int = 256

    def __post_init__(self):
        if not self.exponent_n > 0:
            raise ValueError(f"exponent_n must be positive, got {self.exponent_n}")
        if not (math.isfinite(self.dynamic_atten_db_per_cell) and self.dynamic_atten_db_per_cell > 0):
            # vehicles only partially obstruct: they must never block fully
            raise ValueError("dynamic_atten_db_per_cell must be finite and positive")
        if self.floor_db is None:
            object.__setattr__(self, "floor_db", self.ref_loss_db + FLOOR_DEPTH_DB)

    def encode_config(self) -> EncodeConfig:
        """Gray encoding spanning from the BS-cell loss down to the floor."""
        return EncodeConfig(max_db=self.floor_db, min_db=self.ref_loss_db, levels=self.levels)


def generate_scene(seed, n, building_count, vehicle_count) -> EnvironmentScene:
    """Generate a random city scene: rectangular buildings, 1-2 cell vehicle
    blobs on building-free cells, BS uniform over free cells.

    Deterministic for a fixed seed. Raises PlacementFailure when rejection
    sampling cannot place an entity within 1000 attempts.
    """
    if n < 16:
        raise ValueError(f"grid size must be >= 16, got {n}")
    if building_count < 0 or vehicle_count < 0:
        raise ValueError("entity counts must be >= 0")
    rng = np.random.default_rng(seed)
    static = np.zeros((n, n), dtype=np.uint8)
    dynamic = np.zeros((n, n), dtype=np.uint8)

    max_side = max(3, n // 8)
    for _ in range(building_count):
        h = int(rng.integers(2, max_side + 1))
        w = int(rng.integers(2, max_side + 1))
        r = int(rng.integers(0, n - h + 1))
        c = int(rng.integers(0, n - w + 1))
        static[r : r + h, c : c + w] = 1

    for k in range(vehicle_count):
        cell = _sample_free_cell(rng, static, dynamic, f"vehicle {k}")
        dynamic[cell] = 1
        if rng.random() < 0.5:
            # grow into a random free neighbour to form a 2-cell blob
            r, c = cell
            offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            rng.shuffle(offsets)
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < n and 0 <= cc < n and not static[rr, cc] and not dynamic[rr, cc]:
                    dynamic[rr, cc] = 1
                    break

    bs_cell = _sample_free_cell(rng, static, dynamic, "base station")
    scene = EnvironmentScene(static, dynamic, BaseStation(bs_cell[0], bs_cell[1]), n)
    return validate_scene(scene)


def _sample_free_cell(rng, static, dynamic, entity):
    n = static.shape[0]
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        r = int(rng.integers(0, n))
        c = int(rng.integers(0, n))
        if not static[r, c] and not dynamic[r, c]:
            return r, c
    raise PlacementFailure(f"no free cell for {entity} after {MAX_PLACEMENT_ATTEMPTS} attempts")


def compute_pathloss(scene: EnvironmentScene, cfg: OracleConfig | None = None) -> RadioMap:
    """Pathloss map for a scene: log-distance loss plus ray-accumulated
    attenuation, truncated at the floor; building interiors forced to gray 0.
    """
    cfg = cfg or OracleConfig()
    validate_scene(scene)
    n = scene.size_n
    bs = scene.bs
    static = scene.static_mask.astype(np.uint8)
    dynamic = scene.dynamic_mask.astype(np.uint8)

    counts_s, counts_d = trace_obstruction_counts(static, dynamic, bs.row, bs.col)

    rows, cols = np.indices((n, n))
    dist = np.hypot(rows - bs.row, cols - bs.col)
    dist = np.maximum(dist, 1.0)  # clamp so the BS cell avoids log(0)
    raw = cfg.ref_loss_db + 10.0 * cfg.exponent_n * np.log10(dist)
    raw = raw + counts_d * cfg.dynamic_atten_db_per_cell
    if math.isfinite(cfg.static_atten_db_per_cell):
        raw = raw + counts_s * cfg.static_atten_db_per_cell
    else:
        raw = np.where(counts_s > 0, np.inf, raw)
    raw = np.minimum(raw, cfg.floor_db)

    inside = static.astype(bool)
    raw[inside] = cfg.floor_db
    gray = encode_gray(raw, cfg.encode_config())
    gray[inside] = 0.0
    return RadioMap(pathloss_db=raw, gray=gray)
