"""Dataset I/O and initial processing.

Covers the grayscale encode/decode of pathloss values, prompt assembly,
ingestion of RadioMapSeer-style directory trees, and a synthetic dataset
format (versioned manifest + 8-bit PNG rasters) that round-trips losslessly.

Orientation is fixed once and used everywhere, metrics included: gray 1.0 is
the strongest received signal (lowest pathloss, ``min_db``), gray 0.0 the
truncation floor (``max_db``).
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .domain import BaseStation, EnvironmentScene, PromptTensor, RadioMap, validate_scene
from .errors import (
    CorruptRaster,
    CountMismatch,
    IoFailure,
    MissingFile,
    NonFiniteInput,
    OutOfRange,
    SchemaVersionMismatch,
)

MANIFEST_NAME = "manifest.txt"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class EncodeConfig:
    """Affine map from pathloss dB to quantized gray in [0, 1].

    ``min_db`` (lowest loss) maps to gray 1.0, ``max_db`` (truncation floor)
    to gray 0.0; values are quantized to ``levels`` uniform steps.
    """

    max_db: float
    min_db: float
    levels: int = 256

    def __post_init__(self):
        if not self.max_db > self.min_db:
            raise ValueError(f"max_db ({self.max_db}) must exceed min_db ({self.min_db})")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")


def encode_gray(pathloss_db, cfg: EncodeConfig) -> np.ndarray:
    """Encode pathloss dB into quantized gray; lower loss comes out brighter."""
    v = np.asarray(pathloss_db, dtype=np.float64)
    if not np.isfinite(v).all():
        raise NonFiniteInput("pathloss grid contains non-finite entries")
    unit = np.clip((cfg.max_db - v) / (cfg.max_db - cfg.min_db), 0.0, 1.0)
    q = cfg.levels - 1
    return np.round(unit * q) / q


def decode_gray(gray, cfg: EncodeConfig) -> np.ndarray:
    """Affine inverse of encode_gray, without re-quantization."""
    g = np.asarray(gray, dtype=np.float64)
    if g.size and (g.min() < 0.0 or g.max() > 1.0):
        raise OutOfRange(f"gray entries outside [0, 1]: min {g.min()}, max {g.max()}")
    return cfg.max_db - g * (cfg.max_db - cfg.min_db)


def build_prompt(scene: EnvironmentScene) -> PromptTensor:
    """Stack [static mask, dynamic mask, BS one-hot] into the 3xNxN prompt."""
    validate_scene(scene)
    n = scene.size_n
    onehot = np.zeros((n, n), dtype=np.float64)
    onehot[scene.bs.row, scene.bs.col] = 1.0
    channels = np.stack(
        [
            scene.static_mask.astype(np.float64),
            scene.dynamic_mask.astype(np.float64),
            onehot,
        ]
    )
    return PromptTensor(channels)


# --- raster helpers ---------------------------------------------------------


def _write_gray_png(path: Path, values: np.ndarray):
    img = Image.fromarray(np.asarray(values, dtype=np.uint8), mode="L")
    img.save(path)


def _read_gray_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingFile(str(path))
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except OSError as e:
        raise CorruptRaster(f"{path}: {e}") from e
    return arr


def gray_to_u8(gray: np.ndarray, levels: int) -> np.ndarray:
    """Map quantized gray (multiples of 1/(levels-1)) to 8-bit raster values."""
    if levels > 256:
        raise ValueError("8-bit rasters cannot hold more than 256 levels")
    return np.round(np.asarray(gray, dtype=np.float64) * 255.0).astype(np.uint8)


def u8_to_gray(raster: np.ndarray, levels: int) -> np.ndarray:
    """Invert gray_to_u8 exactly for levels <= 256."""
    k = np.round(raster.astype(np.float64) / 255.0 * (levels - 1))
    return k / (levels - 1)


# --- dataset index -----------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    map_id: str
    tx_index: int
    bs_row: int
    bs_col: int
    scene_path: str
    gain_path: str


@dataclass(frozen=True)
class DatasetIndex:
    """Ordered record list for one split, with the split's terrain ids."""

    root: str
    split: str
    records: tuple
    map_ids: tuple
    n: int
    encode: EncodeConfig

    def __len__(self):
        return len(self.records)


# --- synthetic dataset persistence -------------------------------------------

# Layout under the dataset root:
#   manifest.txt               key=value header then one CSV record per line
#   masks/<map_id>_static.png  building mask, 0/255
#   masks/<map_id>_dynamic.png vehicle mask, 0/255
#   gain/<map_id>_<tx>.png     8-bit encoded gray map


def _dynamic_path_for(static_path: str) -> str:
    return static_path.replace("_static.png", "_dynamic.png")


def save_synthetic_dataset(scenes, maps, root, encode: EncodeConfig, split="train") -> DatasetIndex:
    """Persist (scene, map) pairs; lossless for quantized gray and masks.

    ``scenes`` and ``maps`` are parallel sequences of EnvironmentScene and
    RadioMap. Returns the index of what was written.
    """
    if len(scenes) != len(maps):
        raise ValueError(f"{len(scenes)} scenes vs {len(maps)} maps")
    root = Path(root)
    try:
        (root / "masks").mkdir(parents=True, exist_ok=True)
        (root / "gain").mkdir(parents=True, exist_ok=True)
        records = []
        n = scenes[0].size_n if scenes else 0
        for idx, (scene, rm) in enumerate(zip(scenes, maps)):
            map_id = f"{idx:05d}"
            scene_rel = f"masks/{map_id}_static.png"
            gain_rel = f"gain/{map_id}_0.png"
            _write_gray_png(root / scene_rel, scene.static_mask * np.uint8(255))
            _write_gray_png(root / _dynamic_path_for(scene_rel), scene.dynamic_mask * np.uint8(255))
            _write_gray_png(root / gain_rel, gray_to_u8(rm.gray, encode.levels))
            records.append(
                DatasetRecord(map_id, 0, scene.bs.row, scene.bs.col, scene_rel, gain_rel)
            )
        records.sort(key=lambda r: (r.map_id, r.tx_index))
        with open(root / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"version={MANIFEST_VERSION}\n")
            f.write(f"n={n}\n")
            f.write(f"levels={encode.levels}\n")
            f.write(f"min_db={encode.min_db!r}\n")
            f.write(f"max_db={encode.max_db!r}\n")
            for r in records:
                f.write(f"{r.map_id},{r.tx_index},{r.bs_row},{r.bs_col},{r.scene_path},{r.gain_path}\n")
    except OSError as e:
        raise IoFailure(f"writing dataset under {root}: {e}") from e
    return DatasetIndex(str(root), split, tuple(records), tuple(r.map_id for r in records), n, encode)


def load_synthetic_dataset(root, split="train") -> DatasetIndex:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.exists():
        raise MissingFile(str(manifest))
    header = {}
    records = []
    with open(manifest, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if "=" in line and "," not in line:
                key, val = line.split("=", 1)
                header[key] = val
            else:
                map_id, tx, br, bc, scene_rel, gain_rel = line.split(",")
                records.append(DatasetRecord(map_id, int(tx), int(br), int(bc), scene_rel, gain_rel))
    version = int(header.get("version", -1))
    if version != MANIFEST_VERSION:
        raise SchemaVersionMismatch(f"manifest version {version}, expected {MANIFEST_VERSION}")
    encode = EncodeConfig(
        max_db=float(header["max_db"]), min_db=float(header["min_db"]), levels=int(header["levels"])
    )
    records.sort(key=lambda r: (r.map_id, r.tx_index))
    return DatasetIndex(
        str(root), split, tuple(records), tuple(sorted({r.map_id for r in records})),
        int(header["n"]), encode,
    )


def load_record(index: DatasetIndex, record: DatasetRecord):
    """Materialize one record as (EnvironmentScene, gray map ndarray)."""
    root = Path(index.root)
    static = (_read_gray_png(root / record.scene_path) > 127).astype(np.uint8)
    dynamic = (_read_gray_png(root / _dynamic_path_for(record.scene_path)) > 127).astype(np.uint8)
    gray = u8_to_gray(_read_gray_png(root / record.gain_path), index.encode.levels)
    if static.shape != (index.n, index.n):
        raise CorruptRaster(f"{record.scene_path}: shape {static.shape}, expected {(index.n, index.n)}")
    if gray.shape != (index.n, index.n):
        raise CorruptRaster(f"{record.gain_path}: shape {gray.shape}, expected {(index.n, index.n)}")
    scene = EnvironmentScene(static, dynamic, BaseStation(record.bs_row, record.bs_col), index.n)
    return scene, gray


# --- RadioMapSeer-style trees -------------------------------------------------


@dataclass(frozen=True)
class RadioMapSeerLayout:
    """Path templates for a RadioMapSeer-style tree; mirrors differ, so these
    are configuration rather than constants."""

    buildings_tpl: str = "png/buildings_complete/{map_id}.png"
    cars_tpl: str = ""  # optional; empty means no dynamic mask available
    gain_tpl: str = "gain/DPM/{map_id}_{tx}.png"
    antenna_tpl: str = "antenna/{map_id}.json"
    tx_per_map: int = 80
    train_maps: int = 500
    test_maps: int = 200
    grid_n: int = 256
    # dB span of the gain rasters relative to the strongest value; 147 dB
    # matches the dataset's noise-floor truncation, overridable per mirror
    encode: EncodeConfig = field(default_factory=lambda: EncodeConfig(max_db=147.0, min_db=0.0))


def load_radiomapseer(root, split, layout: RadioMapSeerLayout | None = None) -> DatasetIndex:
    """Index a RadioMapSeer-style tree for one split.

    Map ids are sorted; the first ``train_maps`` form the train split and the
    next ``test_maps`` the test split, so the two never share terrain.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    layout = layout or RadioMapSeerLayout()
    root = Path(root)
    buildings_dir = root / Path(layout.buildings_tpl.format(map_id="x")).parent
    if not buildings_dir.is_dir():
        raise MissingFile(str(buildings_dir))
    map_ids = sorted(p.stem for p in buildings_dir.glob("*.png"))
    expected = layout.train_maps + layout.test_maps
    if len(map_ids) < expected:
        raise CountMismatch(f"found {len(map_ids)} maps, need {expected} for the split")
    if split == "train":
        chosen = map_ids[: layout.train_maps]
    else:
        chosen = map_ids[layout.train_maps : layout.train_maps + layout.test_maps]

    records = []
    for map_id in chosen:
        ant_path = root / layout.antenna_tpl.format(map_id=map_id)
        if not ant_path.exists():
            raise MissingFile(str(ant_path))
        try:
            positions = json.loads(ant_path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptRaster(f"{ant_path}: {e}") from e
        if len(positions) != layout.tx_per_map:
            raise CountMismatch(
                f"map {map_id} has {len(positions)} transmitter records, expected {layout.tx_per_map}"
            )
        for tx, (row, col) in enumerate(positions):
            gain_rel = layout.gain_tpl.format(map_id=map_id, tx=tx)
            if not (root / gain_rel).exists():
                raise MissingFile(str(root / gain_rel))
            scene_rel = layout.buildings_tpl.format(map_id=map_id)
            records.append(DatasetRecord(map_id, tx, int(row), int(col), scene_rel, gain_rel))
    records.sort(key=lambda r: (r.map_id, r.tx_index))
    return DatasetIndex(str(root), split, tuple(records), tuple(chosen), layout.grid_n, layout.encode)


def load_radiomapseer_record(index: DatasetIndex, record: DatasetRecord, layout=None):
    """Materialize a RadioMapSeer record as (EnvironmentScene, gray map)."""
    layout = layout or RadioMapSeerLayout()
    root = Path(index.root)
    static = (_read_gray_png(root / record.scene_path) > 127).astype(np.uint8)
    if layout.cars_tpl:
        cars = (_read_gray_png(root / layout.cars_tpl.format(map_id=record.map_id)) > 127).astype(np.uint8)
        cars = cars & ~static  # a cell cannot be both building interior and vehicle
    else:
        cars = np.zeros_like(static)
    gray = _read_gray_png(root / record.gain_path).astype(np.float64) / 255.0
    scene = EnvironmentScene(static, cars, BaseStation(record.bs_row, record.bs_col), index.n)
    return scene, gray
