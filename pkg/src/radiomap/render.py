"""Heatmap rendering with a color ramp baked into the repo.

The ramp is fixed here (not pulled from a plotting library) so rendered maps
stay byte-comparable across environments and versions. Luminance increases
monotonically with gray value.
"""

import numpy as np
from PIL import Image

# anchor positions in [0, 1] and their RGB values; linearly interpolated
_RAMP_POS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_RAMP_RGB = np.array(
    [
        [0, 0, 4],
        [81, 18, 124],
        [183, 55, 121],
        [252, 136, 97],
        [252, 253, 191],
    ],
    dtype=np.float64,
)


def render_heatmap(gray) -> np.ndarray:
    """Map a gray grid in [0, 1] to an (N, N, 3) uint8 heatmap."""
    g = np.clip(np.asarray(gray, dtype=np.float64), 0.0, 1.0)
    channels = [np.interp(g, _RAMP_POS, _RAMP_RGB[:, k]) for k in range(3)]
    return np.stack(channels, axis=-1).round().astype(np.uint8)


def save_heatmap(gray, path):
    Image.fromarray(render_heatmap(gray), mode="RGB").save(path)


def save_gray(gray, path):
    """Persist a gray grid as an 8-bit raster."""
    g = np.clip(np.asarray(gray, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(g * 255.0).astype(np.uint8), mode="L").save(path)
