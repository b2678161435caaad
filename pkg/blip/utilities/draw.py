from typing import Tuple

import numpy as np
from PIL import Image

def normalize_map(array: np.ndarray, bounds: Tuple[float, float] = None) -> np.ndarray:
    """Scales a real map to 8 bit gray levels, undefined values become black."""
    array = np.asarray(array)
    array = np.abs(array) if np.iscomplexobj(array) else array.astype(np.float64)
    finite = np.isfinite(array)
    if bounds is None:
        if not np.any(finite):
            return np.zeros(array.shape, dtype=np.uint8)
        bounds = (float(np.min(array[finite])), float(np.max(array[finite])))
    low, high = bounds
    scale = 255.0 / (high - low) if high > low else 0.0
    levels = np.clip((np.where(finite, array, low) - low) * scale, 0, 255)
    return np.round(levels).astype(np.uint8)

def map_image(array: np.ndarray, bounds: Tuple[float, float] = None) -> Image.Image:
    return Image.fromarray(normalize_map(array, bounds))

def write_map(storage, name: str, array: np.ndarray, bounds: Tuple[float, float] = None):
    with storage.write(name, binary=True) as handle:
        map_image(array, bounds).save(handle, format="PNG")
