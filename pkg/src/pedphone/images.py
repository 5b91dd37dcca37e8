"""Frame image reading and writing (8-bit PNG or PPM/PGM)."""
from __future__ import annotations

import numpy as np
from PIL import Image

from .hog import to_gray


def load_gray(path) -> np.ndarray:
    """Float grayscale image in [0, 1]; colour input uses 0.299/0.587/0.114 luma."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return to_gray(arr)


def to_uint8(gray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(gray, float) * 255.0), 0, 255).astype(np.uint8)


def save_gray(path, gray):
    arr = gray if np.asarray(gray).dtype == np.uint8 else to_uint8(gray)
    Image.fromarray(np.asarray(arr), mode="L").save(path)
