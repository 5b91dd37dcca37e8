"""Hand-patch extraction and the rigid HOG template fed to exemplar SVMs.

Geometry: 64x64 canonical grayscale patches, 8x8-pixel cells, 9 unsigned
orientation bins (centres at 0, 20, ..., 160 degrees, linear vote between the
two nearest bins), 2x2-cell blocks with stride one cell, L2-Hys block
normalisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATCH_SIZE = 64
CELL = 8
BINS = 9
BLOCK = 2
EPS = 1e-5
HYS_CLIP = 0.2

N_CELLS = PATCH_SIZE // CELL
N_BLOCKS = N_CELLS - BLOCK + 1
HOG_DIM = N_BLOCKS * N_BLOCKS * BLOCK * BLOCK * BINS

LUMA = np.array([0.299, 0.587, 0.114])


class UnobservableHand(ValueError):
    """Raised when a hand window does not intersect the image at all."""


@dataclass
class HogTemplate:
    cells_x: int
    cells_y: int
    bins: int
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def to_gray(image) -> np.ndarray:
    """Float grayscale in [0, 1] from a uint8/float, 2-D or RGB(A) array."""
    img = np.asarray(image)
    scale = 255.0 if img.dtype == np.uint8 else 1.0
    img = img.astype(float) / scale
    if img.ndim == 3:
        img = img[..., :3] @ LUMA
    return np.clip(img, 0.0, 1.0)


def _sample_bilinear(image, xs, ys):
    """Bilinear lookup at continuous pixel coordinates, replicating edges."""
    h, w = image.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros_like(xs, dtype=int)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros_like(ys, dtype=int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def patch_sample_grid(window, size=PATCH_SIZE):
    """Image-space x and y coordinates of the size x size patch samples."""
    x0, y0, _, _ = window.bounds
    step = window.side / size
    offs = (np.arange(size) + 0.5) * step
    return x0 + offs, y0 + offs


def extract_patch(image, window, size=PATCH_SIZE) -> np.ndarray:
    """Resample the window contents to a ``size`` x ``size`` patch.

    Pixel (r, c) of the image is taken to sit at continuous coordinate
    (x=c, y=r). Samples falling outside the image repeat the nearest edge.
    A 2-D float image is used as is; anything else goes through :func:`to_gray`.
    """
    img = image if _is_gray_float(image) else to_gray(image)
    h, w = img.shape
    x0, y0, x1, y1 = window.bounds
    if x1 < 0 or y1 < 0 or x0 > w - 1 or y0 > h - 1:
        raise UnobservableHand(f"window {window.bounds} lies outside the {w}x{h} image")
    xs, ys = patch_sample_grid(window, size)
    gx, gy = np.meshgrid(xs, ys)
    return _sample_bilinear(img, gx, gy)


def _is_gray_float(image):
    return isinstance(image, np.ndarray) and image.ndim == 2 and image.dtype == np.float64


def _gradients(patch):
    p = np.pad(patch, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return gx, gy


def _block_normalize(v):
    v = v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + EPS**2)
    v = np.minimum(v, HYS_CLIP)
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True) + EPS**2)


_r, _c = np.indices((PATCH_SIZE, PATCH_SIZE))
# first histogram slot of the cell each patch pixel votes into
_CELL_OF_PIXEL = ((_r // CELL) * N_CELLS + (_c // CELL)) * BINS


def hog(patch) -> HogTemplate:
    """HOG descriptor of a canonical patch."""
    patch = np.asarray(patch, dtype=float)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ValueError(f"hog expects a {PATCH_SIZE}x{PATCH_SIZE} patch, got {patch.shape}")
    gx, gy = _gradients(patch)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    width = 180.0 / BINS
    pos = ang / width
    lo = np.floor(pos).astype(int) % BINS
    hi = (lo + 1) % BINS
    frac = pos - np.floor(pos)

    n = N_CELLS * N_CELLS * BINS
    cells = np.bincount((_CELL_OF_PIXEL + lo).ravel(), (mag * (1 - frac)).ravel(), minlength=n)
    cells += np.bincount((_CELL_OF_PIXEL + hi).ravel(), (mag * frac).ravel(), minlength=n)
    cells = cells.reshape(N_CELLS, N_CELLS, BINS)

    blocks = np.stack(
        [cells[i : i + N_BLOCKS, j : j + N_BLOCKS] for i in range(BLOCK) for j in range(BLOCK)],
        axis=2,
    ).reshape(N_BLOCKS, N_BLOCKS, BLOCK * BLOCK * BINS)
    values = _block_normalize(blocks).ravel()
    return HogTemplate(N_CELLS, N_CELLS, BINS, values)


def window_hog(image, window) -> np.ndarray:
    return hog(extract_patch(image, window)).values
