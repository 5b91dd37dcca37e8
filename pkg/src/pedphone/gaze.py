"""Gaze cue: class-conditional cosine similarity of 13x13 gaze heat-maps."""
from __future__ import annotations

import numpy as np

GAZE_SHAPE = (13, 13)
GAZE_DIM = GAZE_SHAPE[0] * GAZE_SHAPE[1]


def as_gaze(values) -> np.ndarray:
    g = np.asarray(values, dtype=float).ravel()
    if g.shape != (GAZE_DIM,):
        raise ValueError(f"gaze feature must have {GAZE_DIM} values, got {g.size}")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gaze values must be finite and non-negative")
    if not np.any(g > 0):
        raise ValueError("gaze feature is all zeros")
    return g


def gaze_likelihood(query, neighbors, y) -> float:
    """Best cosine similarity between ``query`` and the gaze of any neighbour
    labelled ``y``; 0 when no neighbour carries that label."""
    if len(neighbors) == 0:
        raise ValueError("neighbour set is empty")
    q = as_gaze(query)
    qn = q / np.linalg.norm(q)
    best = None
    for ex in neighbors.exemplars:
        if ex.activity != y:
            continue
        h = as_gaze(ex.gaze)
        c = float(qn @ (h / np.linalg.norm(h)))
        best = c if best is None else max(best, c)
    return 0.0 if best is None else best


def gaze_scores(query, neighbors) -> np.ndarray:
    return np.array([gaze_likelihood(query, neighbors, y) for y in range(3)])
