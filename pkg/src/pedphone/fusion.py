"""Combining pose prior, hand evidence and gaze evidence into an activity label.

Two decision rules are offered: the MAP product of the three cue likelihoods
and a one-vs-all linear SVM over the 9-length cue vector
``[gaze(0..2), hand(0..2), prior(0..2)]``.
"""
from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .linsvm import fit_linear_svm

N_CLASSES = 3
CUE_GROUPS = ("gaze", "hand", "prior")
MAGIC = b"FUSE1"
DEFAULT_REFRESH = 50


@dataclass
class CueScores:
    gaze: np.ndarray
    hand: np.ndarray
    prior: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.gaze, self.hand, self.prior]).astype(float)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, float)
        if v.shape != (3 * N_CLASSES,):
            raise ValueError("cue vector must have 9 entries")
        return cls(v[0:3].copy(), v[3:6].copy(), v[6:9].copy())


def pose_prior(neighbors, y) -> float:
    """Fraction of the neighbours labelled ``y``."""
    acts = neighbors.activities
    return float(np.count_nonzero(acts == y)) / len(acts)


def prior_scores(neighbors) -> np.ndarray:
    acts = neighbors.activities
    return np.bincount(acts, minlength=N_CLASSES)[:N_CLASSES] / len(acts)


def hand_likelihood(left, right, neighbors, y) -> float:
    """Hand evidence for class ``y``.

    ``left`` and ``right`` hold, per neighbour, the calibrated match score of
    that neighbour's left/right exemplar on the query's left/right hand
    (0 for rejected matches). Empty maxima are 0.
    """
    pl = np.asarray(left, float)
    pr = np.asarray(right, float)
    acts = neighbors.activities
    same = acts == y
    if not same.any():
        return 0.0
    if y == 0:
        return float(min(pl[same].max(), pr[same].max()))
    lphone = np.array([e.left_object == "cellphone" for e in neighbors.exemplars])
    rphone = np.array([e.right_object == "cellphone" for e in neighbors.exemplars])
    terms = pl * lphone + pr * rphone
    return float(terms[same].max())


def hand_scores(left, right, neighbors) -> np.ndarray:
    return np.array([hand_likelihood(left, right, neighbors, y) for y in range(N_CLASSES)])


def map_classify(cues: CueScores):
    """MAP label and the three unnormalised posteriors gaze*hand*prior.

    Ties go to the smaller label; an all-zero posterior falls back to the prior.
    """
    post = np.asarray(cues.gaze, float) * np.asarray(cues.hand, float) * np.asarray(cues.prior, float)
    if not np.any(post > 0):
        return int(np.argmax(cues.prior)), post
    return int(np.argmax(post)), post


@dataclass
class FusionSvm:
    mean: np.ndarray
    std: np.ndarray
    weights: np.ndarray  # (3, 9)
    biases: np.ndarray  # (3,)

    def margins(self, vectors):
        X = (np.atleast_2d(np.asarray(vectors, float)) - self.mean) / self.std
        return X @ self.weights.T + self.biases


def cue_mask(cues=CUE_GROUPS) -> np.ndarray:
    mask = np.zeros(3 * N_CLASSES, bool)
    for c in cues:
        g = CUE_GROUPS.index(c)
        mask[3 * g : 3 * g + 3] = True
    return mask


def train_fusion_svm(vectors, labels, C=1.0, cues=CUE_GROUPS, seed=0) -> FusionSvm:
    """One-vs-all linear SVMs on standardised cue vectors.

    Only the cue groups named in ``cues`` are used; the weights of the others
    stay at zero.
    """
    X = np.asarray(vectors, float)
    y = np.asarray(labels, int)
    mask = cue_mask(cues)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    mean[~mask] = 0.0
    std[~mask] = 1.0
    Z = ((X - mean) / std)[:, mask]
    W = np.zeros((N_CLASSES, X.shape[1]))
    b = np.zeros(N_CLASSES)
    for c in range(N_CLASSES):
        t = np.where(y == c, 1.0, -1.0)
        fit = fit_linear_svm(Z, t, C, tol=1e-4, max_epochs=20000, seed=seed + c)
        W[c, mask] = fit.weights
        b[c] = fit.bias
    return FusionSvm(mean, std, W, b)


def fusion_classify(svm: FusionSvm, cues):
    v = cues.vector() if isinstance(cues, CueScores) else np.asarray(cues, float)
    m = svm.margins(v)[0]
    return int(np.argmax(m)), m


def stratified_folds(labels, folds, seed=0) -> np.ndarray:
    """Fold index per sample; each class is dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), int)
    start = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (start + np.arange(len(idx))) % folds
        start += len(idx)
    return fold


@dataclass
class FusionTraining:
    vectors: np.ndarray
    labels: np.ndarray
    fold: np.ndarray
    # ids each sample's cues were allowed to see
    visible_ids: list


def build_fusion_training(exemplars, k, compute_cues, folds=5, seed=0) -> FusionTraining:
    """Cross-validated cue vectors for every training exemplar.

    ``compute_cues(exemplar, pool, k)`` must derive cues using only the
    exemplars in ``pool``, which never contains the query's own fold.
    """
    exemplars = list(exemplars)
    labels = np.array([e.activity for e in exemplars])
    fold = stratified_folds(labels, folds, seed)
    vectors = np.zeros((len(exemplars), 3 * N_CLASSES))
    visible = [None] * len(exemplars)
    for f in range(folds):
        held = np.flatnonzero(fold == f)
        pool = [exemplars[i] for i in np.flatnonzero(fold != f)]
        if k > len(pool):
            raise ValueError(f"k={k} exceeds the {len(pool)} exemplars outside fold {f}")
        missing = set(range(N_CLASSES)) - {e.activity for e in pool}
        if missing:
            warnings.warn(f"fold {f}: classes {sorted(missing)} absent from the training pool")
        pool_ids = frozenset(e.id for e in pool)
        for i in held:
            vectors[i] = compute_cues(exemplars[i], pool, k).vector()
            visible[i] = pool_ids
    return FusionTraining(vectors, labels, fold, visible)


def sequential_classify(frames, hand_fn, period=DEFAULT_REFRESH, fusion_svm=None):
    """Per-frame labels reusing cached hand evidence.

    ``frames`` yields a ``(gaze, prior)`` pair of 3-vectors per frame; ``hand_fn(t)``
    recomputes the hand evidence and is called whenever the cache is ``period``
    frames old (or empty). Returns ``(labels, n_hand_evaluations)``.
    """
    if period < 1:
        raise ValueError("refresh period must be >= 1")
    labels = []
    cached = None
    stamp = None
    calls = 0
    for t, (gaze, prior) in enumerate(frames):
        if cached is None or t - stamp >= period:
            cached = np.asarray(hand_fn(t), float)
            stamp = t
            calls += 1
        cues = CueScores(np.asarray(gaze, float), cached, np.asarray(prior, float))
        if fusion_svm is None:
            labels.append(map_classify(cues)[0])
        else:
            labels.append(fusion_classify(fusion_svm, cues)[0])
    return labels, calls


def expected_refreshes(n_frames, period=DEFAULT_REFRESH):
    return math.ceil(n_frames / period)


# -- FUSE1 codec -----------------------------------------------------------------

def dumps_fusion(svm: FusionSvm) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(np.ascontiguousarray(svm.mean, "<f8").tobytes())
    buf.write(np.ascontiguousarray(svm.std, "<f8").tobytes())
    for c in range(N_CLASSES):
        buf.write(np.ascontiguousarray(svm.weights[c], "<f8").tobytes())
        buf.write(struct.pack("<d", svm.biases[c]))
    return buf.getvalue()


def loads_fusion(data: bytes) -> FusionSvm:
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not a FUSE1 file")
    n = 3 * N_CLASSES
    expected = len(MAGIC) + 8 * (2 * n + N_CLASSES * (n + 1))
    if len(data) != expected:
        raise ValueError(f"FUSE1 payload has {len(data)} bytes, expected {expected}")
    vals = np.frombuffer(data[len(MAGIC):], dtype="<f8").astype(float)
    mean, std = vals[:n], vals[n : 2 * n]
    rows = vals[2 * n :].reshape(N_CLASSES, n + 1)
    return FusionSvm(mean.copy(), std.copy(), rows[:, :n].copy(), rows[:, n].copy())


def save_fusion(path, svm):
    with open(path, "wb") as fh:
        fh.write(dumps_fusion(svm))


def load_fusion(path) -> FusionSvm:
    with open(path, "rb") as fh:
        return loads_fusion(fh.read())
