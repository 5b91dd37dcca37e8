"""Exemplar SVMs: one linear classifier per positive hand patch.

Each exemplar is trained against a pool of background windows with
hard-negative mining, then given a sigmoid calibration so that scores of
different exemplars can be compared. At test time only matches whose window
overlaps the nominal hand window by more than ``OVERLAP_MIN`` count.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .linsvm import fit_linear_svm

OVERLAP_MIN = 0.4
LOGIT_CLIP = 36.0

OBJECT_LABELS = ("none", "cellphone", "other")
HAND_SIDES = ("left", "right")

MAGIC = b"ESVM1"


class CalibrationError(ValueError):
    pass


@dataclass
class MiningConfig:
    c_pos: float = 50.0
    c_neg: float = 0.01
    rounds: int = 3
    cache_cap: int = 2000
    initial_negatives: int = 200
    tol: float = 1e-4
    max_epochs: int = 2000
    seed: int = 0


@dataclass
class ExemplarSvm:
    weights: np.ndarray
    bias: float
    source_id: str
    hand_side: str
    object_label: str
    platt_a: float = 1.0
    platt_b: float = 0.0
    # sizes of the hard-negative cache after each training round
    mining_history: list = field(default_factory=list, compare=False, repr=False)

    def raw_score(self, x):
        return np.asarray(x) @ self.weights + self.bias

    def calibrated(self, raw):
        return sigmoid(self.platt_a * np.asarray(raw, float) + self.platt_b)

    @property
    def key(self):
        return (self.source_id, self.hand_side)


@dataclass(frozen=True)
class MatchScore:
    raw: float
    calibrated: float
    overlap: float


def sigmoid(z):
    z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def _as_matrix(vectors):
    if hasattr(vectors, "values") and not isinstance(vectors, np.ndarray):
        vectors = vectors.values
    m = np.asarray(vectors, dtype=float)
    return m[None, :] if m.ndim == 1 else m


def train_exemplar(positive, negatives, config=None, source_id="", hand_side="right",
                   object_label="none") -> ExemplarSvm:
    """Train one exemplar SVM with hard-negative mining over ``negatives``."""
    cfg = config or MiningConfig()
    pos = _as_matrix(positive)[0]
    pool = _as_matrix(negatives)
    if len(pool) == 0:
        raise ValueError("negative pool is empty")
    if object_label not in OBJECT_LABELS:
        raise ValueError(f"unknown object label {object_label!r}")

    rng = np.random.default_rng(cfg.seed)
    n0 = min(cfg.initial_negatives, cfg.cache_cap, len(pool))
    cache = list(rng.choice(len(pool), size=n0, replace=False))
    in_cache = np.zeros(len(pool), bool)
    in_cache[cache] = True
    history = [len(cache)]
    alpha = None
    fit = None
    for rnd in range(cfg.rounds + 1):
        X = np.vstack([pos[None, :], pool[cache]])
        y = np.concatenate([[1.0], -np.ones(len(cache))])
        C = np.concatenate([[cfg.c_pos], np.full(len(cache), cfg.c_neg)])
        if alpha is not None:
            alpha = np.concatenate([alpha, np.zeros(len(cache) + 1 - len(alpha))])
        fit = fit_linear_svm(X, y, C, alpha0=alpha, tol=cfg.tol, max_epochs=cfg.max_epochs,
                             seed=cfg.seed + rnd)
        alpha = fit.alpha
        if rnd == cfg.rounds:
            break
        scores = fit.decision(pool)
        hard = np.flatnonzero((scores > -1.0) & ~in_cache)
        room = cfg.cache_cap - len(cache)
        if len(hard) == 0 or room <= 0:
            history.append(len(cache))
            break
        hard = hard[np.argsort(-scores[hard], kind="stable")][:room]
        cache.extend(hard.tolist())
        in_cache[hard] = True
        history.append(len(cache))
    return ExemplarSvm(fit.weights, fit.bias, str(source_id), hand_side, object_label,
                       mining_history=history)


def fit_platt(scores, labels, max_iter=100):
    """Maximum-likelihood sigmoid fit p = sigmoid(a*s + b), Platt's smoothed targets.

    Newton iterations with backtracking, following the robust variant of
    Lin, Lin and Weng (2007). Returns ``(a, b)``.
    """
    s = np.asarray(scores, float)
    lab = np.asarray(labels).astype(bool)
    n_pos = int(lab.sum())
    n_neg = len(lab) - n_pos
    t = np.where(lab, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def nll(a, b):
        z = a * s + b
        # log(1 + exp(-z)) and log(1 + exp(z)) written stably
        return float(np.sum(t * np.logaddexp(0, -z) + (1 - t) * np.logaddexp(0, z)))

    a, b = 0.0, float(np.log((n_pos + 1.0) / (n_neg + 1.0)))
    f = nll(a, b)
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(a * s + b)))
        d1 = p - t
        d2 = np.maximum(p * (1 - p), 1e-12)
        g = np.array([np.dot(d1, s), d1.sum()])
        H = np.array([[np.dot(d2, s * s), np.dot(d2, s)], [np.dot(d2, s), d2.sum()]])
        H += 1e-12 * np.eye(2)
        if np.max(np.abs(g)) < 1e-8:
            break
        step = np.linalg.solve(H, -g)
        lam = 1.0
        while lam > 1e-10:
            a2, b2 = a + lam * step[0], b + lam * step[1]
            f2 = nll(a2, b2)
            if f2 < f + 1e-4 * lam * np.dot(g, step):
                break
            lam *= 0.5
        else:
            break
        a, b, f = a2, b2, f2
    return a, b


def calibrate(svm: ExemplarSvm, calib_pos, calib_neg) -> ExemplarSvm:
    """Return a copy of ``svm`` carrying a Platt sigmoid fitted on raw scores."""
    pos = _as_matrix(calib_pos)
    neg = _as_matrix(calib_neg)
    if len(pos) < 5 or len(neg) < 5:
        if len(pos) == 0 or len(neg) == 0:
            raise CalibrationError("calibration set contains a single class")
        raise CalibrationError("need at least 5 calibration points per class")
    scores = np.concatenate([svm.raw_score(pos), svm.raw_score(neg)])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    a, b = fit_platt(scores, labels)
    if not a > 0:
        # positives do not outscore negatives; keep the map increasing and refit the offset
        a = 1e-6
        b = float(np.log((len(pos) + 1.0) / (len(neg) + 1.0)))
    return replace(svm, platt_a=float(a), platt_b=float(b))


def score_patch(svm: ExemplarSvm, patch, overlap=1.0):
    """Match score of one exemplar on one descriptor, or ``None`` when the
    placement's overlap with the nominal window is not above ``OVERLAP_MIN``."""
    x = _as_matrix(patch)[0]
    if x.shape[0] != svm.weights.shape[0]:
        raise ValueError(f"descriptor length {x.shape[0]} != exemplar length {svm.weights.shape[0]}")
    if not overlap > OVERLAP_MIN:
        return None
    raw = float(svm.raw_score(x))
    return MatchScore(raw, float(svm.calibrated(raw)), float(overlap))


def window_iou(a, b):
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.side**2 + b.side**2 - inter
    return inter / union if union > 0 else 0.0


def search_placements(window, radius=4.0, step=2.0):
    """Shifted copies of ``window`` on a square pixel grid, with their IoU."""
    offs = np.arange(-radius, radius + 1e-9, step)
    out = []
    for dy in offs:
        for dx in offs:
            w = window.shifted(float(dx), float(dy))
            out.append((w, window_iou(w, window)))
    return out


class Ensemble:
    """An ordered collection of exemplar SVMs with a stacked scoring matrix."""

    def __init__(self, members):
        self.members = list(members)
        self._index = {m.key: i for i, m in enumerate(self.members)}
        if len(self._index) != len(self.members):
            raise ValueError("duplicate (source_id, hand_side) in ensemble")
        if self.members:
            self.W = np.vstack([m.weights for m in self.members])
            self.b = np.array([m.bias for m in self.members])
            self.pa = np.array([m.platt_a for m in self.members])
            self.pb = np.array([m.platt_b for m in self.members])

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def get(self, source_id, hand_side):
        i = self._index.get((str(source_id), hand_side))
        return None if i is None else self.members[i]

    def subset(self, source_ids, hand_side=None):
        keep = []
        for sid in source_ids:
            for side in HAND_SIDES if hand_side is None else (hand_side,):
                m = self.get(sid, side)
                if m is not None:
                    keep.append(m)
        return Ensemble(keep)

    def calibrated_scores(self, descriptors, overlaps=None):
        """Per-member best calibrated score over a set of placements.

        ``descriptors`` is (P, d); placements with overlap <= ``OVERLAP_MIN``
        are ignored. Members with no retained placement score 0.
        """
        D = _as_matrix(descriptors)
        ov = np.ones(len(D)) if overlaps is None else np.asarray(overlaps, float)
        keep = ov > OVERLAP_MIN
        if not len(self) or not keep.any():
            return np.zeros(len(self))
        raw = D[keep] @ self.W.T + self.b
        return sigmoid(raw * self.pa + self.pb).max(axis=0)

    def member_scores(self, keys, descriptors, overlaps=None):
        """Like :meth:`calibrated_scores` but only for the members named by
        ``keys`` (source_id, hand_side), in that order; unknown keys score 0."""
        rows = [self._index.get((str(s), h), -1) for s, h in keys]
        out = np.zeros(len(rows))
        have = np.array([r >= 0 for r in rows], bool)
        if not have.any():
            return out
        D = _as_matrix(descriptors)
        ov = np.ones(len(D)) if overlaps is None else np.asarray(overlaps, float)
        keep = ov > OVERLAP_MIN
        if not keep.any():
            return out
        idx = np.array(rows)[have]
        raw = D[keep] @ self.W[idx].T + self.b[idx]
        out[have] = sigmoid(raw * self.pa[idx] + self.pb[idx]).max(axis=0)
        return out


def best_match(ensemble, patch, overlap=1.0):
    """Winning exemplar and its match score, or ``None`` if every match is rejected."""
    members = list(ensemble)
    if not members:
        raise ValueError("ensemble is empty")
    best = None
    for m in members:
        s = score_patch(m, patch, overlap)
        if s is None:
            continue
        if best is None or s.calibrated > best[1].calibrated:
            best = (m, s)
    if best is None:
        return None
    return best[0].key, best[1]


# -- ESVM1 codec ----------------------------------------------------------------

def _write_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_str(buf):
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def dumps_ensemble(members) -> bytes:
    buf = io.BytesIO()
    members = list(members)
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(members)))
    for m in members:
        _write_str(buf, m.source_id)
        buf.write(struct.pack("<BB", HAND_SIDES.index(m.hand_side), OBJECT_LABELS.index(m.object_label)))
        w = np.ascontiguousarray(m.weights, dtype="<f8")
        buf.write(struct.pack("<I", len(w)))
        buf.write(w.tobytes())
        buf.write(struct.pack("<ddd", m.bias, m.platt_a, m.platt_b))
    return buf.getvalue()


def loads_ensemble(data: bytes) -> Ensemble:
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise ValueError("not an ESVM1 file")
    (count,) = struct.unpack("<I", buf.read(4))
    members = []
    for _ in range(count):
        sid = _read_str(buf)
        side, lab = struct.unpack("<BB", buf.read(2))
        (n,) = struct.unpack("<I", buf.read(4))
        w = np.frombuffer(buf.read(8 * n), dtype="<f8").astype(float)
        bias, pa, pb = struct.unpack("<ddd", buf.read(24))
        members.append(ExemplarSvm(w, bias, sid, HAND_SIDES[side], OBJECT_LABELS[lab], pa, pb))
    return Ensemble(members)


def save_ensemble(path, members):
    with open(path, "wb") as fh:
        fh.write(dumps_ensemble(members))


def load_ensemble(path) -> Ensemble:
    with open(path, "rb") as fh:
        return loads_ensemble(fh.read())
