"""Evaluation measures: PCK, confusion matrices, hand-window containment, timelines."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .pose import ARM_JOINTS, JOINT_NAMES, PedestrianBox, hand_window, locate_hand

N_CLASSES = 3
TABLE_ALPHAS = (0.05, 0.07, 0.10, 0.12, 0.15, 0.20)


@dataclass(frozen=True)
class PckConfig:
    threshold_ratio: float = 0.1

    def __post_init__(self):
        if not self.threshold_ratio > 0:
            raise ValueError("threshold_ratio must be positive")


def _heights(boxes, n):
    h = np.array([b.h if isinstance(b, PedestrianBox) else float(b) for b in boxes], float)
    if len(h) != n:
        raise ValueError(f"{len(h)} boxes for {n} poses")
    return h


def pck(predicted, truth, boxes, cfg: PckConfig = PckConfig()):
    """Per-joint fraction of frames within ``threshold_ratio`` x box height.

    ``boxes`` may be :class:`PedestrianBox` objects or plain heights. Joint
    order is head, neck, right shoulder/elbow/wrist, left shoulder/elbow/wrist.
    """
    p = np.asarray(predicted, float)
    t = np.asarray(truth, float)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} differs from truth {t.shape}")
    if p.ndim != 3 or p.shape[1:] != (len(JOINT_NAMES), 2):
        raise ValueError("poses must be (T, 8, 2)")
    h = _heights(boxes, len(p))
    d = np.linalg.norm(p - t, axis=2)
    return (d <= cfg.threshold_ratio * h[:, None]).mean(axis=0)


@dataclass
class ClassificationReport:
    confusion: np.ndarray  # rows truth, columns predicted
    per_class: np.ndarray
    overall: float


def confusion_and_accuracy(pred, truth, n_classes=N_CLASSES) -> ClassificationReport:
    pred = np.asarray(pred, int)
    truth = np.asarray(truth, int)
    if len(pred) != len(truth):
        raise ValueError("prediction and truth lengths differ")
    if len(truth) == 0:
        raise ValueError("no samples")
    cm = np.zeros((n_classes, n_classes), int)
    np.add.at(cm, (truth, pred), 1)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(cm) / np.maximum(support, 1), np.nan)
    return ClassificationReport(cm, per_class, float(np.trace(cm) / cm.sum()))


def window_centre(joints, side, centering="hand", ratio=5 / 6):
    elb, wri = ARM_JOINTS[side]
    if centering == "wrist":
        return np.asarray(joints[wri], float)
    if centering == "hand":
        return locate_hand(joints[elb], joints[wri], ratio)
    raise ValueError(f"unknown centering {centering!r}")


def hand_inside(box, joints, side, hand_point, alpha, centering="hand"):
    x0, y0, x1, y1 = hand_window(box, window_centre(joints, side, centering), alpha, side).bounds
    hx, hy = hand_point
    return bool(x0 <= hx <= x1 and y0 <= hy <= y1)


def window_containment_sweep(records, alphas=TABLE_ALPHAS, centerings=("wrist", "hand")):
    """Fraction of annotated hands inside the predicted window, per centering and alpha.

    Returns ``{centering: np.array(len(alphas))}``. Records without hand
    points are skipped; it is an error if none have them.
    """
    cases = [(r.box, r.joints, side, pt) for r in records if r.hands for side, pt in r.hands.items()]
    if not cases:
        raise ValueError("no records carry hand ground-truth points")
    out = {}
    for c in centerings:
        out[c] = np.array([
            np.mean([hand_inside(b, j, s, p, a, c) for b, j, s, p in cases]) for a in alphas
        ])
    return out


@dataclass
class Timeline:
    frames: np.ndarray
    truth: np.ndarray
    pred: np.ndarray

    @property
    def agreement(self):
        return float(np.mean(self.truth == self.pred))

    def to_csv(self):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "truth", "pred"])
        w.writerows(zip(self.frames.tolist(), self.truth.tolist(), self.pred.tolist()))
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def sequence_timeline(pred, truth, frames=None) -> Timeline:
    pred = np.asarray(pred, int)
    truth = np.asarray(truth, int)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    frames = np.arange(len(truth)) if frames is None else np.asarray(frames, int)
    return Timeline(frames, truth, pred)


def parse_timeline(text) -> Timeline:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["frame", "truth", "pred"]:
        raise ValueError("timeline CSV must start with the header frame,truth,pred")
    body = np.array(rows[1:], dtype=int).reshape(-1, 3)
    return Timeline(body[:, 0], body[:, 1], body[:, 2])


def load_timeline(path) -> Timeline:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_timeline(fh.read())


def write_table(path, header, rows):
    """Plain CSV table, UTF-8 with LF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
