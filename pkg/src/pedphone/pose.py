"""Upper-body pose descriptors and hand-window localization.

Joints are always stored in the canonical order given by ``JOINT_NAMES``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JOINT_NAMES = (
    "head",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
)
N_JOINTS = 8
HEAD, NECK, R_SHO, R_ELB, R_WRI, L_SHO, L_ELB, L_WRI = range(N_JOINTS)

# (i, j, k): interior angle measured at j
ANGLE_TRIPLETS = (
    (HEAD, NECK, R_SHO),
    (HEAD, NECK, L_SHO),
    (NECK, R_SHO, R_ELB),
    (R_SHO, R_ELB, R_WRI),
    (NECK, L_SHO, L_ELB),
    (L_SHO, L_ELB, L_WRI),
    (R_SHO, NECK, L_SHO),
)
FEATURE_DIM = 2 * N_JOINTS + len(ANGLE_TRIPLETS)

DEFAULT_HAND_RATIO = 5.0 / 6.0
DEFAULT_ALPHA = 0.1

# elbow/wrist joint indices per hand side
ARM_JOINTS = {"left": (L_ELB, L_WRI), "right": (R_ELB, R_WRI)}


@dataclass(frozen=True)
class PedestrianBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w}, h={self.h}")

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class HandWindow:
    cx: float
    cy: float
    side: float
    hand_side: str = "right"

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("window side must be positive")

    @property
    def bounds(self):
        """(x0, y0, x1, y1) of the square window."""
        half = 0.5 * self.side
        return (self.cx - half, self.cy - half, self.cx + half, self.cy + half)

    def shifted(self, dx, dy, scale=1.0):
        return HandWindow(self.cx + dx, self.cy + dy, self.side * scale, self.hand_side)


def as_joints(pose) -> np.ndarray:
    """Validate and return an (8, 2) float array of joint coordinates."""
    joints = np.asarray(pose, dtype=float)
    if joints.shape != (N_JOINTS, 2):
        raise ValueError(f"expected 8 joints of shape (8, 2), got {joints.shape}")
    if not np.all(np.isfinite(joints)):
        raise ValueError("joint coordinates must be finite")
    return joints


def locate_hand(elbow, wrist, r=DEFAULT_HAND_RATIO):
    """Extrapolate the hand position along the elbow->wrist line.

    With ``r < 1`` the returned point lies beyond the wrist.
    """
    if r == 0:
        raise ValueError("hand ratio r must be non-zero")
    ex, ey = elbow
    wx, wy = wrist
    return (ex + (wx - ex) / r, ey + (wy - ey) / r)


def hand_window(box: PedestrianBox, hand, alpha=DEFAULT_ALPHA, hand_side="right") -> HandWindow:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return HandWindow(float(hand[0]), float(hand[1]), alpha * box.h, hand_side)


def hand_windows(box, pose, r=DEFAULT_HAND_RATIO, alpha=DEFAULT_ALPHA):
    """Both hand windows of a pedestrian, keyed by hand side."""
    joints = as_joints(pose)
    out = {}
    for side, (e, w) in ARM_JOINTS.items():
        out[side] = hand_window(box, locate_hand(joints[e], joints[w], r), alpha, side)
    return out


def joint_angles(joints: np.ndarray) -> np.ndarray:
    """Interior angles (radians, in [0, pi]) for every triplet in ``ANGLE_TRIPLETS``.

    A triplet with a zero-length leg gets angle 0.
    """
    tri = np.asarray(ANGLE_TRIPLETS)
    a = joints[tri[:, 0]] - joints[tri[:, 1]]
    b = joints[tri[:, 2]] - joints[tri[:, 1]]
    na = np.hypot(a[:, 0], a[:, 1])
    nb = np.hypot(b[:, 0], b[:, 1])
    ok = (na > 0) & (nb > 0)
    # atan2 of cross/dot is better conditioned than arccos near 0 and pi
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]
    ang = np.abs(np.arctan2(cross, dot))
    return np.where(ok, ang, 0.0)


def encode_pose(box: PedestrianBox, pose) -> np.ndarray:
    """23-dim pose descriptor: box-normalized joint coordinates then angles / pi."""
    joints = as_joints(pose)
    coords = np.empty_like(joints)
    coords[:, 0] = (joints[:, 0] - box.x) / box.w
    coords[:, 1] = (joints[:, 1] - box.y) / box.h
    return np.concatenate([coords.ravel(), joint_angles(joints) / np.pi])


def decode_joints(feature, box: PedestrianBox) -> np.ndarray:
    """Map the coordinate part of a pose descriptor back to image space."""
    f = np.asarray(feature, dtype=float)
    coords = f[..., : 2 * N_JOINTS].reshape(f.shape[:-1] + (N_JOINTS, 2))
    out = np.empty_like(coords)
    out[..., 0] = coords[..., 0] * box.w + box.x
    out[..., 1] = coords[..., 1] * box.h + box.y
    return out
