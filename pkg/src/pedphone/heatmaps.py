"""Per-joint score maps used as tracking measurements, and the HMAP1 codec.

A heat-map stack covers the pedestrian box: map pixel (u, v) is centred on
image point ``(x + (u + 0.5) * w / W, y + (v + 0.5) * h / H)`` unless an
explicit transform is supplied.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .pose import N_JOINTS, PedestrianBox, decode_joints

MAGIC = b"HMAP1"
LIKELIHOOD_FLOOR = 1e-6


@dataclass
class JointHeatmaps:
    maps: np.ndarray  # (8, H, W)
    box: PedestrianBox
    # image -> map: u = (x - origin_x) * scale_x - 0.5 ; likewise v
    origin: tuple = None
    scale: tuple = None

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=float)
        if self.maps.ndim != 3 or self.maps.shape[0] != N_JOINTS:
            raise ValueError(f"expected (8, H, W) heat-maps, got {self.maps.shape}")
        if not np.all(np.isfinite(self.maps)) or np.any(self.maps < 0):
            raise ValueError("heat-map scores must be finite and non-negative")
        _, H, W = self.maps.shape
        if self.origin is None:
            self.origin = (self.box.x, self.box.y)
        if self.scale is None:
            self.scale = (W / self.box.w, H / self.box.h)

    @property
    def shape(self):
        return self.maps.shape[1:]

    def to_map(self, pts):
        pts = np.asarray(pts, float)
        u = (pts[..., 0] - self.origin[0]) * self.scale[0] - 0.5
        v = (pts[..., 1] - self.origin[1]) * self.scale[1] - 0.5
        return u, v

    def to_image(self, u, v):
        x = (np.asarray(u, float) + 0.5) / self.scale[0] + self.origin[0]
        y = (np.asarray(v, float) + 0.5) / self.scale[1] + self.origin[1]
        return np.stack([x, y], axis=-1)

    def sample(self, joints, floor=LIKELIHOOD_FLOOR):
        """Bilinear heat-map value of every joint; (..., 8, 2) -> (..., 8).

        Joints outside the map, and values below ``floor``, are set to ``floor``.
        """
        u, v = self.to_map(joints)
        H, W = self.shape
        inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
        uc = np.clip(u, 0, W - 1)
        vc = np.clip(v, 0, H - 1)
        u0 = np.minimum(np.floor(uc).astype(int), max(W - 2, 0))
        v0 = np.minimum(np.floor(vc).astype(int), max(H - 2, 0))
        u1 = np.minimum(u0 + 1, W - 1)
        v1 = np.minimum(v0 + 1, H - 1)
        fu = uc - u0
        fv = vc - v0
        j = np.broadcast_to(np.arange(N_JOINTS), u.shape)
        m = self.maps
        val = (m[j, v0, u0] * (1 - fu) * (1 - fv) + m[j, v0, u1] * fu * (1 - fv)
               + m[j, v1, u0] * (1 - fu) * fv + m[j, v1, u1] * fu * fv)
        return np.where(inside, np.maximum(val, floor), floor)

    def likelihood_of_joints(self, joints, floor=LIKELIHOOD_FLOOR):
        return np.prod(self.sample(joints, floor), axis=-1)

    def log_likelihood(self, features, floor=LIKELIHOOD_FLOOR):
        """Log of the joint-score product for pose descriptors in this box."""
        joints = decode_joints(features, self.box)
        return np.sum(np.log(self.sample(joints, floor)), axis=-1)

    def argmax_joints(self):
        """Image position of each map's peak (the untracked per-frame estimate)."""
        H, W = self.shape
        flat = self.maps.reshape(N_JOINTS, -1).argmax(axis=1)
        v, u = np.divmod(flat, W)
        return self.to_image(u, v)


def dumps_heatmaps(maps) -> bytes:
    m = np.ascontiguousarray(maps, dtype="<f4")
    if m.ndim != 3:
        raise ValueError("heat-map stack must be (J, H, W)")
    J, H, W = m.shape
    return MAGIC + struct.pack("<III", H, W, J) + m.tobytes()


def loads_heatmaps(data: bytes) -> np.ndarray:
    if data[:5] != MAGIC:
        raise ValueError("not an HMAP1 file")
    H, W, J = struct.unpack_from("<III", data, 5)
    body = data[17:]
    if len(body) != 4 * H * W * J:
        raise ValueError("HMAP1 payload size does not match its header")
    return np.frombuffer(body, dtype="<f4").reshape(J, H, W).astype(np.float32)


def save_heatmaps(path, maps):
    with open(path, "wb") as fh:
        fh.write(dumps_heatmaps(maps))


def load_heatmaps(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads_heatmaps(fh.read())
